#include "elpose/skeleton.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "elpose/errors.hpp"

namespace elpose {

using nlohmann::json;

const JointLayout& h36m_layout() {
  static const JointLayout layout{
      {"pelvis", "right_hip", "right_knee", "right_ankle", "left_hip", "left_knee",
       "left_ankle", "spine", "thorax", "neck", "head", "left_shoulder", "left_elbow",
       "left_wrist", "right_shoulder", "right_elbow", "right_wrist"},
      {{0, 1}, {1, 2}, {2, 3}, {0, 4}, {4, 5}, {5, 6}, {0, 7}, {7, 8},
       {8, 9}, {9, 10}, {8, 11}, {11, 12}, {12, 13}, {8, 14}, {14, 15}, {15, 16}},
  };
  return layout;
}

int JointLayout::parent(int joint) const {
  for (const auto& [p, c] : limb_edges) {
    if (c == joint) return p;
  }
  return -1;
}

template <int D>
JointSequence<D>::JointSequence(std::vector<double> values, double fps)
    : values_(std::move(values)), fps_(fps) {
  if (values_.empty() || values_.size() % kFrameSize != 0) {
    throw SchemaError("pose sequence needs T >= 1 frames of " + std::to_string(kNumJoints) +
                      " joints x " + std::to_string(D) + " coordinates");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw ValueError("pose sequence contains a non-finite coordinate");
  }
  if (!std::isfinite(fps_) || fps_ <= 0.0) throw ValueError("fps must be positive");
}

template class JointSequence<2>;
template class JointSequence<3>;

PoseSequence2D::PoseSequence2D(std::vector<double> values, double fps,
                               std::optional<std::vector<double>> confidence)
    : JointSequence<2>(std::move(values), fps), confidence_(std::move(confidence)) {
  if (confidence_) {
    if (confidence_->size() != static_cast<size_t>(num_frames()) * kNumJoints) {
      throw SchemaError("confidence must be T x 17");
    }
    for (double c : *confidence_) {
      if (!std::isfinite(c)) throw ValueError("confidence contains a non-finite value");
      if (c < 0.0 || c > 1.0) throw ValueError("confidence outside [0,1]");
    }
  }
}

PoseSequence3D::PoseSequence3D(std::vector<double> values, double fps, FrameOfReference frame)
    : JointSequence<3>(std::move(values), fps), frame_(frame) {
  if (frame_ == FrameOfReference::kRootRelative &&
      infer_frame_of_reference(values_) != FrameOfReference::kRootRelative) {
    throw ValueError("root-relative sequence has a nonzero root joint");
  }
}

FrameOfReference infer_frame_of_reference(std::span<const double> values3d) {
  for (size_t base = 0; base + 3 <= values3d.size(); base += kStateDim) {
    if (values3d[base] != 0.0 || values3d[base + 1] != 0.0 || values3d[base + 2] != 0.0) {
      return FrameOfReference::kWorld;
    }
  }
  return FrameOfReference::kRootRelative;
}

PoseSequence3D root_center(const PoseSequence3D& seq) {
  if (seq.frame_of_reference() == FrameOfReference::kRootRelative) return seq;
  std::vector<double> out = seq.values();
  for (int t = 0; t < seq.num_frames(); ++t) {
    double* f = out.data() + static_cast<size_t>(t) * kStateDim;
    const double root[3] = {f[0], f[1], f[2]};
    for (int j = 0; j < kNumJoints; ++j) {
      for (int c = 0; c < 3; ++c) f[3 * j + c] -= root[c];
    }
  }
  return PoseSequence3D(std::move(out), seq.fps(), FrameOfReference::kRootRelative);
}

std::vector<StateVector> flatten_states(const PoseSequence3D& seq) {
  std::vector<StateVector> states(seq.num_frames());
  for (int t = 0; t < seq.num_frames(); ++t) {
    const auto f = seq.frame(t);
    std::copy(f.begin(), f.end(), states[t].values.begin());
  }
  return states;
}

PoseSequence3D unflatten_states(std::span<const StateVector> states, double fps) {
  std::vector<double> values;
  values.reserve(states.size() * kStateDim);
  for (const auto& s : states) values.insert(values.end(), s.values.begin(), s.values.end());
  const auto frame = infer_frame_of_reference(values);
  return PoseSequence3D(std::move(values), fps, frame);
}

PoseSequence3D unflatten_states(const std::vector<std::vector<double>>& states, double fps) {
  std::vector<StateVector> checked(states.size());
  for (size_t t = 0; t < states.size(); ++t) {
    if (states[t].size() != static_cast<size_t>(kStateDim)) {
      throw ValueError("state vector must have length 51, got " +
                       std::to_string(states[t].size()));
    }
    std::copy(states[t].begin(), states[t].end(), checked[t].values.begin());
  }
  return unflatten_states(checked, fps);
}

namespace {

template <int D>
json frames_to_json(const JointSequence<D>& seq) {
  json frames = json::array();
  for (int t = 0; t < seq.num_frames(); ++t) {
    json joints = json::array();
    for (int j = 0; j < kNumJoints; ++j) {
      json p = json::array();
      for (int c = 0; c < D; ++c) p.push_back(seq.at(t, j, c));
      joints.push_back(std::move(p));
    }
    frames.push_back(std::move(joints));
  }
  return frames;
}

double number_at(const json& v) {
  if (v.is_null()) return std::nan("");  // NaN/Inf serialize as null
  if (!v.is_number()) throw SchemaError("expected a number");
  return v.get<double>();
}

std::vector<double> parse_frames(const json& frames, int dim) {
  if (!frames.is_array() || frames.empty()) throw SchemaError("'frames' must be a nonempty array");
  std::vector<double> values;
  values.reserve(frames.size() * kNumJoints * dim);
  for (const auto& frame : frames) {
    if (!frame.is_array() || frame.size() != static_cast<size_t>(kNumJoints)) {
      throw SchemaError("every frame must hold exactly 17 joints");
    }
    for (const auto& joint : frame) {
      if (!joint.is_array() || joint.size() != static_cast<size_t>(dim)) {
        throw SchemaError("every joint must have " + std::to_string(dim) + " coordinates");
      }
      for (const auto& v : joint) values.push_back(number_at(v));
    }
  }
  return values;
}

}  // namespace

std::string to_json_string(const PoseSequence2D& seq) {
  json doc;
  doc["format"] = "h36m17-2d";
  doc["fps"] = seq.fps();
  doc["frames"] = frames_to_json(seq);
  if (seq.confidence()) {
    json conf = json::array();
    const auto& c = *seq.confidence();
    for (int t = 0; t < seq.num_frames(); ++t) {
      conf.push_back(std::vector<double>(c.begin() + t * kNumJoints,
                                         c.begin() + (t + 1) * kNumJoints));
    }
    doc["confidence"] = std::move(conf);
  }
  return doc.dump() + "\n";
}

std::string to_json_string(const PoseSequence3D& seq) {
  json doc;
  doc["format"] = "h36m17-3d";
  doc["fps"] = seq.fps();
  doc["frames"] = frames_to_json(seq);
  return doc.dump() + "\n";
}

AnyPoseSequence parse_pose_sequence(std::string_view text, PoseKind kind) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed pose file: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("pose file must be a JSON object");
  const std::string expected = kind == PoseKind::k2D ? "h36m17-2d" : "h36m17-3d";
  if (!doc.contains("format") || doc["format"] != expected) {
    throw SchemaError("pose file format must be \"" + expected + "\"");
  }
  if (!doc.contains("fps")) throw SchemaError("pose file is missing 'fps'");
  if (!doc.contains("frames")) throw SchemaError("pose file is missing 'frames'");
  const double fps = number_at(doc["fps"]);
  if (kind == PoseKind::k3D) {
    auto values = parse_frames(doc["frames"], 3);
    const auto frame = infer_frame_of_reference(values);
    return PoseSequence3D(std::move(values), fps, frame);
  }
  auto values = parse_frames(doc["frames"], 2);
  std::optional<std::vector<double>> confidence;
  if (doc.contains("confidence") && !doc["confidence"].is_null()) {
    const auto& conf = doc["confidence"];
    if (!conf.is_array()) throw SchemaError("'confidence' must be an array");
    confidence.emplace();
    for (const auto& row : conf) {
      if (!row.is_array() || row.size() != static_cast<size_t>(kNumJoints)) {
        throw SchemaError("every confidence row must hold 17 values");
      }
      for (const auto& v : row) confidence->push_back(number_at(v));
    }
  }
  return PoseSequence2D(std::move(values), fps, std::move(confidence));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("short write to " + path.string());
}

AnyPoseSequence load_pose_sequence(const std::filesystem::path& path, PoseKind kind) {
  return parse_pose_sequence(read_text_file(path), kind);
}

PoseSequence2D load_pose_sequence_2d(const std::filesystem::path& path) {
  return std::get<PoseSequence2D>(load_pose_sequence(path, PoseKind::k2D));
}

PoseSequence3D load_pose_sequence_3d(const std::filesystem::path& path) {
  return std::get<PoseSequence3D>(load_pose_sequence(path, PoseKind::k3D));
}

void save_pose_sequence(const std::filesystem::path& path, const PoseSequence2D& seq) {
  write_text_file(path, to_json_string(seq));
}

void save_pose_sequence(const std::filesystem::path& path, const PoseSequence3D& seq) {
  write_text_file(path, to_json_string(seq));
}

}  // namespace elpose
