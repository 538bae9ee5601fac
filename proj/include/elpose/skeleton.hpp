#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace elpose {

inline constexpr int kNumJoints = 17;
inline constexpr int kStateDim = 3 * kNumJoints;

// 17-joint pelvis-rooted layout (Human3.6M order):
//   0 pelvis, 1-3 right hip/knee/ankle, 4-6 left hip/knee/ankle, 7 spine,
//   8 thorax, 9 neck, 10 head, 11-13 left shoulder/elbow/wrist,
//   14-16 right shoulder/elbow/wrist.
struct JointLayout {
  std::array<std::string_view, kNumJoints> joint_names;
  // (parent, child) pairs forming a tree rooted at joint 0.
  std::vector<std::pair<int, int>> limb_edges;

  // Parent of joint j, -1 for the root.
  int parent(int joint) const;
};

const JointLayout& h36m_layout();

enum class FrameOfReference { kRootRelative, kWorld };

enum class PoseKind { k2D, k3D };

// Immutable T x 17 x D block of joint coordinates, row-major
// (frame, joint, coordinate).
template <int D>
class JointSequence {
 public:
  static constexpr int kDim = D;
  static constexpr int kFrameSize = kNumJoints * D;

  int num_frames() const { return static_cast<int>(values_.size()) / kFrameSize; }
  double fps() const { return fps_; }

  double at(int frame, int joint, int coord) const {
    return values_[static_cast<size_t>(frame) * kFrameSize + joint * D + coord];
  }
  std::span<const double> frame(int t) const {
    return {values_.data() + static_cast<size_t>(t) * kFrameSize, kFrameSize};
  }
  std::span<const double, D> joint(int t, int j) const {
    return std::span<const double, D>(
        values_.data() + static_cast<size_t>(t) * kFrameSize + j * D, D);
  }
  const std::vector<double>& values() const { return values_; }

  friend bool operator==(const JointSequence&, const JointSequence&) = default;

 protected:
  JointSequence(std::vector<double> values, double fps);

  std::vector<double> values_;
  double fps_;
};

class PoseSequence2D : public JointSequence<2> {
 public:
  // Coordinates are normalized image units (origin top-left, nominally [0,1]).
  PoseSequence2D(std::vector<double> values, double fps,
                 std::optional<std::vector<double>> confidence = std::nullopt);

  const std::optional<std::vector<double>>& confidence() const { return confidence_; }

  friend bool operator==(const PoseSequence2D&, const PoseSequence2D&) = default;

 private:
  std::optional<std::vector<double>> confidence_;
};

class PoseSequence3D : public JointSequence<3> {
 public:
  // Meters. Root-relative sequences must have joint 0 at the origin in
  // every frame.
  PoseSequence3D(std::vector<double> values, double fps,
                 FrameOfReference frame = FrameOfReference::kRootRelative);

  FrameOfReference frame_of_reference() const { return frame_; }

  friend bool operator==(const PoseSequence3D&, const PoseSequence3D&) = default;

 private:
  FrameOfReference frame_;
};

using AnyPoseSequence = std::variant<PoseSequence2D, PoseSequence3D>;

// Per-frame state, 17 x 3 flattened joint-major.
struct StateVector {
  std::array<double, kStateDim> values{};

  double& operator[](int i) { return values[i]; }
  double operator[](int i) const { return values[i]; }
  friend bool operator==(const StateVector&, const StateVector&) = default;
};

// kRootRelative when joint 0 is exactly zero in every frame.
FrameOfReference infer_frame_of_reference(std::span<const double> values3d);

PoseSequence3D root_center(const PoseSequence3D& seq);

std::vector<StateVector> flatten_states(const PoseSequence3D& seq);
PoseSequence3D unflatten_states(std::span<const StateVector> states, double fps);
// Checked variant for externally supplied vectors.
PoseSequence3D unflatten_states(const std::vector<std::vector<double>>& states, double fps);

// .poseq.json serialization.
std::string to_json_string(const PoseSequence2D& seq);
std::string to_json_string(const PoseSequence3D& seq);
AnyPoseSequence parse_pose_sequence(std::string_view text, PoseKind kind);

AnyPoseSequence load_pose_sequence(const std::filesystem::path& path, PoseKind kind);
PoseSequence2D load_pose_sequence_2d(const std::filesystem::path& path);
PoseSequence3D load_pose_sequence_3d(const std::filesystem::path& path);
void save_pose_sequence(const std::filesystem::path& path, const PoseSequence2D& seq);
void save_pose_sequence(const std::filesystem::path& path, const PoseSequence3D& seq);

// File helpers shared by the other modules.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace elpose
