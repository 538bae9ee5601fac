#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "elpose/errors.hpp"
#include "elpose/skeleton.hpp"
#include "test_util.hpp"

namespace elpose {
namespace {

using testing::random_pose_3d;

std::string frames_json(int frames, int joints, int dims, double value) {
  std::string s = "[";
  for (int t = 0; t < frames; ++t) {
    s += t ? ",[" : "[";
    for (int j = 0; j < joints; ++j) {
      s += j ? ",[" : "[";
      for (int c = 0; c < dims; ++c) s += (c ? "," : "") + std::to_string(value);
      s += "]";
    }
    s += "]";
  }
  return s + "]";
}

TEST(JointLayout, SpanningTreeRootedAtPelvis) {
  const auto& layout = h36m_layout();
  EXPECT_EQ(layout.limb_edges.size(), 16u);
  std::set<int> children;
  for (auto [p, c] : layout.limb_edges) {
    EXPECT_LT(p, kNumJoints);
    EXPECT_TRUE(children.insert(c).second) << "joint " << c << " has two parents";
  }
  EXPECT_EQ(children.count(0), 0u);
  for (int j = 1; j < kNumJoints; ++j) {
    int steps = 0;
    for (int k = j; k != 0; k = layout.parent(k)) ASSERT_LT(++steps, kNumJoints);
  }
  EXPECT_EQ(layout.parent(0), -1);
}

TEST(PoseSequence, ConstructorValidates) {
  EXPECT_THROW(PoseSequence3D(std::vector<double>(50, 0.0), 30.0), SchemaError);
  EXPECT_THROW(PoseSequence3D(std::vector<double>(51, 0.0), 0.0), ValueError);
  std::vector<double> bad(51, 0.0);
  bad[7] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(PoseSequence3D(bad, 30.0), ValueError);
  std::vector<double> offset_root(51, 0.0);
  offset_root[0] = 1.0;
  EXPECT_THROW(PoseSequence3D(offset_root, 30.0, FrameOfReference::kRootRelative), ValueError);
  EXPECT_THROW(PoseSequence2D(std::vector<double>(34, 0.5), 30.0, std::vector<double>(17, 1.5)), ValueError);
}

TEST(LoadPoseSequence, SingleZeroFrame) {
  const std::string text = R"({"format":"h36m17-3d","fps":30,"frames":)" + frames_json(1, 17, 3, 0.0) + "}";
  const auto seq = std::get<PoseSequence3D>(parse_pose_sequence(text, PoseKind::k3D));
  EXPECT_EQ(seq.num_frames(), 1);
  for (double v : seq.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(seq.frame_of_reference(), FrameOfReference::kRootRelative);
}

TEST(LoadPoseSequence, RejectsWrongJointCount) {
  const std::string text = R"({"format":"h36m17-3d","fps":30,"frames":)" + frames_json(2, 16, 3, 0.1) + "}";
  EXPECT_THROW(parse_pose_sequence(text, PoseKind::k3D), SchemaError);
}

TEST(LoadPoseSequence, RejectsMalformedAndNonFinite) {
  EXPECT_THROW(parse_pose_sequence("{not json", PoseKind::k2D), ParseError);
  EXPECT_THROW(parse_pose_sequence(R"({"format":"h36m17-3d","fps":30,"frames":[]})", PoseKind::k2D),
               SchemaError);
  std::string frames = frames_json(1, 17, 2, 0.5);
  frames.replace(frames.find("0.500000"), 8, "null");
  EXPECT_THROW(parse_pose_sequence(R"({"format":"h36m17-2d","fps":30,"frames":)" + frames + "}", PoseKind::k2D),
               ValueError);
}

TEST(LoadPoseSequence, MissingFileIsIoError) {
  EXPECT_THROW(load_pose_sequence_3d("/nonexistent/elpose/x.poseq.json"), IoError);
}

TEST(LoadPoseSequence, SaveLoadRoundTripIsByteIdentical) {
  auto rng = make_rng(11, "test/roundtrip");
  const auto seq = random_pose_3d(16, rng);
  const auto dir = testing::scratch_dir("skeleton_roundtrip");
  save_pose_sequence(dir / "a.poseq.json", seq);
  const auto loaded = load_pose_sequence_3d(dir / "a.poseq.json");
  EXPECT_EQ(loaded, seq);
  save_pose_sequence(dir / "b.poseq.json", loaded);
  EXPECT_EQ(read_text_file(dir / "a.poseq.json"), read_text_file(dir / "b.poseq.json"));

  const auto seq2d = testing::random_pose_2d(16, rng);
  save_pose_sequence(dir / "c.poseq.json", seq2d);
  EXPECT_EQ(load_pose_sequence_2d(dir / "c.poseq.json"), seq2d);
}

TEST(RootCenter, IdempotentOnRootRelative) {
  auto rng = make_rng(1, "test/root");
  const auto seq = random_pose_3d(4, rng, true);
  EXPECT_EQ(root_center(seq), seq);
}

TEST(RootCenter, RemovesConstantOffset) {
  auto rng = make_rng(2, "test/root");
  const auto base = random_pose_3d(3, rng, true);
  auto shifted = base.values();
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += static_cast<double>(i % 3 + 1);
  const auto out = root_center(PoseSequence3D(shifted, 30.0, FrameOfReference::kWorld));
  EXPECT_EQ(out.frame_of_reference(), FrameOfReference::kRootRelative);
  for (std::size_t i = 0; i < shifted.size(); ++i) EXPECT_NEAR(out.values()[i], base.values()[i], 1e-12);
}

TEST(RootCenter, PreservesPairwiseDistances) {
  auto rng = make_rng(3, "test/root");
  const auto seq = random_pose_3d(5, rng);
  const auto out = root_center(seq);
  for (int t = 0; t < seq.num_frames(); ++t) {
    for (int a = 0; a < kNumJoints; ++a) {
      EXPECT_EQ(out.at(t, 0, a % 3), 0.0);
      for (int b = a + 1; b < kNumJoints; ++b) {
        double d0 = 0.0, d1 = 0.0;
        for (int c = 0; c < 3; ++c) {
          d0 += std::pow(seq.at(t, a, c) - seq.at(t, b, c), 2);
          d1 += std::pow(out.at(t, a, c) - out.at(t, b, c), 2);
        }
        EXPECT_NEAR(std::sqrt(d0), std::sqrt(d1), 1e-12);
      }
    }
  }
}

TEST(FlattenStates, JointMajorLayout) {
  std::vector<double> v(51);
  for (int k = 0; k < kNumJoints; ++k) {
    for (int c = 0; c < 3; ++c) v[3 * k + c] = k;
  }
  const auto states = flatten_states(PoseSequence3D(v, 30.0, FrameOfReference::kWorld));
  ASSERT_EQ(states.size(), 1u);
  for (int k = 0; k < kNumJoints; ++k) {
    for (int c = 0; c < 3; ++c) EXPECT_EQ(states[0][3 * k + c], k);
  }
}

TEST(FlattenStates, ZeroSequenceGivesZeroVectors) {
  const auto states = flatten_states(PoseSequence3D(std::vector<double>(3 * 51, 0.0), 30.0));
  ASSERT_EQ(states.size(), 3u);
  for (const auto& s : states) EXPECT_EQ(s, StateVector{});
}

TEST(FlattenStates, RoundTripIsBitExact) {
  auto rng = make_rng(4, "test/flatten");
  const auto seq = random_pose_3d(9, rng);
  EXPECT_EQ(unflatten_states(flatten_states(seq), seq.fps()), seq);
  const auto rr = random_pose_3d(9, rng, true);
  EXPECT_EQ(unflatten_states(flatten_states(rr), rr.fps()), rr);
}

TEST(UnflattenStates, RejectsWrongLength) {
  EXPECT_THROW(unflatten_states(std::vector<std::vector<double>>{std::vector<double>(50, 0.0)}, 30.0),
               ValueError);
  EXPECT_NO_THROW(unflatten_states(std::vector<std::vector<double>>{std::vector<double>(51, 0.0)}, 30.0));
}

}  // namespace
}  // namespace elpose
