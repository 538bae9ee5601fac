#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "elpose/rng.hpp"
#include "elpose/skeleton.hpp"

namespace elpose::testing {

inline std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, lo, hi);
  return v;
}

inline PoseSequence3D pose_3d(std::vector<double> values, double fps) {
  const auto frame = infer_frame_of_reference(values);
  return PoseSequence3D(std::move(values), fps, frame);
}

inline PoseSequence3D pose_3d(std::vector<double> values, double fps, FrameOfReference frame) {
  return PoseSequence3D(std::move(values), fps, frame);
}

inline PoseSequence3D random_pose_3d(int frames, Rng& rng, bool root_relative = false, double fps = 30.0) {
  auto v = random_values(static_cast<std::size_t>(frames) * kStateDim, rng);
  if (root_relative) {
    for (int t = 0; t < frames; ++t) {
      for (int c = 0; c < 3; ++c) v[static_cast<std::size_t>(t) * kStateDim + c] = 0.0;
    }
  }
  return PoseSequence3D(std::move(v), fps,
                        root_relative ? FrameOfReference::kRootRelative : FrameOfReference::kWorld);
}

inline PoseSequence2D random_pose_2d(int frames, Rng& rng, double fps = 30.0) {
  return PoseSequence2D(random_values(static_cast<std::size_t>(frames) * kNumJoints * 2, rng, 0.0, 1.0), fps);
}

// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("elpose_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace elpose::testing
