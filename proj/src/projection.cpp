#include "elpose/projection.hpp"

#include <cmath>

#include "elpose/errors.hpp"

namespace elpose {

CameraFit fit_camera(const PoseSequence3D& seq3d, const PoseSequence2D& seq2d) {
  if (seq3d.num_frames() != seq2d.num_frames()) {
    throw ShapeError("camera fit needs sequences of equal length");
  }
  const int n = seq3d.num_frames() * kNumJoints;
  double mx = 0, my = 0, mu = 0, mv = 0;
  for (int t = 0; t < seq3d.num_frames(); ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      mx += seq3d.at(t, j, 0);
      my += seq3d.at(t, j, 1);
      mu += seq2d.at(t, j, 0);
      mv += seq2d.at(t, j, 1);
    }
  }
  mx /= n;
  my /= n;
  mu /= n;
  mv /= n;
  double sxx = 0, sxu = 0;
  for (int t = 0; t < seq3d.num_frames(); ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      const double dx = seq3d.at(t, j, 0) - mx;
      const double dy = seq3d.at(t, j, 1) - my;
      sxx += dx * dx + dy * dy;
      sxu += dx * (seq2d.at(t, j, 0) - mu) + dy * (seq2d.at(t, j, 1) - mv);
    }
  }
  if (sxx <= 0.0) throw DegenerateError("all 3D xy points coincide");
  const double scale = sxu / sxx;
  if (!(scale > 0.0)) throw DegenerateError("optimal camera scale is not positive");
  CameraFit fit{{scale, {mu - scale * mx, mv - scale * my}}, 0.0};
  const auto proj = project(seq3d, fit.camera);
  for (std::size_t i = 0; i < proj.values().size(); ++i) {
    const double d = proj.values()[i] - seq2d.values()[i];
    fit.residual += d * d;
  }
  return fit;
}

PoseSequence2D project(const PoseSequence3D& seq3d, const CameraParams& camera) {
  std::vector<double> uv(static_cast<std::size_t>(seq3d.num_frames()) * kNumJoints * 2);
  for (int t = 0; t < seq3d.num_frames(); ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      const std::size_t k = (static_cast<std::size_t>(t) * kNumJoints + j) * 2;
      uv[k] = camera.scale * seq3d.at(t, j, 0) + camera.offset[0];
      uv[k + 1] = camera.scale * seq3d.at(t, j, 1) + camera.offset[1];
    }
  }
  return PoseSequence2D(std::move(uv), seq3d.fps());
}

double loss_noise(std::span<const StateVector> noise_means) {
  const double columns = std::sqrt(static_cast<double>(kStateDim));
  double total = 0.0;
  for (const auto& m : noise_means) {
    double sq = 0.0;
    for (double v : m.values) sq += v * v;
    total += columns * std::sqrt(sq);
  }
  return total;
}

double loss_3d(const PoseSequence3D& pred, const PoseSequence3D& truth,
               std::span<const StateVector> noise_means) {
  if (pred.values().size() != truth.values().size()) {
    throw ShapeError("loss_3d needs sequences of equal shape");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < pred.values().size(); ++i) {
    const double d = pred.values()[i] - truth.values()[i];
    total += d * d;
  }
  return total + loss_noise(noise_means);
}

double loss_2d(const PoseSequence3D& pred3d, const PoseSequence2D& truth2d,
               const CameraParams& camera, std::span<const StateVector> noise_means) {
  if (pred3d.num_frames() != truth2d.num_frames()) {
    throw ShapeError("loss_2d needs sequences of equal length");
  }
  const auto proj = project(pred3d, camera);
  double total = 0.0;
  for (std::size_t i = 0; i < proj.values().size(); ++i) {
    const double d = proj.values()[i] - truth2d.values()[i];
    total += d * d;
  }
  return total + loss_noise(noise_means);
}

}  // namespace elpose
