#pragma once

#include <array>
#include <span>

#include "elpose/skeleton.hpp"

namespace elpose {

// Orthographic camera followed by an isotropic affine map into normalized
// image units: uv = scale * (x, y) + offset.
struct CameraParams {
  double scale = 1.0;
  std::array<double, 2> offset{0.0, 0.0};
};

struct CameraFit {
  CameraParams camera;
  double residual = 0.0;  // sum of squared 2D errors at the optimum
};

// Closed-form least squares over all frames and joints. Throws
// DegenerateError when every 3D xy point coincides or the optimal scale is
// not positive.
CameraFit fit_camera(const PoseSequence3D& seq3d, const PoseSequence2D& seq2d);

PoseSequence2D project(const PoseSequence3D& seq3d, const CameraParams& camera);

// Sum over frames of ||N_t||_F where N_t replicates the mean vector in all
// 51 columns, i.e. sqrt(51) * ||mean_t||.
double loss_noise(std::span<const StateVector> noise_means);

double loss_3d(const PoseSequence3D& pred, const PoseSequence3D& truth,
               std::span<const StateVector> noise_means = {});

double loss_2d(const PoseSequence3D& pred3d, const PoseSequence2D& truth2d,
               const CameraParams& camera, std::span<const StateVector> noise_means = {});

}  // namespace elpose
