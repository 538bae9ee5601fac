#pragma once

#include <cstdint>
#include <vector>

#include "elpose/diffmath.hpp"
#include "elpose/projection.hpp"
#include "elpose/skeleton.hpp"

namespace elpose {

// Planar chain of point masses hanging from a fixed pivot. Link i carries
// mass masses[i] at its far end; angles are absolute and measured from the
// downward vertical.
struct AnalyticSystem {
  int n_links = 1;
  std::vector<double> masses;
  std::vector<double> lengths;
  double gravity = 9.8;

  void validate() const;
  static AnalyticSystem uniform_chain(int n_links, double mass, double length,
                                      double gravity = 9.8);
};

// M(q) qddot = J(q, qdot) - C(q, qdot).
struct LagrangianTerms {
  Matrix mass;      // n x n, symmetric positive definite
  Vector forces;    // J = -dV/dq
  Vector coriolis;  // C, centrifugal/Coriolis terms
};

LagrangianTerms lagrangian_terms(const AnalyticSystem& sys, const Vector& q, const Vector& qdot);

// Solves the equations of motion for qddot.
Vector solve_acceleration(const AnalyticSystem& sys, const Vector& q, const Vector& qdot);

// max-norm of M(q) qddot - (J - C).
double verify_el_identity(const AnalyticSystem& sys, const Vector& q, const Vector& qdot,
                          const Vector& qddot);

double kinetic_energy(const AnalyticSystem& sys, const Vector& q, const Vector& qdot);
double potential_energy(const AnalyticSystem& sys, const Vector& q);

struct Trajectory {
  std::vector<double> times;
  Matrix q;     // steps+1 x n
  Matrix qdot;  // steps+1 x n
};

// Classical RK4. Throws BlowupError if any state component exceeds 1e6.
Trajectory simulate(const AnalyticSystem& sys, const Vector& q0, const Vector& qdot0, double dt,
                    int steps);

// Chain-to-skeleton embedding. The chain's link endpoints land on the
// pelvis-to-head path; every other joint rides rigidly on the link that
// starts at its nearest mapped ancestor. Supports 1 <= n_links <= 4.
std::vector<double> embed_chain(const AnalyticSystem& sys, const Vector& q);

// Samples every `stride`-th trajectory row into a root-relative sequence.
PoseSequence3D trajectory_to_poses(const AnalyticSystem& sys, const Trajectory& traj, double fps,
                                   int stride = 1);

struct SynthConfig {
  int count = 1;
  int frames = 32;
  double noise_sigma = 0.0;  // meters, per coordinate
  std::uint64_t seed = 0;
  double fps = 30.0;
  int substeps = 10;  // integrator steps per frame
  double max_angle = 0.8;
  double max_rate = 1.5;
  CameraParams camera{0.25, {0.5, 0.5}};
};

struct SynthSample {
  PoseSequence3D clean;
  PoseSequence3D noisy;  // world frame: noise also moves the root
  PoseSequence2D projected;
};

std::vector<SynthSample> synth_pose_dataset(const AnalyticSystem& sys, const SynthConfig& config);

}  // namespace elpose
