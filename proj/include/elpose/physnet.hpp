#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "elpose/diffmath.hpp"
#include "elpose/skeleton.hpp"

namespace elpose {

inline constexpr int kPackedSize = kStateDim * (kStateDim + 1) / 2;  // 1326 == 51 * 26

enum class Direction { kForward, kReverse };
enum class NoiseMode { kSample, kMeanOnly };

// Per-frame Euler-Lagrange estimates produced by the parameter heads.
struct ELParameters {
  StateVector forces;
  StateVector constraints;
  std::vector<double> minv_packed;  // upper triangle of M^-1, row-major over i <= j
  StateVector noise_mean;
};

struct PhysNetConfig {
  int head_hidden = 128;
  int decoder_hidden = 256;
  double dt = 0.0;  // seconds; 0 means 1 / fps of the input sequence
  NoiseMode noise_mode = NoiseMode::kMeanOnly;
  bool share_local_weights = true;
};

struct PhysNetParams {
  // [s_t, mean_t s_t] (102) -> 51.
  MlpParams global_encoder;
  // 3-frame window (153) -> 51, added to the window's newest frame.
  MlpParams local_encoder;
  // Reverse-direction local encoder; empty when weights are shared.
  MlpParams local_encoder_reverse;
  MlpParams head_forces;       // E_J: 51 -> 51
  MlpParams head_constraints;  // E_C: 51 -> 51
  MlpParams head_inverse_mass; // E_M: 51 -> 1326
  MlpParams head_noise;        // E_N: 51 -> 51
  // 51 -> 51, added to its input.
  MlpParams pose_decoder;
  double dt = 0.0;
  NoiseMode noise_mode = NoiseMode::kMeanOnly;

  bool shares_local_weights() const { return local_encoder_reverse.layers.empty(); }
  const MlpParams& local_for(Direction d) const {
    return d == Direction::kReverse && !shares_local_weights() ? local_encoder_reverse
                                                               : local_encoder;
  }

  // Glorot init; the residual branches (encoders, decoder) start with a zero
  // final layer so the untrained network integrates its input unchanged.
  static PhysNetParams init(const PhysNetConfig& config, std::uint64_t seed);

  PhysNetParams zeros_like() const;
  std::vector<Array*> tensors();
  std::vector<const Array*> tensors() const;
  std::vector<MlpParams*> mlps();
  std::vector<const MlpParams*> mlps() const;
};

// Encoded states q_t = global_t + local_t for every frame that has a full
// 3-frame window in the given direction: frames [2, T) forward, [0, T-2)
// reverse. states[k] belongs to frame first_frame + k.
struct EncodedStates {
  int first_frame = 0;
  std::vector<StateVector> states;
};

EncodedStates encode_states(const PoseSequence3D& seq_dd, const PhysNetParams& params,
                            Direction direction);

// Packed row-major upper triangle -> full symmetric n x n matrix.
Matrix symmetrize(std::span<const double> packed, int n);
std::vector<double> pack_upper(const Matrix& m);

// 51 x 51 matrix whose columns are noise_mean (+ unit Gaussian draws in
// sample mode).
Matrix sample_noise(const StateVector& noise_mean, NoiseMode mode, std::uint64_t seed);

StateVector acceleration(const Matrix& minv, const Matrix& noise, const StateVector& forces,
                         const StateVector& constraints);

// q_{t+1} = accel * dt^2 + 2 q_t - q_{t-1}.
StateVector central_difference_step(const StateVector& q_t, const StateVector& q_prev,
                                    const StateVector& accel, double dt);
double central_difference_step(double q_t, double q_prev, double accel, double dt);

ELParameters estimate_el_parameters(const StateVector& state, const PhysNetParams& params);

struct Reestimate {
  PoseSequence3D physical;                 // S_pp
  std::vector<StateVector> noise_means;    // one per integration step, both directions
};

// Requires T >= 7. Forward steps predict frames [3, T-3] from windows
// ending at frame t; reverse steps predict frames [2, T-4] symmetrically.
// Frames reached both ways average the two predictions; frames 0, 1, T-2,
// T-1 pass through from seq_dd.
Reestimate reestimate_detailed(const PoseSequence3D& seq_dd, const PhysNetParams& params,
                               std::uint64_t seed);
PoseSequence3D reestimate(const PoseSequence3D& seq_dd, const PhysNetParams& params,
                          std::uint64_t seed);

// Elementwise mean.
PoseSequence3D fuse_poses(const PoseSequence3D& s_dd, const PoseSequence3D& s_pp);

enum class PhysNetStage { kPretrain3D, kFinetune2D };

struct PhysNetSample {
  PoseSequence3D data_driven;
  std::optional<PoseSequence3D> truth_3d;
  std::optional<PoseSequence2D> truth_2d;
};

struct LossAndGradient {
  double loss = 0.0;
  PhysNetParams grads;
};

// Stage loss on the fused sequence plus the noise regularizer, evaluated in
// mean-only noise mode. The fine-tuning stage refits the camera to the
// fused sequence; at the least-squares optimum the camera's own gradient
// vanishes, so it is held fixed in the backward pass.
double physnet_loss(const PhysNetParams& params, const PhysNetSample& sample, PhysNetStage stage);
LossAndGradient physnet_loss_and_gradient(const PhysNetParams& params, const PhysNetSample& sample,
                                          PhysNetStage stage);

struct PhysNetTrainConfig {
  PhysNetStage stage = PhysNetStage::kPretrain3D;
  int epochs = 10;
  int batch_size = 8;
  AdamConfig adam;
  std::uint64_t seed = 0;
  double validation_fraction = 0.0;  // > 0 keeps the best validation params
  long first_step = 0;               // step numbering offset when resuming
  PhysNetConfig model;
};

struct CurvePoint {
  long step = 0;
  double loss = 0.0;
};

struct PhysNetTrainResult {
  PhysNetParams params;
  std::vector<CurvePoint> curve;
};

// Starts from `init` when given, otherwise from PhysNetParams::init.
PhysNetTrainResult train_physnet(std::span<const PhysNetSample> dataset,
                                 const PhysNetTrainConfig& config,
                                 std::optional<PhysNetParams> init = std::nullopt);

// Checkpoint: ELP1 arrays plus a JSON sidecar {"dt", "noise_mode",
// "hidden_widths", "share_local_weights", "step"}.
void save_physnet(const std::filesystem::path& checkpoint, const PhysNetParams& params,
                  long step = 0);
PhysNetParams load_physnet(const std::filesystem::path& checkpoint, long* step = nullptr);

}  // namespace elpose
