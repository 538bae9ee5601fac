#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "elpose/diffmath.hpp"
#include "elpose/physnet.hpp"
#include "elpose/skeleton.hpp"

namespace elpose {

// Per-frame, per-joint mean of root-centered training sequences.
struct PosePrior {
  PoseSequence3D frames;
  int source_count = 0;

  int num_frames() const { return frames.num_frames(); }
  friend bool operator==(const PosePrior&, const PosePrior&) = default;
};

// Linear interpolation onto `frames` uniformly spaced samples spanning the
// same interval; fps is rescaled so the duration is preserved.
PoseSequence3D resample(const PoseSequence3D& seq, int frames);
PoseSequence2D resample(const PoseSequence2D& seq, int frames);

PosePrior compute_pose_prior(std::span<const PoseSequence3D> dataset, int target_frames);

struct PromptPair {
  PoseSequence2D pose_2d;
  PoseSequence3D pose_3d;

  friend bool operator==(const PromptPair&, const PromptPair&) = default;
};

struct IclBatch {
  std::vector<PromptPair> prompt_pairs;
  PoseSequence2D query_2d;
  PosePrior query_prior;

  int num_frames() const { return query_2d.num_frames(); }
  // Prompt groups followed by the query group.
  int num_groups() const { return static_cast<int>(prompt_pairs.size()) + 1; }
  friend bool operator==(const IclBatch&, const IclBatch&) = default;
};

IclBatch assemble_prompt(std::vector<PromptPair> pairs, PoseSequence2D query, PosePrior prior);

std::string batch_to_json(const IclBatch& batch);
IclBatch batch_from_json(std::string_view text);

struct AttentionParams {
  Array query;        // [E x E]
  Array key;          // [E x E]
  Array value;        // [E x E]
  Array output;       // [E x E]
  Array output_bias;  // [E]
};

struct LifterBlock {
  AttentionParams attention;
  MlpParams feed_forward;  // E -> hidden -> E, added to its input
};

struct LifterConfig {
  int depth = 2;  // blocks alternate spatial, temporal, spatial, ...
  int embed_dim = 64;
  int heads = 4;
  int ffn_hidden = 128;
  int prompt_hidden = 64;
};

struct LifterParams {
  MlpParams token_embedding;  // [du, dv, prior xyz] -> E
  Array joint_embedding;      // [17 x E]
  MlpParams prompt_encoder;   // [du, dv, x, y, z] -> hidden -> E
  std::vector<LifterBlock> spatial_blocks;
  std::vector<LifterBlock> temporal_blocks;
  MlpParams output_head;  // E -> 3, zero at init
  int depth = 0;
  int embed_dim = 0;
  int heads = 0;

  static LifterParams init(const LifterConfig& config, std::uint64_t seed);

  bool is_spatial(int block) const { return block % 2 == 0; }
  const LifterBlock& block(int i) const {
    return is_spatial(i) ? spatial_blocks[i / 2] : temporal_blocks[i / 2];
  }
  LifterBlock& block(int i) { return is_spatial(i) ? spatial_blocks[i / 2] : temporal_blocks[i / 2]; }

  // Throws ShapeError when shapes do not chain.
  void validate() const;
  LifterParams zeros_like() const;
  std::vector<Array*> tensors();
  std::vector<const Array*> tensors() const;
};

// Root-relative S_dd with the query's frame count and fps.
PoseSequence3D lift(const IclBatch& batch, const LifterParams& params);

// Sum of squared errors against the root-centered truth.
double lifter_loss(const IclBatch& batch, const LifterParams& params, const PoseSequence3D& truth);

struct LifterLossAndGradient {
  double loss = 0.0;
  LifterParams grads;
};

LifterLossAndGradient lifter_loss_and_gradient(const IclBatch& batch, const LifterParams& params,
                                               const PoseSequence3D& truth);

struct LifterTrainConfig {
  int epochs = 20;
  int batch_size = 8;
  int prompt_pairs = 2;
  AdamConfig adam;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  long first_step = 0;
  LifterConfig model;
};

struct LifterTrainResult {
  LifterParams params;
  PosePrior prior;                     // from the training split
  std::vector<PromptPair> prompt_bank;  // up to 8 training pairs for inference
  std::vector<CurvePoint> curve;
  double validation_loss = 0.0;  // of the returned params; 0 without a split
};

// All pairs must share one frame count. Prompts for each query are drawn
// from the other training pairs.
LifterTrainResult train_lifter(std::span<const PromptPair> dataset, const LifterTrainConfig& config,
                               std::optional<LifterParams> init = std::nullopt);

struct LifterCheckpoint {
  LifterParams params;
  PosePrior prior;
  std::vector<PromptPair> prompt_bank;
  long step = 0;
};

// ELP1 arrays plus a JSON sidecar {"depth", "embed_dim", "heads", ...}
// that also carries the prior and the prompt bank.
void save_lifter(const std::filesystem::path& checkpoint, const LifterCheckpoint& state);
LifterCheckpoint load_lifter(const std::filesystem::path& checkpoint);

// Lifts `query` using the checkpoint's prior and the first `prompt_pairs`
// bank entries, resampled to the query length.
PoseSequence3D lift_with_checkpoint(const PoseSequence2D& query, const LifterCheckpoint& state,
                                    int prompt_pairs);

}  // namespace elpose
