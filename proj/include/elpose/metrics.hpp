#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "elpose/diffmath.hpp"
#include "elpose/skeleton.hpp"

namespace elpose {

// Mean over frames and joints of the Euclidean joint error.
double mpjpe(const PoseSequence3D& pred, const PoseSequence3D& truth);
double mpjpe(const PoseSequence2D& pred, const PoseSequence2D& truth);

// MPJPE after rescaling pred by s* = <pred, truth> / <pred, pred>.
double n_mpjpe(const PoseSequence3D& pred, const PoseSequence3D& truth);
double n_mpjpe(const PoseSequence2D& pred, const PoseSequence2D& truth);

// MPJPE of first differences times the truth fps.
double mpjve(const PoseSequence3D& pred, const PoseSequence3D& truth);
double mpjve(const PoseSequence2D& pred, const PoseSequence2D& truth);

// H x W x 3 frame with values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;
};

using Embedding = std::vector<double>;
using Embedder = std::function<Embedding(const Image&)>;

// Flattens the frame and l2-normalizes it. Throws ValueError on an all-zero
// frame.
Embedder identity_embedder();

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Mean cosine similarity over every (generated, reference) pair.
double clip_domain_star(std::span<const Embedding> generated, std::span<const Embedding> references);
double clip_domain_star(std::span<const Image> generated, std::span<const Image> references,
                        const Embedder& embedder);

// round(linspace(0, length-1, count)).
std::vector<int> uniform_indices(int length, int count);

// For every reference video and every K in sample_counts, K aligned frames
// are sampled uniformly from both videos; the score is the mean cosine over
// all sampled pairs.
double clip_smooth_star(std::span<const Embedding> generated,
                        const std::vector<std::vector<Embedding>>& references,
                        std::span<const int> sample_counts);
double clip_smooth_star(std::span<const Image> generated,
                        const std::vector<std::vector<Image>>& references,
                        std::span<const int> sample_counts, const Embedder& embedder);

struct FeatureStats {
  Vector mean;
  Matrix covariance;
  long count = 0;
};

// Sample mean and unbiased covariance (population covariance when count == 1).
FeatureStats feature_stats(std::span<const Embedding> samples);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// JSON {"dim": d, "vectors": [[...], ...]} with unit-norm rows.
std::vector<Embedding> load_embedding_file(const std::filesystem::path& path);
std::vector<Embedding> parse_embedding_json(std::string_view text);

}  // namespace elpose
