#include "elpose/metrics.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "elpose/errors.hpp"

namespace elpose {

namespace {

template <int D>
double mean_joint_error(std::span<const double> pred, std::span<const double> truth,
                        double scale = 1.0) {
  if (pred.size() != truth.size() || pred.empty()) throw ShapeError("pose shapes differ");
  const std::size_t n = pred.size() / D;
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double sq = 0.0;
    for (int c = 0; c < D; ++c) {
      const double d = scale * pred[k * D + c] - truth[k * D + c];
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(n);
}

template <int D>
double normalized_error(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw ShapeError("pose shapes differ");
  double pt = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pt += pred[i] * truth[i];
    pp += pred[i] * pred[i];
    tt += truth[i] * truth[i];
  }
  if (tt == 0.0) throw DegenerateError("n_mpjpe needs a nonzero reference");
  if (pp == 0.0) throw DegenerateError("n_mpjpe needs a nonzero prediction");
  return mean_joint_error<D>(pred, truth, pt / pp);
}

template <int D>
double velocity_error(const JointSequence<D>& pred, const JointSequence<D>& truth) {
  if (pred.values().size() != truth.values().size()) throw ShapeError("pose shapes differ");
  const int frames = truth.num_frames();
  if (frames < 2) throw TooShort("mpjve needs at least two frames");
  const std::size_t stride = JointSequence<D>::kFrameSize;
  std::vector<double> vp((frames - 1) * stride), vt((frames - 1) * stride);
  const auto& p = pred.values();
  const auto& t = truth.values();
  for (std::size_t i = 0; i < vp.size(); ++i) {
    vp[i] = (p[i + stride] - p[i]) * truth.fps();
    vt[i] = (t[i + stride] - t[i]) * truth.fps();
  }
  return mean_joint_error<D>(vp, vt);
}

}  // namespace

double mpjpe(const PoseSequence3D& pred, const PoseSequence3D& truth) {
  return mean_joint_error<3>(pred.values(), truth.values());
}
double mpjpe(const PoseSequence2D& pred, const PoseSequence2D& truth) {
  return mean_joint_error<2>(pred.values(), truth.values());
}
double n_mpjpe(const PoseSequence3D& pred, const PoseSequence3D& truth) {
  return normalized_error<3>(pred.values(), truth.values());
}
double n_mpjpe(const PoseSequence2D& pred, const PoseSequence2D& truth) {
  return normalized_error<2>(pred.values(), truth.values());
}
double mpjve(const PoseSequence3D& pred, const PoseSequence3D& truth) {
  return velocity_error(pred, truth);
}
double mpjve(const PoseSequence2D& pred, const PoseSequence2D& truth) {
  return velocity_error(pred, truth);
}

Embedder identity_embedder() {
  return [](const Image& frame) {
    if (frame.pixels.size() != static_cast<std::size_t>(frame.height) * frame.width * 3) {
      throw ShapeError("frame pixel count does not match H x W x 3");
    }
    double norm = 0.0;
    for (double v : frame.pixels) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw ValueError("cannot embed an all-zero frame");
    Embedding e(frame.pixels);
    for (double& v : e) v /= norm;
    return e;
  };
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw DimError("embedding dimensions differ");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw ValueError("zero embedding");
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

double clip_domain_star(std::span<const Embedding> generated,
                        std::span<const Embedding> references) {
  if (generated.empty() || references.empty()) throw EmptyInput("clip_domain_star needs frames");
  double total = 0.0;
  for (const auto& g : generated) {
    for (const auto& r : references) total += cosine_similarity(g, r);
  }
  return total / static_cast<double>(generated.size() * references.size());
}

namespace {

std::vector<Embedding> embed_all(std::span<const Image> frames, const Embedder& embedder) {
  std::vector<Embedding> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(embedder(f));
  return out;
}

}  // namespace

double clip_domain_star(std::span<const Image> generated, std::span<const Image> references,
                        const Embedder& embedder) {
  if (generated.empty() || references.empty()) throw EmptyInput("clip_domain_star needs frames");
  const auto g = embed_all(generated, embedder);
  const auto r = embed_all(references, embedder);
  return clip_domain_star(g, r);
}

std::vector<int> uniform_indices(int length, int count) {
  if (count < 1 || length < count) throw TooShort("cannot sample more frames than available");
  std::vector<int> idx(count);
  for (int k = 0; k < count; ++k) {
    const double pos = count == 1 ? 0.0 : static_cast<double>(k) * (length - 1) / (count - 1);
    idx[k] = static_cast<int>(std::lround(pos));
  }
  return idx;
}

double clip_smooth_star(std::span<const Embedding> generated,
                        const std::vector<std::vector<Embedding>>& references,
                        std::span<const int> sample_counts) {
  if (references.empty() || sample_counts.empty() || generated.empty()) {
    throw EmptyInput("clip_smooth_star needs references, sample counts and frames");
  }
  for (int k : sample_counts) {
    if (k != 1 && k != 2 && k != 4 && k != 8 && k != 16) {
      throw ValueError("sample counts must come from {1, 2, 4, 8, 16}");
    }
  }
  double total = 0.0;
  long terms = 0;
  const int gen_len = static_cast<int>(generated.size());
  for (const auto& ref : references) {
    if (ref.empty()) throw EmptyInput("empty reference video");
    for (int k : sample_counts) {
      const auto gi = uniform_indices(gen_len, k);
      const auto ri = uniform_indices(static_cast<int>(ref.size()), k);
      for (int s = 0; s < k; ++s) {
        total += cosine_similarity(generated[gi[s]], ref[ri[s]]);
        ++terms;
      }
    }
  }
  return total / static_cast<double>(terms);
}

double clip_smooth_star(std::span<const Image> generated,
                        const std::vector<std::vector<Image>>& references,
                        std::span<const int> sample_counts, const Embedder& embedder) {
  const auto g = embed_all(generated, embedder);
  std::vector<std::vector<Embedding>> r;
  for (const auto& ref : references) r.push_back(embed_all(ref, embedder));
  return clip_smooth_star(g, r, sample_counts);
}

FeatureStats feature_stats(std::span<const Embedding> samples) {
  if (samples.empty()) throw EmptyInput("feature_stats needs samples");
  const auto d = static_cast<Eigen::Index>(samples.front().size());
  Matrix x(static_cast<Eigen::Index>(samples.size()), d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (static_cast<Eigen::Index>(samples[i].size()) != d) throw DimError("ragged feature set");
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(samples[i].data(), d);
  }
  FeatureStats stats;
  stats.count = static_cast<long>(samples.size());
  stats.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - stats.mean.transpose();
  const double denom = stats.count > 1 ? static_cast<double>(stats.count - 1) : 1.0;
  stats.covariance = centered.transpose() * centered / denom;
  return stats;
}

namespace {

Matrix symmetric_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
  const Vector roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.size() != b.mean.size() || a.covariance.rows() != a.mean.size() ||
      b.covariance.rows() != b.mean.size()) {
    throw DimError("feature statistics have different dimensions");
  }
  // Tr((S_a S_b)^{1/2}) = Tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}); the inner
  // product is symmetric PSD so a symmetric eigen-decomposition applies.
  const Matrix root_a = symmetric_sqrt(a.covariance);
  const Matrix inner = root_a * b.covariance * root_a;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (inner + inner.transpose()),
                                            Eigen::EigenvaluesOnly);
  const double trace_cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double dist = (a.mean - b.mean).squaredNorm() + a.covariance.trace() +
                      b.covariance.trace() - 2.0 * trace_cross;
  return std::max(dist, 0.0);
}

std::vector<Embedding> parse_embedding_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed embedding file: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("dim") || !doc.contains("vectors")) {
    throw SchemaError("embedding file needs 'dim' and 'vectors'");
  }
  const auto dim = doc["dim"].get<std::size_t>();
  std::vector<Embedding> out;
  for (const auto& row : doc["vectors"]) {
    if (!row.is_array() || row.size() != dim) throw SchemaError("embedding row has wrong length");
    Embedding e = row.get<Embedding>();
    double norm = 0.0;
    for (double v : e) norm += v * v;
    if (std::abs(std::sqrt(norm) - 1.0) > 1e-6) throw ValueError("embedding rows must be unit norm");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Embedding> load_embedding_file(const std::filesystem::path& path) {
  return parse_embedding_json(read_text_file(path));
}

}  // namespace elpose
