#include "elpose/lifting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "elpose/errors.hpp"
#include "elpose/rng.hpp"

namespace elpose {

namespace {

using json = nlohmann::json;

constexpr int kTokenFeatures = 5;
constexpr int kPromptBankSize = 8;

template <typename Seq>
std::vector<double> resample_values(const Seq& seq, int frames) {
  if (frames < 1) throw ValueError("resample target must be at least one frame");
  constexpr int F = Seq::kFrameSize;
  const int src = seq.num_frames();
  std::vector<double> out(static_cast<std::size_t>(frames) * F);
  for (int k = 0; k < frames; ++k) {
    const double x = frames == 1 ? 0.0 : static_cast<double>(k) * (src - 1) / (frames - 1);
    const int lo = std::min(static_cast<int>(std::floor(x)), src - 1);
    const int hi = std::min(lo + 1, src - 1);
    const double w = x - lo;
    const auto a = seq.frame(lo);
    const auto b = seq.frame(hi);
    for (int i = 0; i < F; ++i) {
      out[static_cast<std::size_t>(k) * F + i] = w == 0.0 ? a[i] : (1.0 - w) * a[i] + w * b[i];
    }
  }
  return out;
}

double resampled_fps(double fps, int src, int frames) {
  if (src < 2 || frames < 2) return fps;
  return fps * (frames - 1) / (src - 1);
}

// Rows t * 17 + j: [u_j - u_0, v_j - v_0].
Matrix relative_2d(const PoseSequence2D& seq) {
  const int T = seq.num_frames();
  Matrix m(T * kNumJoints, 2);
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      m(t * kNumJoints + j, 0) = seq.at(t, j, 0) - seq.at(t, 0, 0);
      m(t * kNumJoints + j, 1) = seq.at(t, j, 1) - seq.at(t, 0, 1);
    }
  }
  return m;
}

Matrix joint_rows(const PoseSequence3D& seq) {
  return ConstMatrixMap(seq.values().data(), seq.num_frames() * kNumJoints, 3);
}

Matrix token_features(const PoseSequence2D& pose_2d, const PoseSequence3D& pose_3d) {
  Matrix f(pose_2d.num_frames() * kNumJoints, kTokenFeatures);
  f.leftCols(2) = relative_2d(pose_2d);
  f.rightCols(3) = joint_rows(pose_3d);
  return f;
}

Matrix temporal_encoding(int frames, int dim) {
  Matrix enc(frames, dim);
  for (int t = 0; t < frames; ++t) {
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / dim);
      enc(t, i) = i % 2 == 0 ? std::sin(t * rate) : std::cos(t * rate);
    }
  }
  return enc;
}

using Groups = std::vector<std::vector<int>>;

Groups spatial_groups(int frames) {
  Groups g(frames);
  for (int t = 0; t < frames; ++t) {
    for (int j = 0; j < kNumJoints; ++j) g[t].push_back(t * kNumJoints + j);
  }
  return g;
}

Groups temporal_groups(int frames) {
  Groups g(kNumJoints);
  for (int j = 0; j < kNumJoints; ++j) {
    for (int t = 0; t < frames; ++t) g[j].push_back(t * kNumJoints + j);
  }
  return g;
}

struct AttentionCache {
  Matrix input, q, k, v, mixed;
  std::vector<Matrix> probs;  // group-major, then head
};

Matrix attention_forward(const AttentionParams& p, int heads, const Groups& groups, const Matrix& x,
                         AttentionCache& c) {
  const Eigen::Index E = x.cols();
  const Eigen::Index d = E / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  c.input = x;
  c.q = x * p.query.matrix().transpose();
  c.k = x * p.key.matrix().transpose();
  c.v = x * p.value.matrix().transpose();
  c.mixed.setZero(x.rows(), E);
  c.probs.clear();
  for (const auto& idx : groups) {
    for (int h = 0; h < heads; ++h) {
      const auto cols = Eigen::seqN(h * d, d);
      const Matrix qh = c.q(idx, cols);
      const Matrix kh = c.k(idx, cols);
      Matrix s = qh * kh.transpose() * scale;
      s.colwise() -= s.rowwise().maxCoeff();
      s = s.array().exp();
      s.array().colwise() /= s.rowwise().sum().array();
      c.mixed(idx, cols) = s * c.v(idx, cols);
      c.probs.push_back(std::move(s));
    }
  }
  Matrix out = c.mixed * p.output.matrix().transpose();
  out.rowwise() += p.output_bias.matrix().row(0);
  return out;
}

Matrix attention_backward(const AttentionParams& p, int heads, const Groups& groups,
                          const AttentionCache& c, const Matrix& upstream, AttentionParams& g) {
  const Eigen::Index E = upstream.cols();
  const Eigen::Index d = E / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  g.output.matrix() += upstream.transpose() * c.mixed;
  g.output_bias.matrix() += upstream.colwise().sum();
  const Matrix d_mixed = upstream * p.output.matrix();
  Matrix dq = Matrix::Zero(upstream.rows(), E);
  Matrix dk = Matrix::Zero(upstream.rows(), E);
  Matrix dv = Matrix::Zero(upstream.rows(), E);
  std::size_t n = 0;
  for (const auto& idx : groups) {
    for (int h = 0; h < heads; ++h) {
      const auto cols = Eigen::seqN(h * d, d);
      const Matrix& prob = c.probs[n++];
      const Matrix d_out = d_mixed(idx, cols);
      const Matrix d_prob = d_out * c.v(idx, cols).transpose();
      dv(idx, cols) = prob.transpose() * d_out;
      Matrix d_score = prob.array() * (d_prob.colwise() - (d_prob.array() * prob.array())
                                                               .rowwise()
                                                               .sum()
                                                               .matrix())
                                          .array();
      d_score *= scale;
      dq(idx, cols) = d_score * c.k(idx, cols);
      dk(idx, cols) = d_score.transpose() * c.q(idx, cols);
    }
  }
  g.query.matrix() += dq.transpose() * c.input;
  g.key.matrix() += dk.transpose() * c.input;
  g.value.matrix() += dv.transpose() * c.input;
  return dq * p.query.matrix() + dk * p.key.matrix() + dv * p.value.matrix();
}

struct BlockCache {
  AttentionCache attention;
  MlpTrace feed_forward;
};

struct LiftCache {
  int frames = 0;
  MlpTrace embedding;
  MlpTrace prompt;
  Eigen::Index prompt_rows = 0;
  std::vector<BlockCache> blocks;
  MlpTrace head;
};

void check_batch(const IclBatch& batch, const LifterParams& params) {
  const int T = batch.num_frames();
  if (batch.query_prior.num_frames() != T) throw ShapeError("prior length differs from the query");
  for (const auto& p : batch.prompt_pairs) {
    if (p.pose_2d.num_frames() != T || p.pose_3d.num_frames() != T) {
      throw ShapeError("prompt pair length differs from the query");
    }
  }
  params.validate();
}

// Returns T*17 x 3 root-relative joint rows.
Matrix lift_forward(const IclBatch& batch, const LifterParams& params, LiftCache& cache) {
  check_batch(batch, params);
  const int T = batch.num_frames();
  cache.frames = T;
  const Matrix prior = joint_rows(batch.query_prior.frames);
  Matrix x = mlp_forward(params.token_embedding, token_features(batch.query_2d, batch.query_prior.frames),
                         &cache.embedding);
  const Matrix joint_emb = params.joint_embedding.matrix();
  const Matrix time_emb = temporal_encoding(T, params.embed_dim);
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      x.row(t * kNumJoints + j) += joint_emb.row(j) + time_emb.row(t);
    }
  }
  cache.prompt_rows = 0;
  if (!batch.prompt_pairs.empty()) {
    Matrix feats(0, kTokenFeatures);
    for (const auto& p : batch.prompt_pairs) {
      const Matrix f = token_features(p.pose_2d, root_center(p.pose_3d));
      feats.conservativeResize(feats.rows() + f.rows(), Eigen::NoChange);
      feats.bottomRows(f.rows()) = f;
    }
    cache.prompt_rows = feats.rows();
    const Matrix encoded = mlp_forward(params.prompt_encoder, feats, &cache.prompt);
    x.rowwise() += encoded.colwise().mean();
  }
  const Groups spatial = spatial_groups(T);
  const Groups temporal = temporal_groups(T);
  cache.blocks.resize(params.depth);
  for (int i = 0; i < params.depth; ++i) {
    const LifterBlock& b = params.block(i);
    BlockCache& bc = cache.blocks[i];
    x += attention_forward(b.attention, params.heads, params.is_spatial(i) ? spatial : temporal, x,
                           bc.attention);
    x += mlp_forward(b.feed_forward, x, &bc.feed_forward);
  }
  Matrix out = prior + mlp_forward(params.output_head, x, &cache.head);
  for (int t = 0; t < T; ++t) out.row(t * kNumJoints).setZero();
  return out;
}

void lift_backward(const LifterParams& params, const LiftCache& cache,
                   Matrix upstream, LifterParams& grads) {
  const int T = cache.frames;
  for (int t = 0; t < T; ++t) upstream.row(t * kNumJoints).setZero();
  Matrix dx = mlp_backward(params.output_head, cache.head, upstream, grads.output_head);
  const Groups spatial = spatial_groups(T);
  const Groups temporal = temporal_groups(T);
  for (int i = params.depth - 1; i >= 0; --i) {
    const LifterBlock& b = params.block(i);
    LifterBlock& g = grads.block(i);
    const BlockCache& bc = cache.blocks[i];
    dx += mlp_backward(b.feed_forward, bc.feed_forward, dx, g.feed_forward);
    dx += attention_backward(b.attention, params.heads, params.is_spatial(i) ? spatial : temporal,
                             bc.attention, dx, g.attention);
  }
  auto joint_grad = grads.joint_embedding.matrix();
  for (Eigen::Index r = 0; r < dx.rows(); ++r) joint_grad.row(r % kNumJoints) += dx.row(r);
  mlp_backward(params.token_embedding, cache.embedding, dx, grads.token_embedding);
  if (cache.prompt_rows > 0) {
    const Matrix per_row = (dx.colwise().sum() / static_cast<double>(cache.prompt_rows))
                               .replicate(cache.prompt_rows, 1);
    mlp_backward(params.prompt_encoder, cache.prompt, per_row, grads.prompt_encoder);
  }
}

PoseSequence3D rows_to_sequence(const Matrix& rows, double fps) {
  std::vector<double> values(rows.data(), rows.data() + rows.size());
  return PoseSequence3D(std::move(values), fps, FrameOfReference::kRootRelative);
}

Array glorot_array(std::size_t rows, std::size_t cols, Rng& rng) {
  Array a({rows, cols});
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (auto& v : a.data()) v = uniform(rng, -limit, limit);
  return a;
}

LifterBlock make_block(const LifterConfig& config, Rng& rng) {
  const auto E = static_cast<std::size_t>(config.embed_dim);
  LifterBlock b;
  b.attention.query = glorot_array(E, E, rng);
  b.attention.key = glorot_array(E, E, rng);
  b.attention.value = glorot_array(E, E, rng);
  b.attention.output = glorot_array(E, E, rng);
  b.attention.output_bias = Array({E});
  const int dims[] = {config.embed_dim, config.ffn_hidden, config.embed_dim};
  b.feed_forward = make_mlp(dims, Activation::kTanh, rng);
  return b;
}

void collect_block(LifterBlock& b, std::vector<Array*>& out) {
  for (auto* a : {&b.attention.query, &b.attention.key, &b.attention.value, &b.attention.output,
                  &b.attention.output_bias}) {
    out.push_back(a);
  }
  collect_params(b.feed_forward, out);
}

json prior_to_json(const PosePrior& prior) {
  return {{"source_count", prior.source_count}, {"frames", json::parse(to_json_string(prior.frames))}};
}

PosePrior prior_from_json(const json& j) {
  PosePrior prior{std::get<PoseSequence3D>(parse_pose_sequence(j.at("frames").dump(), PoseKind::k3D)),
                  j.at("source_count").get<int>()};
  if (prior.source_count < 1) throw SchemaError("prior source_count must be at least 1");
  return prior;
}

json pair_to_json(const PromptPair& p) {
  return {{"pose_2d", json::parse(to_json_string(p.pose_2d))},
          {"pose_3d", json::parse(to_json_string(p.pose_3d))}};
}

PromptPair pair_from_json(const json& j) {
  return {std::get<PoseSequence2D>(parse_pose_sequence(j.at("pose_2d").dump(), PoseKind::k2D)),
          std::get<PoseSequence3D>(parse_pose_sequence(j.at("pose_3d").dump(), PoseKind::k3D))};
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng() % i)]);
  return idx;
}

// Up to `count` distinct members of `pool` other than `exclude`.
std::vector<PromptPair> draw_prompts(std::span<const PromptPair> dataset,
                                     const std::vector<std::size_t>& pool, std::size_t exclude,
                                     int count, Rng& rng) {
  std::vector<std::size_t> candidates;
  for (auto i : pool) {
    if (i != exclude) candidates.push_back(i);
  }
  std::vector<PromptPair> out;
  for (int k = 0; k < count && !candidates.empty(); ++k) {
    const std::size_t pick = static_cast<std::size_t>(rng() % candidates.size());
    out.push_back(dataset[candidates[pick]]);
    candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return out;
}

}  // namespace

PoseSequence3D resample(const PoseSequence3D& seq, int frames) {
  auto values = resample_values(seq, frames);
  const auto frame = infer_frame_of_reference(values);
  return PoseSequence3D(std::move(values), resampled_fps(seq.fps(), seq.num_frames(), frames), frame);
}

PoseSequence2D resample(const PoseSequence2D& seq, int frames) {
  std::optional<std::vector<double>> confidence;
  if (seq.confidence()) {
    confidence.emplace(static_cast<std::size_t>(frames) * kNumJoints);
    const int src = seq.num_frames();
    for (int k = 0; k < frames; ++k) {
      const int nearest =
          frames == 1 ? 0 : static_cast<int>(std::lround(static_cast<double>(k) * (src - 1) / (frames - 1)));
      std::copy_n(seq.confidence()->begin() + nearest * kNumJoints, kNumJoints,
                  confidence->begin() + k * kNumJoints);
    }
  }
  return PoseSequence2D(resample_values(seq, frames),
                        resampled_fps(seq.fps(), seq.num_frames(), frames), std::move(confidence));
}

PosePrior compute_pose_prior(std::span<const PoseSequence3D> dataset, int target_frames) {
  if (dataset.empty()) throw EmptyDataset("pose prior needs at least one sequence");
  if (target_frames < 1) throw ValueError("prior needs at least one frame");
  std::vector<double> sum(static_cast<std::size_t>(target_frames) * kStateDim, 0.0);
  for (const auto& seq : dataset) {
    const auto values = resample_values(root_center(seq), target_frames);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += values[i];
  }
  const double n = static_cast<double>(dataset.size());
  for (auto& v : sum) v /= n;
  const double fps = resampled_fps(dataset.front().fps(), dataset.front().num_frames(), target_frames);
  return {PoseSequence3D(std::move(sum), fps, FrameOfReference::kRootRelative),
          static_cast<int>(dataset.size())};
}

IclBatch assemble_prompt(std::vector<PromptPair> pairs, PoseSequence2D query, PosePrior prior) {
  const int T = query.num_frames();
  if (prior.num_frames() != T) {
    throw ShapeError("prior has " + std::to_string(prior.num_frames()) + " frames, query has " +
                     std::to_string(T));
  }
  for (const auto& p : pairs) {
    if (p.pose_2d.num_frames() != T || p.pose_3d.num_frames() != T) {
      throw ShapeError("prompt pair frame counts must match the query (" + std::to_string(T) + ")");
    }
  }
  return {std::move(pairs), std::move(query), std::move(prior)};
}

std::string batch_to_json(const IclBatch& batch) {
  json doc;
  doc["prompt_pairs"] = json::array();
  for (const auto& p : batch.prompt_pairs) doc["prompt_pairs"].push_back(pair_to_json(p));
  doc["query_2d"] = json::parse(to_json_string(batch.query_2d));
  doc["query_prior"] = prior_to_json(batch.query_prior);
  return doc.dump() + "\n";
}

IclBatch batch_from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    std::vector<PromptPair> pairs;
    for (const auto& p : doc.at("prompt_pairs")) pairs.push_back(pair_from_json(p));
    auto query = std::get<PoseSequence2D>(parse_pose_sequence(doc.at("query_2d").dump(), PoseKind::k2D));
    return assemble_prompt(std::move(pairs), std::move(query), prior_from_json(doc.at("query_prior")));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed batch: ") + e.what());
  } catch (const json::exception& e) {
    throw SchemaError(std::string("invalid batch: ") + e.what());
  }
}

LifterParams LifterParams::init(const LifterConfig& config, std::uint64_t seed) {
  if (config.depth < 1) throw ConfigError("lifter depth must be at least 1");
  if (config.embed_dim < 1 || config.heads < 1 || config.embed_dim % config.heads != 0) {
    throw ConfigError("embed_dim must be a positive multiple of heads");
  }
  if (config.ffn_hidden < 1 || config.prompt_hidden < 1) throw ConfigError("hidden widths must be positive");
  auto rng = make_rng(seed, "lifter/init");
  const int E = config.embed_dim;
  LifterParams p;
  const int embed_dims[] = {kTokenFeatures, E};
  const int prompt_dims[] = {kTokenFeatures, config.prompt_hidden, E};
  const int head_dims[] = {E, 3};
  p.token_embedding = make_mlp(embed_dims, Activation::kTanh, rng);
  p.joint_embedding = glorot_array(kNumJoints, static_cast<std::size_t>(E), rng);
  p.prompt_encoder = make_mlp(prompt_dims, Activation::kTanh, rng);
  for (int i = 0; i < config.depth; ++i) {
    (i % 2 == 0 ? p.spatial_blocks : p.temporal_blocks).push_back(make_block(config, rng));
  }
  p.output_head = make_mlp(head_dims, Activation::kTanh, rng);
  p.output_head.zero_final_layer();
  p.depth = config.depth;
  p.embed_dim = E;
  p.heads = config.heads;
  return p;
}

void LifterParams::validate() const {
  if (depth < 1) throw ShapeError("lifter depth must be at least 1");
  if (static_cast<int>(spatial_blocks.size()) != (depth + 1) / 2 ||
      static_cast<int>(temporal_blocks.size()) != depth / 2) {
    throw ShapeError("block count does not match depth");
  }
  if (heads < 1 || embed_dim % heads != 0) throw ShapeError("embed_dim must be a multiple of heads");
  const auto E = static_cast<std::size_t>(embed_dim);
  token_embedding.validate();
  prompt_encoder.validate();
  output_head.validate();
  if (token_embedding.in_dim() != kTokenFeatures || token_embedding.out_dim() != embed_dim ||
      prompt_encoder.in_dim() != kTokenFeatures || prompt_encoder.out_dim() != embed_dim ||
      output_head.in_dim() != embed_dim || output_head.out_dim() != 3) {
    throw ShapeError("lifter embedding or head dims do not chain");
  }
  if (joint_embedding.shape() != std::vector<std::size_t>{kNumJoints, E}) {
    throw ShapeError("joint embedding must be 17 x embed_dim");
  }
  const std::vector<std::size_t> square{E, E};
  for (int i = 0; i < depth; ++i) {
    const auto& b = block(i);
    const auto& a = b.attention;
    if (a.query.shape() != square || a.key.shape() != square || a.value.shape() != square ||
        a.output.shape() != square || a.output_bias.shape() != std::vector<std::size_t>{E}) {
      throw ShapeError("attention projections must be embed_dim x embed_dim");
    }
    b.feed_forward.validate();
    if (b.feed_forward.in_dim() != embed_dim || b.feed_forward.out_dim() != embed_dim) {
      throw ShapeError("feed-forward dims must map embed_dim to embed_dim");
    }
  }
}

std::vector<Array*> LifterParams::tensors() {
  std::vector<Array*> out;
  collect_params(token_embedding, out);
  out.push_back(&joint_embedding);
  collect_params(prompt_encoder, out);
  for (int i = 0; i < depth; ++i) collect_block(block(i), out);
  collect_params(output_head, out);
  return out;
}

std::vector<const Array*> LifterParams::tensors() const {
  auto mutable_refs = const_cast<LifterParams*>(this)->tensors();
  return {mutable_refs.begin(), mutable_refs.end()};
}

LifterParams LifterParams::zeros_like() const {
  LifterParams z = *this;
  for (auto* a : z.tensors()) a->fill(0.0);
  return z;
}

PoseSequence3D lift(const IclBatch& batch, const LifterParams& params) {
  LiftCache cache;
  return rows_to_sequence(lift_forward(batch, params, cache), batch.query_2d.fps());
}

double lifter_loss(const IclBatch& batch, const LifterParams& params, const PoseSequence3D& truth) {
  if (truth.num_frames() != batch.num_frames()) throw ShapeError("truth length differs from the query");
  LiftCache cache;
  return (lift_forward(batch, params, cache) - joint_rows(root_center(truth))).squaredNorm();
}

LifterLossAndGradient lifter_loss_and_gradient(const IclBatch& batch, const LifterParams& params,
                                               const PoseSequence3D& truth) {
  if (truth.num_frames() != batch.num_frames()) throw ShapeError("truth length differs from the query");
  LiftCache cache;
  const Matrix diff = lift_forward(batch, params, cache) - joint_rows(root_center(truth));
  LifterLossAndGradient out{diff.squaredNorm(), params.zeros_like()};
  lift_backward(params, cache, 2.0 * diff, out.grads);
  return out;
}

LifterTrainResult train_lifter(std::span<const PromptPair> dataset, const LifterTrainConfig& config,
                               std::optional<LifterParams> init) {
  if (dataset.empty()) throw EmptyDataset("lifter training needs samples");
  if (config.epochs < 0 || config.batch_size < 1 || config.prompt_pairs < 0) {
    throw ConfigError("invalid epochs, batch size or prompt count");
  }
  if (config.validation_fraction < 0.0 || config.validation_fraction >= 1.0) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }
  const int T = dataset.front().pose_2d.num_frames();
  for (const auto& s : dataset) {
    if (s.pose_2d.num_frames() != T || s.pose_3d.num_frames() != T) {
      throw ShapeError("lifter training sequences must share one frame count");
    }
  }

  auto split_rng = make_rng(config.seed, "lifter/split");
  const auto order = shuffled(dataset.size(), split_rng);
  std::size_t n_val =
      static_cast<std::size_t>(std::ceil(config.validation_fraction * static_cast<double>(dataset.size())));
  if (n_val >= dataset.size()) n_val = 0;
  const std::vector<std::size_t> val(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));

  std::vector<PoseSequence3D> train_3d;
  for (auto i : train) train_3d.push_back(dataset[i].pose_3d);
  LifterTrainResult result{init ? *init : LifterParams::init(config.model, config.seed),
                           compute_pose_prior(train_3d, T), {}, {}, 0.0};
  auto bank_rng = make_rng(config.seed, "lifter/prompt-bank");
  result.prompt_bank = draw_prompts(dataset, train, dataset.size(), kPromptBankSize, bank_rng);
  LifterParams& params = result.params;
  params.validate();

  std::vector<std::pair<IclBatch, std::size_t>> val_batches;
  auto val_rng = make_rng(config.seed, "lifter/validation-prompts");
  for (auto i : val) {
    val_batches.emplace_back(assemble_prompt(draw_prompts(dataset, train, i, config.prompt_pairs, val_rng),
                                             dataset[i].pose_2d, result.prior),
                             i);
  }
  auto validation_loss = [&](const LifterParams& p) {
    double total = 0.0;
    for (const auto& [batch, i] : val_batches) total += lifter_loss(batch, p, dataset[i].pose_3d);
    return val_batches.empty() ? 0.0 : total / static_cast<double>(val_batches.size());
  };
  LifterParams best = params;
  double best_val = validation_loss(params);

  auto rng = make_rng(config.seed, "lifter/shuffle");
  AdamState adam;
  long step = config.first_step;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto perm = shuffled(train.size(), rng);
    for (std::size_t b = 0; b < perm.size(); b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t e = std::min(perm.size(), b + static_cast<std::size_t>(config.batch_size));
      LifterParams grads = params.zeros_like();
      auto grad_refs = grads.tensors();
      double batch_loss = 0.0;
      for (std::size_t k = b; k < e; ++k) {
        const std::size_t i = train[perm[k]];
        const auto batch = assemble_prompt(draw_prompts(dataset, train, i, config.prompt_pairs, rng),
                                           dataset[i].pose_2d, result.prior);
        auto lg = lifter_loss_and_gradient(batch, params, dataset[i].pose_3d);
        batch_loss += lg.loss;
        const auto src = std::as_const(lg.grads).tensors();
        for (std::size_t n = 0; n < grad_refs.size(); ++n) grad_refs[n]->vector() += src[n]->vector();
      }
      const double scale = 1.0 / static_cast<double>(e - b);
      for (auto* g : grad_refs) g->vector() *= scale;
      auto param_refs = params.tensors();
      optimizer_step(param_refs, std::as_const(grads).tensors(), adam, config.adam);
      result.curve.push_back({++step, batch_loss * scale});
    }
    if (!val_batches.empty()) {
      const double v = validation_loss(params);
      if (v <= best_val) {
        best_val = v;
        best = params;
      }
    }
  }
  if (!val_batches.empty()) params = best;
  result.validation_loss = best_val;
  return result;
}

void save_lifter(const std::filesystem::path& checkpoint, const LifterCheckpoint& state) {
  std::vector<Array> arrays;
  for (const auto* a : state.params.tensors()) arrays.push_back(*a);
  write_checkpoint(checkpoint, arrays);
  json side;
  side["depth"] = state.params.depth;
  side["embed_dim"] = state.params.embed_dim;
  side["heads"] = state.params.heads;
  side["ffn_hidden"] = state.params.block(0).feed_forward.layers.front().out_dim();
  side["prompt_hidden"] = state.params.prompt_encoder.layers.front().out_dim();
  side["step"] = state.step;
  side["prior"] = prior_to_json(state.prior);
  side["prompt_bank"] = json::array();
  for (const auto& p : state.prompt_bank) side["prompt_bank"].push_back(pair_to_json(p));
  write_text_file(checkpoint.string() + ".json", side.dump(2) + "\n");
}

LifterCheckpoint load_lifter(const std::filesystem::path& checkpoint) {
  const auto arrays = read_checkpoint(checkpoint);
  const std::filesystem::path side_path(checkpoint.string() + ".json");
  if (!std::filesystem::exists(side_path)) throw MissingCheckpoint("missing sidecar " + side_path.string());
  try {
    const json side = json::parse(read_text_file(side_path));
    LifterConfig config;
    config.depth = side.at("depth").get<int>();
    config.embed_dim = side.at("embed_dim").get<int>();
    config.heads = side.at("heads").get<int>();
    config.ffn_hidden = side.value("ffn_hidden", config.ffn_hidden);
    config.prompt_hidden = side.value("prompt_hidden", config.prompt_hidden);
    LifterCheckpoint state{LifterParams::init(config, 0), prior_from_json(side.at("prior")), {},
                           side.value("step", 0L)};
    auto refs = state.params.tensors();
    if (refs.size() != arrays.size()) throw ParseError("checkpoint array count does not match the sidecar");
    for (std::size_t i = 0; i < refs.size(); ++i) {
      if (refs[i]->shape() != arrays[i].shape()) {
        throw ShapeError("checkpoint array shape does not match model configuration");
      }
      *refs[i] = arrays[i];
    }
    for (const auto& p : side.at("prompt_bank")) state.prompt_bank.push_back(pair_from_json(p));
    return state;
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("bad lifter sidecar: ") + e.what());
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad lifter sidecar: ") + e.what());
  }
}

PoseSequence3D lift_with_checkpoint(const PoseSequence2D& query, const LifterCheckpoint& state,
                                    int prompt_pairs) {
  const int T = query.num_frames();
  std::vector<PromptPair> pairs;
  for (int i = 0; i < prompt_pairs && i < static_cast<int>(state.prompt_bank.size()); ++i) {
    const auto& p = state.prompt_bank[i];
    pairs.push_back({resample(p.pose_2d, T), resample(p.pose_3d, T)});
  }
  PosePrior prior{resample(state.prior.frames, T), state.prior.source_count};
  return lift(assemble_prompt(std::move(pairs), query, std::move(prior)), state.params);
}

}  // namespace elpose
