#include "elpose/physnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "elpose/errors.hpp"
#include "elpose/projection.hpp"
#include "elpose/rng.hpp"

namespace elpose {

namespace {

constexpr int kWindow = 3;
constexpr int kMinFrames = 7;

Matrix sequence_matrix(const PoseSequence3D& seq) {
  return ConstMatrixMap(seq.values().data(), seq.num_frames(), kStateDim);
}

StateVector row_state(const Matrix& m, Eigen::Index r) {
  StateVector s;
  Eigen::Map<Eigen::RowVectorXd>(s.values.data(), kStateDim) = m.row(r);
  return s;
}

Eigen::Map<const Eigen::VectorXd> as_vec(const StateVector& s) {
  return {s.values.data(), kStateDim};
}

// Rows [s_{t-2}, s_{t-1}, s_t] forward or [s_{t+2}, s_{t+1}, s_t] reverse, for
// the frames returned by window_frames().
Matrix window_matrix(const Matrix& seq, Direction dir, int first, int count) {
  Matrix w(count, kWindow * kStateDim);
  for (int k = 0; k < count; ++k) {
    const int t = first + k;
    for (int i = 0; i < kWindow; ++i) {
      const int src = dir == Direction::kForward ? t - (kWindow - 1) + i : t + (kWindow - 1) - i;
      w.block(k, i * kStateDim, 1, kStateDim) = seq.row(src);
    }
  }
  return w;
}

std::pair<int, int> window_frames(int frames, Direction dir) {
  const int count = std::max(frames - (kWindow - 1), 0);
  return {dir == Direction::kForward ? kWindow - 1 : 0, count};
}

Matrix global_inputs(const Matrix& seq) {
  Matrix x(seq.rows(), 2 * kStateDim);
  x.leftCols(kStateDim) = seq;
  x.rightCols(kStateDim) = seq.colwise().mean().replicate(seq.rows(), 1);
  return x;
}

MlpParams& local_grads_for(PhysNetParams& grads, Direction d) {
  return d == Direction::kReverse && !grads.shares_local_weights() ? grads.local_encoder_reverse
                                                                   : grads.local_encoder;
}

void symmetrize_into(const double* packed, int n, Matrix& out) {
  out.resize(n, n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      out(i, j) = packed[k];
      out(j, i) = packed[k];
      ++k;
    }
  }
}

struct Step {
  Direction dir;
  int t;       // frame whose state drives the step
  int target;  // predicted frame
  int prev;    // frame of the lagging state
};

// One evaluation of the network with everything the reverse pass needs.
class PhysNetPass {
 public:
  void run(const PhysNetParams& p, const Matrix& seq, NoiseMode mode, std::uint64_t seed);
  // d_out is d(loss)/d(output) for all T frames; rows of pass-through frames
  // are ignored. noise_weight scales the noise regularizer's gradient.
  void backward(const PhysNetParams& p, const Matrix& d_out, double noise_weight,
                PhysNetParams& grads) const;

  Matrix output;
  std::vector<StateVector> noise_means;
  std::array<Matrix, 2> states;  // per direction, T x 51 including seeds

 private:
  int frames_ = 0;
  double dt_ = 0.0;
  bool mask_root_ = false;
  MlpTrace global_trace_;
  std::array<MlpTrace, 2> local_traces_;
  std::vector<Step> steps_;
  std::array<MlpTrace, 4> head_traces_;
  Matrix forces_, constraints_, packed_, noise_;
  std::vector<Matrix> system_;  // minv + noise per step
  std::vector<int> counts_;
  MlpTrace decoder_trace_;
};

void PhysNetPass::run(const PhysNetParams& p, const Matrix& seq, NoiseMode mode,
                      std::uint64_t seed) {
  frames_ = static_cast<int>(seq.rows());
  if (frames_ < kMinFrames) {
    throw TooShort("reestimation needs at least 7 frames, got " + std::to_string(frames_));
  }
  dt_ = p.dt;
  mask_root_ = seq.leftCols(3).isZero(0.0);
  const int T = frames_;

  const Matrix global = mlp_forward(p.global_encoder, global_inputs(seq), &global_trace_);
  for (Direction dir : {Direction::kForward, Direction::kReverse}) {
    const int d = static_cast<int>(dir);
    const auto [first, count] = window_frames(T, dir);
    const Matrix local =
        mlp_forward(p.local_for(dir), window_matrix(seq, dir, first, count), &local_traces_[d]);
    Matrix& q = states[d];
    q = seq;  // seed frames keep their observed values
    q.middleRows(first, count) += global.middleRows(first, count) + local;
  }

  steps_.clear();
  for (int t = kWindow - 1; t <= T - 4; ++t) steps_.push_back({Direction::kForward, t, t + 1, t - 1});
  for (int t = T - 3; t >= 3; --t) steps_.push_back({Direction::kReverse, t, t - 1, t + 1});
  const int rows = static_cast<int>(steps_.size());

  Matrix head_in(rows, kStateDim);
  for (int r = 0; r < rows; ++r) {
    head_in.row(r) = states[static_cast<int>(steps_[r].dir)].row(steps_[r].t);
  }
  forces_ = mlp_forward(p.head_forces, head_in, &head_traces_[0]);
  constraints_ = mlp_forward(p.head_constraints, head_in, &head_traces_[1]);
  packed_ = mlp_forward(p.head_inverse_mass, head_in, &head_traces_[2]);
  noise_ = mlp_forward(p.head_noise, head_in, &head_traces_[3]);

  system_.resize(rows);
  noise_means.assign(rows, StateVector{});
  Matrix predictions(rows, kStateDim);
  const std::uint64_t noise_stream = stream_seed(seed, "physnet/noise");
  for (int r = 0; r < rows; ++r) {
    const StateVector mean = row_state(noise_, r);
    noise_means[r] = mean;
    Matrix& a = system_[r];
    symmetrize_into(packed_.row(r).data(), kStateDim, a);
    a += sample_noise(mean, mode, noise_stream + static_cast<std::uint64_t>(r));
    const Vector v = (forces_.row(r) - constraints_.row(r)).transpose();
    const Vector accel = a * v;
    const Matrix& q = states[static_cast<int>(steps_[r].dir)];
    predictions.row(r) =
        accel.transpose() * (dt_ * dt_) + 2.0 * q.row(steps_[r].t) - q.row(steps_[r].prev);
  }

  Matrix merged = Matrix::Zero(T, kStateDim);
  counts_.assign(T, 0);
  for (int r = 0; r < rows; ++r) {
    merged.row(steps_[r].target) += predictions.row(r);
    ++counts_[steps_[r].target];
  }
  const int lo = 2, n_dec = T - 4;
  for (int k = lo; k < lo + n_dec; ++k) merged.row(k) /= counts_[k];

  const Matrix decoded_in = merged.middleRows(lo, n_dec);
  Matrix decoded = decoded_in + mlp_forward(p.pose_decoder, decoded_in, &decoder_trace_);
  if (mask_root_) decoded.leftCols(3).setZero();
  output = seq;
  output.middleRows(lo, n_dec) = decoded;
}

void PhysNetPass::backward(const PhysNetParams& p, const Matrix& d_out, double noise_weight,
                           PhysNetParams& grads) const {
  const int T = frames_;
  const int lo = 2, n_dec = T - 4;
  Matrix d_dec = d_out.middleRows(lo, n_dec);
  if (mask_root_) d_dec.leftCols(3).setZero();
  Matrix d_merged = d_dec + mlp_backward(p.pose_decoder, decoder_trace_, d_dec, grads.pose_decoder);

  const int rows = static_cast<int>(steps_.size());
  std::array<Matrix, 2> d_states{Matrix::Zero(T, kStateDim), Matrix::Zero(T, kStateDim)};
  Matrix d_forces(rows, kStateDim), d_packed(rows, kPackedSize), d_noise(rows, kStateDim);
  const double columns = std::sqrt(static_cast<double>(kStateDim));
  for (int r = 0; r < rows; ++r) {
    const Step& s = steps_[r];
    const auto d_pred = d_merged.row(s.target - lo) / counts_[s.target];
    auto& dq = d_states[static_cast<int>(s.dir)];
    dq.row(s.t) += 2.0 * d_pred;
    dq.row(s.prev) -= d_pred;
    const Vector d_acc = d_pred.transpose() * (dt_ * dt_);
    const Vector v = (forces_.row(r) - constraints_.row(r)).transpose();
    const Matrix d_sys = d_acc * v.transpose();
    d_forces.row(r) = (system_[r].transpose() * d_acc).transpose();
    int k = 0;
    for (int i = 0; i < kStateDim; ++i) {
      d_packed(r, k++) = d_sys(i, i);
      for (int j = i + 1; j < kStateDim; ++j) d_packed(r, k++) = d_sys(i, j) + d_sys(j, i);
    }
    d_noise.row(r) = d_sys.rowwise().sum().transpose();
    if (noise_weight != 0.0) {
      const double norm = noise_.row(r).norm();
      if (norm > 0.0) d_noise.row(r) += noise_weight * columns / norm * noise_.row(r);
    }
  }

  Matrix d_head_in = mlp_backward(p.head_forces, head_traces_[0], d_forces, grads.head_forces);
  d_head_in += mlp_backward(p.head_constraints, head_traces_[1], -d_forces, grads.head_constraints);
  d_head_in += mlp_backward(p.head_inverse_mass, head_traces_[2], d_packed, grads.head_inverse_mass);
  d_head_in += mlp_backward(p.head_noise, head_traces_[3], d_noise, grads.head_noise);
  for (int r = 0; r < rows; ++r) {
    d_states[static_cast<int>(steps_[r].dir)].row(steps_[r].t) += d_head_in.row(r);
  }

  Matrix d_global = Matrix::Zero(T, kStateDim);
  for (Direction dir : {Direction::kForward, Direction::kReverse}) {
    const int d = static_cast<int>(dir);
    const auto [first, count] = window_frames(T, dir);
    const Matrix d_local = d_states[d].middleRows(first, count);
    d_global.middleRows(first, count) += d_local;
    mlp_backward(p.local_for(dir), local_traces_[d], d_local, local_grads_for(grads, dir));
  }
  mlp_backward(p.global_encoder, global_trace_, d_global, grads.global_encoder);
}

double resolved_dt(const PhysNetParams& params, const PoseSequence3D& seq) {
  return params.dt > 0.0 ? params.dt : 1.0 / seq.fps();
}

}  // namespace

PhysNetParams PhysNetParams::init(const PhysNetConfig& config, std::uint64_t seed) {
  if (config.head_hidden < 1 || config.decoder_hidden < 1) throw ConfigError("hidden widths must be positive");
  if (config.dt < 0.0) throw ConfigError("dt must be positive (or 0 for 1/fps)");
  auto rng = make_rng(seed, "physnet/init");
  const int h = config.head_hidden;
  PhysNetParams p;
  const int global_dims[] = {2 * kStateDim, h, kStateDim};
  const int local_dims[] = {kWindow * kStateDim, h, kStateDim};
  const int head_dims[] = {kStateDim, h, kStateDim};
  const int mass_dims[] = {kStateDim, h, kPackedSize};
  const int decoder_dims[] = {kStateDim, config.decoder_hidden, kStateDim};
  p.global_encoder = make_mlp(global_dims, Activation::kTanh, rng);
  p.local_encoder = make_mlp(local_dims, Activation::kTanh, rng);
  if (!config.share_local_weights) p.local_encoder_reverse = make_mlp(local_dims, Activation::kTanh, rng);
  p.head_forces = make_mlp(head_dims, Activation::kTanh, rng);
  p.head_constraints = make_mlp(head_dims, Activation::kTanh, rng);
  p.head_inverse_mass = make_mlp(mass_dims, Activation::kTanh, rng);
  p.head_noise = make_mlp(head_dims, Activation::kTanh, rng);
  p.pose_decoder = make_mlp(decoder_dims, Activation::kTanh, rng);
  p.global_encoder.zero_final_layer();
  p.local_encoder.zero_final_layer();
  if (!p.local_encoder_reverse.layers.empty()) p.local_encoder_reverse.zero_final_layer();
  p.pose_decoder.zero_final_layer();
  p.dt = config.dt;
  p.noise_mode = config.noise_mode;
  return p;
}

std::vector<MlpParams*> PhysNetParams::mlps() {
  std::vector<MlpParams*> out{&global_encoder, &local_encoder};
  if (!local_encoder_reverse.layers.empty()) out.push_back(&local_encoder_reverse);
  for (auto* m : {&head_forces, &head_constraints, &head_inverse_mass, &head_noise, &pose_decoder}) {
    out.push_back(m);
  }
  return out;
}

std::vector<const MlpParams*> PhysNetParams::mlps() const {
  std::vector<const MlpParams*> out;
  for (auto* m : const_cast<PhysNetParams*>(this)->mlps()) out.push_back(m);
  return out;
}

std::vector<Array*> PhysNetParams::tensors() {
  std::vector<Array*> out;
  for (auto* m : mlps()) collect_params(*m, out);
  return out;
}

std::vector<const Array*> PhysNetParams::tensors() const {
  std::vector<const Array*> out;
  for (const auto* m : mlps()) collect_params(*m, out);
  return out;
}

PhysNetParams PhysNetParams::zeros_like() const {
  PhysNetParams z = *this;
  for (auto* m : z.mlps()) *m = m->zeros_like();
  return z;
}

EncodedStates encode_states(const PoseSequence3D& seq_dd, const PhysNetParams& params,
                            Direction direction) {
  const int T = seq_dd.num_frames();
  if (T < kWindow) throw TooShort("encoding needs at least 3 frames");
  const Matrix seq = sequence_matrix(seq_dd);
  const Matrix global = mlp_forward(params.global_encoder, global_inputs(seq), nullptr);
  const auto [first, count] = window_frames(T, direction);
  const Matrix local = mlp_forward(params.local_for(direction),
                                   window_matrix(seq, direction, first, count), nullptr);
  const Matrix q = seq.middleRows(first, count) + global.middleRows(first, count) + local;
  EncodedStates out{first, {}};
  for (int k = 0; k < count; ++k) out.states.push_back(row_state(q, k));
  return out;
}

Matrix symmetrize(std::span<const double> packed, int n) {
  if (n < 0 || packed.size() != static_cast<std::size_t>(n) * (n + 1) / 2) {
    throw LengthError("packed length " + std::to_string(packed.size()) +
                      " does not equal n(n+1)/2 for n = " + std::to_string(n));
  }
  Matrix m;
  symmetrize_into(packed.data(), n, m);
  return m;
}

std::vector<double> pack_upper(const Matrix& m) {
  if (m.rows() != m.cols()) throw ShapeError("pack_upper needs a square matrix");
  std::vector<double> out;
  out.reserve(m.rows() * (m.rows() + 1) / 2);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = i; j < m.cols(); ++j) out.push_back(m(i, j));
  }
  return out;
}

Matrix sample_noise(const StateVector& noise_mean, NoiseMode mode, std::uint64_t seed) {
  Matrix n = as_vec(noise_mean).replicate(1, kStateDim);
  if (mode == NoiseMode::kSample) {
    auto rng = make_rng(seed, "physnet/sample-noise");
    for (Eigen::Index c = 0; c < n.cols(); ++c) {
      for (Eigen::Index r = 0; r < n.rows(); ++r) n(r, c) += standard_normal(rng);
    }
  }
  return n;
}

StateVector acceleration(const Matrix& minv, const Matrix& noise, const StateVector& forces,
                         const StateVector& constraints) {
  if (minv.rows() != kStateDim || minv.cols() != kStateDim || noise.rows() != kStateDim ||
      noise.cols() != kStateDim) {
    throw ShapeError("acceleration needs 51 x 51 inverse-mass and noise matrices");
  }
  const Vector v = as_vec(forces) - as_vec(constraints);
  const Vector a = (minv + noise) * v;
  StateVector out;
  Eigen::Map<Vector>(out.values.data(), kStateDim) = a;
  return out;
}

StateVector central_difference_step(const StateVector& q_t, const StateVector& q_prev,
                                    const StateVector& accel, double dt) {
  if (!(dt > 0.0)) throw ValueError("dt must be positive");
  StateVector out;
  for (int i = 0; i < kStateDim; ++i) {
    out[i] = central_difference_step(q_t[i], q_prev[i], accel[i], dt);
  }
  return out;
}

double central_difference_step(double q_t, double q_prev, double accel, double dt) {
  if (!(dt > 0.0)) throw ValueError("dt must be positive");
  return accel * dt * dt + 2.0 * q_t - q_prev;
}

ELParameters estimate_el_parameters(const StateVector& state, const PhysNetParams& params) {
  const Matrix in = Eigen::Map<const Eigen::RowVectorXd>(state.values.data(), kStateDim);
  ELParameters out;
  out.forces = row_state(mlp_forward(params.head_forces, in, nullptr), 0);
  out.constraints = row_state(mlp_forward(params.head_constraints, in, nullptr), 0);
  const Matrix packed = mlp_forward(params.head_inverse_mass, in, nullptr);
  out.minv_packed.assign(packed.data(), packed.data() + packed.size());
  out.noise_mean = row_state(mlp_forward(params.head_noise, in, nullptr), 0);
  return out;
}

Reestimate reestimate_detailed(const PoseSequence3D& seq_dd, const PhysNetParams& params,
                               std::uint64_t seed) {
  PhysNetParams resolved = params;
  resolved.dt = resolved_dt(params, seq_dd);
  PhysNetPass pass;
  pass.run(resolved, sequence_matrix(seq_dd), params.noise_mode, seed);
  std::vector<double> values(pass.output.data(), pass.output.data() + pass.output.size());
  const auto frame = infer_frame_of_reference(values);
  return {PoseSequence3D(std::move(values), seq_dd.fps(), frame), std::move(pass.noise_means)};
}

PoseSequence3D reestimate(const PoseSequence3D& seq_dd, const PhysNetParams& params,
                          std::uint64_t seed) {
  return reestimate_detailed(seq_dd, params, seed).physical;
}

PoseSequence3D fuse_poses(const PoseSequence3D& s_dd, const PoseSequence3D& s_pp) {
  if (s_dd.values().size() != s_pp.values().size()) {
    throw ShapeError("fusion needs sequences of equal length");
  }
  std::vector<double> out(s_dd.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (s_dd.values()[i] + s_pp.values()[i]);
  const auto frame = infer_frame_of_reference(out);
  return PoseSequence3D(std::move(out), s_dd.fps(), frame);
}

namespace {

LossAndGradient evaluate_loss(const PhysNetParams& params, const PhysNetSample& sample,
                              PhysNetStage stage, bool with_gradient) {
  if (stage == PhysNetStage::kPretrain3D && !sample.truth_3d) {
    throw ConfigError("pre-training needs 3D supervision");
  }
  if (stage == PhysNetStage::kFinetune2D && !sample.truth_2d) {
    throw ConfigError("fine-tuning needs 2D supervision");
  }
  const auto& seq_dd = sample.data_driven;
  PhysNetParams resolved = params;
  resolved.dt = resolved_dt(params, seq_dd);
  const Matrix seq = sequence_matrix(seq_dd);
  PhysNetPass pass;
  pass.run(resolved, seq, NoiseMode::kMeanOnly, 0);
  const Matrix fused = 0.5 * (seq + pass.output);

  LossAndGradient result;
  Matrix d_out;
  if (stage == PhysNetStage::kPretrain3D) {
    if (sample.truth_3d->num_frames() != seq_dd.num_frames()) {
      throw ShapeError("3D supervision length differs from the input");
    }
    const Matrix diff = fused - sequence_matrix(*sample.truth_3d);
    result.loss = diff.squaredNorm();
    d_out = diff;  // d/d(out) of ||(seq + out)/2 - y||^2
  } else {
    const auto& truth = *sample.truth_2d;
    if (truth.num_frames() != seq_dd.num_frames()) {
      throw ShapeError("2D supervision length differs from the input");
    }
    std::vector<double> fv(fused.data(), fused.data() + fused.size());
    const auto frame = infer_frame_of_reference(fv);
    const PoseSequence3D fused_seq(std::move(fv), seq_dd.fps(), frame);
    const auto fit = fit_camera(fused_seq, truth);
    const double s = fit.camera.scale;
    d_out = Matrix::Zero(fused.rows(), fused.cols());
    for (int t = 0; t < seq_dd.num_frames(); ++t) {
      for (int j = 0; j < kNumJoints; ++j) {
        for (int c = 0; c < 2; ++c) {
          const double r = s * fused(t, 3 * j + c) + fit.camera.offset[c] - truth.at(t, j, c);
          result.loss += r * r;
          d_out(t, 3 * j + c) = s * r;  // 0.5 * 2 * s * r
        }
      }
    }
  }
  result.loss += loss_noise(pass.noise_means);
  if (with_gradient) {
    result.grads = params.zeros_like();
    pass.backward(resolved, d_out, 1.0, result.grads);
  }
  return result;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng() % i)]);
  }
  return idx;
}

}  // namespace

double physnet_loss(const PhysNetParams& params, const PhysNetSample& sample, PhysNetStage stage) {
  return evaluate_loss(params, sample, stage, false).loss;
}

LossAndGradient physnet_loss_and_gradient(const PhysNetParams& params, const PhysNetSample& sample,
                                          PhysNetStage stage) {
  return evaluate_loss(params, sample, stage, true);
}

PhysNetTrainResult train_physnet(std::span<const PhysNetSample> dataset,
                                 const PhysNetTrainConfig& config,
                                 std::optional<PhysNetParams> init) {
  if (dataset.empty()) throw EmptyDataset("physnet training needs samples");
  if (config.epochs < 0 || config.batch_size < 1) throw ConfigError("invalid epochs or batch size");
  if (config.validation_fraction < 0.0 || config.validation_fraction >= 1.0) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }
  for (const auto& s : dataset) {
    if (config.stage == PhysNetStage::kPretrain3D && !s.truth_3d) {
      throw ConfigError("pre-training needs 3D supervision for every sample");
    }
    if (config.stage == PhysNetStage::kFinetune2D && !s.truth_2d) {
      throw ConfigError("fine-tuning needs 2D supervision for every sample");
    }
  }
  PhysNetTrainResult result{init ? *init : PhysNetParams::init(config.model, config.seed), {}};
  PhysNetParams& params = result.params;
  if (params.dt <= 0.0) params.dt = 1.0 / dataset.front().data_driven.fps();
  if (config.epochs == 0) return result;

  auto rng = make_rng(config.seed, "physnet/shuffle");
  std::vector<std::size_t> order = shuffled(dataset.size(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::ceil(config.validation_fraction * dataset.size()));
  if (n_val >= dataset.size()) n_val = 0;
  const std::vector<std::size_t> val(order.end() - n_val, order.end());
  std::vector<std::size_t> train(order.begin(), order.end() - n_val);

  auto validation_loss = [&](const PhysNetParams& p) {
    double total = 0.0;
    for (auto i : val) total += physnet_loss(p, dataset[i], config.stage);
    return total / static_cast<double>(val.size());
  };
  PhysNetParams best = params;
  double best_val = n_val ? validation_loss(params) : 0.0;

  AdamState adam;
  long step = config.first_step;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    train = [&] {
      auto perm = shuffled(train.size(), rng);
      std::vector<std::size_t> out;
      for (auto k : perm) out.push_back(train[k]);
      return out;
    }();
    for (std::size_t b = 0; b < train.size(); b += config.batch_size) {
      const std::size_t e = std::min(train.size(), b + config.batch_size);
      PhysNetParams grads = params.zeros_like();
      double batch_loss = 0.0;
      for (std::size_t k = b; k < e; ++k) {
        auto lg = physnet_loss_and_gradient(params, dataset[train[k]], config.stage);
        batch_loss += lg.loss;
        auto dst = grads.tensors();
        auto src = std::as_const(lg.grads).tensors();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->vector() += src[i]->vector();
      }
      const double scale = 1.0 / static_cast<double>(e - b);
      for (auto* g : grads.tensors()) g->vector() *= scale;
      auto p_refs = params.tensors();
      auto g_refs = std::as_const(grads).tensors();
      optimizer_step(p_refs, g_refs, adam, config.adam);
      result.curve.push_back({++step, batch_loss * scale});
    }
    if (n_val) {
      const double v = validation_loss(params);
      if (v <= best_val) {
        best_val = v;
        best = params;
      }
    }
  }
  if (n_val) params = best;
  return result;
}

void save_physnet(const std::filesystem::path& checkpoint, const PhysNetParams& params, long step) {
  std::vector<Array> arrays;
  for (const auto* m : params.mlps()) {
    auto a = mlp_to_arrays(*m);
    arrays.insert(arrays.end(), a.begin(), a.end());
  }
  write_checkpoint(checkpoint, arrays);
  nlohmann::json side;
  side["dt"] = params.dt;
  side["noise_mode"] = params.noise_mode == NoiseMode::kSample ? "sample" : "mean-only";
  side["hidden_widths"] = {{"heads", params.head_forces.layers.front().out_dim()},
                           {"decoder", params.pose_decoder.layers.front().out_dim()}};
  side["share_local_weights"] = params.shares_local_weights();
  side["step"] = step;
  write_text_file(checkpoint.string() + ".json", side.dump(2) + "\n");
}

PhysNetParams load_physnet(const std::filesystem::path& checkpoint, long* step) {
  const auto arrays = read_checkpoint(checkpoint);
  const auto side_path = std::filesystem::path(checkpoint.string() + ".json");
  if (!std::filesystem::exists(side_path)) throw MissingCheckpoint("missing sidecar " + side_path.string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_text_file(side_path));
    PhysNetConfig config;
    config.head_hidden = side.at("hidden_widths").at("heads").get<int>();
    config.decoder_hidden = side.at("hidden_widths").at("decoder").get<int>();
    config.dt = side.at("dt").get<double>();
    const auto mode = side.at("noise_mode").get<std::string>();
    if (mode != "sample" && mode != "mean-only") throw SchemaError("unknown noise_mode " + mode);
    config.noise_mode = mode == "sample" ? NoiseMode::kSample : NoiseMode::kMeanOnly;
    config.share_local_weights = side.value("share_local_weights", true);
    if (step) *step = side.value("step", 0L);
    PhysNetParams params = PhysNetParams::init(config, 0);
    std::size_t cursor = 0;
    for (auto* m : params.mlps()) *m = mlp_from_arrays(*m, arrays, cursor);
    if (cursor != arrays.size()) throw ParseError("checkpoint has extra arrays");
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad physnet sidecar: ") + e.what());
  }
}

}  // namespace elpose
