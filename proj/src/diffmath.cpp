#include "elpose/diffmath.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>

#include "elpose/errors.hpp"
#include "elpose/skeleton.hpp"

namespace elpose {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void apply_activation(Activation act, Matrix& m) {
  switch (act) {
    case Activation::kTanh:
      m = m.array().tanh();
      break;
    case Activation::kRelu:
      m = m.cwiseMax(0.0);
      break;
    case Activation::kIdentity:
      break;
  }
}

// d(out)/d(pre) expressed through the post-activation value.
void apply_activation_grad(Activation act, const Matrix& post, Matrix& grad) {
  switch (act) {
    case Activation::kTanh:
      grad.array() *= 1.0 - post.array().square();
      break;
    case Activation::kRelu:
      grad.array() *= (post.array() > 0.0).cast<double>();
      break;
    case Activation::kIdentity:
      break;
  }
}

Matrix as_batch(const Array& input, int in_dim) {
  if (input.rank() == 1) {
    if (static_cast<int>(input.size()) != in_dim) {
      throw ShapeError("mlp input has length " + std::to_string(input.size()) + ", expected " +
                       std::to_string(in_dim));
    }
    return input.matrix();
  }
  if (input.rank() == 2 && static_cast<int>(input.shape()[1]) == in_dim) return input.matrix();
  throw ShapeError("mlp input shape " + shape_string(input.shape()) + " does not match in-dim " +
                   std::to_string(in_dim));
}

Array like_input(const Array& input, const Matrix& m) {
  if (input.rank() == 1) return Array::from_vector({m.data(), static_cast<size_t>(m.size())});
  return Array::from_matrix(m);
}

}  // namespace

Array::Array(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(product(shape_), 0.0) {}

Array::Array(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw ShapeError("array of shape " + shape_string(shape_) + " cannot hold " +
                     std::to_string(data_.size()) + " values");
  }
}

Array Array::from_matrix(const Matrix& m) {
  return Array({static_cast<size_t>(m.rows()), static_cast<size_t>(m.cols())},
               std::vector<double>(m.data(), m.data() + m.size()));
}

Array Array::from_vector(std::span<const double> v) {
  return Array({v.size()}, std::vector<double>(v.begin(), v.end()));
}

MatrixMap Array::matrix() {
  if (rank() == 1) return {data_.data(), 1, static_cast<Eigen::Index>(shape_[0])};
  if (rank() != 2) throw ShapeError("array of rank " + std::to_string(rank()) + " is not a matrix");
  return {data_.data(), static_cast<Eigen::Index>(shape_[0]),
          static_cast<Eigen::Index>(shape_[1])};
}

ConstMatrixMap Array::matrix() const {
  if (rank() == 1) return {data_.data(), 1, static_cast<Eigen::Index>(shape_[0])};
  if (rank() != 2) throw ShapeError("array of rank " + std::to_string(rank()) + " is not a matrix");
  return {data_.data(), static_cast<Eigen::Index>(shape_[0]),
          static_cast<Eigen::Index>(shape_[1])};
}

void Array::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void MlpParams::validate() const {
  if (layers.empty()) throw ShapeError("mlp has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.weight.shape()[0]) {
      throw ShapeError("layer " + std::to_string(i) + " has inconsistent weight/bias shapes");
    }
    if (i > 0 && layers[i - 1].out_dim() != l.in_dim()) {
      throw ShapeError("layer " + std::to_string(i) + " does not chain with its predecessor");
    }
  }
  if (layers.back().activation != Activation::kIdentity) {
    throw ShapeError("final mlp layer must be linear");
  }
}

MlpParams MlpParams::zeros_like() const {
  MlpParams z = *this;
  for (auto& l : z.layers) {
    l.weight.fill(0.0);
    l.bias.fill(0.0);
  }
  return z;
}

void MlpParams::zero_final_layer() {
  layers.back().weight.fill(0.0);
  layers.back().bias.fill(0.0);
}

MlpParams make_mlp(std::span<const int> dims, Activation hidden, Rng& rng) {
  if (dims.size() < 2) throw ShapeError("mlp needs at least input and output dims");
  MlpParams params;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const int in = dims[i];
    const int out = dims[i + 1];
    DenseLayer layer{Array({static_cast<size_t>(out), static_cast<size_t>(in)}),
                     Array({static_cast<size_t>(out)}),
                     i + 2 == dims.size() ? Activation::kIdentity : hidden};
    const double bound = std::sqrt(6.0 / (in + out));
    for (double& w : layer.weight.data()) w = uniform(rng, -bound, bound);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Matrix mlp_forward(const MlpParams& params, const Matrix& input, MlpTrace* trace) {
  if (input.cols() != params.in_dim()) {
    throw ShapeError("mlp input width " + std::to_string(input.cols()) + " != in-dim " +
                     std::to_string(params.in_dim()));
  }
  if (trace) {
    trace->activations.clear();
    trace->activations.push_back(input);
  }
  Matrix x = input;
  for (const auto& layer : params.layers) {
    Matrix y = x * layer.weight.matrix().transpose();
    y.rowwise() += layer.bias.matrix().row(0);
    apply_activation(layer.activation, y);
    if (trace) trace->activations.push_back(y);
    x = std::move(y);
  }
  return x;
}

Matrix mlp_backward(const MlpParams& params, const MlpTrace& trace, const Matrix& upstream,
                    MlpParams& grads) {
  Matrix g = upstream;
  for (int i = static_cast<int>(params.layers.size()) - 1; i >= 0; --i) {
    const auto& layer = params.layers[i];
    apply_activation_grad(layer.activation, trace.activations[i + 1], g);
    auto& lg = grads.layers[i];
    lg.weight.matrix().noalias() += g.transpose() * trace.activations[i];
    lg.bias.matrix().row(0) += g.colwise().sum();
    g = g * layer.weight.matrix();
  }
  return g;
}

Array mlp_forward(const MlpParams& params, const Array& input) {
  params.validate();
  return like_input(input, mlp_forward(params, as_batch(input, params.in_dim()), nullptr));
}

MlpGradient mlp_gradient(const MlpParams& params, const Array& input, const Array& upstream) {
  params.validate();
  const Matrix x = as_batch(input, params.in_dim());
  MlpTrace trace;
  const Matrix y = mlp_forward(params, x, &trace);
  if (static_cast<std::size_t>(y.size()) != upstream.size()) {
    throw ShapeError("upstream gradient does not match mlp output shape");
  }
  const Matrix up = ConstMatrixMap(upstream.data().data(), y.rows(), y.cols());
  MlpGradient result{params.zeros_like(), {}};
  const Matrix dx = mlp_backward(params, trace, up, result.param_grads);
  result.input_grad = like_input(input, dx);
  return result;
}

void collect_params(MlpParams& mlp, std::vector<Array*>& out) {
  for (auto& l : mlp.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

void collect_params(const MlpParams& mlp, std::vector<const Array*>& out) {
  for (const auto& l : mlp.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

void optimizer_step(std::span<Array* const> params, std::span<const Array* const> grads,
                    AdamState& state, const AdamConfig& config) {
  if (params.size() != grads.size()) throw ShapeError("parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape()) {
      throw ShapeError("gradient " + std::to_string(i) + " has shape " +
                       shape_string(grads[i]->shape()) + ", parameter has " +
                       shape_string(params[i]->shape()));
    }
  }
  if (state.first_moment.empty()) {
    for (const Array* p : params) {
      state.first_moment.push_back(p->zeros_like());
      state.second_moment.push_back(p->zeros_like());
    }
  } else if (state.first_moment.size() != params.size()) {
    throw ShapeError("optimizer state does not match parameter count");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i]->data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= config.learning_rate *
              (mhat / (std::sqrt(vhat) + config.epsilon) + config.weight_decay * p[k]);
    }
  }
}

void optimizer_step(MlpParams& params, const MlpParams& grads, AdamState& state,
                    const AdamConfig& config) {
  std::vector<Array*> p;
  std::vector<const Array*> g;
  collect_params(params, p);
  collect_params(grads, g);
  optimizer_step(p, g, state, config);
}

double finite_difference_check(const std::function<double(const Array&)>& f, const Array& x,
                               const Array& analytic_grad, double eps) {
  if (analytic_grad.size() != x.size()) throw ShapeError("gradient size differs from x");
  Array probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(probe);
    probe[i] = orig - eps;
    const double fm = f(probe);
    probe[i] = orig;
    const double fd = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic_grad[i] - fd) / (std::abs(analytic_grad[i]) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

namespace {

constexpr char kCheckpointMagic[4] = {'E', 'L', 'P', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::string_view bytes, std::size_t& pos, int width) {
  if (pos + width > bytes.size()) throw ParseError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  pos += width;
  return v;
}

}  // namespace

std::string serialize_checkpoint(std::span<const Array> arrays) {
  std::string out(kCheckpointMagic, 4);
  for (const auto& a : arrays) {
    put_u32(out, static_cast<std::uint32_t>(a.rank()));
    for (auto e : a.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (double d : a.data()) put_f64(out, d);
  }
  return out;
}

std::vector<Array> parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kCheckpointMagic, 4)) {
    throw ParseError("not an ELP1 checkpoint");
  }
  std::vector<Array> arrays;
  std::size_t pos = 4;
  while (pos < bytes.size()) {
    const auto rank = get_le(bytes, pos, 4);
    if (rank > 8) throw ParseError("implausible array rank in checkpoint");
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = get_le(bytes, pos, 4);
    const std::size_t n = product(shape);
    if ((bytes.size() - pos) / 8 < n) throw ParseError("truncated checkpoint");
    std::vector<double> data(n);
    for (auto& d : data) d = std::bit_cast<double>(get_le(bytes, pos, 8));
    arrays.emplace_back(std::move(shape), std::move(data));
  }
  return arrays;
}

void write_checkpoint(const std::filesystem::path& path, std::span<const Array> arrays) {
  write_text_file(path, serialize_checkpoint(arrays));
}

std::vector<Array> read_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingCheckpoint("missing checkpoint " + path.string());
  return parse_checkpoint(read_text_file(path));
}

std::vector<Array> mlp_to_arrays(const MlpParams& mlp) {
  std::vector<Array> out;
  for (const auto& l : mlp.layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

MlpParams mlp_from_arrays(const MlpParams& like, std::span<const Array> arrays,
                          std::size_t& cursor) {
  MlpParams out = like;
  for (auto& l : out.layers) {
    if (cursor + 2 > arrays.size()) throw ParseError("checkpoint has too few arrays");
    if (arrays[cursor].shape() != l.weight.shape() ||
        arrays[cursor + 1].shape() != l.bias.shape()) {
      throw ShapeError("checkpoint array shape does not match model configuration");
    }
    l.weight = arrays[cursor++];
    l.bias = arrays[cursor++];
  }
  return out;
}

}  // namespace elpose
