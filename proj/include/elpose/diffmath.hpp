#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "elpose/rng.hpp"

namespace elpose {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

// Dense row-major array of doubles.
class Array {
 public:
  Array() = default;
  explicit Array(std::vector<std::size_t> shape);
  Array(std::vector<std::size_t> shape, std::vector<double> data);

  static Array from_matrix(const Matrix& m);
  static Array from_vector(std::span<const double> v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-1 arrays map to a single row; rank-2 to rows x cols.
  MatrixMap matrix();
  ConstMatrixMap matrix() const;
  Eigen::Map<Vector> vector() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
  Eigen::Map<const Vector> vector() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  void fill(double v);
  Array zeros_like() const { return Array(shape_); }

  friend bool operator==(const Array&, const Array&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

enum class Activation { kTanh, kRelu, kIdentity };

struct DenseLayer {
  Array weight;  // [out x in]
  Array bias;    // [out]
  Activation activation = Activation::kIdentity;

  int in_dim() const { return static_cast<int>(weight.shape()[1]); }
  int out_dim() const { return static_cast<int>(weight.shape()[0]); }
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  int in_dim() const { return layers.front().in_dim(); }
  int out_dim() const { return layers.back().out_dim(); }
  // Throws ShapeError when layer dims do not chain or the last layer is
  // not linear.
  void validate() const;
  MlpParams zeros_like() const;
  void zero_final_layer();
};

// Weights uniform in +-sqrt(6/(in+out)), zero biases. dims = {in, h1, ..., out};
// hidden layers use `hidden`, the output layer is linear.
MlpParams make_mlp(std::span<const int> dims, Activation hidden, Rng& rng);

// input is [in] or [batch x in]; output has matching rank.
Array mlp_forward(const MlpParams& params, const Array& input);

struct MlpGradient {
  MlpParams param_grads;
  Array input_grad;
};

// Gradients of <upstream, mlp_forward(params, input)>.
MlpGradient mlp_gradient(const MlpParams& params, const Array& input, const Array& upstream);

// Batched forward/backward used by the models. Rows are samples.
struct MlpTrace {
  std::vector<Matrix> activations;  // activations[0] is the input
};

Matrix mlp_forward(const MlpParams& params, const Matrix& input, MlpTrace* trace);
// Accumulates parameter gradients into `grads` and returns d(input).
Matrix mlp_backward(const MlpParams& params, const MlpTrace& trace, const Matrix& upstream,
                    MlpParams& grads);

// Flat views over trainable tensors, in a stable order.
void collect_params(MlpParams& mlp, std::vector<Array*>& out);
void collect_params(const MlpParams& mlp, std::vector<const Array*>& out);

struct AdamState {
  std::vector<Array> first_moment;
  std::vector<Array> second_moment;
  long step = 0;
};

struct AdamConfig {
  double learning_rate = 5e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with decoupled weight decay. `state` is sized on first use.
void optimizer_step(std::span<Array* const> params, std::span<const Array* const> grads,
                    AdamState& state, const AdamConfig& config);
void optimizer_step(MlpParams& params, const MlpParams& grads, AdamState& state,
                    const AdamConfig& config);

// max_i |analytic_i - fd_i| / (|analytic_i| + 1e-12) with central differences.
double finite_difference_check(const std::function<double(const Array&)>& f, const Array& x,
                               const Array& analytic_grad, double eps);

// "ELP1" checkpoints: per array u32 rank, u32 extents, f64 values, all
// little-endian.
std::string serialize_checkpoint(std::span<const Array> arrays);
std::vector<Array> parse_checkpoint(std::string_view bytes);
void write_checkpoint(const std::filesystem::path& path, std::span<const Array> arrays);
std::vector<Array> read_checkpoint(const std::filesystem::path& path);

std::vector<Array> mlp_to_arrays(const MlpParams& mlp);
// Consumes 2 arrays per layer of `like` starting at `cursor`.
MlpParams mlp_from_arrays(const MlpParams& like, std::span<const Array> arrays, std::size_t& cursor);

}  // namespace elpose
