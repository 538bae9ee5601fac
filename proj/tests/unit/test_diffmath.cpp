#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "elpose/diffmath.hpp"
#include "elpose/errors.hpp"
#include "test_util.hpp"

namespace elpose {
namespace {

MlpParams single_layer(const Matrix& w, std::vector<double> b) {
  MlpParams p;
  p.layers.push_back({Array::from_matrix(w), Array::from_vector(b), Activation::kIdentity});
  return p;
}

MlpParams random_mlp(std::uint64_t seed, std::vector<int> dims, Activation act = Activation::kTanh) {
  auto rng = make_rng(seed, "test/mlp");
  auto p = make_mlp(dims, act, rng);
  // Nonzero biases so the check exercises them.
  for (auto& l : p.layers) {
    for (auto& v : l.bias.data()) v = uniform(rng, -0.5, 0.5);
  }
  return p;
}

TEST(Array, ShapeMustMatchData) {
  EXPECT_THROW(Array({2, 3}, std::vector<double>(5)), ShapeError);
  Array a({2, 3});
  EXPECT_EQ(a.size(), 6u);
  a.matrix()(1, 2) = 4.0;
  EXPECT_EQ(a[5], 4.0);
}

TEST(MlpForward, IdentityLayerPassesInput) {
  const auto p = single_layer(Matrix::Identity(4, 4), std::vector<double>(4, 0.0));
  const auto x = Array::from_vector(std::vector<double>{1.0, -2.0, 3.5, 0.25});
  EXPECT_EQ(mlp_forward(p, x), x);
}

TEST(MlpForward, ZeroWeightsGiveBias) {
  const auto p = single_layer(Matrix::Zero(3, 5), {0.1, -0.2, 0.3});
  const auto y = mlp_forward(p, Array::from_vector(std::vector<double>{1, 2, 3, 4, 5}));
  EXPECT_EQ(y, Array::from_vector(std::vector<double>{0.1, -0.2, 0.3}));
}

TEST(MlpForward, MatchesStraightLineEvaluation) {
  const auto p = random_mlp(5, {4, 6, 3});
  auto rng = make_rng(6, "test/input");
  const auto x = testing::random_values(4, rng);
  const auto y = mlp_forward(p, Array::from_vector(x));
  const auto& l0 = p.layers[0];
  const auto& l1 = p.layers[1];
  std::vector<double> h(6);
  for (int i = 0; i < 6; ++i) {
    double s = l0.bias[i];
    for (int k = 0; k < 4; ++k) s += l0.weight[i * 4 + k] * x[k];
    h[i] = std::tanh(s);
  }
  for (int i = 0; i < 3; ++i) {
    double s = l1.bias[i];
    for (int k = 0; k < 6; ++k) s += l1.weight[i * 6 + k] * h[k];
    EXPECT_NEAR(y[i], s, 1e-14);
  }
}

TEST(MlpForward, RejectsWrongInputLength) {
  const auto p = random_mlp(1, {4, 3});
  EXPECT_THROW(mlp_forward(p, Array::from_vector(std::vector<double>(5, 0.0))), ShapeError);
}

TEST(MlpParams, ValidateRejectsBrokenChains) {
  auto p = random_mlp(2, {4, 5, 3});
  EXPECT_NO_THROW(p.validate());
  p.layers[1].weight = Array({3, 4});
  EXPECT_THROW(p.validate(), ShapeError);
  auto q = random_mlp(2, {4, 5, 3});
  q.layers.back().activation = Activation::kTanh;
  EXPECT_THROW(q.validate(), ShapeError);
}

TEST(MlpGradient, IdentityLayerPassesUpstream) {
  const auto p = single_layer(Matrix::Identity(3, 3), {0.0, 0.0, 0.0});
  const auto up = Array::from_vector(std::vector<double>{0.5, -1.0, 2.0});
  const auto g = mlp_gradient(p, Array::from_vector(std::vector<double>{1, 2, 3}), up);
  EXPECT_EQ(g.input_grad, up);
}

TEST(MlpGradient, ZeroUpstreamGivesZeroGrads) {
  const auto p = random_mlp(3, {5, 7, 2});
  auto rng = make_rng(3, "test/input");
  const auto g = mlp_gradient(p, Array::from_vector(testing::random_values(5, rng)),
                              Array::from_vector(std::vector<double>(2, 0.0)));
  for (double v : g.input_grad.data()) EXPECT_EQ(v, 0.0);
  for (const auto& l : g.param_grads.layers) {
    for (double v : l.weight.data()) EXPECT_EQ(v, 0.0);
    for (double v : l.bias.data()) EXPECT_EQ(v, 0.0);
  }
}

class MlpGradientFd : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(MlpGradientFd, AgreesWithCentralDifferences) {
  const std::uint64_t seed = GetParam();
  for (auto act : {Activation::kTanh, Activation::kIdentity}) {
    const auto p = random_mlp(seed, {4, 8, 8, 3}, act);
    auto rng = make_rng(seed, "test/fd");
    const auto x = Array({2, 4}, testing::random_values(8, rng));
    const auto up = Array({2, 3}, testing::random_values(6, rng));
    const auto g = mlp_gradient(p, x, up);
    auto objective = [&](const MlpParams& params, const Array& input) {
      const auto y = mlp_forward(params, input);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * up[i];
      return s;
    };
    EXPECT_LT(finite_difference_check([&](const Array& xi) { return objective(p, xi); }, x, g.input_grad, 1e-5),
              1e-5);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      auto f_w = [&](const Array& w) {
        auto q = p;
        q.layers[l].weight = w;
        return objective(q, x);
      };
      auto f_b = [&](const Array& b) {
        auto q = p;
        q.layers[l].bias = b;
        return objective(q, x);
      };
      EXPECT_LT(finite_difference_check(f_w, p.layers[l].weight, g.param_grads.layers[l].weight, 1e-5), 1e-5);
      EXPECT_LT(finite_difference_check(f_b, p.layers[l].bias, g.param_grads.layers[l].bias, 1e-5), 1e-5);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, MlpGradientFd, ::testing::Values(1, 2, 3));

TEST(FiniteDifferenceCheck, SumHasUnitGradient) {
  const auto x = Array::from_vector(std::vector<double>{0.3, -1.2, 4.0});
  const auto ones = Array::from_vector(std::vector<double>(3, 1.0));
  auto f = [](const Array& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return s;
  };
  EXPECT_LT(finite_difference_check(f, x, ones, 1e-5), 1e-10);
}

TEST(FiniteDifferenceCheck, HalfSquaredNormHasIdentityGradient) {
  const auto x = Array::from_vector(std::vector<double>{0.7, -1.5, 2.25, 3.0});
  auto f = [](const Array& a) {
    double s = 0.0;
    for (double v : a.data()) s += 0.5 * v * v;
    return s;
  };
  EXPECT_LT(finite_difference_check(f, x, x, 1e-5), 1e-7);
}

TEST(OptimizerStep, ZeroGradientZeroDecayLeavesParams) {
  auto p = random_mlp(4, {3, 4, 2});
  const auto before = p;
  AdamState state;
  AdamConfig config;
  config.weight_decay = 0.0;
  optimizer_step(p, p.zeros_like(), state, config);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    EXPECT_EQ(p.layers[l].weight, before.layers[l].weight);
    EXPECT_EQ(p.layers[l].bias, before.layers[l].bias);
  }
}

TEST(OptimizerStep, DescendsOnQuadratic) {
  Array w = Array::from_vector(std::vector<double>{1.0});
  AdamState state;
  AdamConfig config;
  config.weight_decay = 0.0;
  config.learning_rate = 0.05;
  Array* params[] = {&w};
  Array g = w;  // gradient of w^2/2
  const Array* grads[] = {&g};
  optimizer_step(params, grads, state, config);
  EXPECT_LT(std::abs(w[0]), 1.0);

  for (int i = 1; i < 200; ++i) {
    g = w;
    optimizer_step(params, grads, state, config);
  }
  EXPECT_LT(std::abs(w[0]), 1e-3);
}

TEST(OptimizerStep, RejectsMismatchedShapes) {
  Array w({2});
  Array g({3});
  Array* params[] = {&w};
  const Array* grads[] = {&g};
  AdamState state;
  EXPECT_THROW(optimizer_step(params, grads, state, AdamConfig{}), ShapeError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto rng = make_rng(9, "test/ckpt");
  std::vector<Array> arrays{Array({3, 4}, testing::random_values(12, rng)),
                            Array({5}, testing::random_values(5, rng)), Array({2, 1, 2}, {1e-300, -0.0, 3.5, 1e300})};
  const auto bytes = serialize_checkpoint(arrays);
  EXPECT_EQ(bytes.substr(0, 4), "ELP1");
  const auto back = parse_checkpoint(bytes);
  ASSERT_EQ(back.size(), arrays.size());
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    EXPECT_EQ(back[i].shape(), arrays[i].shape());
    EXPECT_EQ(std::memcmp(back[i].data().data(), arrays[i].data().data(), arrays[i].size() * sizeof(double)), 0);
  }
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
  EXPECT_THROW(parse_checkpoint("ELPX"), ParseError);
  const auto bytes = serialize_checkpoint(std::vector<Array>{Array({4})});
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
  EXPECT_THROW(read_checkpoint("/nonexistent/elpose.elp"), MissingCheckpoint);
}

}  // namespace
}  // namespace elpose
