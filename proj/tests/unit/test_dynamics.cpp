#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>

#include "elpose/dynamics.hpp"
#include "elpose/errors.hpp"
#include "elpose/metrics.hpp"
#include "test_util.hpp"

namespace elpose {
namespace {

AnalyticSystem chain(int n) {
  AnalyticSystem sys{n, {}, {}, 9.8};
  for (int i = 0; i < n; ++i) {
    sys.masses.push_back(1.0 + 0.3 * i);
    sys.lengths.push_back(0.5 + 0.2 * i);
  }
  return sys;
}

Vector random_vector(int n, Rng& rng, double scale) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = uniform(rng, -scale, scale);
  return v;
}

TEST(LagrangianTerms, SinglePendulumHorizontal) {
  const auto sys = AnalyticSystem::uniform_chain(1, 1.0, 1.0, 9.8);
  Vector q(1), qd(1);
  q << std::numbers::pi / 2;
  qd << 0.0;
  const auto terms = lagrangian_terms(sys, q, qd);
  EXPECT_NEAR(terms.mass(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(terms.forces[0] - terms.coriolis[0], -9.8, 1e-12);
  EXPECT_NEAR(solve_acceleration(sys, q, qd)[0], -9.8, 1e-12);
}

TEST(LagrangianTerms, HangingEquilibriumHasNoNetForce) {
  for (int n = 1; n <= 4; ++n) {
    const auto sys = chain(n);
    const auto terms = lagrangian_terms(sys, Vector::Zero(n), Vector::Zero(n));
    EXPECT_LT((terms.forces - terms.coriolis).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(LagrangianTerms, MassMatrixSymmetricPositiveDefinite) {
  auto rng = make_rng(3, "test/mass");
  for (int n = 1; n <= 4; ++n) {
    const auto sys = chain(n);
    for (int trial = 0; trial < 1000; ++trial) {
      const auto terms = lagrangian_terms(sys, random_vector(n, rng, 3.2), Vector::Zero(n));
      ASSERT_EQ((terms.mass - terms.mass.transpose()).cwiseAbs().maxCoeff(), 0.0);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(terms.mass);
      ASSERT_GT(eig.eigenvalues().minCoeff(), 0.0);
    }
  }
}

// C_i = sum_jk (dM_ij/dq_k - 1/2 dM_jk/dq_i) qd_j qd_k, with dM from central
// differences of the closed-form mass matrix.
TEST(LagrangianTerms, CoriolisMatchesChristoffelFormula) {
  auto rng = make_rng(5, "test/coriolis");
  const double h = 1e-6;
  for (int n = 2; n <= 4; ++n) {
    const auto sys = chain(n);
    const Vector q = random_vector(n, rng, 1.5);
    const Vector qd = random_vector(n, rng, 2.0);
    std::vector<Eigen::MatrixXd> dm;
    for (int k = 0; k < n; ++k) {
      Vector qp = q, qm = q;
      qp[k] += h;
      qm[k] -= h;
      const Eigen::MatrixXd mp = lagrangian_terms(sys, qp, qd).mass;
      const Eigen::MatrixXd mm = lagrangian_terms(sys, qm, qd).mass;
      dm.push_back((mp - mm) / (2 * h));
    }
    const auto terms = lagrangian_terms(sys, q, qd);
    for (int i = 0; i < n; ++i) {
      double c = 0.0;
      for (int j = 0; j < n; ++j) {
        for (int k = 0; k < n; ++k) c += (dm[k](i, j) - 0.5 * dm[i](j, k)) * qd[j] * qd[k];
      }
      EXPECT_NEAR(terms.coriolis[i], c, 1e-7) << "n=" << n << " i=" << i;
    }
  }
}

TEST(LagrangianTerms, ForcesAreNegativePotentialGradient) {
  auto rng = make_rng(6, "test/forces");
  const auto sys = chain(3);
  const Vector q = random_vector(3, rng, 1.5);
  const auto terms = lagrangian_terms(sys, q, Vector::Zero(3));
  for (int i = 0; i < 3; ++i) {
    Vector qp = q, qm = q;
    qp[i] += 1e-6;
    qm[i] -= 1e-6;
    EXPECT_NEAR(terms.forces[i], -(potential_energy(sys, qp) - potential_energy(sys, qm)) / 2e-6, 1e-7);
  }
}

TEST(VerifyElIdentity, SolvedAccelerationSatisfiesIdentity) {
  auto rng = make_rng(7, "test/el");
  for (int n = 1; n <= 4; ++n) {
    const auto sys = chain(n);
    const Vector q = random_vector(n, rng, 1.5), qd = random_vector(n, rng, 2.0);
    EXPECT_LT(verify_el_identity(sys, q, qd, solve_acceleration(sys, q, qd)), 1e-10);
  }
}

TEST(VerifyElIdentity, PerturbationBoundedByMinEigenvalue) {
  auto rng = make_rng(8, "test/el");
  const auto sys = chain(3);
  const Vector q = random_vector(3, rng, 1.5), qd = random_vector(3, rng, 2.0);
  const auto terms = lagrangian_terms(sys, q, qd);
  const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(terms.mass).eigenvalues().minCoeff();
  for (int k = 0; k < 3; ++k) {
    Vector a = solve_acceleration(sys, q, qd);
    a[k] += 1.0;
    EXPECT_GE(verify_el_identity(sys, q, qd, a), min_eig);
  }
}

TEST(VerifyElIdentity, StaticEquilibriumIsExact) {
  const auto sys = chain(2);
  EXPECT_EQ(verify_el_identity(sys, Vector::Zero(2), Vector::Zero(2), Vector::Zero(2)), 0.0);
}

TEST(Simulate, ForceFreeRotationIsLinear) {
  auto sys = AnalyticSystem::uniform_chain(1, 1.0, 1.0, 0.0);
  Vector q0(1), v0(1);
  q0 << 0.3;
  v0 << 1.0;
  const auto traj = simulate(sys, q0, v0, 1e-2, 500);
  for (int s = 0; s <= 500; s += 50) EXPECT_NEAR(traj.q(s, 0), 0.3 + traj.times[s], 1e-9);
}

TEST(Simulate, SinglePendulumConservesEnergy) {
  const auto sys = AnalyticSystem::uniform_chain(1, 1.0, 1.0, 9.8);
  Vector q0(1), v0(1);
  q0 << 1.0;
  v0 << 0.0;
  const auto traj = simulate(sys, q0, v0, 1e-3, 10000);
  const double e0 = kinetic_energy(sys, q0, v0) + potential_energy(sys, q0);
  const Vector q = traj.q.row(10000).transpose(), v = traj.qdot.row(10000).transpose();
  const double e1 = kinetic_energy(sys, q, v) + potential_energy(sys, q);
  EXPECT_LT(std::abs(e1 - e0) / std::abs(e0), 1e-6);
}

TEST(Simulate, FourthOrderConvergence) {
  const auto sys = chain(1);
  Vector q0(1), v0(1);
  q0 << 0.8;
  v0 << 0.5;
  const double T = 1.0, dt = 0.01;
  auto endpoint = [&](double h) {
    const int steps = static_cast<int>(std::lround(T / h));
    return Vector(simulate(sys, q0, v0, h, steps).q.row(steps).transpose());
  };
  const Vector ref = endpoint(dt / 8);
  const double ratio = (endpoint(dt) - ref).norm() / (endpoint(dt / 2) - ref).norm();
  EXPECT_GT(ratio, 14.0);
  EXPECT_LT(ratio, 18.0);
}

TEST(Simulate, RejectsBadInputs) {
  const auto sys = chain(2);
  EXPECT_THROW(simulate(sys, Vector::Zero(2), Vector::Zero(2), 0.0, 10), ValueError);
  EXPECT_THROW(simulate(sys, Vector::Zero(3), Vector::Zero(2), 0.01, 10), ShapeError);
  AnalyticSystem bad{2, {1.0, -1.0}, {1.0, 1.0}, 9.8};
  EXPECT_THROW(bad.validate(), ValueError);
}

TEST(Simulate, DivergenceRaisesBlowup) {
  const auto sys = AnalyticSystem::uniform_chain(1, 1.0, 1.0, 0.0);
  Vector q0(1), v0(1);
  q0 << 0.0;
  v0 << 1e5;
  EXPECT_THROW(simulate(sys, q0, v0, 1.0, 100), BlowupError);
}

TEST(EmbedChain, LinkLengthsAppearBetweenMappedJoints) {
  const auto sys = chain(3);
  auto rng = make_rng(9, "test/embed");
  const Vector q = random_vector(3, rng, 1.0);
  const auto pose = embed_chain(sys, q);
  ASSERT_EQ(pose.size(), 51u);
  const int path[] = {0, 7, 9, 10};
  for (int i = 0; i < 3; ++i) {
    double d = 0.0;
    for (int c = 0; c < 3; ++c) d += std::pow(pose[3 * path[i + 1] + c] - pose[3 * path[i] + c], 2);
    EXPECT_NEAR(std::sqrt(d), sys.lengths[i], 1e-12);
  }
  for (int c = 0; c < 3; ++c) EXPECT_EQ(pose[c], 0.0);
}

TEST(SynthPoseDataset, ZeroNoiseKeepsClean) {
  SynthConfig config;
  config.count = 3;
  config.frames = 8;
  const auto data = synth_pose_dataset(chain(3), config);
  ASSERT_EQ(data.size(), 3u);
  for (const auto& s : data) EXPECT_EQ(s.noisy, s.clean);
}

TEST(SynthPoseDataset, DeterministicPerSeed) {
  SynthConfig config;
  config.count = 2;
  config.frames = 6;
  config.noise_sigma = 0.05;
  config.seed = 42;
  const auto a = synth_pose_dataset(chain(2), config);
  const auto b = synth_pose_dataset(chain(2), config);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].clean, b[i].clean);
    EXPECT_EQ(a[i].noisy, b[i].noisy);
    EXPECT_EQ(a[i].projected, b[i].projected);
  }
}

TEST(SynthPoseDataset, NoiseMatchesChiMean) {
  SynthConfig config;
  config.count = 200;
  config.frames = 32;  // 200 * 32 * 17 > 1e5 joint samples
  config.noise_sigma = 0.05;
  config.seed = 1;
  const auto data = synth_pose_dataset(chain(3), config);
  double total = 0.0;
  for (const auto& s : data) total += mpjpe(s.noisy, s.clean);
  const double expected = config.noise_sigma * 2.0 * std::sqrt(2.0 / std::numbers::pi);
  EXPECT_NEAR(total / data.size(), expected, 0.02 * expected);
}

}  // namespace
}  // namespace elpose
