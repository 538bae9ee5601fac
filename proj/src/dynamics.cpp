#include "elpose/dynamics.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Cholesky>

#include "elpose/errors.hpp"
#include "elpose/rng.hpp"

namespace elpose {

namespace {

// Mass carried beyond link i: sum of masses[k] for k >= i.
std::vector<double> tail_masses(const AnalyticSystem& sys) {
  std::vector<double> mu(sys.n_links, 0.0);
  double acc = 0.0;
  for (int i = sys.n_links - 1; i >= 0; --i) {
    acc += sys.masses[i];
    mu[i] = acc;
  }
  return mu;
}

void check_state(const AnalyticSystem& sys, const Vector& q, const Vector& qdot) {
  if (q.size() != sys.n_links || qdot.size() != sys.n_links) {
    throw ShapeError("state dimension does not match the number of links");
  }
}

}  // namespace

void AnalyticSystem::validate() const {
  if (n_links < 1) throw ValueError("chain needs at least one link");
  if (static_cast<int>(masses.size()) != n_links || static_cast<int>(lengths.size()) != n_links) {
    throw ValueError("masses and lengths must have one entry per link");
  }
  for (int i = 0; i < n_links; ++i) {
    if (!(masses[i] > 0.0) || !(lengths[i] > 0.0)) {
      throw ValueError("masses and lengths must be positive");
    }
  }
  if (!std::isfinite(gravity)) throw ValueError("gravity must be finite");
}

AnalyticSystem AnalyticSystem::uniform_chain(int n_links, double mass, double length,
                                             double gravity) {
  AnalyticSystem sys{n_links, std::vector<double>(n_links, mass),
                     std::vector<double>(n_links, length), gravity};
  sys.validate();
  return sys;
}

LagrangianTerms lagrangian_terms(const AnalyticSystem& sys, const Vector& q, const Vector& qdot) {
  check_state(sys, q, qdot);
  const int n = sys.n_links;
  const auto mu = tail_masses(sys);
  const auto& l = sys.lengths;
  LagrangianTerms terms{Matrix(n, n), Vector(n), Vector(n)};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      terms.mass(i, j) = mu[std::max(i, j)] * l[i] * l[j] * std::cos(q[i] - q[j]);
    }
    terms.forces[i] = -sys.gravity * mu[i] * l[i] * std::sin(q[i]);
  }
  for (int i = 0; i < n; ++i) {
    double c = 0.0;
    for (int j = 0; j < n; ++j) {
      c += mu[std::max(i, j)] * l[i] * l[j] * std::sin(q[i] - q[j]) * qdot[j] * qdot[j];
    }
    terms.coriolis[i] = c;
  }
  return terms;
}

Vector solve_acceleration(const AnalyticSystem& sys, const Vector& q, const Vector& qdot) {
  const auto terms = lagrangian_terms(sys, q, qdot);
  return terms.mass.ldlt().solve(terms.forces - terms.coriolis);
}

double verify_el_identity(const AnalyticSystem& sys, const Vector& q, const Vector& qdot,
                          const Vector& qddot) {
  const auto terms = lagrangian_terms(sys, q, qdot);
  if (qddot.size() != sys.n_links) throw ShapeError("qddot dimension mismatch");
  return (terms.mass * qddot - (terms.forces - terms.coriolis)).cwiseAbs().maxCoeff();
}

double kinetic_energy(const AnalyticSystem& sys, const Vector& q, const Vector& qdot) {
  const auto terms = lagrangian_terms(sys, q, qdot);
  return 0.5 * qdot.dot(terms.mass * qdot);
}

double potential_energy(const AnalyticSystem& sys, const Vector& q) {
  const auto mu = tail_masses(sys);
  double v = 0.0;
  for (int i = 0; i < sys.n_links; ++i) {
    v -= sys.gravity * mu[i] * sys.lengths[i] * std::cos(q[i]);
  }
  return v;
}

Trajectory simulate(const AnalyticSystem& sys, const Vector& q0, const Vector& qdot0, double dt,
                    int steps) {
  sys.validate();
  check_state(sys, q0, qdot0);
  if (!(dt > 0.0)) throw ValueError("dt must be positive");
  if (steps < 0) throw ValueError("steps must be nonnegative");
  const int n = sys.n_links;
  Trajectory traj{std::vector<double>(steps + 1), Matrix(steps + 1, n), Matrix(steps + 1, n)};
  Vector q = q0;
  Vector v = qdot0;
  traj.times[0] = 0.0;
  traj.q.row(0) = q.transpose();
  traj.qdot.row(0) = v.transpose();
  for (int s = 1; s <= steps; ++s) {
    const Vector a1 = solve_acceleration(sys, q, v);
    const Vector q2 = q + 0.5 * dt * v, v2 = v + 0.5 * dt * a1;
    const Vector a2 = solve_acceleration(sys, q2, v2);
    const Vector q3 = q + 0.5 * dt * v2, v3 = v + 0.5 * dt * a2;
    const Vector a3 = solve_acceleration(sys, q3, v3);
    const Vector q4 = q + dt * v3, v4 = v + dt * a3;
    const Vector a4 = solve_acceleration(sys, q4, v4);
    q += dt / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4);
    v += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
    if (!q.allFinite() || !v.allFinite() || q.cwiseAbs().maxCoeff() > 1e6 ||
        v.cwiseAbs().maxCoeff() > 1e6) {
      throw BlowupError("simulation diverged at step " + std::to_string(s));
    }
    traj.times[s] = s * dt;
    traj.q.row(s) = q.transpose();
    traj.qdot.row(s) = v.transpose();
  }
  return traj;
}

namespace {

constexpr int kPelvis = 0, kSpine = 7, kThorax = 8, kNeck = 9, kHead = 10;

std::vector<int> chain_path(int n_links) {
  switch (n_links) {
    case 1:
      return {kPelvis, kHead};
    case 2:
      return {kPelvis, kThorax, kHead};
    case 3:
      return {kPelvis, kSpine, kNeck, kHead};
    case 4:
      return {kPelvis, kSpine, kThorax, kNeck, kHead};
    default:
      throw ValueError("skeleton embedding supports 1 to 4 links");
  }
}

using Vec3 = std::array<double, 3>;

// Limb offsets at rest, relative to pelvis (legs) or thorax (arms). The
// chain hangs along -y at rest, so limbs point along +y.
constexpr std::array<std::pair<int, Vec3>, 6> kLegRest{{
    {1, {-0.13, 0.00, 0.03}},
    {2, {-0.15, 0.44, 0.08}},
    {3, {-0.16, 0.86, 0.02}},
    {4, {0.13, 0.00, -0.03}},
    {5, {0.15, 0.44, 0.06}},
    {6, {0.16, 0.86, -0.04}},
}};
constexpr std::array<std::pair<int, Vec3>, 6> kArmRest{{
    {11, {0.17, -0.02, -0.02}},
    {12, {0.20, 0.24, 0.05}},
    {13, {0.22, 0.48, 0.12}},
    {14, {-0.17, -0.02, 0.02}},
    {15, {-0.20, 0.24, -0.03}},
    {16, {-0.22, 0.48, 0.09}},
}};

struct Embedding {
  std::array<Vec3, kNumJoints> rest{};
  std::array<int, kNumJoints> anchor{};  // mapped joint the joint rides on
  std::array<int, kNumJoints> link{};    // link index driving the joint
  std::vector<int> path;
};

Embedding make_embedding(const AnalyticSystem& sys) {
  Embedding e;
  e.path = chain_path(sys.n_links);
  std::array<bool, kNumJoints> mapped{};
  double depth = 0.0;
  for (std::size_t k = 0; k < e.path.size(); ++k) {
    mapped[e.path[k]] = true;
    e.rest[e.path[k]] = {0.0, -depth, 0.0};
    if (k < sys.lengths.size()) depth += sys.lengths[k];
  }
  // Unmapped trunk joints are spaced evenly between their mapped neighbors.
  const std::array<int, 5> trunk{kPelvis, kSpine, kThorax, kNeck, kHead};
  for (std::size_t a = 0; a < trunk.size();) {
    std::size_t b = a + 1;
    while (b < trunk.size() && !mapped[trunk[b]]) ++b;
    for (std::size_t k = a + 1; k < b; ++k) {
      const double f = static_cast<double>(k - a) / static_cast<double>(b - a);
      const auto& ra = e.rest[trunk[a]];
      const auto& rb = e.rest[trunk[b]];
      e.rest[trunk[k]] = {0.0, ra[1] + f * (rb[1] - ra[1]), 0.0};
    }
    a = b;
  }
  for (const auto& [j, off] : kLegRest) {
    for (int c = 0; c < 3; ++c) e.rest[j][c] = e.rest[kPelvis][c] + off[c];
  }
  for (const auto& [j, off] : kArmRest) {
    for (int c = 0; c < 3; ++c) e.rest[j][c] = e.rest[kThorax][c] + off[c];
  }
  const auto& layout = h36m_layout();
  for (int j = 0; j < kNumJoints; ++j) {
    int a = j;
    while (!mapped[a]) a = layout.parent(a);
    e.anchor[j] = a;
    const auto it = std::find(e.path.begin(), e.path.end(), a);
    const int k = static_cast<int>(it - e.path.begin());
    e.link[j] = std::min(k, sys.n_links - 1);
  }
  return e;
}

}  // namespace

std::vector<double> embed_chain(const AnalyticSystem& sys, const Vector& q) {
  sys.validate();
  if (q.size() != sys.n_links) throw ShapeError("angle vector does not match the chain");
  const auto e = make_embedding(sys);
  std::array<Vec3, kNumJoints> pos{};
  double x = 0.0, y = 0.0;
  pos[e.path[0]] = {0.0, 0.0, 0.0};
  for (int i = 0; i < sys.n_links; ++i) {
    x += sys.lengths[i] * std::sin(q[i]);
    y -= sys.lengths[i] * std::cos(q[i]);
    pos[e.path[i + 1]] = {x, y, 0.0};
  }
  std::vector<double> out(kStateDim);
  for (int j = 0; j < kNumJoints; ++j) {
    Vec3 p;
    if (std::find(e.path.begin(), e.path.end(), j) != e.path.end()) {
      p = pos[j];
    } else {
      const int a = e.anchor[j];
      const double th = q[e.link[j]];
      const double dx = e.rest[j][0] - e.rest[a][0];
      const double dy = e.rest[j][1] - e.rest[a][1];
      p = {pos[a][0] + std::cos(th) * dx - std::sin(th) * dy,
           pos[a][1] + std::sin(th) * dx + std::cos(th) * dy, e.rest[j][2]};
    }
    for (int c = 0; c < 3; ++c) out[3 * j + c] = p[c];
  }
  return out;
}

PoseSequence3D trajectory_to_poses(const AnalyticSystem& sys, const Trajectory& traj, double fps,
                                   int stride) {
  if (stride < 1) throw ValueError("stride must be positive");
  std::vector<double> values;
  for (Eigen::Index r = 0; r < traj.q.rows(); r += stride) {
    const auto frame = embed_chain(sys, traj.q.row(r).transpose());
    values.insert(values.end(), frame.begin(), frame.end());
  }
  return PoseSequence3D(std::move(values), fps, FrameOfReference::kRootRelative);
}

std::vector<SynthSample> synth_pose_dataset(const AnalyticSystem& sys, const SynthConfig& config) {
  sys.validate();
  if (config.count < 0 || config.frames < 1 || config.substeps < 1 || !(config.fps > 0.0) ||
      !(config.noise_sigma >= 0.0)) {
    throw ValueError("invalid synthetic dataset configuration");
  }
  auto init_rng = make_rng(config.seed, "synth/initial-state");
  auto noise_rng = make_rng(config.seed, "synth/observation-noise");
  const double dt = 1.0 / (config.fps * config.substeps);
  std::vector<SynthSample> out;
  out.reserve(config.count);
  for (int s = 0; s < config.count; ++s) {
    Vector q0(sys.n_links), v0(sys.n_links);
    for (int i = 0; i < sys.n_links; ++i) {
      q0[i] = uniform(init_rng, -config.max_angle, config.max_angle);
      v0[i] = uniform(init_rng, -config.max_rate, config.max_rate);
    }
    const auto traj = simulate(sys, q0, v0, dt, (config.frames - 1) * config.substeps);
    auto clean = trajectory_to_poses(sys, traj, config.fps, config.substeps);
    std::vector<double> noisy = clean.values();
    if (config.noise_sigma > 0.0) {
      for (double& v : noisy) v += config.noise_sigma * standard_normal(noise_rng);
    }
    const auto frame = infer_frame_of_reference(noisy);
    PoseSequence3D noisy_seq(std::move(noisy), config.fps, frame);
    auto projected = project(noisy_seq, config.camera);
    out.push_back({std::move(clean), std::move(noisy_seq), std::move(projected)});
  }
  return out;
}

}  // namespace elpose
