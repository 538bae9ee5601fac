#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "elpose/cli.hpp"
#include "elpose/dynamics.hpp"
#include "elpose/errors.hpp"
#include "elpose/heatmap.hpp"
#include "elpose/lifting.hpp"
#include "elpose/metrics.hpp"
#include "elpose/physnet.hpp"
#include "elpose/projection.hpp"

namespace py = pybind11;
using namespace elpose;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> pose_values(const DoubleArray& a, int dims) {
  if (a.ndim() != 3 || a.shape(1) != kNumJoints || a.shape(2) != dims) {
    throw ShapeError("expected an array of shape (T, 17, " + std::to_string(dims) + ")");
  }
  return {a.data(), a.data() + a.size()};
}

int pose_dims(const DoubleArray& a) { return a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 0; }

PoseSequence3D to_pose3d(const DoubleArray& a, double fps) {
  auto v = pose_values(a, 3);
  const auto frame = infer_frame_of_reference(v);
  return PoseSequence3D(std::move(v), fps, frame);
}

PoseSequence2D to_pose2d(const DoubleArray& a, double fps) { return PoseSequence2D(pose_values(a, 2), fps); }

template <typename Seq>
DoubleArray to_array(const Seq& seq, int dims) {
  DoubleArray out({static_cast<py::ssize_t>(seq.num_frames()), static_cast<py::ssize_t>(kNumJoints),
                   static_cast<py::ssize_t>(dims)});
  std::copy(seq.values().begin(), seq.values().end(), out.mutable_data());
  return out;
}

DoubleArray stack_to_array(const HeatmapStack& m) {
  DoubleArray out({m.channels, m.height, m.width});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

// Dispatches a pose metric on the trailing dimension of its inputs.
template <typename F>
double pose_metric(F&& metric, const DoubleArray& pred, const DoubleArray& truth, double fps) {
  if (pose_dims(pred) == 2) return metric(to_pose2d(pred, fps), to_pose2d(truth, fps));
  return metric(to_pose3d(pred, fps), to_pose3d(truth, fps));
}

std::vector<Embedding> rows(const Matrix& m) {
  std::vector<Embedding> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.emplace_back(m.row(i).data(), m.row(i).data() + m.cols());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Physics-refined 3D pose estimation toolkit.";

  auto base = py::register_exception<Error>(m, "ElposeError", PyExc_RuntimeError);
  py::register_exception<MissingCheckpoint>(m, "MissingCheckpoint", base.ptr());

  m.attr("NUM_JOINTS") = kNumJoints;

  // Pose metrics.
  m.def(
      "mpjpe",
      [](const DoubleArray& pred, const DoubleArray& truth) {
        return pose_metric([](const auto& a, const auto& b) { return mpjpe(a, b); }, pred, truth, 30.0);
      },
      py::arg("pred"), py::arg("truth"));
  m.def(
      "n_mpjpe",
      [](const DoubleArray& pred, const DoubleArray& truth) {
        return pose_metric([](const auto& a, const auto& b) { return n_mpjpe(a, b); }, pred, truth, 30.0);
      },
      py::arg("pred"), py::arg("truth"));
  m.def(
      "mpjve",
      [](const DoubleArray& pred, const DoubleArray& truth, double fps) {
        return pose_metric([](const auto& a, const auto& b) { return mpjve(a, b); }, pred, truth, fps);
      },
      py::arg("pred"), py::arg("truth"), py::arg("fps") = 30.0, "Velocity error in units per second.");

  m.def(
      "frechet_distance",
      [](const Matrix& a, const Matrix& b) {
        return frechet_distance(feature_stats(rows(a)), feature_stats(rows(b)));
      },
      py::arg("features_a"), py::arg("features_b"), "Frechet distance between Gaussian fits of two (N, d) sets.");
  m.def(
      "clip_domain_star", [](const Matrix& gen, const Matrix& ref) { return clip_domain_star(rows(gen), rows(ref)); },
      py::arg("generated"), py::arg("references"));
  m.def(
      "clip_smooth_star",
      [](const Matrix& gen, const std::vector<Matrix>& refs, const std::vector<int>& sample_counts) {
        std::vector<std::vector<Embedding>> r;
        for (const auto& ref : refs) r.push_back(rows(ref));
        return clip_smooth_star(rows(gen), r, sample_counts);
      },
      py::arg("generated"), py::arg("references"), py::arg("sample_counts") = std::vector<int>{1, 2, 4, 8, 16});

  // Poses and cameras.
  m.def(
      "root_center", [](const DoubleArray& poses) { return to_array(root_center(to_pose3d(poses, 30.0)), 3); },
      py::arg("poses"));
  m.def(
      "fit_camera",
      [](const DoubleArray& poses3d, const DoubleArray& poses2d) {
        const auto fit = fit_camera(to_pose3d(poses3d, 30.0), to_pose2d(poses2d, 30.0));
        return py::make_tuple(fit.camera.scale, py::make_tuple(fit.camera.offset[0], fit.camera.offset[1]),
                              fit.residual);
      },
      py::arg("poses3d"), py::arg("poses2d"), "Returns (scale, (ox, oy), residual).");
  m.def(
      "project",
      [](const DoubleArray& poses, double scale, std::array<double, 2> offset) {
        return to_array(project(to_pose3d(poses, 30.0), CameraParams{scale, offset}), 2);
      },
      py::arg("poses"), py::arg("scale") = 1.0, py::arg("offset") = std::array<double, 2>{0.0, 0.0});
  m.def(
      "load_poses",
      [](const std::filesystem::path& path, int dims) {
        if (dims == 2) {
          const auto seq = load_pose_sequence_2d(path);
          return py::make_tuple(to_array(seq, 2), seq.fps());
        }
        const auto seq = load_pose_sequence_3d(path);
        return py::make_tuple(to_array(seq, 3), seq.fps());
      },
      py::arg("path"), py::arg("dims") = 3, "Returns (poses, fps).");
  m.def(
      "save_poses",
      [](const std::filesystem::path& path, const DoubleArray& poses, double fps) {
        if (pose_dims(poses) == 2) {
          save_pose_sequence(path, to_pose2d(poses, fps));
        } else {
          save_pose_sequence(path, to_pose3d(poses, fps));
        }
      },
      py::arg("path"), py::arg("poses"), py::arg("fps") = 30.0);

  // Analytic dynamics.
  py::class_<AnalyticSystem>(m, "AnalyticSystem")
      .def(py::init([](std::vector<double> masses, std::vector<double> lengths, double gravity) {
             AnalyticSystem sys{static_cast<int>(masses.size()), std::move(masses), std::move(lengths), gravity};
             sys.validate();
             return sys;
           }),
           py::arg("masses"), py::arg("lengths"), py::arg("gravity") = 9.8)
      .def_static("uniform_chain", &AnalyticSystem::uniform_chain, py::arg("n_links"), py::arg("mass") = 1.0,
                  py::arg("length") = 1.0, py::arg("gravity") = 9.8)
      .def_readonly("n_links", &AnalyticSystem::n_links)
      .def_readonly("masses", &AnalyticSystem::masses)
      .def_readonly("lengths", &AnalyticSystem::lengths)
      .def_readonly("gravity", &AnalyticSystem::gravity);

  m.def("solve_acceleration", &solve_acceleration, py::arg("system"), py::arg("q"), py::arg("qdot"));
  m.def("verify_el_identity", &verify_el_identity, py::arg("system"), py::arg("q"), py::arg("qdot"),
        py::arg("qddot"));
  m.def(
      "energy",
      [](const AnalyticSystem& sys, const Vector& q, const Vector& qdot) {
        return kinetic_energy(sys, q, qdot) + potential_energy(sys, q);
      },
      py::arg("system"), py::arg("q"), py::arg("qdot"));
  m.def(
      "simulate",
      [](const AnalyticSystem& sys, const Vector& q0, const Vector& qdot0, double dt, int steps) {
        const auto traj = simulate(sys, q0, qdot0, dt, steps);
        return py::dict(py::arg("times") = traj.times, py::arg("q") = traj.q, py::arg("qdot") = traj.qdot);
      },
      py::arg("system"), py::arg("q0"), py::arg("qdot0"), py::arg("dt"), py::arg("steps"));
  m.def(
      "synth_pose_dataset",
      [](const AnalyticSystem& sys, int count, int frames, double noise_sigma, std::uint64_t seed) {
        SynthConfig config;
        config.count = count;
        config.frames = frames;
        config.noise_sigma = noise_sigma;
        config.seed = seed;
        py::list out;
        for (const auto& s : synth_pose_dataset(sys, config)) {
          out.append(py::dict(py::arg("clean") = to_array(s.clean, 3), py::arg("noisy") = to_array(s.noisy, 3),
                              py::arg("projected") = to_array(s.projected, 2)));
        }
        return out;
      },
      py::arg("system"), py::arg("count"), py::arg("frames") = 32, py::arg("noise_sigma") = 0.0,
      py::arg("seed") = 0);

  // Physics network pieces.
  m.def(
      "symmetrize", [](const std::vector<double>& packed, int n) { return symmetrize(packed, n); },
      py::arg("packed"), py::arg("n"));
  m.def("pack_upper", &pack_upper, py::arg("matrix"));
  m.def(
      "fuse_poses",
      [](const DoubleArray& dd, const DoubleArray& pp) {
        return to_array(fuse_poses(to_pose3d(dd, 30.0), to_pose3d(pp, 30.0)), 3);
      },
      py::arg("s_dd"), py::arg("s_pp"));
  m.def(
      "reestimate",
      [](const DoubleArray& poses, const std::filesystem::path& checkpoint, double fps, std::uint64_t seed) {
        return to_array(reestimate(to_pose3d(poses, fps), load_physnet(checkpoint), seed), 3);
      },
      py::arg("poses"), py::arg("checkpoint"), py::arg("fps") = 30.0, py::arg("seed") = 0,
      "Physically re-estimated sequence from a data-driven one.");
  m.def(
      "lift",
      [](const DoubleArray& poses2d, const std::filesystem::path& checkpoint, double fps, int prompt_pairs) {
        return to_array(lift_with_checkpoint(to_pose2d(poses2d, fps), load_lifter(checkpoint), prompt_pairs), 3);
      },
      py::arg("poses2d"), py::arg("checkpoint"), py::arg("fps") = 30.0, py::arg("prompt_pairs") = 2);

  // Heatmaps.
  m.def(
      "joint_heatmaps",
      [](const DoubleArray& pose, int width, int height, double sigma) {
        return stack_to_array(joint_heatmaps(std::span<const double>(pose.data(), pose.size()), width, height, sigma));
      },
      py::arg("pose"), py::arg("width"), py::arg("height"), py::arg("sigma") = 2.0);
  m.def(
      "skeleton_heatmaps",
      [](const DoubleArray& pose, int width, int height, double sigma) {
        return stack_to_array(
            skeleton_heatmaps(std::span<const double>(pose.data(), pose.size()), width, height, sigma));
      },
      py::arg("pose"), py::arg("width"), py::arg("height"), py::arg("sigma") = 2.0);
  m.def(
      "read_pyramid",
      [](const std::filesystem::path& path) {
        py::dict out;
        for (const auto& level : read_pyramid(path).levels) out[py::int_(level.factor)] = stack_to_array(level.maps);
        return out;
      },
      py::arg("path"), "Maps each downsampling factor to a (C, H, W) array.");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "elpose");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        py::gil_scoped_release release;
        return cli::run_main(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs an elpose subcommand and returns its exit code.");
}
