#include <algorithm>

#include "elpose/cli.hpp"
#include "elpose/dynamics.hpp"
#include "elpose/errors.hpp"
#include "elpose/heatmap.hpp"
#include "elpose/lifting.hpp"
#include "elpose/metrics.hpp"
#include "elpose/physnet.hpp"
#include "elpose/projection.hpp"
#include "elpose/rng.hpp"

namespace elpose::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr std::string_view kManifest = "manifest.json";

template <typename T>
T get_or(const RunConfig& c, const char* key, T fallback) {
  return c.values.contains(key) ? c.values[key].get<T>() : fallback;
}

fs::path path_of(const RunConfig& c, const char* key) { return fs::path(c.values.at(key).get<std::string>()); }

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

// "walk.2d.poseq.json" -> "walk"
std::string stem_of(const fs::path& p) {
  std::string name = p.filename().string();
  for (std::string_view suffix : {".poseq.json", ".json", ".2d", ".clean", ".noisy"}) {
    if (name.size() > suffix.size() && name.ends_with(suffix)) name.resize(name.size() - suffix.size());
  }
  return name;
}

struct ManifestEntry {
  std::string id;
  fs::path clean;
  fs::path noisy;
  fs::path pose_2d;
};

std::vector<ManifestEntry> read_manifest(const fs::path& dir, int limit) {
  const fs::path path = dir / kManifest;
  const json doc = json::parse(read_text_file(path), nullptr, false);
  if (doc.is_discarded()) throw ParseError("manifest " + path.string() + " is not valid JSON");
  std::vector<ManifestEntry> out;
  try {
    for (const auto& s : doc.at("sequences")) {
      out.push_back({s.at("id").get<std::string>(), dir / s.at("clean").get<std::string>(),
                     dir / s.at("noisy").get<std::string>(), dir / s.at("pose_2d").get<std::string>()});
      if (limit > 0 && static_cast<int>(out.size()) == limit) break;
    }
  } catch (const json::exception& e) {
    throw SchemaError("manifest " + path.string() + ": " + e.what());
  }
  if (out.empty()) throw EmptyDataset("manifest " + path.string() + " lists no sequences");
  return out;
}

void write_curve(const fs::path& path, std::span<const CurvePoint> curve) {
  std::string csv = "step,loss\n";
  for (const auto& p : curve) csv += std::to_string(p.step) + "," + format_double(p.loss) + "\n";
  write_text_file(path, csv);
}

AdamConfig adam_from(const RunConfig& c, double default_lr) {
  AdamConfig adam;
  adam.learning_rate = get_or(c, "learning_rate", default_lr);
  adam.weight_decay = get_or(c, "weight_decay", adam.weight_decay);
  require(adam.learning_rate > 0.0 && adam.weight_decay >= 0.0, "learning_rate must be positive");
  return adam;
}

CommandResult train_lifter_stage(const RunConfig& c, const std::vector<ManifestEntry>& entries) {
  std::vector<PromptPair> pairs;
  for (const auto& e : entries) pairs.push_back({load_pose_sequence_2d(e.pose_2d), load_pose_sequence_3d(e.clean)});
  LifterTrainConfig tc;
  tc.epochs = get_or(c, "epochs", 15);
  tc.batch_size = get_or(c, "batch_size", 8);
  tc.prompt_pairs = get_or(c, "prompt_pairs", 2);
  tc.adam = adam_from(c, 1e-3);
  tc.seed = c.seed;
  tc.validation_fraction = get_or(c, "validation_fraction", 0.1);
  tc.model.depth = get_or(c, "depth", tc.model.depth);
  tc.model.embed_dim = get_or(c, "embed_dim", tc.model.embed_dim);
  tc.model.heads = get_or(c, "heads", tc.model.heads);
  std::optional<LifterParams> init;
  if (c.values.contains("resume")) {
    auto state = load_lifter(path_of(c, "resume"));
    tc.first_step = state.step;
    init = std::move(state.params);
  }
  auto result = train_lifter(pairs, tc, std::move(init));
  const long step = tc.first_step + static_cast<long>(result.curve.size());
  const fs::path out = path_of(c, "output");
  save_lifter(out, {std::move(result.params), std::move(result.prior), std::move(result.prompt_bank), step});
  const fs::path curve = out.string() + ".curve.csv";
  write_curve(curve, result.curve);
  return {{out, fs::path(out.string() + ".json"), curve},
          "trained lifter for " + std::to_string(result.curve.size()) + " steps"};
}

CommandResult train_physnet_stage(const RunConfig& c, const std::vector<ManifestEntry>& entries,
                                  PhysNetStage stage) {
  require(c.values.contains("lifter"), "physnet stages need a 'lifter' checkpoint");
  const auto lifter = load_lifter(path_of(c, "lifter"));
  const int prompt_pairs = get_or(c, "prompt_pairs", 2);
  std::vector<PhysNetSample> samples;
  for (const auto& e : entries) {
    const auto pose_2d = load_pose_sequence_2d(e.pose_2d);
    PhysNetSample s{lift_with_checkpoint(pose_2d, lifter, prompt_pairs), std::nullopt, std::nullopt};
    if (stage == PhysNetStage::kPretrain3D) {
      s.truth_3d = root_center(load_pose_sequence_3d(e.clean));
    } else {
      s.truth_2d = pose_2d;
    }
    samples.push_back(std::move(s));
  }
  PhysNetTrainConfig tc;
  tc.stage = stage;
  tc.epochs = get_or(c, "epochs", 40);
  tc.batch_size = get_or(c, "batch_size", 8);
  tc.adam = adam_from(c, 3e-3);
  tc.seed = c.seed;
  tc.validation_fraction = get_or(c, "validation_fraction", 0.1);
  tc.model.head_hidden = get_or(c, "head_hidden", tc.model.head_hidden);
  tc.model.decoder_hidden = get_or(c, "decoder_hidden", tc.model.decoder_hidden);
  tc.model.dt = get_or(c, "dt", tc.model.dt);
  tc.model.share_local_weights = get_or(c, "share_local_weights", tc.model.share_local_weights);
  std::optional<PhysNetParams> init;
  if (c.values.contains("resume")) init = load_physnet(path_of(c, "resume"), &tc.first_step);
  auto result = train_physnet(samples, tc, std::move(init));
  const long step = tc.first_step + static_cast<long>(result.curve.size());
  const fs::path out = path_of(c, "output");
  save_physnet(out, result.params, step);
  const fs::path curve = out.string() + ".curve.csv";
  write_curve(curve, result.curve);
  return {{out, fs::path(out.string() + ".json"), curve},
          "trained physnet for " + std::to_string(result.curve.size()) + " steps"};
}

template <typename Seq>
std::vector<double> metric_values(const std::vector<std::string>& names, const Seq& pred, const Seq& truth) {
  std::vector<double> out;
  for (const auto& m : names) {
    if (m == "mpjpe") {
      out.push_back(mpjpe(pred, truth));
    } else if (m == "n_mpjpe") {
      out.push_back(n_mpjpe(pred, truth));
    } else {
      out.push_back(mpjve(pred, truth));
    }
  }
  return out;
}

}  // namespace

CommandResult cmd_simulate(const RunConfig& c) {
  const int links = get_or(c, "links", 3);
  require(links >= 1 && links <= 4, "links must lie in [1, 4]");
  const auto sys = AnalyticSystem::uniform_chain(links, get_or(c, "link_mass", 1.0),
                                                 get_or(c, "link_length", 0.25), get_or(c, "gravity", 9.8));
  SynthConfig sc;
  sc.count = get_or(c, "count", 1);
  sc.frames = get_or(c, "frames", sc.frames);
  sc.noise_sigma = get_or(c, "noise_sigma", sc.noise_sigma);
  sc.seed = c.seed;
  sc.fps = get_or(c, "fps", sc.fps);
  sc.substeps = get_or(c, "substeps", sc.substeps);
  sc.max_angle = get_or(c, "max_angle", sc.max_angle);
  sc.max_rate = get_or(c, "max_rate", sc.max_rate);
  require(sc.count >= 1 && sc.frames >= 1 && sc.substeps >= 1, "count, frames and substeps must be positive");
  require(sc.noise_sigma >= 0.0 && sc.fps > 0.0, "noise_sigma must be >= 0 and fps > 0");
  const auto samples = synth_pose_dataset(sys, sc);

  const fs::path dir = path_of(c, "output_dir");
  CommandResult result;
  json manifest;
  manifest["links"] = links;
  manifest["count"] = sc.count;
  manifest["frames"] = sc.frames;
  manifest["fps"] = sc.fps;
  manifest["noise_sigma"] = sc.noise_sigma;
  manifest["seed"] = c.seed;
  manifest["camera"] = {{"scale", sc.camera.scale}, {"offset", sc.camera.offset}};
  manifest["sequences"] = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "seq_%04zu", i);
    const std::string clean = std::string(id) + ".clean.poseq.json";
    const std::string noisy = std::string(id) + ".noisy.poseq.json";
    const std::string pose_2d = std::string(id) + ".2d.poseq.json";
    save_pose_sequence(dir / clean, samples[i].clean);
    save_pose_sequence(dir / noisy, samples[i].noisy);
    save_pose_sequence(dir / pose_2d, samples[i].projected);
    result.written.insert(result.written.end(), {dir / clean, dir / noisy, dir / pose_2d});
    manifest["sequences"].push_back({{"id", id}, {"clean", clean}, {"noisy", noisy}, {"pose_2d", pose_2d}});
  }
  write_text_file(dir / kManifest, manifest.dump(2) + "\n");
  result.written.push_back(dir / kManifest);
  result.summary = "simulated " + std::to_string(samples.size()) + " sequences";
  return result;
}

CommandResult cmd_train(const RunConfig& c) {
  const auto stage = c.values.at("stage").get<std::string>();
  require(stage == "lifter" || stage == "physnet-pretrain" || stage == "physnet-finetune",
          "stage must be one of lifter, physnet-pretrain, physnet-finetune");
  const auto entries = read_manifest(path_of(c, "data_dir"), get_or(c, "limit", 0));
  if (stage == "lifter") return train_lifter_stage(c, entries);
  return train_physnet_stage(c, entries,
                             stage == "physnet-pretrain" ? PhysNetStage::kPretrain3D : PhysNetStage::kFinetune2D);
}

CommandResult cmd_refine(const RunConfig& c) {
  std::vector<fs::path> inputs;
  if (c.values.contains("inputs")) {
    for (const auto& p : c.values["inputs"]) inputs.emplace_back(p.get<std::string>());
  }
  if (c.values.contains("data_dir")) {
    for (const auto& e : read_manifest(path_of(c, "data_dir"), get_or(c, "limit", 0))) inputs.push_back(e.pose_2d);
  }
  require(!inputs.empty(), "refine needs 'inputs' or 'data_dir'");
  const auto mode = get_or<std::string>(c, "noise_mode", "mean-only");
  require(mode == "mean-only" || mode == "sample", "noise_mode must be mean-only or sample");
  const int prompt_pairs = get_or(c, "prompt_pairs", 2);
  require(prompt_pairs >= 0, "prompt_pairs must be non-negative");

  const auto lifter = load_lifter(path_of(c, "lifter"));
  auto physnet = load_physnet(path_of(c, "physnet"));
  physnet.noise_mode = mode == "sample" ? NoiseMode::kSample : NoiseMode::kMeanOnly;
  const fs::path dir = path_of(c, "output_dir");
  CommandResult result;
  for (const auto& input : inputs) {
    const auto pose_2d = load_pose_sequence_2d(input);
    const std::string stem = stem_of(input);
    const auto dd = lift_with_checkpoint(pose_2d, lifter, prompt_pairs);
    const auto pp = reestimate(dd, physnet, stream_seed(c.seed, "refine/" + stem));
    const auto fused = fuse_poses(dd, pp);
    const auto reproj = project(fused, fit_camera(fused, pose_2d).camera);
    const fs::path files[] = {dir / (stem + ".dd.poseq.json"), dir / (stem + ".pp.poseq.json"),
                              dir / (stem + ".fused.poseq.json"), dir / (stem + ".reproj.poseq.json")};
    save_pose_sequence(files[0], dd);
    save_pose_sequence(files[1], pp);
    save_pose_sequence(files[2], fused);
    save_pose_sequence(files[3], reproj);
    result.written.insert(result.written.end(), std::begin(files), std::end(files));
  }
  result.summary = "refined " + std::to_string(inputs.size()) + " sequences";
  return result;
}

CommandResult cmd_metrics(const RunConfig& c) {
  const auto preds = c.values.at("predictions").get<std::vector<std::string>>();
  const auto refs = c.values.at("references").get<std::vector<std::string>>();
  require(preds.size() == refs.size(), "predictions and references must have equal length");
  require(!preds.empty(), "metrics needs at least one pair");
  const auto kind = get_or<std::string>(c, "kind", "3d");
  require(kind == "3d" || kind == "2d", "kind must be 3d or 2d");
  const auto names =
      get_or<std::vector<std::string>>(c, "metrics", {"mpjpe", "n_mpjpe", "mpjve"});
  require(!names.empty(), "metrics list must not be empty");
  for (const auto& m : names) {
    require(m == "mpjpe" || m == "n_mpjpe" || m == "mpjve", "unknown metric '" + m + "'");
  }

  // values[pair][metric]
  std::vector<std::vector<double>> values;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (kind == "3d") {
      values.push_back(metric_values(names, load_pose_sequence_3d(preds[i]), load_pose_sequence_3d(refs[i])));
    } else {
      values.push_back(metric_values(names, load_pose_sequence_2d(preds[i]), load_pose_sequence_2d(refs[i])));
    }
  }
  std::string csv = "metric,pair,value\n";
  json summary;
  summary["kind"] = kind;
  summary["pairs"] = preds.size();
  summary["metrics"] = json::object();
  for (std::size_t m = 0; m < names.size(); ++m) {
    double total = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      csv += csv_field(names[m]) + "," + csv_field(fs::path(preds[i]).filename().string()) + "," +
             format_double(values[i][m]) + "\n";
      total += values[i][m];
    }
    summary["metrics"][names[m]] = {{"mean", total / static_cast<double>(preds.size())}};
  }
  const fs::path csv_path = path_of(c, "output_csv");
  const fs::path json_path = path_of(c, "output_json");
  write_text_file(csv_path, csv);
  write_text_file(json_path, summary.dump(2) + "\n");
  return {{csv_path, json_path},
          "scored " + std::to_string(preds.size()) + " pairs on " + std::to_string(names.size()) + " metrics"};
}

CommandResult cmd_heatmap(const RunConfig& c) {
  const int width = get_or(c, "width", 384);
  const int height = get_or(c, "height", 384);
  const double sigma = get_or(c, "sigma", 2.0);
  const auto factors = get_or<std::vector<int>>(c, "factors", {1, 2, 4, 8});
  require(width > 0 && height > 0 && sigma > 0.0, "width, height and sigma must be positive");
  const fs::path dir = path_of(c, "output_dir");
  CommandResult result;
  std::string stats = "file,frame,channel,max,mean\n";
  for (const auto& p : c.values.at("inputs")) {
    const fs::path input(p.get<std::string>());
    const auto pose = load_pose_sequence_2d(input);
    const std::string stem = stem_of(input);
    for (int t = 0; t < pose.num_frames(); ++t) {
      const auto maps = skeleton_heatmaps(pose.frame(t), width, height, sigma);
      char name[64];
      std::snprintf(name, sizeof name, ".f%04d.elh", t);
      const fs::path out = dir / (stem + name);
      write_pyramid(out, build_pyramid(maps, factors));
      result.written.push_back(out);
      const std::size_t plane = static_cast<std::size_t>(height) * width;
      for (int ch = 0; ch < maps.channels; ++ch) {
        const auto first = maps.values.begin() + static_cast<std::ptrdiff_t>(ch * plane);
        const auto last = first + static_cast<std::ptrdiff_t>(plane);
        const double mx = *std::max_element(first, last);
        double sum = 0.0;
        for (auto it = first; it != last; ++it) sum += *it;
        stats += csv_field(out.filename().string()) + "," + std::to_string(t) + "," + std::to_string(ch) +
                 "," + format_double(mx) + "," + format_double(sum / static_cast<double>(plane)) + "\n";
      }
    }
  }
  const fs::path stats_path = dir / "heatmap_stats.csv";
  write_text_file(stats_path, stats);
  result.written.push_back(stats_path);
  result.summary = "wrote " + std::to_string(result.written.size() - 1) + " heatmap files";
  return result;
}

CommandResult run_command(const RunConfig& c) {
  if (c.command == "simulate") return cmd_simulate(c);
  if (c.command == "train") return cmd_train(c);
  if (c.command == "refine") return cmd_refine(c);
  if (c.command == "metrics") return cmd_metrics(c);
  if (c.command == "heatmap") return cmd_heatmap(c);
  throw ConfigError("unknown command '" + c.command + "'");
}

}  // namespace elpose::cli
