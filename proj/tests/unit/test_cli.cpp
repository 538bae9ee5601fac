#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "elpose/cli.hpp"
#include "elpose/errors.hpp"
#include "elpose/lifting.hpp"
#include "elpose/metrics.hpp"
#include "elpose/physnet.hpp"
#include "elpose/heatmap.hpp"
#include "test_util.hpp"

namespace elpose {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

cli::CommandResult run(std::string_view command, const json& doc, const fs::path& base, std::uint64_t seed = 7) {
  return cli::run_command(cli::make_run_config(command, doc, base, {}, seed));
}

int run_argv(std::vector<std::string> args) {
  args.insert(args.begin(), "elpose");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::run_main(static_cast<int>(argv.size()), argv.data());
}

std::vector<std::string> csv_lines(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

// Small simulated dataset shared by the pipeline tests.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::scratch_dir("cli_pipeline");
    run("simulate", {{"output_dir", "data"}, {"count", 6}, {"frames", 10}, {"noise_sigma", 0.02}}, dir_);
    run("train",
        {{"stage", "lifter"}, {"data_dir", "data"}, {"output", "ckpt/lifter.elp"}, {"epochs", 1},
         {"embed_dim", 8}, {"heads", 2}, {"batch_size", 2}},
        dir_);
    run("train",
        {{"stage", "physnet-pretrain"}, {"data_dir", "data"}, {"lifter", "ckpt/lifter.elp"},
         {"output", "ckpt/physnet.elp"}, {"epochs", 1}, {"batch_size", 2}, {"head_hidden", 8},
         {"decoder_hidden", 8}},
        dir_);
  }

  static inline fs::path dir_;
};

TEST(CliConfig, RejectsUnknownKeysAndWrongTypes) {
  const fs::path base = "/tmp";
  EXPECT_THROW(cli::make_run_config("simulate", {{"output_dir", "x"}, {"bogus", 1}}, base), ConfigError);
  EXPECT_THROW(cli::make_run_config("simulate", {{"output_dir", "x"}, {"count", "three"}}, base), ConfigError);
  EXPECT_THROW(cli::make_run_config("simulate", json::object(), base), ConfigError);
  EXPECT_THROW(cli::make_run_config("dance", {{"output_dir", "x"}}, base), ConfigError);
}

TEST(CliConfig, ResolvesPathsAndAppliesOverrides) {
  const auto c = cli::make_run_config("simulate", {{"output_dir", "out"}, {"seed", 3}}, "/base",
                                      {"count=5", "noise_sigma=0.5"});
  EXPECT_EQ(c.values["output_dir"], "/base/out");
  EXPECT_EQ(c.values["count"], 5);
  EXPECT_EQ(c.values["noise_sigma"], 0.5);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(cli::make_run_config("simulate", {{"output_dir", "/abs"}}, "/base", {}, 9).seed, 9u);
}

TEST(CliFormat, CsvQuotingAndShortestDoubles) {
  EXPECT_EQ(cli::csv_field("plain"), "plain");
  EXPECT_EQ(cli::csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(cli::csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(cli::format_double(0.1), "0.1");
  EXPECT_EQ(std::stod(cli::format_double(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(CliExitCodes, MapErrorFamilies) {
  EXPECT_EQ(cli::exit_code_for(ConfigError("x")), cli::kExitConfig);
  EXPECT_EQ(cli::exit_code_for(IoError("x")), cli::kExitIo);
  EXPECT_EQ(cli::exit_code_for(SchemaError("x")), cli::kExitData);
  EXPECT_EQ(cli::exit_code_for(TooShort("x")), cli::kExitData);
  EXPECT_EQ(cli::exit_code_for(MissingCheckpoint("x")), cli::kExitMissingCheckpoint);
  EXPECT_EQ(cli::exit_code_for(BlowupError("x")), cli::kExitOther);
  EXPECT_EQ(cli::exit_code_for(std::runtime_error("x")), cli::kExitUnexpected);
}

TEST(CliMain, ExitCodesFromTheCommandLine) {
  const auto dir = testing::scratch_dir("cli_main");
  write_text_file(dir / "sim.json", R"({"output_dir": "out", "count": 1, "frames": 8})");
  write_text_file(dir / "bad.json", R"({"output_dir": "out", "colour": "red"})");
  write_text_file(dir / "refine.json", R"({"lifter": "none.elp", "physnet": "none.elp", "output_dir": "r",
                                            "inputs": ["out/seq_0000.2d.poseq.json"]})");
  EXPECT_EQ(run_argv({"simulate", "--config", (dir / "sim.json").string(), "--seed", "4"}), cli::kExitOk);
  EXPECT_TRUE(fs::exists(dir / "out" / "manifest.json"));
  EXPECT_EQ(run_argv({"simulate", "--config", (dir / "bad.json").string()}), cli::kExitConfig);
  EXPECT_EQ(run_argv({"simulate", "--config", (dir / "missing.json").string()}), cli::kExitConfig);
  EXPECT_EQ(run_argv({"refine", "--config", (dir / "refine.json").string()}), cli::kExitMissingCheckpoint);
  EXPECT_EQ(run_argv({}), cli::kExitConfig);
  EXPECT_EQ(run_argv({"simulate", "--config", (dir / "sim.json").string(), "--set", "frames=-3"}), cli::kExitConfig);
  write_text_file(dir / "broken.poseq.json", R"({"format":"h36m17-3d","fps":30,"frames":[[[0,0]]]})");
  write_text_file(dir / "metrics.json", R"({"predictions": ["broken.poseq.json"], "references": ["broken.poseq.json"],
                                             "output_csv": "m.csv", "output_json": "m.json"})");
  EXPECT_EQ(run_argv({"metrics", "--config", (dir / "metrics.json").string()}), cli::kExitData);
  write_text_file(dir / "metrics_io.json", R"({"predictions": ["absent.poseq.json"], "references": ["absent.poseq.json"],
                                                "output_csv": "m.csv", "output_json": "m.json"})");
  EXPECT_EQ(run_argv({"metrics", "--config", (dir / "metrics_io.json").string()}), cli::kExitIo);
}

TEST(CliSimulate, ZeroNoiseAndDeterminism) {
  const auto dir = testing::scratch_dir("cli_simulate");
  run("simulate", {{"output_dir", "a"}, {"count", 1}, {"frames", 8}, {"noise_sigma", 0.0}}, dir);
  EXPECT_EQ(read_text_file(dir / "a/seq_0000.clean.poseq.json"), read_text_file(dir / "a/seq_0000.noisy.poseq.json"));

  const json cfg{{"output_dir", "b"}, {"count", 3}, {"frames", 8}, {"noise_sigma", 0.05}};
  run("simulate", cfg, dir);
  const auto first = read_text_file(dir / "b/manifest.json");
  const auto noisy = read_text_file(dir / "b/seq_0002.noisy.poseq.json");
  run("simulate", cfg, dir);
  EXPECT_EQ(read_text_file(dir / "b/manifest.json"), first);
  EXPECT_EQ(read_text_file(dir / "b/seq_0002.noisy.poseq.json"), noisy);
  const auto manifest = json::parse(first);
  EXPECT_EQ(manifest["sequences"].size(), 3u);
  EXPECT_EQ(manifest["count"], 3);
  EXPECT_NO_THROW(load_pose_sequence_2d(dir / "b/seq_0001.2d.poseq.json"));
}

TEST_F(CliPipeline, LifterWithZeroEpochsSavesInit) {
  run("train",
      {{"stage", "lifter"}, {"data_dir", "data"}, {"output", "ckpt/zero.elp"}, {"epochs", 0},
       {"embed_dim", 8}, {"heads", 2}},
      dir_, 11);
  const auto state = load_lifter(dir_ / "ckpt/zero.elp");
  LifterConfig config;
  config.embed_dim = 8;
  config.heads = 2;
  const auto init = LifterParams::init(config, 11);
  const auto a = state.params.tensors();
  const auto b = init.tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
  EXPECT_EQ(state.step, 0);
  EXPECT_EQ(csv_lines(dir_ / "ckpt/zero.elp.curve.csv"), std::vector<std::string>{"step,loss"});
}

TEST_F(CliPipeline, ResumeContinuesStepNumbering) {
  const auto first = csv_lines(dir_ / "ckpt/physnet.elp.curve.csv");
  ASSERT_GT(first.size(), 1u);
  const long last_step = std::stol(first.back().substr(0, first.back().find(',')));
  run("train",
      {{"stage", "physnet-finetune"}, {"data_dir", "data"}, {"lifter", "ckpt/lifter.elp"},
       {"resume", "ckpt/physnet.elp"}, {"output", "ckpt/physnet_ft.elp"}, {"epochs", 1}, {"batch_size", 2}},
      dir_);
  const auto resumed = csv_lines(dir_ / "ckpt/physnet_ft.elp.curve.csv");
  ASSERT_GT(resumed.size(), 1u);
  EXPECT_EQ(std::stol(resumed[1].substr(0, resumed[1].find(','))), last_step + 1);
  long step = 0;
  load_physnet(dir_ / "ckpt/physnet_ft.elp", &step);
  EXPECT_EQ(step, last_step + static_cast<long>(resumed.size()) - 1);
}

TEST_F(CliPipeline, TrainingIsByteIdenticalOnRerun) {
  const json cfg{{"stage", "lifter"}, {"data_dir", "data"}, {"output", "ckpt/rerun.elp"}, {"epochs", 1},
                 {"embed_dim", 8}, {"heads", 2}, {"batch_size", 2}};
  run("train", cfg, dir_);
  const auto a = read_text_file(dir_ / "ckpt/rerun.elp");
  const auto side = read_text_file(dir_ / "ckpt/rerun.elp.json");
  run("train", cfg, dir_);
  EXPECT_EQ(read_text_file(dir_ / "ckpt/rerun.elp"), a);
  EXPECT_EQ(read_text_file(dir_ / "ckpt/rerun.elp.json"), side);
}

TEST_F(CliPipeline, RefineWritesConsistentOutputs) {
  const json cfg{{"lifter", "ckpt/lifter.elp"}, {"physnet", "ckpt/physnet.elp"}, {"output_dir", "refined"},
                 {"data_dir", "data"}, {"limit", 2}};
  const auto result = run("refine", cfg, dir_);
  EXPECT_EQ(result.written.size(), 8u);
  const auto dd = load_pose_sequence_3d(dir_ / "refined/seq_0000.dd.poseq.json");
  const auto pp = load_pose_sequence_3d(dir_ / "refined/seq_0000.pp.poseq.json");
  const auto fused = load_pose_sequence_3d(dir_ / "refined/seq_0000.fused.poseq.json");
  for (std::size_t i = 0; i < fused.values().size(); ++i) {
    EXPECT_NEAR(fused.values()[i], 0.5 * (dd.values()[i] + pp.values()[i]), 1e-15);
  }
  EXPECT_NO_THROW(load_pose_sequence_2d(dir_ / "refined/seq_0001.reproj.poseq.json"));

  const auto before = read_text_file(dir_ / "refined/seq_0001.pp.poseq.json");
  run("refine", cfg, dir_);
  EXPECT_EQ(read_text_file(dir_ / "refined/seq_0001.pp.poseq.json"), before);
}

TEST_F(CliPipeline, MetricsReportRowsAndMeans) {
  const json same{{"predictions", {"data/seq_0000.clean.poseq.json", "data/seq_0001.clean.poseq.json"}},
                  {"references", {"data/seq_0000.clean.poseq.json", "data/seq_0001.clean.poseq.json"}},
                  {"output_csv", "report/same.csv"},
                  {"output_json", "report/same.json"}};
  run("metrics", same, dir_);
  const auto rows = csv_lines(dir_ / "report/same.csv");
  ASSERT_EQ(rows.size(), 1u + 2 * 3);
  EXPECT_EQ(rows[0], "metric,pair,value");
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(rows[i].substr(rows[i].rfind(',') + 1), "0");

  const json noisy{{"predictions", {"data/seq_0000.noisy.poseq.json", "data/seq_0001.noisy.poseq.json",
                                    "data/seq_0002.noisy.poseq.json"}},
                   {"references", {"data/seq_0000.clean.poseq.json", "data/seq_0001.clean.poseq.json",
                                   "data/seq_0002.clean.poseq.json"}},
                   {"output_csv", "report/noisy.csv"},
                   {"output_json", "report/noisy.json"},
                   {"metrics", {"mpjpe", "mpjve"}}};
  run("metrics", noisy, dir_);
  const auto lines = csv_lines(dir_ / "report/noisy.csv");
  ASSERT_EQ(lines.size(), 1u + 3 * 2);
  const auto summary = json::parse(read_text_file(dir_ / "report/noisy.json"));
  for (const std::string name : {"mpjpe", "mpjve"}) {
    double total = 0.0;
    int n = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].rfind(name + ",", 0) == 0) {
        total += std::stod(lines[i].substr(lines[i].rfind(',') + 1));
        ++n;
      }
    }
    ASSERT_EQ(n, 3);
    EXPECT_NEAR(summary["metrics"][name]["mean"].get<double>(), total / 3, 1e-12);
  }
  const auto direct = mpjpe(load_pose_sequence_3d(dir_ / "data/seq_0001.noisy.poseq.json"),
                            load_pose_sequence_3d(dir_ / "data/seq_0001.clean.poseq.json"));
  EXPECT_NE(std::find(lines.begin(), lines.end(),
                      "mpjpe,seq_0001.noisy.poseq.json," + cli::format_double(direct)),
            lines.end());

  json missing = same;
  missing["predictions"] = {"data/nope.poseq.json", "data/seq_0001.clean.poseq.json"};
  EXPECT_THROW(run("metrics", missing, dir_), IoError);
}

TEST(CliHeatmap, WritesRoundTrippableFilesAndStats) {
  const auto dir = testing::scratch_dir("cli_heatmap");
  std::vector<double> v(3 * kNumJoints * 2, 0.5);
  save_pose_sequence(dir / "still.2d.poseq.json", PoseSequence2D(v, 30.0));
  const auto result =
      run("heatmap", {{"inputs", {"still.2d.poseq.json"}}, {"output_dir", "maps"}, {"width", 32}, {"height", 32}}, dir);
  ASSERT_EQ(result.written.size(), 4u);
  const auto pyramid = read_pyramid(dir / "maps/still.f0001.elh");
  EXPECT_EQ(pyramid.levels.size(), 4u);
  EXPECT_EQ(serialize_pyramid(pyramid), read_text_file(dir / "maps/still.f0001.elh"));

  const auto stats = csv_lines(dir / "maps/heatmap_stats.csv");
  EXPECT_EQ(stats[0], "file,frame,channel,max,mean");
  const int channels = 17 + 16;
  ASSERT_EQ(stats.size(), 1u + 3 * channels);
  // Every frame is the same pose, so each channel's stats repeat per frame.
  for (int c = 0; c < channels; ++c) {
    const auto tail = [](const std::string& s) { return s.substr(s.find(',', s.find(',') + 1)); };
    EXPECT_EQ(tail(stats[1 + c]), tail(stats[1 + channels + c]));
  }

  write_text_file(dir / "bad.2d.poseq.json", R"({"format":"h36m17-2d","fps":30,"frames":[[[0.1,0.2]]]})");
  EXPECT_THROW(run("heatmap", {{"inputs", {"bad.2d.poseq.json"}}, {"output_dir", "maps2"}}, dir), SchemaError);
}

}  // namespace
}  // namespace elpose
