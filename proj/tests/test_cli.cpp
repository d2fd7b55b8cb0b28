#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "oracle_helpers.hpp"
#include "vtfusion/evalharness.hpp"
#include "vtfusion/imageio.hpp"

using namespace vtf;
using testutil::run_cli;

TEST_SUITE_BEGIN("cli");

namespace {

const char* kCli = VTF_CLI_PATH;

// One shared world for the end-to-end cases: a generated dataset, a small
// config, and a checkpoint trained through the binary.
struct CliWorld {
  std::string dir;
  std::string data;
  std::string config;
  std::string ckpt;
  int train_exit = -1;
};

const CliWorld& world() {
  static const CliWorld w = [] {
    CliWorld world;
    world.dir = testutil::temp_dir("cli_world");
    world.data = world.dir + "/data";
    make_toy_fixture(world.data, "block", 21, 4, 3, 3, 32);
    world.config = world.dir + "/config.json";
    testutil::write_file(world.config, R"({
  "backbone": {"levels": [0, 1], "grid": [4, 4], "level_dim": 6,
               "joint_dim": 5, "input": [32, 32]},
  "fusion": {"attn_embed_dim": 6, "residual_channels": 4,
             "seg_channels": 5, "seg_scales": [1, 2]},
  "train": {"iterations": 10, "k_shots": 2, "seed": 5,
            "category": "block", "object_label": "block"}
})");
    world.ckpt = world.dir + "/model.ckpt";
    const auto res = run_cli(
        kCli,
        "train --config " + world.config + " --data " + world.data +
            " --out " + world.ckpt,
        world.dir, "train");
    world.train_exit = res.exit_code;
    return world;
  }();
  return w;
}

}  // namespace

TEST_CASE("help exits cleanly") {
  const auto dir = testutil::temp_dir("cli_help");
  const auto res = run_cli(kCli, "--help", dir, "help");
  CHECK(res.exit_code == 0);
  CHECK(res.out.find("synth") != std::string::npos);
  CHECK(res.out.find("train") != std::string::npos);
}

TEST_CASE("unknown flags are usage errors") {
  const auto dir = testutil::temp_dir("cli_usage");
  CHECK(run_cli(kCli, "train --frobnicate", dir, "u1").exit_code == 2);
  CHECK(run_cli(kCli, "no_such_command", dir, "u2").exit_code == 2);
  const auto res = run_cli(kCli, "eval", dir, "u3");  // missing required flags
  CHECK(res.exit_code == 2);
  CHECK(res.err.find("error[usage]") != std::string::npos);
}

TEST_CASE("invariant violations surface as config errors") {
  const auto& w = world();
  const auto res = run_cli(
      kCli,
      "train --config " + w.config + " --data " + w.data +
          " --k 9 --out " + w.dir + "/bad.ckpt",
      w.dir, "k9");
  CHECK(res.exit_code == 3);
  CHECK(res.err.find("error[config]") != std::string::npos);
  CHECK(res.err.find("8") != std::string::npos);  // cites the bound
}

TEST_CASE("missing data is a data error") {
  const auto& w = world();
  const auto res = run_cli(
      kCli,
      "train --config " + w.config + " --data /nonexistent --out " + w.dir +
          "/bad.ckpt",
      w.dir, "nodata");
  CHECK(res.exit_code == 4);
  CHECK(res.err.find("error[data]") != std::string::npos);
}

TEST_CASE("synthesis subcommand writes image and mask pairs deterministically") {
  namespace fs = std::filesystem;
  const auto& w = world();
  const auto out1 = w.dir + "/synth1";
  const auto out2 = w.dir + "/synth2";
  const std::string base_args =
      "synth --in " + w.data + "/block/train/good --type crack --seed 3 "
      "--count 2 --out ";
  CHECK(run_cli(kCli, base_args + out1, w.dir, "s1").exit_code == 0);
  CHECK(run_cli(kCli, base_args + out2, w.dir, "s2").exit_code == 0);

  int pairs = 0;
  for (const auto& entry : fs::directory_iterator(out1)) {
    const auto name = entry.path().filename().string();
    if (name.find("_mask.png") != std::string::npos) continue;
    REQUIRE(fs::is_regular_file(out1 + "/" + name));
    const auto mask_name =
        name.substr(0, name.size() - 4) + "_mask.png";
    CHECK(fs::is_regular_file(out1 + "/" + mask_name));
    CHECK(testutil::read_file(out1 + "/" + name) ==
          testutil::read_file(out2 + "/" + name));
    ++pairs;
  }
  CHECK(pairs == 8);  // 4 inputs x 2 augmentations
}

TEST_CASE("training through the binary produces its artifacts") {
  namespace fs = std::filesystem;
  const auto& w = world();
  REQUIRE(w.train_exit == 0);
  CHECK(fs::is_regular_file(w.ckpt));
  CHECK(fs::is_regular_file(w.dir + "/resolved_config.json"));
  const auto log = testutil::read_file(w.dir + "/train_log.jsonl");
  CHECK(std::count(log.begin(), log.end(), '\n') == 10);
  CHECK(log.find("\"total\"") != std::string::npos);
  // The resolved config records the effective seed for replay.
  const auto resolved = testutil::read_file(w.dir + "/resolved_config.json");
  CHECK(resolved.find("\"seed\": 5") != std::string::npos);
}

TEST_CASE("command-line flags override the config file") {
  const auto& w = world();
  const auto out = w.dir + "/override.ckpt";
  const auto res = run_cli(
      kCli,
      "train --config " + w.config + " --data " + w.data +
          " --seed 77 --out " + out,
      w.dir, "override");
  REQUIRE(res.exit_code == 0);
  const auto resolved = testutil::read_file(w.dir + "/resolved_config.json");
  CHECK(resolved.find("\"seed\": 77") != std::string::npos);
}

TEST_CASE("prediction prints one score and writes the map") {
  namespace fs = std::filesystem;
  const auto& w = world();
  REQUIRE(w.train_exit == 0);
  const auto out = w.dir + "/pred";
  const auto res = run_cli(
      kCli,
      "predict --ckpt " + w.ckpt + " --image " + w.data +
          "/block/test/paste/000.png --out " + out,
      w.dir, "predict");
  REQUIRE(res.exit_code == 0);
  // stdout is exactly one parseable float line.
  std::size_t pos = 0;
  const double score = std::stod(res.out, &pos);
  CHECK(std::isfinite(score));
  CHECK(res.out.substr(pos) == "\n");
  CHECK(fs::is_regular_file(out + "/000_map.raw"));
  CHECK(fs::is_regular_file(out + "/000_map.png"));
  // The stored raw map agrees with the printed score.
  const PredictionMap map = read_map_raw(out + "/000_map.raw");
  CHECK(map.maxCoeff() == doctest::Approx(score).epsilon(1e-12));
}

TEST_CASE("evaluation emits reports and respects --workers determinism") {
  namespace fs = std::filesystem;
  const auto& w = world();
  REQUIRE(w.train_exit == 0);
  const auto out1 = w.dir + "/eval1";
  const auto out2 = w.dir + "/eval2";
  const std::string base =
      "eval --ckpt " + w.ckpt + " --data " + w.data + " --seed 5 ";
  REQUIRE(run_cli(kCli, base + "--workers 1 --out " + out1, w.dir, "e1")
              .exit_code == 0);
  REQUIRE(run_cli(kCli, base + "--workers 3 --out " + out2, w.dir, "e2")
              .exit_code == 0);
  CHECK(fs::is_regular_file(out1 + "/report.json"));
  CHECK(fs::is_regular_file(out1 + "/report.txt"));
  CHECK(fs::is_regular_file(out1 + "/resolved_config.json"));
  CHECK(testutil::read_file(out1 + "/report.json") ==
        testutil::read_file(out2 + "/report.json"));
  const auto report = testutil::read_file(out1 + "/report.json");
  CHECK(report.find("\"image_auroc\"") != std::string::npos);
  CHECK(report.find("\"checkpoint_digest\"") != std::string::npos);
}

TEST_CASE("visualization writes the overlay") {
  namespace fs = std::filesystem;
  const auto& w = world();
  REQUIRE(w.train_exit == 0);
  const auto out = w.dir + "/viz/overlay.png";
  const auto res = run_cli(
      kCli,
      "visualize --ckpt " + w.ckpt + " --image " + w.data +
          "/block/test/paste/001.png --out " + out,
      w.dir, "viz");
  REQUIRE(res.exit_code == 0);
  CHECK(fs::is_regular_file(out));
}

TEST_CASE("loading garbage as a checkpoint is a data error") {
  const auto& w = world();
  const auto garbage = w.dir + "/garbage.ckpt";
  testutil::write_file(garbage, "not a checkpoint at all");
  const auto res = run_cli(
      kCli,
      "predict --ckpt " + garbage + " --image " + w.data +
          "/block/test/good/000.png --out " + w.dir + "/g",
      w.dir, "garbage");
  CHECK(res.exit_code == 4);
  CHECK(res.err.find("error[data]") != std::string::npos);
}

TEST_SUITE_END();
