// Command-line entry point: synth, train, eval, predict, visualize.
//
// Exit codes: 0 success, 2 usage, 3 config, 4 data, 5 bad argument/shape,
// 6 metric, 7 training, 1 anything else. Errors print a single line
// `error[category]: message` to stderr.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "vtfusion/checkpoint.hpp"
#include "vtfusion/config.hpp"
#include "vtfusion/evalharness.hpp"
#include "vtfusion/imageio.hpp"
#include "vtfusion/rng.hpp"
#include "vtfusion/synth.hpp"
#include "vtfusion/trainer.hpp"

namespace fs = std::filesystem;
using namespace vtf;

namespace {

constexpr std::uint32_t kSynthCliStream = 0x636c6973;  // "clis"

std::vector<std::string> list_pngs_sorted(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw DataError("no input directory at " + dir.string());
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      out.push_back(entry.path().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no .png images under " + dir.string());
  return out;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string in_dir, out_dir;
  std::string type = "mix";
  std::uint64_t seed = 0;
  int count = 1;
};

void run_synth(const SynthArgs& a) {
  if (a.count < 1) throw ArgumentError("synth: --count must be at least 1");
  const bool mix = a.type == "mix";
  SynthConfig cfg;
  if (!mix) cfg.anomaly_type = anomaly_type_from_string(a.type);
  cfg.validate();

  const auto images = list_pngs_sorted(a.in_dir);
  fs::create_directories(a.out_dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image img = read_image_png(images[i]);
    const std::string stem = fs::path(images[i]).stem().string();
    for (int k = 0; k < a.count; ++k) {
      const std::uint64_t draw =
          i * static_cast<std::uint64_t>(a.count) + static_cast<std::uint64_t>(k);
      Rng rng(derive_seed(a.seed, kSynthCliStream, draw));
      const SynthResult res = mix ? synthesize_random_type(img, cfg, rng)
                                  : synthesize(img, cfg, rng);
      const std::string base = stem + "_aug" + std::to_string(k);
      write_image_png(fs::path(a.out_dir) / (base + ".png"), res.image);
      write_mask_png(fs::path(a.out_dir) / (base + "_mask.png"), res.mask);
    }
  }
  std::cout << images.size() * static_cast<std::size_t>(a.count)
            << " synthesized pairs written to " << a.out_dir << "\n";
}

// ---------------------------------------------------------------------------
// shared config plumbing

struct CommonArgs {
  std::string config_path;
  std::string data, category, out;
  int k = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = -1;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool with_workers) {
  cmd->add_option("--config", a.config_path, "JSON config file");
  cmd->add_option("--data", a.data, "dataset root directory");
  cmd->add_option("--category", a.category, "dataset category name");
  cmd->add_option("--k", a.k, "number of normal shots");
  cmd->add_option("--seed", a.seed, "root random seed")
      ->each([&a](const std::string&) { a.seed_set = true; });
  if (with_workers)
    cmd->add_option("--workers", a.workers,
                    "worker threads for per-image evaluation");
}

RunConfig resolve_config(const CommonArgs& a) {
  RunConfig cfg;
  if (!a.config_path.empty()) cfg = load_run_config(a.config_path);
  if (!a.data.empty()) cfg.data_root = a.data;
  if (!a.category.empty()) cfg.train.category = a.category;
  if (a.k >= 0) cfg.train.k_shots = a.k;
  if (a.seed_set) cfg.train.seed = a.seed;
  if (a.workers >= 0) cfg.workers = a.workers;
  if (!a.out.empty()) cfg.out_dir = a.out;
  return cfg;
}

EpisodeSplit resolve_episode(const RunConfig& cfg) {
  if (cfg.data_root.empty())
    throw ConfigError("no dataset root given (--data or config data_root)");
  if (cfg.train.category.empty())
    throw ConfigError("no category given (--category or config)");
  const DatasetIndex index = load_dataset(cfg.data_root, cfg.train.category);
  return sample_episode(index, cfg.train.k_shots, cfg.train.seed);
}

// ---------------------------------------------------------------------------
// train

void run_train(const CommonArgs& a) {
  RunConfig cfg = resolve_config(a);
  if (a.out.empty()) throw ConfigError("train: --out CKPT is required");
  cfg.out_dir = fs::path(a.out).parent_path().string();
  cfg.validate();

  const EpisodeSplit split = resolve_episode(cfg);
  std::vector<Image> shots;
  for (const auto& path : split.shots) shots.push_back(read_image_png(path));

  const TrainResult result =
      train(shots, cfg.train, cfg.backbone, cfg.fusion, cfg.vlm_weights);
  save_checkpoint(a.out, result.checkpoint);

  const fs::path out_dir =
      cfg.out_dir.empty() ? fs::path(".") : fs::path(cfg.out_dir);
  fs::create_directories(out_dir);
  {
    std::ofstream log(out_dir / "train_log.jsonl", std::ios::binary);
    if (!log) throw DataError("cannot write training log under " +
                              out_dir.string());
    for (const auto& e : result.log) {
      nlohmann::ordered_json j;
      j["step"] = e.step;
      j["nfc"] = e.nfc;
      j["afs"] = e.afs;
      j["seg"] = e.seg;
      j["total"] = e.total;
      log << j.dump() << "\n";
    }
  }
  write_resolved_config(cfg, (out_dir / "resolved_config.json").string());

  std::cout << "checkpoint written to " << a.out << " (digest "
            << fingerprint_hex(result.checkpoint.digest()) << ")\n";
  if (!result.log.empty())
    std::cout << "final loss " << result.log.back().total << " after "
              << result.log.size() << " steps\n";
}

// ---------------------------------------------------------------------------
// eval

void run_eval(const CommonArgs& a, const std::string& ckpt_path,
              const std::string& weights) {
  if (a.out.empty()) throw ConfigError("eval: --out DIR is required");
  const ModelCheckpoint ckpt = load_checkpoint(ckpt_path);

  RunConfig cfg;
  if (!a.config_path.empty()) cfg = load_run_config(a.config_path);
  // The checkpoint's own settings are the defaults the file/flags override.
  cfg.train = ckpt.train_cfg;
  cfg.backbone = ckpt.spec;
  cfg.fusion = ckpt.fusion_cfg;
  if (!a.data.empty()) cfg.data_root = a.data;
  if (!a.category.empty()) cfg.train.category = a.category;
  if (a.k >= 0) cfg.train.k_shots = a.k;
  if (a.seed_set) cfg.train.seed = a.seed;
  if (a.workers >= 0) cfg.workers = a.workers;
  cfg.out_dir = a.out;
  if (!weights.empty()) cfg.vlm_weights = weights;
  cfg.validate();

  const EpisodeSplit split = resolve_episode(cfg);
  const Model model = Model::from_checkpoint(ckpt, cfg.vlm_weights);
  const MetricReport report = evaluate_episode(
      model, split, fingerprint_hex(ckpt.digest()), cfg.workers);
  write_report(report, cfg.out_dir);
  write_resolved_config(
      cfg, (fs::path(cfg.out_dir) / "resolved_config.json").string());
  std::cout << report.table();
}

// ---------------------------------------------------------------------------
// predict / visualize

void run_predict(const std::string& ckpt_path, const std::string& image_path,
                 const std::string& out_dir, const std::string& weights) {
  const ModelCheckpoint ckpt = load_checkpoint(ckpt_path);
  const Model model = Model::from_checkpoint(ckpt, weights);
  const Image img = read_image_png(image_path);
  const Prediction pred = model.predict(img);
  fs::create_directories(out_dir);
  const std::string stem = fs::path(image_path).stem().string();
  write_map_raw(fs::path(out_dir) / (stem + "_map.raw"), pred.map);
  write_map_png(fs::path(out_dir) / (stem + "_map.png"), pred.map);
  std::printf("%.17g\n", pred.score);
}

void run_visualize(const std::string& ckpt_path, const std::string& image_path,
                   const std::string& out_path, const std::string& weights) {
  const ModelCheckpoint ckpt = load_checkpoint(ckpt_path);
  const Model model = Model::from_checkpoint(ckpt, weights);
  const Image img = read_image_png(image_path);
  const Prediction pred = model.predict(img);
  if (!fs::path(out_path).parent_path().empty())
    fs::create_directories(fs::path(out_path).parent_path());
  render_overlay(img, pred.map, out_path);
  std::cout << "overlay written to " << out_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot anomaly detection: synthesize, train, evaluate"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd =
      app.add_subcommand("synth", "Generate pseudo-anomalies with masks");
  synth_cmd->add_option("--in", synth_args.in_dir, "directory of normal images")
      ->required();
  synth_cmd->add_option("--out", synth_args.out_dir, "output directory")
      ->required();
  synth_cmd
      ->add_option("--type", synth_args.type,
                   "misplaced|blurry|crack|noise|combined|mix")
      ->default_val("mix");
  synth_cmd->add_option("--seed", synth_args.seed, "root random seed");
  synth_cmd->add_option("--count", synth_args.count,
                        "augmentations per input image");

  CommonArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train on k normal shots");
  add_common(train_cmd, train_args, false);
  train_cmd->add_option("--out", train_args.out, "checkpoint file to write")
      ->required();

  CommonArgs eval_args;
  std::string eval_ckpt, eval_weights;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  add_common(eval_cmd, eval_args, true);
  eval_cmd->add_option("--out", eval_args.out, "report output directory")
      ->required();
  eval_cmd->add_option("--weights", eval_weights,
                       "pretrained weight bundle (overrides the env var)");

  std::string pr_ckpt, pr_image, pr_out, pr_weights;
  auto* predict_cmd =
      app.add_subcommand("predict", "Score one image with a checkpoint");
  predict_cmd->add_option("--ckpt", pr_ckpt, "checkpoint file")->required();
  predict_cmd->add_option("--image", pr_image, "query image")->required();
  predict_cmd->add_option("--out", pr_out, "output directory")->required();
  predict_cmd->add_option("--weights", pr_weights,
                          "pretrained weight bundle (overrides the env var)");

  std::string vz_ckpt, vz_image, vz_out, vz_weights;
  auto* vz_cmd =
      app.add_subcommand("visualize", "Render a prediction heat overlay");
  vz_cmd->add_option("--ckpt", vz_ckpt, "checkpoint file")->required();
  vz_cmd->add_option("--image", vz_image, "query image")->required();
  vz_cmd->add_option("--out", vz_out, "overlay PNG path")->required();
  vz_cmd->add_option("--weights", vz_weights,
                     "pretrained weight bundle (overrides the env var)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth_cmd->parsed()) run_synth(synth_args);
    else if (train_cmd->parsed()) run_train(train_args);
    else if (eval_cmd->parsed()) run_eval(eval_args, eval_ckpt, eval_weights);
    else if (predict_cmd->parsed())
      run_predict(pr_ckpt, pr_image, pr_out, pr_weights);
    else if (vz_cmd->parsed())
      run_visualize(vz_ckpt, vz_image, vz_out, vz_weights);
  } catch (const ConfigError& e) {
    std::cerr << "error[config]: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {  // includes load failures
    std::cerr << "error[data]: " << e.what() << "\n";
    return 4;
  } catch (const ArgumentError& e) {  // includes shape/sizing
    std::cerr << "error[argument]: " << e.what() << "\n";
    return 5;
  } catch (const MetricError& e) {
    std::cerr << "error[metric]: " << e.what() << "\n";
    return 6;
  } catch (const TrainingError& e) {
    std::cerr << "error[training]: " << e.what() << "\n";
    return 7;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
