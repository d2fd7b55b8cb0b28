#include "vtfusion/config.hpp"

#include <fstream>
#include <set>

namespace vtf {

using nlohmann::json;

void RunConfig::validate() const {
  train.validate();
  backbone.validate();
  fusion.validate();
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

namespace cfgio {

namespace {

void check_keys(const json& j, const std::string& scope,
                const std::set<std::string>& known) {
  if (!j.is_object())
    throw ConfigError("config: '" + (scope.empty() ? "root" : scope) +
                      "' must be a JSON object");
  for (const auto& item : j.items())
    if (!known.contains(item.key()))
      throw ConfigError("config: unknown key '" +
                        (scope.empty() ? "" : scope + ".") + item.key() + "'");
}

template <class T>
void get_if(const json& j, const char* key, T& out, const std::string& scope) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" +
                      (scope.empty() ? "" : scope + ".") + key + "'");
  }
}

void get_pair(const json& j, const char* key, std::pair<double, double>& out,
              const std::string& scope) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2)
    throw ConfigError("config: '" + scope + "." + key +
                      "' must be a [lo, hi] pair");
  out = {v[0].get<double>(), v[1].get<double>()};
}

void get_pair(const json& j, const char* key, std::pair<int, int>& out,
              const std::string& scope) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2)
    throw ConfigError("config: '" + scope + "." + key +
                      "' must be a [lo, hi] pair");
  out = {v[0].get<int>(), v[1].get<int>()};
}

}  // namespace

json to_json(const LossConfig& c) {
  return {{"r", c.r}, {"alpha", c.alpha}, {"lambda", c.lambda}};
}

void from_json(const json& j, LossConfig& c, const std::string& scope) {
  check_keys(j, scope, {"r", "alpha", "lambda"});
  get_if(j, "r", c.r, scope);
  get_if(j, "alpha", c.alpha, scope);
  get_if(j, "lambda", c.lambda, scope);
}

json to_json(const SynthConfig& c) {
  return {{"anomaly_type", to_string(c.anomaly_type)},
          {"region_count", c.region_count},
          {"region_area_fraction",
           {c.region_area_fraction.first, c.region_area_fraction.second}},
          {"blur_sigma_range",
           {c.blur_sigma_range.first, c.blur_sigma_range.second}},
          {"noise_kind",
           c.noise_kind ? std::string(*c.noise_kind == NoiseKind::uniform
                                          ? "uniform"
                                          : *c.noise_kind == NoiseKind::gaussian
                                                ? "gaussian"
                                                : "positive")
                        : std::string("sampled")},
          {"noise_amplitude",
           {c.noise_amplitude.first, c.noise_amplitude.second}},
          {"crack_segments", c.crack_segments},
          {"crack_thickness_px",
           {c.crack_thickness_px.first, c.crack_thickness_px.second}},
          {"seed", c.seed}};
}

void from_json(const json& j, SynthConfig& c, const std::string& scope) {
  check_keys(j, scope,
             {"anomaly_type", "region_count", "region_area_fraction",
              "blur_sigma_range", "noise_kind", "noise_amplitude",
              "crack_segments", "crack_thickness_px", "seed"});
  if (j.contains("anomaly_type"))
    c.anomaly_type = anomaly_type_from_string(j.at("anomaly_type"));
  get_if(j, "region_count", c.region_count, scope);
  get_pair(j, "region_area_fraction", c.region_area_fraction, scope);
  get_pair(j, "blur_sigma_range", c.blur_sigma_range, scope);
  if (j.contains("noise_kind")) {
    const std::string k = j.at("noise_kind");
    if (k == "sampled")
      c.noise_kind.reset();
    else if (k == "uniform")
      c.noise_kind = NoiseKind::uniform;
    else if (k == "gaussian")
      c.noise_kind = NoiseKind::gaussian;
    else if (k == "positive")
      c.noise_kind = NoiseKind::positive;
    else
      throw ConfigError("config: bad value for '" + scope + ".noise_kind'");
  }
  get_pair(j, "noise_amplitude", c.noise_amplitude, scope);
  get_if(j, "crack_segments", c.crack_segments, scope);
  get_pair(j, "crack_thickness_px", c.crack_thickness_px, scope);
  get_if(j, "seed", c.seed, scope);
}

json to_json(const BackboneSpec& c) {
  return {{"backend", to_string(c.backend)},
          {"levels", c.levels},
          {"grid", {c.grid_h, c.grid_w}},
          {"level_dim", c.level_dim},
          {"joint_dim", c.joint_dim},
          {"input", {c.input_h, c.input_w}}};
}

void from_json(const json& j, BackboneSpec& c, const std::string& scope) {
  check_keys(j, scope,
             {"backend", "levels", "grid", "level_dim", "joint_dim", "input"});
  if (j.contains("backend"))
    c.backend = backend_from_string(j.at("backend"));
  get_if(j, "levels", c.levels, scope);
  if (j.contains("grid")) {
    std::pair<int, int> g = {static_cast<int>(c.grid_h),
                             static_cast<int>(c.grid_w)};
    get_pair(j, "grid", g, scope);
    c.grid_h = g.first;
    c.grid_w = g.second;
  }
  get_if(j, "level_dim", c.level_dim, scope);
  get_if(j, "joint_dim", c.joint_dim, scope);
  if (j.contains("input")) {
    std::pair<int, int> g = {static_cast<int>(c.input_h),
                             static_cast<int>(c.input_w)};
    get_pair(j, "input", g, scope);
    c.input_h = g.first;
    c.input_w = g.second;
  }
}

json to_json(const FusionConfig& c) {
  return {{"attn_embed_dim", c.attn_embed_dim},
          {"residual_channels", c.residual_channels},
          {"seg_channels", c.seg_channels},
          {"seg_scales", c.seg_scales}};
}

void from_json(const json& j, FusionConfig& c, const std::string& scope) {
  check_keys(j, scope,
             {"attn_embed_dim", "residual_channels", "seg_channels",
              "seg_scales"});
  get_if(j, "attn_embed_dim", c.attn_embed_dim, scope);
  get_if(j, "residual_channels", c.residual_channels, scope);
  get_if(j, "seg_channels", c.seg_channels, scope);
  get_if(j, "seg_scales", c.seg_scales, scope);
}

json to_json(const TrainConfig& c) {
  return {{"k_shots", c.k_shots},
          {"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"lr_aie", c.lr_aie},
          {"lr_ate_mpf", c.lr_ate_mpf},
          {"logit_scale", c.logit_scale},
          {"seed", c.seed},
          {"category", c.category},
          {"object_label", c.object_label},
          {"loss", to_json(c.loss)},
          {"synth", to_json(c.synth)}};
}

void from_json(const json& j, TrainConfig& c, const std::string& scope) {
  check_keys(j, scope,
             {"k_shots", "iterations", "batch_size", "lr_aie", "lr_ate_mpf",
              "logit_scale", "seed", "category", "object_label", "loss",
              "synth"});
  get_if(j, "k_shots", c.k_shots, scope);
  get_if(j, "iterations", c.iterations, scope);
  get_if(j, "batch_size", c.batch_size, scope);
  get_if(j, "lr_aie", c.lr_aie, scope);
  get_if(j, "lr_ate_mpf", c.lr_ate_mpf, scope);
  get_if(j, "logit_scale", c.logit_scale, scope);
  get_if(j, "seed", c.seed, scope);
  get_if(j, "category", c.category, scope);
  get_if(j, "object_label", c.object_label, scope);
  if (j.contains("loss")) from_json(j.at("loss"), c.loss, scope + ".loss");
  if (j.contains("synth")) from_json(j.at("synth"), c.synth, scope + ".synth");
}

json to_json(const RunConfig& c) {
  return {{"data_root", c.data_root},
          {"out_dir", c.out_dir},
          {"workers", c.workers},
          {"vlm_weights", c.vlm_weights},
          {"train", to_json(c.train)},
          {"backbone", to_json(c.backbone)},
          {"fusion", to_json(c.fusion)}};
}

void from_json(const json& j, RunConfig& c) {
  check_keys(j, "",
             {"data_root", "out_dir", "workers", "vlm_weights", "train",
              "backbone", "fusion"});
  get_if(j, "data_root", c.data_root, "");
  get_if(j, "out_dir", c.out_dir, "");
  get_if(j, "workers", c.workers, "");
  get_if(j, "vlm_weights", c.vlm_weights, "");
  if (j.contains("train")) from_json(j.at("train"), c.train, "train");
  if (j.contains("backbone"))
    from_json(j.at("backbone"), c.backbone, "backbone");
  if (j.contains("fusion")) from_json(j.at("fusion"), c.fusion, "fusion");
}

}  // namespace cfgio

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: invalid JSON in '" + path + "': " + e.what());
  }
  RunConfig cfg;
  cfgio::from_json(j, cfg);
  return cfg;
}

void write_resolved_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("config: cannot write '" + path + "'");
  os << cfgio::to_json(cfg).dump(2) << "\n";
}

}  // namespace vtf
