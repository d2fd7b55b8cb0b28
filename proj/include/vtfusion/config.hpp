// Run configuration: the merged view of everything a CLI invocation needs,
// its JSON file format, and strict (unknown keys rejected) deserialization.
// Precedence is CLI flag > config file > built-in default; every command
// writes the fully resolved config next to its outputs.
#pragma once

#include <string>

#include "json.hpp"
#include "vtfusion/backbone.hpp"
#include "vtfusion/fusion.hpp"
#include "vtfusion/trainer.hpp"

namespace vtf {

struct RunConfig {
  std::string data_root;
  std::string out_dir;
  int workers = 1;
  std::string vlm_weights;  // only consulted by the pretrained_vlm backend
  TrainConfig train;        // owns loss/synth settings, seed, category, label
  BackboneSpec backbone;
  FusionConfig fusion;

  void validate() const;
};

namespace cfgio {

// Each *_from_json merges the present keys over the passed-in value and
// throws ConfigError on unknown keys; `scope` prefixes key names in errors.
nlohmann::json to_json(const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c,
               const std::string& scope);

nlohmann::json to_json(const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c,
               const std::string& scope);

nlohmann::json to_json(const BackboneSpec& c);
void from_json(const nlohmann::json& j, BackboneSpec& c,
               const std::string& scope);

nlohmann::json to_json(const FusionConfig& c);
void from_json(const nlohmann::json& j, FusionConfig& c,
               const std::string& scope);

nlohmann::json to_json(const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c,
               const std::string& scope);

nlohmann::json to_json(const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

}  // namespace cfgio

// Built-in defaults overlaid with the file's keys; ConfigError on unknown
// keys, malformed JSON, or an unreadable file.
RunConfig load_run_config(const std::string& path);

// The reproducibility record dropped next to every command's outputs.
void write_resolved_config(const RunConfig& cfg, const std::string& path);

}  // namespace vtf
