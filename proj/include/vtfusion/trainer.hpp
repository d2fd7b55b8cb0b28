// End-to-end training and inference: k-shot episode training with synthesized
// anomalies, joint optimization of the image/text adapters and the fusion
// parameters, and the eval-mode forward pass.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vtfusion/backbone.hpp"
#include "vtfusion/fusion.hpp"
#include "vtfusion/losses.hpp"
#include "vtfusion/prototypes.hpp"
#include "vtfusion/synth.hpp"
#include "vtfusion/textflow.hpp"

namespace vtf {

struct TrainConfig {
  int k_shots = 2;       // at most 8 normal images per episode
  int iterations = 1000;
  int batch_size = 2;    // sampled with replacement from the k shots
  Scalar lr_aie = 1e-3;      // image-adapter learning rate
  Scalar lr_ate_mpf = 1e-4;  // text-adapter and fusion learning rate
  LossConfig loss;
  SynthConfig synth;         // per-draw seeds are derived from `seed`
  Scalar logit_scale = kDefaultLogitScale;
  std::uint64_t seed = 0;
  std::string category;
  std::string object_label = "object";

  void validate() const;  // throws ConfigError
};

struct TrainLogEntry {
  int step = 0;
  Scalar nfc = 0, afs = 0, seg = 0, total = 0;
};

// Everything needed to rebuild the trained model: the trainable tensors by
// registry name plus the frozen prototype set. Frozen backbone weights are
// deliberately excluded — they are reconstructed from the spec (toy) or
// reloaded from the weight bundle (pretrained_vlm).
struct ModelCheckpoint {
  static constexpr int kSchemaVersion = 1;
  int schema = kSchemaVersion;
  BackboneSpec spec;
  FusionConfig fusion_cfg;
  TrainConfig train_cfg;
  PrototypeSet prototypes;
  std::vector<std::pair<std::string, Mat>> weights;

  std::uint64_t digest() const;
};

struct TrainResult {
  ModelCheckpoint checkpoint;
  std::vector<TrainLogEntry> log;
  // Bitwise digests of the frozen backbone weights and the prototype anchors
  // taken right after initialization and again after the final step; each
  // pair must match — training may never move frozen state.
  std::uint64_t frozen_digest_start = 0, frozen_digest_end = 0;
  std::uint64_t prototype_digest_start = 0, prototype_digest_end = 0;
};

// Runs the full training procedure: build the backbone, initialize the
// prototype set once from the k shots (frozen from then on), then per
// iteration synthesize abnormal counterparts, extract features, evaluate the
// compactness/separation/segmentation losses, and update the trainable
// parameters with Adam at the two configured learning rates.
TrainResult train(const std::vector<Image>& normal_shots,
                  const TrainConfig& cfg, const BackboneSpec& spec,
                  const FusionConfig& fusion_cfg,
                  const std::string& vlm_weights_path = "");

struct Prediction {
  Scalar score = 0;
  PredictionMap map;  // at the query image's own resolution
};

// Runtime assembly of a checkpoint: backbone + adapters + fusion with the
// stored weights, ready for repeated eval-mode calls.
struct Model {
  Backbone backbone;
  FusionParams fusion;
  PrototypeSet prototypes;
  TrainConfig train_cfg;

  static Model from_checkpoint(const ModelCheckpoint& ckpt,
                               const std::string& vlm_weights_path = "");
  Prediction predict(const Image& img) const;
};

// One-off convenience; for many images build a Model once.
Prediction predict(const ModelCheckpoint& ckpt, const Image& img,
                   const std::string& vlm_weights_path = "");

}  // namespace vtf
