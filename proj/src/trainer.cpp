#include "vtfusion/trainer.hpp"

#include <cmath>

namespace vtf {

namespace {

// Independent seed streams hanging off the root training seed.
constexpr std::uint64_t kInitStream = 0x696e6974;   // parameter init
constexpr std::uint64_t kIterStream = 0x69746572;   // per-iteration batch
constexpr std::uint64_t kSynthStream = 0x73796e74;  // per-sample synthesis

PixelMask mask_at(const PixelMask& mask, Eigen::Index h, Eigen::Index w) {
  if (mask.rows() == h && mask.cols() == w) return mask;
  return resize_nearest(mask, h, w);
}

}  // namespace

void TrainConfig::validate() const {
  if (k_shots < 1 || k_shots > 8)
    throw ConfigError("train: k_shots must be in [1, 8], got " +
                      std::to_string(k_shots));
  if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (lr_aie <= 0 || lr_ate_mpf <= 0)
    throw ConfigError("train: learning rates must be positive");
  if (logit_scale <= 0)
    throw ConfigError("train: logit_scale must be positive");
  if (object_label.empty())
    throw ConfigError("train: object_label must be nonempty");
  loss.validate();
  synth.validate();
}

std::uint64_t ModelCheckpoint::digest() const {
  std::uint64_t h = fingerprint_bytes(&schema, sizeof(schema));
  h = fingerprint(prototypes.anchors, h);
  for (const auto& [name, t] : weights) {
    h = fingerprint_bytes(name.data(), name.size(), h);
    h = fingerprint(t, h);
  }
  return h;
}

TrainResult train(const std::vector<Image>& normal_shots,
                  const TrainConfig& cfg, const BackboneSpec& spec,
                  const FusionConfig& fusion_cfg,
                  const std::string& vlm_weights_path) {
  cfg.validate();
  spec.validate();
  fusion_cfg.validate();
  if (normal_shots.empty()) throw ArgumentError("train: empty shot list");
  if (static_cast<int>(normal_shots.size()) != cfg.k_shots)
    throw ArgumentError("train: got " +
                        std::to_string(normal_shots.size()) +
                        " shots but k_shots = " + std::to_string(cfg.k_shots));

  Rng init_rng(derive_seed(cfg.seed, kInitStream));
  Backbone backbone = Backbone::make(spec, init_rng, vlm_weights_path);
  FusionParams fusion;
  fusion.init(fusion_cfg, init_rng);

  nn::ParamRegistry registry;
  backbone.register_params(registry);
  fusion.register_params(registry);

  std::vector<nn::ParamRef> aie_refs, other_refs;
  for (const auto& ref : registry.refs()) {
    if (ref.name.starts_with("image_adapter."))
      aie_refs.push_back(ref);
    else
      other_refs.push_back(ref);
  }
  nn::Adam adam;
  adam.add_group(aie_refs, cfg.lr_aie);
  adam.add_group(other_refs, cfg.lr_ate_mpf);

  // The frozen stage outputs of the k shots never change; cache them.
  std::vector<std::vector<Mat>> stage_cache;
  stage_cache.reserve(normal_shots.size());
  for (const Image& s : normal_shots)
    stage_cache.push_back(backbone.frozen_image->stages(s));

  // Prototype set: built once from the k shots, frozen from then on.
  std::vector<MultiLevelFeatures> shot_features;
  shot_features.reserve(stage_cache.size());
  for (const auto& stages : stage_cache)
    shot_features.push_back(backbone.image_adapter.forward(stages, spec));
  PrototypeSet protos = init_prototypes(
      shot_features, {cfg.category, cfg.k_shots, cfg.seed});

  TrainResult result;
  result.frozen_digest_start = backbone.frozen_fingerprint();
  result.prototype_digest_start = protos.fingerprint();

  const PromptPair prompts = build_prompts(cfg.object_label);
  const Mat t0 = backbone.frozen_text_embeddings(prompts.normal_prompt,
                                                 prompts.abnormal_prompt);
  const Eigen::Index n_levels = spec.level_count();
  const auto k = static_cast<std::uint64_t>(cfg.k_shots);
  const Scalar inv_b = Scalar(1) / static_cast<Scalar>(cfg.batch_size);

  std::vector<TrainLogEntry> log;
  log.reserve(static_cast<std::size_t>(cfg.iterations));

  for (int step = 0; step < cfg.iterations; ++step) {
    Rng iter_rng(derive_seed(cfg.seed, kIterStream,
                             static_cast<std::uint64_t>(step)));
    registry.zero_grads();
    Scalar sum_nfc = 0, sum_afs = 0, sum_seg = 0;

    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto idx = static_cast<std::size_t>(iter_rng.uniform_index(k));
      Rng synth_rng(derive_seed(
          cfg.seed, kSynthStream,
          static_cast<std::uint64_t>(step) * cfg.batch_size + b));
      const SynthResult syn =
          synthesize_random_type(normal_shots[idx], cfg.synth, synth_rng);

      ImageAdapter::Acts acts_n, acts_a;
      const MultiLevelFeatures f_n =
          backbone.image_adapter.forward(stage_cache[idx], spec, &acts_n);
      const MultiLevelFeatures f_a = backbone.encode_image(syn.image, &acts_a);

      NearestAnchorActs nfc_acts, afs_acts, vp_acts;
      const Scalar nfc = nfc_loss(f_n.stacked(), protos, cfg.loss, &nfc_acts);
      const Scalar afs = afs_loss(f_a.stacked(), protos, cfg.loss, &afs_acts);
      const PredictionMap m_v = vision_prediction(f_a, protos, &vp_acts);

      TextAdapter::Acts ate_acts;
      const Mat text = backbone.text_adapter.forward(t0, &ate_acts);
      TextPredictionActs tp_acts;
      const PredictionMap m_t =
          text_prediction(f_a, text, cfg.logit_scale, &tp_acts);

      FuseActs fuse_acts;
      const PredictionMap m_vt = fuse(m_v, m_t, fusion, &fuse_acts);
      SegActs seg_acts;
      const PredictionMap m_f = segment(m_v, m_t, m_vt, fusion, spec.input_h,
                                        spec.input_w, &seg_acts);
      const PixelMask mask = mask_at(syn.mask, spec.input_h, spec.input_w);
      const Scalar seg = seg_loss(m_f, mask);

      try {
        total_loss(nfc, afs, seg, cfg.loss);
      } catch (const TrainingError& e) {
        throw TrainingError("step " + std::to_string(step) + ": " + e.what());
      }
      sum_nfc += nfc;
      sum_afs += afs;
      sum_seg += seg;

      // Backward, all terms scaled to the batch mean.
      const PredictionMap d_mf =
          seg_loss_backward(m_f, mask) * (cfg.loss.lambda * inv_b);
      const SegGrads sg = segment_backward(fusion, seg_acts, d_mf);
      const FuseGrads fg = fuse_backward(fusion, fuse_acts, sg.d_vt);
      const PredictionMap d_mv = sg.d_v + fg.d_v;
      const PredictionMap d_mt = sg.d_t + fg.d_t;

      Mat d_fa_stacked = afs_loss_backward(afs_acts, protos, cfg.loss) * inv_b;
      d_fa_stacked += vision_prediction_backward(vp_acts, protos, d_mv);
      const TextPredictionGrads tg = text_prediction_backward(tp_acts, d_mt);
      backbone.text_adapter.backward(ate_acts, tg.d_text);
      std::vector<Mat> d_levels =
          MultiLevelFeatures::unstack(d_fa_stacked, n_levels);
      for (Eigen::Index l = 0; l < n_levels; ++l)
        d_levels[static_cast<std::size_t>(l)] +=
            tg.d_per_level[static_cast<std::size_t>(l)];
      backbone.image_adapter.backward(acts_a, d_levels);

      const Mat d_fn_stacked =
          nfc_loss_backward(nfc_acts, protos, cfg.loss) * inv_b;
      backbone.image_adapter.backward(
          acts_n, MultiLevelFeatures::unstack(d_fn_stacked, n_levels));
    }

    adam.step();
    TrainLogEntry entry;
    entry.step = step;
    entry.nfc = sum_nfc * inv_b;
    entry.afs = sum_afs * inv_b;
    entry.seg = sum_seg * inv_b;
    entry.total = total_loss(entry.nfc, entry.afs, entry.seg, cfg.loss);
    log.push_back(entry);
  }

  result.frozen_digest_end = backbone.frozen_fingerprint();
  result.prototype_digest_end = protos.fingerprint();
  result.checkpoint.spec = spec;
  result.checkpoint.fusion_cfg = fusion_cfg;
  result.checkpoint.train_cfg = cfg;
  result.checkpoint.prototypes = std::move(protos);
  for (const auto& ref : registry.refs())
    result.checkpoint.weights.emplace_back(ref.name, *ref.value);
  result.log = std::move(log);
  return result;
}

Model Model::from_checkpoint(const ModelCheckpoint& ckpt,
                             const std::string& vlm_weights_path) {
  if (ckpt.schema != ModelCheckpoint::kSchemaVersion)
    throw LoadError("checkpoint schema " + std::to_string(ckpt.schema) +
                    " unsupported");
  Model m;
  Rng scratch(0);  // initialization is overwritten by the stored weights
  m.backbone = Backbone::make(ckpt.spec, scratch, vlm_weights_path);
  m.fusion.init(ckpt.fusion_cfg, scratch);
  m.prototypes = ckpt.prototypes;
  m.train_cfg = ckpt.train_cfg;

  nn::ParamRegistry registry;
  m.backbone.register_params(registry);
  m.fusion.register_params(registry);
  if (registry.refs().size() != ckpt.weights.size())
    throw LoadError("checkpoint holds " + std::to_string(ckpt.weights.size()) +
                    " tensors but the model has " +
                    std::to_string(registry.refs().size()));
  for (const auto& [name, value] : ckpt.weights) {
    const nn::ParamRef* ref = registry.find(name);
    if (!ref) throw LoadError("checkpoint tensor '" + name + "' is unknown");
    if (ref->value->rows() != value.rows() ||
        ref->value->cols() != value.cols())
      throw LoadError("checkpoint tensor '" + name + "' has shape " +
                      std::to_string(value.rows()) + "x" +
                      std::to_string(value.cols()) + ", expected " +
                      std::to_string(ref->value->rows()) + "x" +
                      std::to_string(ref->value->cols()));
    *ref->value = value;
  }
  return m;
}

Prediction Model::predict(const Image& img) const {
  const MultiLevelFeatures f = backbone.encode_image(img);
  const PredictionMap m_v = vision_prediction(f, prototypes);
  const PromptPair prompts = build_prompts(train_cfg.object_label);
  const TextEmbedding text =
      backbone.encode_text(prompts.normal_prompt, prompts.abnormal_prompt);
  const PredictionMap m_t = text_prediction(f, text, train_cfg.logit_scale);
  const PredictionMap m_vt = fuse(m_v, m_t, fusion);
  const PredictionMap m_f =
      segment(m_v, m_t, m_vt, fusion, img.rows(), img.cols());
  Prediction p;
  p.score = image_score(m_f);
  p.map = m_f;
  return p;
}

Prediction predict(const ModelCheckpoint& ckpt, const Image& img,
                   const std::string& vlm_weights_path) {
  return Model::from_checkpoint(ckpt, vlm_weights_path).predict(img);
}

}  // namespace vtf
