// Feature extraction: a frozen multi-stage image/text encoder pair behind a
// small interface, plus the trainable adaptation layers that map frozen
// features into the joint embedding space.
//
// Two backends satisfy the frozen-encoder contract:
//   * toy            — a tiny fixed-seed patch network, fully offline (see
//                      ToyImageEncoder / ToyTextEncoder below)
//   * pretrained_vlm — transformer weights loaded from disk (see vlm.hpp)
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vtfusion/common.hpp"
#include "vtfusion/image.hpp"
#include "vtfusion/nn.hpp"
#include "vtfusion/rng.hpp"

namespace vtf {

enum class Backend { toy, pretrained_vlm };

std::string to_string(Backend b);
Backend backend_from_string(const std::string& s);

struct BackboneSpec {
  Backend backend = Backend::toy;
  std::vector<int> levels = {0, 1, 2, 3};  // frozen stages used, in order
  Eigen::Index grid_h = 8, grid_w = 8;     // patch grid shared by all levels
  Eigen::Index level_dim = 48;             // channels of each frozen stage
  Eigen::Index joint_dim = 32;             // c: joint embedding width
  Eigen::Index input_h = 64, input_w = 64;

  Eigen::Index level_count() const {
    return static_cast<Eigen::Index>(levels.size());
  }
  Eigen::Index token_count() const { return grid_h * grid_w; }
  // Width of the stacked (all-levels) feature vector per spatial slot.
  Eigen::Index stacked_dim() const { return joint_dim * level_count(); }

  void validate() const;  // throws ConfigError
};

// Adapted per-level features on the shared patch grid. Each entry is
// token-major (row n = grid slot y*w + x) with joint_dim columns.
struct MultiLevelFeatures {
  std::vector<Mat> per_level;
  Eigen::Index grid_h = 0, grid_w = 0;

  Eigen::Index level_count() const {
    return static_cast<Eigen::Index>(per_level.size());
  }
  // Horizontal concatenation [F_0 | F_1 | ...]; pure reindexing.
  Mat stacked() const;
  // Splits a stacked matrix (or its gradient) back into level blocks.
  static std::vector<Mat> unstack(const Mat& stacked, Eigen::Index levels);
};

// 2×joint_dim matrix: row 0 = normal prompt, row 1 = abnormal prompt.
using TextEmbedding = Mat;

// ---------------------------------------------------------------------------
// Frozen backends
// ---------------------------------------------------------------------------

// Produces per-stage patch features for the configured levels. Implementations
// own constant weights; calls never mutate state.
class FrozenImageEncoder {
 public:
  virtual ~FrozenImageEncoder() = default;
  // One N×level_dim matrix per entry of BackboneSpec.levels. The input image
  // may be any size; the encoder resizes and standardizes internally.
  virtual std::vector<Mat> stages(const Image& img) const = 0;
  virtual std::uint64_t fingerprint() const = 0;
};

class FrozenTextEncoder {
 public:
  virtual ~FrozenTextEncoder() = default;
  // Raw (pre-adapter) sentence embedding of length joint_dim.
  virtual Vec encode(const std::string& prompt) const = 0;
  virtual std::uint64_t fingerprint() const = 0;
};

// Small deterministic stand-ins so the whole pipeline runs offline. Weights
// come from a seed derived from the spec dimensions, so two encoders built
// from equal specs are bit-identical.
class ToyImageEncoder : public FrozenImageEncoder {
 public:
  explicit ToyImageEncoder(const BackboneSpec& spec);
  std::vector<Mat> stages(const Image& img) const override;
  std::uint64_t fingerprint() const override;

  static constexpr int kStageCount = 4;

 private:
  BackboneSpec spec_;
  std::vector<Mat> W_;  // one (3·ph·pw)×level_dim projection per stage
  std::vector<Vec> b_;
};

class ToyTextEncoder : public FrozenTextEncoder {
 public:
  explicit ToyTextEncoder(const BackboneSpec& spec);
  Vec encode(const std::string& prompt) const override;
  std::uint64_t fingerprint() const override;

  static constexpr Eigen::Index kHashDim = 64;

 private:
  Eigen::Index joint_dim_;
  Mat W_;  // kHashDim×joint_dim
  Vec b_;
};

// ---------------------------------------------------------------------------
// Trainable adaptation
// ---------------------------------------------------------------------------

// Adaptive image path: one linear map per frozen level into the joint space,
// then a shared 1×1 convolutional adaptor over the patch grid (a 1×1 kernel
// acts per token, so it is a Linear applied to every grid slot). The adaptor
// starts as the identity, so at step 0 the output equals the linear-map
// output exactly.
struct ImageAdapter {
  std::vector<nn::Linear> level_maps;
  nn::Linear adaptor;

  struct Acts {
    std::vector<Mat> stage_out;  // frozen features, inputs to level_maps
    std::vector<Mat> mapped;     // level_map outputs, inputs to the adaptor
  };

  void init(const BackboneSpec& spec, Rng& rng);
  // `stage_out` as produced by FrozenImageEncoder::stages.
  MultiLevelFeatures forward(const std::vector<Mat>& stage_out,
                             const BackboneSpec& spec,
                             Acts* acts = nullptr) const;
  // Accumulates parameter gradients from per-level output gradients. The
  // frozen encoder receives no gradient, so nothing is returned.
  void backward(const Acts& acts, const std::vector<Mat>& d_per_level);
  void register_params(nn::ParamRegistry& reg);
};

// Adaptive text path: frozen sentence embeddings refined by a residual MLP
// (one hidden layer, zero-initialized output map so the adapter starts as the
// identity), then per-row L2 normalization.
struct TextAdapter {
  nn::Linear w1;  // joint_dim -> joint_dim hidden
  nn::Linear w2;  // joint_dim -> joint_dim, zero-initialized

  struct Acts {
    Mat t0;        // frozen embeddings (rows = prompts)
    Mat hidden;    // tanh output
    Mat pre_norm;  // residual sum before row normalization
  };

  void init(const BackboneSpec& spec, Rng& rng);
  // Rows of `t0` are frozen prompt embeddings; returns row-normalized output.
  Mat forward(const Mat& t0, Acts* acts = nullptr) const;
  // Accumulates parameter gradients; returns the gradient w.r.t. t0 (unused
  // by callers since the frozen text encoder takes no updates, but cheap and
  // handy for gradient checks).
  Mat backward(const Acts& acts, const Mat& dT);
  void register_params(nn::ParamRegistry& reg);
};

// ---------------------------------------------------------------------------
// Assembled backbone
// ---------------------------------------------------------------------------

struct Backbone {
  BackboneSpec spec;
  std::shared_ptr<const FrozenImageEncoder> frozen_image;
  std::shared_ptr<const FrozenTextEncoder> frozen_text;
  ImageAdapter image_adapter;
  TextAdapter text_adapter;

  // Builds the frozen backend for spec.backend and freshly initialized
  // adapters. The pretrained_vlm backend requires weights on disk (path from
  // the VTFUSION_VLM_WEIGHTS environment variable or `weights_path`) and
  // throws LoadError when they are absent — never a silent fallback.
  static Backbone make(const BackboneSpec& spec, Rng& rng,
                       const std::string& weights_path = "");

  // Full image path: frozen stages -> level maps -> adaptor. Pass `acts` when
  // gradients are needed (training); leave null in eval.
  MultiLevelFeatures encode_image(const Image& img,
                                  ImageAdapter::Acts* acts = nullptr) const;

  // Frozen sentence embeddings for a prompt pair (row 0 normal, row 1
  // abnormal). Constant per category, so callers cache it across steps.
  Mat frozen_text_embeddings(const std::string& normal_prompt,
                             const std::string& abnormal_prompt) const;

  // Full text path for a prompt pair: frozen embeddings + adapter.
  TextEmbedding encode_text(const std::string& normal_prompt,
                            const std::string& abnormal_prompt,
                            TextAdapter::Acts* acts = nullptr) const;

  // Digest over all frozen weights; must be bit-stable across a training run.
  std::uint64_t frozen_fingerprint() const;

  void register_params(nn::ParamRegistry& reg);
};

}  // namespace vtf
