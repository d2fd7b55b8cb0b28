// Prompt construction and the text-guided prediction map: per level, each
// L2-normalized visual feature is scored against the normal/abnormal text
// embeddings and the abnormal-class probabilities are summed over levels.
#pragma once

#include <string>
#include <vector>

#include "vtfusion/backbone.hpp"
#include "vtfusion/common.hpp"

namespace vtf {

struct PromptPair {
  std::string normal_prompt;
  std::string abnormal_prompt;
  std::string object_label;
};

// The two fixed templates instantiated with the label.
PromptPair build_prompts(const std::string& object_label);

// Scale applied to cosine logits before the 2-class softmax.
inline constexpr Scalar kDefaultLogitScale = 100.0;

struct TextPredictionActs {
  std::vector<Mat> features;    // raw per-level features
  std::vector<Mat> normalized;  // after row normalization
  std::vector<Mat> probs;       // per-level N×2 class probabilities
  Mat text;                     // 2×joint_dim embedding used
  Scalar logit_scale = kDefaultLogitScale;
};

// Map value = Σ_l P(abnormal | feature at slot, level l); range [0, L].
PredictionMap text_prediction(const MultiLevelFeatures& features,
                              const TextEmbedding& text,
                              Scalar logit_scale = kDefaultLogitScale,
                              TextPredictionActs* acts = nullptr);

struct TextPredictionGrads {
  std::vector<Mat> d_per_level;  // w.r.t. the raw per-level features
  Mat d_text;                    // w.r.t. the 2×joint_dim embedding
};

TextPredictionGrads text_prediction_backward(const TextPredictionActs& acts,
                                             const PredictionMap& d_map);

}  // namespace vtf
