#include "vtfusion/textflow.hpp"

#include "vtfusion/nn.hpp"

namespace vtf {

PromptPair build_prompts(const std::string& object_label) {
  if (object_label.empty())
    throw ArgumentError("build_prompts: empty object label");
  PromptPair p;
  p.object_label = object_label;
  p.normal_prompt = "a photo of a normal " + object_label;
  p.abnormal_prompt = "a photo of a damaged " + object_label;
  return p;
}

PredictionMap text_prediction(const MultiLevelFeatures& features,
                              const TextEmbedding& text, Scalar logit_scale,
                              TextPredictionActs* acts) {
  if (text.rows() != 2)
    throw ShapeError("text_prediction: expected 2 text rows, got " +
                     std::to_string(text.rows()));
  PredictionMap map = PredictionMap::Zero(features.grid_h, features.grid_w);
  TextPredictionActs local;
  local.text = text;
  local.logit_scale = logit_scale;
  for (const Mat& f : features.per_level) {
    if (f.cols() != text.cols())
      throw ShapeError("text_prediction: feature channels " +
                       std::to_string(f.cols()) + " vs text dim " +
                       std::to_string(text.cols()));
    Mat fn = nn::normalize_rows(f);
    Mat probs = nn::softmax_rows(logit_scale * fn * text.transpose());
    for (Eigen::Index y = 0; y < features.grid_h; ++y)
      for (Eigen::Index x = 0; x < features.grid_w; ++x)
        map(y, x) += probs(y * features.grid_w + x, 1);
    if (acts) {
      local.features.push_back(f);
      local.normalized.push_back(std::move(fn));
      local.probs.push_back(std::move(probs));
    }
  }
  if (acts) *acts = std::move(local);
  return map;
}

TextPredictionGrads text_prediction_backward(const TextPredictionActs& acts,
                                             const PredictionMap& d_map) {
  TextPredictionGrads g;
  g.d_text = Mat::Zero(acts.text.rows(), acts.text.cols());
  const Eigen::Index n_tok = d_map.size();
  Mat d_probs = Mat::Zero(n_tok, 2);
  for (Eigen::Index y = 0; y < d_map.rows(); ++y)
    for (Eigen::Index x = 0; x < d_map.cols(); ++x)
      d_probs(y * d_map.cols() + x, 1) = d_map(y, x);
  for (std::size_t l = 0; l < acts.probs.size(); ++l) {
    const Mat d_logits = nn::softmax_rows_backward(acts.probs[l], d_probs);
    const Mat d_fn = acts.logit_scale * d_logits * acts.text;
    g.d_text += acts.logit_scale * d_logits.transpose() * acts.normalized[l];
    g.d_per_level.push_back(
        nn::normalize_rows_backward(acts.features[l], d_fn));
  }
  return g;
}

}  // namespace vtf
