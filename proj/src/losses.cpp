#include "vtfusion/losses.hpp"

#include <cmath>

namespace vtf {

void LossConfig::validate() const {
  if (r <= 0) throw ConfigError("loss: r must be positive");
  if (alpha <= 0) throw ConfigError("loss: alpha must be positive");
  if (lambda < 0) throw ConfigError("loss: lambda must be nonnegative");
}

Scalar nfc_loss(const Mat& stacked_normal, const PrototypeSet& protos,
                const LossConfig& cfg, NearestAnchorActs* acts) {
  NearestAnchorActs local = assign_nearest(stacked_normal, protos);
  const Scalar r2 = cfg.r * cfg.r;
  Scalar sum = 0;
  for (Eigen::Index n = 0; n < local.dist.size(); ++n)
    sum += std::max(Scalar(0), local.dist(n) - r2);
  const Scalar loss = sum / static_cast<Scalar>(local.dist.size());
  if (acts) *acts = std::move(local);
  return loss;
}

Mat nfc_loss_backward(const NearestAnchorActs& acts, const PrototypeSet& protos,
                      const LossConfig& cfg) {
  const Scalar r2 = cfg.r * cfg.r;
  const auto n_tok = static_cast<Scalar>(acts.stacked.rows());
  Mat dF = Mat::Zero(acts.stacked.rows(), acts.stacked.cols());
  for (Eigen::Index n = 0; n < acts.stacked.rows(); ++n) {
    if (acts.dist(n) <= r2) continue;  // inside the hinge: zero subgradient
    dF.row(n) =
        (Scalar(2) / n_tok) *
        (acts.stacked.row(n) -
         protos.anchors.row(acts.nearest[static_cast<std::size_t>(n)]));
  }
  return dF;
}

Scalar afs_loss(const Mat& stacked_abnormal, const PrototypeSet& protos,
                const LossConfig& cfg, NearestAnchorActs* acts) {
  NearestAnchorActs local = assign_nearest(stacked_abnormal, protos);
  const Scalar margin2 = (cfg.r + cfg.alpha) * (cfg.r + cfg.alpha);
  Scalar sum = 0;
  for (Eigen::Index n = 0; n < local.dist.size(); ++n)
    sum += std::max(Scalar(0), margin2 - local.dist(n));
  const Scalar loss = sum / static_cast<Scalar>(local.dist.size());
  if (acts) *acts = std::move(local);
  return loss;
}

Mat afs_loss_backward(const NearestAnchorActs& acts, const PrototypeSet& protos,
                      const LossConfig& cfg) {
  const Scalar margin2 = (cfg.r + cfg.alpha) * (cfg.r + cfg.alpha);
  const auto n_tok = static_cast<Scalar>(acts.stacked.rows());
  Mat dF = Mat::Zero(acts.stacked.rows(), acts.stacked.cols());
  for (Eigen::Index n = 0; n < acts.stacked.rows(); ++n) {
    if (acts.dist(n) >= margin2) continue;  // margin satisfied
    dF.row(n) =
        (Scalar(-2) / n_tok) *
        (acts.stacked.row(n) -
         protos.anchors.row(acts.nearest[static_cast<std::size_t>(n)]));
  }
  return dF;
}

Scalar seg_loss(const PredictionMap& prediction, const PixelMask& mask) {
  if (prediction.rows() != mask.rows() || prediction.cols() != mask.cols())
    throw ShapeError("seg_loss: prediction " + std::to_string(prediction.rows()) +
                     "x" + std::to_string(prediction.cols()) + " vs mask " +
                     std::to_string(mask.rows()) + "x" +
                     std::to_string(mask.cols()));
  const auto diff = prediction - mask.cast<Scalar>();
  return diff.square().sum() / static_cast<Scalar>(prediction.size());
}

PredictionMap seg_loss_backward(const PredictionMap& prediction,
                                const PixelMask& mask) {
  return Scalar(2) * (prediction - mask.cast<Scalar>()) /
         static_cast<Scalar>(prediction.size());
}

Scalar total_loss(Scalar nfc, Scalar afs, Scalar seg, const LossConfig& cfg) {
  auto check = [](Scalar v, const char* name) {
    if (!std::isfinite(v))
      throw TrainingError(std::string("non-finite ") + name + " loss");
  };
  check(nfc, "nfc");
  check(afs, "afs");
  check(seg, "seg");
  return nfc + afs + cfg.lambda * seg;
}

}  // namespace vtf
