// Training objectives: compactness hinge for normal features, separation
// hinge for synthesized-abnormal features, squared-error segmentation loss,
// and their weighted total.
#pragma once

#include "vtfusion/common.hpp"
#include "vtfusion/prototypes.hpp"

namespace vtf {

struct LossConfig {
  Scalar r = 0.00001;   // hypersphere radius around each anchor
  Scalar alpha = 0.1;   // radius relaxation for the separation margin
  Scalar lambda = 1.0;  // segmentation weight in the total

  void validate() const;  // throws ConfigError
};

// (1/N)·Σ_n max(0, D_n − r²) with D_n the squared distance from normal slot n
// to its nearest anchor. Pass `acts` to enable the backward call.
Scalar nfc_loss(const Mat& stacked_normal, const PrototypeSet& protos,
                const LossConfig& cfg, NearestAnchorActs* acts = nullptr);
Mat nfc_loss_backward(const NearestAnchorActs& acts, const PrototypeSet& protos,
                      const LossConfig& cfg);

// (1/N)·Σ_n max(0, (r+α)² − D_n) over abnormal slots; pushes synthesized
// anomalies beyond the relaxed margin.
Scalar afs_loss(const Mat& stacked_abnormal, const PrototypeSet& protos,
                const LossConfig& cfg, NearestAnchorActs* acts = nullptr);
Mat afs_loss_backward(const NearestAnchorActs& acts, const PrototypeSet& protos,
                      const LossConfig& cfg);

// Mean per-pixel squared error between the final map and the binary mask.
Scalar seg_loss(const PredictionMap& prediction, const PixelMask& mask);
PredictionMap seg_loss_backward(const PredictionMap& prediction,
                                const PixelMask& mask);

// nfc + afs + λ·seg. A non-finite component aborts with the component named.
Scalar total_loss(Scalar nfc, Scalar afs, Scalar seg, const LossConfig& cfg);

}  // namespace vtf
