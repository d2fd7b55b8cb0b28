// Frozen normality template: per-slot mean anchors built from the k-shot
// normal features, nearest-anchor lookup, and the vision-based prediction map.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vtfusion/backbone.hpp"
#include "vtfusion/common.hpp"

namespace vtf {

struct PrototypeProvenance {
  std::string category;
  int k = 0;
  std::uint64_t seed = 0;
};

struct PrototypeSet {
  Mat anchors;  // N×(joint_dim·L); row n = anchor for spatial slot n
  bool frozen = false;
  PrototypeProvenance source;

  Eigen::Index count() const { return anchors.rows(); }
  Eigen::Index dim() const { return anchors.cols(); }
  std::uint64_t fingerprint() const { return vtf::fingerprint(anchors); }
};

// Position-wise batch mean of the stacked features; the set is frozen from
// this moment on and never updated by training.
PrototypeSet init_prototypes(const std::vector<MultiLevelFeatures>& batch,
                             PrototypeProvenance source = {});

// Closest anchor to `f` by Euclidean distance; returns (index, squared
// distance). Ties resolve to the smallest index.
std::pair<Eigen::Index, Scalar> nearest_prototype(const Vec& f,
                                                  const PrototypeSet& protos);

// Per-slot nearest assignment for a whole feature map; reused by the losses
// and the prediction-map backward pass. The assignment is treated as constant
// under differentiation (gradients flow through the distance only).
struct NearestAnchorActs {
  Mat stacked;                        // features the distances were taken at
  std::vector<Eigen::Index> nearest;  // per row of `stacked`
  Vec dist;                           // squared distance per row
};

NearestAnchorActs assign_nearest(const Mat& stacked,
                                 const PrototypeSet& protos);

// Map value at slot n = squared distance from the stacked feature to its
// nearest anchor, laid out on the feature grid.
PredictionMap vision_prediction(const MultiLevelFeatures& features,
                                const PrototypeSet& protos,
                                NearestAnchorActs* acts = nullptr);

// Gradient w.r.t. the stacked features given the map gradient.
Mat vision_prediction_backward(const NearestAnchorActs& acts,
                               const PrototypeSet& protos,
                               const PredictionMap& d_map);

}  // namespace vtf
