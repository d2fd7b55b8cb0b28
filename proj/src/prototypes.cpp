#include "vtfusion/prototypes.hpp"

namespace vtf {

PrototypeSet init_prototypes(const std::vector<MultiLevelFeatures>& batch,
                             PrototypeProvenance source) {
  if (batch.empty())
    throw ArgumentError("init_prototypes: empty feature batch");
  Mat mean = batch[0].stacked();
  for (std::size_t i = 1; i < batch.size(); ++i) {
    const Mat s = batch[i].stacked();
    if (s.rows() != mean.rows() || s.cols() != mean.cols())
      throw ShapeError("init_prototypes: feature shape mismatch in batch");
    mean += s;
  }
  mean /= static_cast<Scalar>(batch.size());
  PrototypeSet p;
  p.anchors = std::move(mean);
  p.frozen = true;
  p.source = std::move(source);
  return p;
}

std::pair<Eigen::Index, Scalar> nearest_prototype(const Vec& f,
                                                  const PrototypeSet& protos) {
  if (f.size() != protos.dim())
    throw ShapeError("nearest_prototype: feature dim " +
                     std::to_string(f.size()) + " vs anchor dim " +
                     std::to_string(protos.dim()));
  Eigen::Index best = 0;
  Scalar best_d = (protos.anchors.row(0).transpose() - f).squaredNorm();
  for (Eigen::Index n = 1; n < protos.count(); ++n) {
    const Scalar d = (protos.anchors.row(n).transpose() - f).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = n;
    }
  }
  return {best, best_d};
}

NearestAnchorActs assign_nearest(const Mat& stacked,
                                 const PrototypeSet& protos) {
  if (stacked.cols() != protos.dim())
    throw ShapeError("assign_nearest: feature dim mismatch");
  NearestAnchorActs acts;
  acts.stacked = stacked;
  acts.nearest.resize(static_cast<std::size_t>(stacked.rows()));
  acts.dist.resize(stacked.rows());
  for (Eigen::Index n = 0; n < stacked.rows(); ++n) {
    Eigen::Index best = 0;
    Scalar best_d = (protos.anchors.row(0) - stacked.row(n)).squaredNorm();
    for (Eigen::Index a = 1; a < protos.count(); ++a) {
      const Scalar d = (protos.anchors.row(a) - stacked.row(n)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = a;
      }
    }
    acts.nearest[static_cast<std::size_t>(n)] = best;
    acts.dist(n) = best_d;
  }
  return acts;
}

PredictionMap vision_prediction(const MultiLevelFeatures& features,
                                const PrototypeSet& protos,
                                NearestAnchorActs* acts) {
  NearestAnchorActs local = assign_nearest(features.stacked(), protos);
  PredictionMap map(features.grid_h, features.grid_w);
  for (Eigen::Index y = 0; y < features.grid_h; ++y)
    for (Eigen::Index x = 0; x < features.grid_w; ++x)
      map(y, x) = local.dist(y * features.grid_w + x);
  if (acts) *acts = std::move(local);
  return map;
}

Mat vision_prediction_backward(const NearestAnchorActs& acts,
                               const PrototypeSet& protos,
                               const PredictionMap& d_map) {
  const Eigen::Index n_tok = acts.stacked.rows();
  if (d_map.size() != n_tok)
    throw ShapeError("vision_prediction_backward: map size mismatch");
  Mat dF(n_tok, acts.stacked.cols());
  for (Eigen::Index y = 0; y < d_map.rows(); ++y)
    for (Eigen::Index x = 0; x < d_map.cols(); ++x) {
      const Eigen::Index n = y * d_map.cols() + x;
      dF.row(n) =
          Scalar(2) * d_map(y, x) *
          (acts.stacked.row(n) -
           protos.anchors.row(acts.nearest[static_cast<std::size_t>(n)]));
    }
  return dF;
}

}  // namespace vtf
