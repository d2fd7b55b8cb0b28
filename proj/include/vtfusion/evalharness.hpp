// Dataset loading (MVTec-AD directory layout), episode sampling, ranking
// metrics (image/pixel AUROC, per-region overlap), and report emission.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vtfusion/common.hpp"
#include "vtfusion/image.hpp"
#include "vtfusion/trainer.hpp"

namespace vtf {

// Indexed file lists for one category. Listings are sorted so the index is
// stable across filesystems.
struct DatasetIndex {
  std::string root;
  std::string category;
  std::vector<std::string> train_good;
  std::vector<std::string> test_normal;
  // (image path, ground-truth mask path) pairs.
  std::vector<std::pair<std::string, std::string>> test_abnormal;
};

// Expects root/category/{train/good, test/<defect>, ground_truth/<defect>}.
// An abnormal test image without its mask is a DataError naming the file.
DatasetIndex load_dataset(const std::string& root, const std::string& category);

struct EpisodeSplit {
  std::vector<std::string> shots;  // k normal training images
  std::vector<std::string> test_normal;
  std::vector<std::pair<std::string, std::string>> test_abnormal;
  std::string category;
  int k = 0;
  std::uint64_t seed = 0;
};

// Uniform without-replacement draw of k shots from train/good.
EpisodeSplit sample_episode(const DatasetIndex& index, int k,
                            std::uint64_t seed);

// Probability that a random positive outscores a random negative, ties
// counted half (rank-based, O(n log n)). Throws MetricError when only one
// class is present.
Scalar auroc(const std::vector<Scalar>& scores, const std::vector<int>& labels);

// AUROC over the pooled pixels of all maps. With per_image_mean, instead the
// mean of per-image AUROCs over images that contain both classes.
Scalar pixel_auroc(const std::vector<PredictionMap>& maps,
                   const std::vector<PixelMask>& masks,
                   bool per_image_mean = false);

// Area under the per-region-overlap curve for false-positive rates up to
// max_fpr, normalized by max_fpr. Regions are 8-connected components of the
// ground-truth masks; the curve is the right-continuous step function traced
// by sweeping the threshold over the observed map values.
Scalar pro(const std::vector<PredictionMap>& maps,
           const std::vector<PixelMask>& masks, Scalar max_fpr = 0.3);

// 8-connected component labeling: (labels, count) with 0 = background and
// components numbered 1..count.
std::pair<Eigen::ArrayXXi, int> connected_components(const PixelMask& mask);

// Heatmap blend of the map over the image (fixed cold-to-hot ramp, 50/50
// blend); for human inspection only.
void render_overlay(const Image& img, const PredictionMap& map,
                    const std::string& out_path);

struct MetricReport {
  std::string category;
  int k = 0;
  std::uint64_t seed = 0;
  Scalar image_auroc = 0;
  Scalar pixel_auroc = 0;
  Scalar pro = 0;
  std::string checkpoint_digest;

  std::string table() const;  // human-readable rows + mean
};

// Predicts every test image of the episode and reduces the three metrics.
// workers > 1 parallelizes the per-image forward passes; results are ordered
// by index, so the report does not depend on scheduling.
MetricReport evaluate_episode(const Model& model, const EpisodeSplit& split,
                              const std::string& checkpoint_digest,
                              int workers = 1);

// Writes report.json and report.txt into `dir`.
void write_report(const MetricReport& report, const std::string& dir);

// Generates a small on-disk dataset in the expected layout: flat-texture
// normal images and square-paste anomalies with exact masks. Used by tests
// and end-to-end demos.
void make_toy_fixture(const std::string& root, const std::string& category,
                      std::uint64_t seed, int n_train = 8, int n_test_normal = 8,
                      int n_test_abnormal = 8, Eigen::Index size = 64);

}  // namespace vtf
