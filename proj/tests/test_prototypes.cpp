#include "doctest.h"
#include "oracle_helpers.hpp"
#include "vtfusion/prototypes.hpp"

using namespace vtf;
using testutil::max_grad_err;
using testutil::random_mat;

TEST_SUITE_BEGIN("prototypes");

namespace {

MultiLevelFeatures random_features(Rng& rng, Eigen::Index gh, Eigen::Index gw,
                                   Eigen::Index levels, Eigen::Index dim) {
  MultiLevelFeatures f;
  f.grid_h = gh;
  f.grid_w = gw;
  for (Eigen::Index l = 0; l < levels; ++l)
    f.per_level.push_back(random_mat(rng, gh * gw, dim));
  return f;
}

}  // namespace

TEST_CASE("prototype initialization matches the slot-mean oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(400, 1, seed));
    const Eigen::Index gh = 2 + static_cast<Eigen::Index>(rng.uniform_index(3));
    const Eigen::Index gw = 2 + static_cast<Eigen::Index>(rng.uniform_index(3));
    const Eigen::Index dim = 2 + static_cast<Eigen::Index>(rng.uniform_index(4));
    const int k = 1 + static_cast<int>(rng.uniform_index(4));

    std::vector<MultiLevelFeatures> batch;
    for (int s = 0; s < k; ++s)
      batch.push_back(random_features(rng, gh, gw, 2, dim));
    const PrototypeSet protos = init_prototypes(batch);

    REQUIRE(protos.count() == gh * gw);
    REQUIRE(protos.dim() == 2 * dim);
    CHECK(protos.frozen);

    // Oracle: plain elementwise mean over shots of the stacked features.
    for (Eigen::Index n = 0; n < protos.count(); ++n)
      for (Eigen::Index c = 0; c < protos.dim(); ++c) {
        Scalar mean = 0;
        for (int s = 0; s < k; ++s) mean += batch[s].stacked()(n, c);
        mean /= k;
        CHECK(std::abs(protos.anchors(n, c) - mean) < 1e-10);
      }
  }
}

TEST_CASE("initialization rejects empty and mismatched batches") {
  CHECK_THROWS_AS(init_prototypes({}), ArgumentError);
  Rng rng(2);
  std::vector<MultiLevelFeatures> batch = {random_features(rng, 2, 2, 2, 3),
                                           random_features(rng, 2, 3, 2, 3)};
  CHECK_THROWS_AS(init_prototypes(batch), ShapeError);
}

TEST_CASE("nearest anchor matches a linear-scan oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(400, 2, seed));
    PrototypeSet protos;
    const Eigen::Index n = 3 + static_cast<Eigen::Index>(rng.uniform_index(6));
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.uniform_index(5));
    protos.anchors = random_mat(rng, n, d);
    protos.frozen = true;

    const Vec f = random_mat(rng, d, 1).col(0);
    const auto [idx, dist] = nearest_prototype(f, protos);

    Eigen::Index best = 0;
    Scalar best_d = std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar di = (protos.anchors.row(i).transpose() - f).squaredNorm();
      if (di < best_d) {
        best_d = di;
        best = i;
      }
    }
    CHECK(idx == best);
    CHECK(std::abs(dist - best_d) < 1e-10);
  }
}

TEST_CASE("nearest anchor ties resolve to the smallest index") {
  PrototypeSet protos;
  protos.anchors = Mat::Zero(3, 2);
  protos.anchors.row(0) << 1, 0;
  protos.anchors.row(1) << -1, 0;  // same distance from the origin as row 0
  protos.anchors.row(2) << 5, 5;
  const Vec f = Vec::Zero(2);
  const auto [idx, dist] = nearest_prototype(f, protos);
  CHECK(idx == 0);
  CHECK(dist == doctest::Approx(1.0));
}

TEST_CASE("vision prediction matches the per-slot distance oracle") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(400, 3, seed));
    const Eigen::Index gh = 2, gw = 3, dim = 4;
    const MultiLevelFeatures f = random_features(rng, gh, gw, 2, dim);

    PrototypeSet protos;
    protos.anchors = random_mat(rng, gh * gw, 2 * dim);
    protos.frozen = true;

    const PredictionMap map = vision_prediction(f, protos);
    REQUIRE(map.rows() == gh);
    REQUIRE(map.cols() == gw);

    const Mat stacked = f.stacked();
    for (Eigen::Index y = 0; y < gh; ++y)
      for (Eigen::Index x = 0; x < gw; ++x) {
        const Vec slot = stacked.row(y * gw + x).transpose();
        Scalar best = std::numeric_limits<Scalar>::infinity();
        for (Eigen::Index i = 0; i < protos.count(); ++i)
          best = std::min(
              best, (protos.anchors.row(i).transpose() - slot).squaredNorm());
        CHECK(std::abs(map(y, x) - best) < 1e-10);
      }
  }
}

TEST_CASE("vision prediction gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(derive_seed(400, 4, seed));
    const Eigen::Index gh = 2, gw = 2, dim = 3;
    MultiLevelFeatures f = random_features(rng, gh, gw, 1, dim);
    PrototypeSet protos;
    // Spread anchors far apart so the perturbation cannot flip an argmin.
    protos.anchors = random_mat(rng, gh * gw, dim, 3.0);
    protos.frozen = true;
    const PredictionMap d_map = testutil::random_map(rng, gh, gw);

    auto objective = [&] {
      return (d_map * vision_prediction(f, protos)).sum();
    };
    NearestAnchorActs acts;
    vision_prediction(f, protos, &acts);
    const Mat d_stacked = vision_prediction_backward(acts, protos, d_map);
    CHECK(max_grad_err(objective, f.per_level[0], d_stacked) < 1e-4);
  }
}

TEST_CASE("vision prediction ignores anchor ordering") {
  Rng rng(12);
  const MultiLevelFeatures f = random_features(rng, 3, 3, 2, 4);
  PrototypeSet protos;
  protos.anchors = random_mat(rng, 9, 8);
  protos.frozen = true;
  const PredictionMap base = vision_prediction(f, protos);

  // Reverse the anchor rows; nearest-distance values cannot change.
  PrototypeSet shuffled = protos;
  shuffled.anchors = protos.anchors.colwise().reverse().eval();
  const PredictionMap same = vision_prediction(f, shuffled);
  CHECK((base - same).abs().maxCoeff() < 1e-12);
}

TEST_CASE("fingerprint reflects anchor content") {
  Rng rng(5);
  PrototypeSet a, b;
  a.anchors = random_mat(rng, 4, 3);
  b.anchors = a.anchors;
  CHECK(a.fingerprint() == b.fingerprint());
  b.anchors(0, 0) += 1e-12;
  CHECK(a.fingerprint() != b.fingerprint());
}

TEST_SUITE_END();
