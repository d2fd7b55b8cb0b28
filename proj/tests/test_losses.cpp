#include "doctest.h"
#include "oracle_helpers.hpp"
#include "vtfusion/losses.hpp"

using namespace vtf;
using testutil::max_grad_err;
using testutil::random_mat;

TEST_SUITE_BEGIN("losses");

namespace {

PrototypeSet spread_prototypes(Rng& rng, Eigen::Index n, Eigen::Index d,
                               double scale = 3.0) {
  PrototypeSet protos;
  protos.anchors = random_mat(rng, n, d, scale);
  protos.frozen = true;
  return protos;
}

}  // namespace

TEST_CASE("compactness loss is exactly zero on anchor-perfect features") {
  Rng rng(1);
  const PrototypeSet protos = spread_prototypes(rng, 6, 4);
  const Mat features = protos.anchors;  // every slot sits on an anchor
  for (const Scalar r : {1e-9, 1e-5, 0.1, 2.0}) {
    LossConfig cfg;
    cfg.r = r;
    CHECK(nfc_loss(features, protos, cfg) == 0.0);
  }
}

TEST_CASE("separation loss is exactly zero beyond the margin") {
  Rng rng(2);
  const PrototypeSet protos = spread_prototypes(rng, 4, 3, 0.1);
  LossConfig cfg;
  cfg.r = 0.01;
  cfg.alpha = 0.1;
  // Push every feature far outside the (r+α) ball around every anchor.
  const Mat far = random_mat(rng, 8, 3).array() + 50.0;
  CHECK(afs_loss(far, protos, cfg) == 0.0);
}

TEST_CASE("hinge losses match the direct formula") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(derive_seed(500, 1, seed));
    const PrototypeSet protos = spread_prototypes(rng, 5, 3, 1.0);
    const Mat features = random_mat(rng, 7, 3, 1.0);
    LossConfig cfg;
    cfg.r = 0.5;
    cfg.alpha = 0.4;

    Scalar nfc_expect = 0, afs_expect = 0;
    for (Eigen::Index n = 0; n < features.rows(); ++n) {
      Scalar d = std::numeric_limits<Scalar>::infinity();
      for (Eigen::Index i = 0; i < protos.count(); ++i)
        d = std::min(d, (protos.anchors.row(i) - features.row(n)).squaredNorm());
      nfc_expect += std::max(Scalar(0), d - cfg.r * cfg.r);
      const Scalar margin = (cfg.r + cfg.alpha) * (cfg.r + cfg.alpha);
      afs_expect += std::max(Scalar(0), margin - d);
    }
    nfc_expect /= static_cast<Scalar>(features.rows());
    afs_expect /= static_cast<Scalar>(features.rows());

    CHECK(nfc_loss(features, protos, cfg) == doctest::Approx(nfc_expect).epsilon(1e-12));
    CHECK(afs_loss(features, protos, cfg) == doctest::Approx(afs_expect).epsilon(1e-12));
  }
}

TEST_CASE("compactness loss is nonincreasing in the radius") {
  Rng rng(3);
  const PrototypeSet protos = spread_prototypes(rng, 5, 4, 1.0);
  const Mat features = random_mat(rng, 9, 4, 1.0);
  LossConfig cfg;
  Scalar prev = std::numeric_limits<Scalar>::infinity();
  for (const Scalar r : {0.01, 0.1, 0.5, 1.0, 2.0, 5.0}) {
    cfg.r = r;
    const Scalar loss = nfc_loss(features, protos, cfg);
    CHECK(loss <= prev);
    prev = loss;
  }
  CHECK(prev == 0.0);  // radius large enough swallows everything
}

TEST_CASE("separation loss is nondecreasing in the margin relaxation") {
  Rng rng(4);
  const PrototypeSet protos = spread_prototypes(rng, 5, 4, 1.0);
  const Mat features = random_mat(rng, 9, 4, 1.0);
  LossConfig cfg;
  cfg.r = 0.2;
  Scalar prev = 0;
  for (const Scalar a : {0.01, 0.1, 0.5, 1.0, 3.0}) {
    cfg.alpha = a;
    const Scalar loss = afs_loss(features, protos, cfg);
    CHECK(loss >= prev);
    prev = loss;
  }
}

TEST_CASE("total is exactly linear in the segmentation weight") {
  LossConfig cfg;
  const Scalar nfc = 0.37, afs = 1.21, seg = 0.048;
  cfg.lambda = 1.0;
  const Scalar at_one = total_loss(nfc, afs, seg, cfg);
  cfg.lambda = 3.0;
  const Scalar at_three = total_loss(nfc, afs, seg, cfg);
  cfg.lambda = 0.0;
  const Scalar at_zero = total_loss(nfc, afs, seg, cfg);
  CHECK(at_zero == nfc + afs);
  CHECK(at_one == nfc + afs + 1.0 * seg);
  CHECK(at_three == nfc + afs + 3.0 * seg);
}

TEST_CASE("non-finite components abort with the component named") {
  LossConfig cfg;
  const Scalar bad = std::numeric_limits<Scalar>::quiet_NaN();
  auto names = [&](Scalar n, Scalar a, Scalar s, const char* needle) {
    try {
      total_loss(n, a, s, cfg);
    } catch (const TrainingError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
  };
  CHECK(names(bad, 0, 0, "nfc"));
  CHECK(names(0, bad, 0, "afs"));
  CHECK(names(0, 0, bad, "seg"));
}

TEST_CASE("segmentation loss is the mean squared error") {
  PredictionMap pred(2, 2);
  pred << 0.2, 0.9, 0.4, 0.1;
  PixelMask mask(2, 2);
  mask << 0, 1, 0, 0;
  const Scalar expect =
      (0.2 * 0.2 + 0.1 * 0.1 + 0.4 * 0.4 + 0.1 * 0.1) / 4.0;
  CHECK(seg_loss(pred, mask) == doctest::Approx(expect).epsilon(1e-12));

  PixelMask wrong(3, 2);
  wrong.setZero();
  CHECK_THROWS_AS(seg_loss(pred, wrong), ShapeError);
}

TEST_CASE("hinge gradients match finite differences away from kinks") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(500, 2, seed));
    const PrototypeSet protos = spread_prototypes(rng, 4, 3, 2.0);
    Mat features = random_mat(rng, 6, 3, 2.0);
    LossConfig cfg;
    cfg.r = 0.5;
    cfg.alpha = 0.3;

    // Nudge any feature whose hinge argument sits near zero, where the
    // subgradient convention and finite differences legitimately disagree.
    auto clear_of_kinks = [&](const Mat& f) {
      for (Eigen::Index n = 0; n < f.rows(); ++n) {
        Scalar d = std::numeric_limits<Scalar>::infinity();
        for (Eigen::Index i = 0; i < protos.count(); ++i)
          d = std::min(d, (protos.anchors.row(i) - f.row(n)).squaredNorm());
        if (std::abs(d - cfg.r * cfg.r) < 1e-3) return false;
        const Scalar margin = (cfg.r + cfg.alpha) * (cfg.r + cfg.alpha);
        if (std::abs(margin - d) < 1e-3) return false;
      }
      return true;
    };
    while (!clear_of_kinks(features)) features = random_mat(rng, 6, 3, 2.0);

    {
      auto objective = [&] { return nfc_loss(features, protos, LossConfig{cfg}); };
      NearestAnchorActs acts;
      nfc_loss(features, protos, cfg, &acts);
      const Mat grad = nfc_loss_backward(acts, protos, cfg);
      CHECK(max_grad_err(objective, features, grad) < 1e-4);
    }
    {
      auto objective = [&] { return afs_loss(features, protos, LossConfig{cfg}); };
      NearestAnchorActs acts;
      afs_loss(features, protos, cfg, &acts);
      const Mat grad = afs_loss_backward(acts, protos, cfg);
      CHECK(max_grad_err(objective, features, grad) < 1e-4);
    }
  }
}

TEST_CASE("segmentation gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(500, 3, seed));
    PredictionMap pred = testutil::random_map(rng, 4, 5);
    PixelMask mask = PixelMask::Zero(4, 5);
    for (Eigen::Index x = 0; x < 5; ++x)
      for (Eigen::Index y = 0; y < 4; ++y)
        mask(y, x) = rng.bernoulli(0.3) ? 1 : 0;

    auto objective = [&] { return seg_loss(pred, mask); };
    const PredictionMap grad = seg_loss_backward(pred, mask);
    CHECK(max_grad_err(objective, pred, grad) < 1e-4);
  }
}

TEST_CASE("loss configuration validates its ranges") {
  LossConfig cfg;
  cfg.r = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = LossConfig{};
  cfg.alpha = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = LossConfig{};
  cfg.lambda = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(LossConfig{}.validate());
}

TEST_SUITE_END();
