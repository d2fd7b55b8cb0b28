#include "doctest.h"
#include "oracle_helpers.hpp"
#include "vtfusion/trainer.hpp"

using namespace vtf;

TEST_SUITE_BEGIN("trainer");

namespace {

BackboneSpec small_spec() {
  BackboneSpec spec;
  spec.levels = {0, 1};
  spec.grid_h = 4;
  spec.grid_w = 4;
  spec.level_dim = 6;
  spec.joint_dim = 5;
  spec.input_h = 32;
  spec.input_w = 32;
  return spec;
}

FusionConfig small_fusion() {
  FusionConfig cfg;
  cfg.attn_embed_dim = 6;
  cfg.residual_channels = 4;
  cfg.seg_channels = 5;
  cfg.seg_scales = {1, 2};
  return cfg;
}

TrainConfig small_train(int iterations) {
  TrainConfig cfg;
  cfg.k_shots = 2;
  cfg.iterations = iterations;
  cfg.batch_size = 2;
  cfg.seed = 99;
  cfg.category = "unittest";
  cfg.object_label = "widget";
  return cfg;
}

std::vector<Image> make_shots(std::uint64_t seed, int k) {
  std::vector<Image> shots;
  Rng rng(seed);
  for (int i = 0; i < k; ++i) shots.push_back(testutil::random_image(rng, 32, 32));
  return shots;
}

}  // namespace

TEST_CASE("train configuration enforces the shot budget") {
  TrainConfig cfg = small_train(10);
  cfg.k_shots = 9;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.k_shots = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_train(10);
  cfg.lr_aie = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_train(10);
  cfg.iterations = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(small_train(0).validate());
}

TEST_CASE("shot count must match the configuration") {
  const auto shots = make_shots(1, 3);
  CHECK_THROWS_AS(train(shots, small_train(1), small_spec(), small_fusion()),
                  ArgumentError);
}

TEST_CASE("zero iterations yields an untrained but complete model") {
  const auto shots = make_shots(2, 2);
  const TrainResult res = train(shots, small_train(0), small_spec(),
                                small_fusion());
  CHECK(res.log.empty());
  CHECK(res.checkpoint.prototypes.frozen);
  CHECK(res.checkpoint.prototypes.count() == 16);
  CHECK(res.checkpoint.prototypes.dim() == 10);
  CHECK(!res.checkpoint.weights.empty());
  // Model is immediately usable.
  const Model model = Model::from_checkpoint(res.checkpoint);
  const Prediction pred = model.predict(shots[0]);
  CHECK(pred.map.rows() == 32);
  CHECK(pred.map.cols() == 32);
  CHECK(std::isfinite(pred.score));
}

TEST_CASE("training is deterministic in the seed") {
  const auto shots = make_shots(3, 2);
  const TrainResult a = train(shots, small_train(12), small_spec(),
                              small_fusion());
  const TrainResult b = train(shots, small_train(12), small_spec(),
                              small_fusion());
  CHECK(a.checkpoint.digest() == b.checkpoint.digest());
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].total == b.log[i].total);
    CHECK(a.log[i].nfc == b.log[i].nfc);
  }

  TrainConfig other = small_train(12);
  other.seed = 100;
  const TrainResult c = train(shots, other, small_spec(), small_fusion());
  CHECK(a.checkpoint.digest() != c.checkpoint.digest());
}

TEST_CASE("frozen state never moves during training") {
  const auto shots = make_shots(4, 2);
  const TrainResult res = train(shots, small_train(25), small_spec(),
                                small_fusion());
  CHECK(res.frozen_digest_start == res.frozen_digest_end);
  CHECK(res.prototype_digest_start == res.prototype_digest_end);
  CHECK(res.prototype_digest_end == res.checkpoint.prototypes.fingerprint());

  // Prototypes are a function of the shots alone, not of the iteration count.
  const TrainResult zero = train(shots, small_train(0), small_spec(),
                                 small_fusion());
  CHECK(zero.checkpoint.prototypes.fingerprint() ==
        res.checkpoint.prototypes.fingerprint());
}

TEST_CASE("training updates the trainable tensors and logs finite losses") {
  const auto shots = make_shots(5, 2);
  const TrainResult before = train(shots, small_train(0), small_spec(),
                                   small_fusion());
  const TrainResult after = train(shots, small_train(20), small_spec(),
                                  small_fusion());
  REQUIRE(after.log.size() == 20);
  for (const auto& e : after.log) {
    CHECK(std::isfinite(e.total));
    CHECK(e.total >= 0.0);
    CHECK(e.total ==
          doctest::Approx(e.nfc + e.afs + e.seg).epsilon(1e-12));
  }

  // At least one tensor must have moved.
  REQUIRE(before.checkpoint.weights.size() == after.checkpoint.weights.size());
  bool moved = false;
  for (std::size_t i = 0; i < before.checkpoint.weights.size(); ++i)
    if (fingerprint(before.checkpoint.weights[i].second) !=
        fingerprint(after.checkpoint.weights[i].second))
      moved = true;
  CHECK(moved);
}

TEST_CASE("prediction reports the map maximum at the query resolution") {
  const auto shots = make_shots(6, 2);
  const TrainResult res = train(shots, small_train(5), small_spec(),
                                small_fusion());
  const Model model = Model::from_checkpoint(res.checkpoint);
  Rng rng(7);
  const Image query = testutil::random_image(rng, 48, 40);  // off-spec size
  const Prediction pred = model.predict(query);
  CHECK(pred.map.rows() == 48);
  CHECK(pred.map.cols() == 40);
  CHECK(pred.score == pred.map.maxCoeff());
  CHECK(pred.map.minCoeff() >= 0.0);
  CHECK(pred.map.maxCoeff() <= 1.0);

  // One-off helper agrees with the assembled model.
  const Prediction direct = predict(res.checkpoint, query);
  CHECK(direct.score == pred.score);
  CHECK(fingerprint(direct.map) == fingerprint(pred.map));
}

TEST_CASE("a corrupted checkpoint weight list is rejected on load") {
  const auto shots = make_shots(8, 2);
  TrainResult res = train(shots, small_train(2), small_spec(), small_fusion());
  ModelCheckpoint bad = res.checkpoint;
  bad.weights.pop_back();
  CHECK_THROWS_AS(Model::from_checkpoint(bad), LoadError);

  bad = res.checkpoint;
  bad.weights[0].first = "no_such_tensor";
  CHECK_THROWS_AS(Model::from_checkpoint(bad), LoadError);

  bad = res.checkpoint;
  bad.weights[0].second = Mat::Zero(1, 1);
  CHECK_THROWS_AS(Model::from_checkpoint(bad), LoadError);
}

TEST_SUITE_END();
