#include "doctest.h"
#include "oracle_helpers.hpp"
#include "vtfusion/synth.hpp"

using namespace vtf;

TEST_SUITE_BEGIN("synth");

namespace {

// The contract every generator must keep: shape preserved, values in [0,1],
// and untouched pixels bit-identical outside the mask.
void check_sound(const Image& src, const SynthResult& res) {
  REQUIRE(res.image.same_shape(src));
  REQUIRE(res.mask.rows() == src.rows());
  REQUIRE(res.mask.cols() == src.cols());
  int mask_pixels = 0;
  for (Eigen::Index x = 0; x < src.cols(); ++x)
    for (Eigen::Index y = 0; y < src.rows(); ++y) {
      bool changed = false;
      for (int c = 0; c < 3; ++c) {
        const Scalar v = res.image.ch[c](y, x);
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
        if (v != src.ch[c](y, x)) changed = true;
      }
      if (res.mask(y, x) != 0) ++mask_pixels;
      if (changed) REQUIRE(res.mask(y, x) != 0);
    }
  REQUIRE(mask_pixels > 0);
}

}  // namespace

TEST_CASE("every generator is sound over many seeded draws") {
  SynthConfig cfg;
  Rng img_rng(1);
  const Image src = testutil::random_image(img_rng, 48, 40);
  using Fn = SynthResult (*)(const Image&, const SynthConfig&, Rng&,
                             const PixelMask*);
  const Fn fns[] = {synth_misplaced, synth_blurry, synth_crack, synth_noise,
                    synth_combined};
  for (const Fn fn : fns)
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      Rng rng(derive_seed(7, 0x7465, seed));
      const SynthResult res = fn(src, cfg, rng, nullptr);
      check_sound(src, res);
    }
}

TEST_CASE("seed replay is bit exact") {
  SynthConfig cfg;
  Rng img_rng(2);
  const Image src = testutil::random_image(img_rng, 32, 32);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Rng r1(derive_seed(9, 0x72, seed)), r2(derive_seed(9, 0x72, seed));
    const SynthResult a = synthesize_random_type(src, cfg, r1);
    const SynthResult b = synthesize_random_type(src, cfg, r2);
    CHECK(a.anomaly_type == b.anomaly_type);
    CHECK(fingerprint(a.image) == fingerprint(b.image));
    CHECK((a.mask == b.mask).all());
  }
}

TEST_CASE("dispatch honors the configured type") {
  SynthConfig cfg;
  Rng img_rng(3);
  const Image src = testutil::random_image(img_rng, 32, 32);
  for (const auto type :
       {AnomalyType::misplaced, AnomalyType::blurry, AnomalyType::crack,
        AnomalyType::noise, AnomalyType::combined}) {
    cfg.anomaly_type = type;
    Rng rng(42);
    const SynthResult res = synthesize(src, cfg, rng);
    CHECK(res.anomaly_type == type);
    check_sound(src, res);
  }
}

TEST_CASE("foreground mask restricts the altered region") {
  SynthConfig cfg;
  Rng img_rng(4);
  const Image src = testutil::random_image(img_rng, 40, 40);
  PixelMask fg = PixelMask::Zero(40, 40);
  fg.block(0, 0, 20, 40) = 1;  // top half only
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(derive_seed(5, 0x6667, seed));
    const SynthResult res = synthesize_random_type(src, cfg, rng, &fg);
    check_sound(src, res);
    for (Eigen::Index x = 0; x < 40; ++x)
      for (Eigen::Index y = 20; y < 40; ++y) CHECK(res.mask(y, x) == 0);
  }
}

TEST_CASE("blur actually smooths inside the region") {
  SynthConfig cfg;
  cfg.region_area_fraction = {0.2, 0.3};
  Rng img_rng(6);
  const Image src = testutil::random_image(img_rng, 48, 48);
  Rng rng(77);
  const SynthResult res = synth_blurry(src, cfg, rng);
  // Local variance inside the blurred region must drop.
  Scalar var_src = 0, var_out = 0;
  int n = 0;
  for (Eigen::Index x = 1; x < 47; ++x)
    for (Eigen::Index y = 1; y < 47; ++y) {
      if (res.mask(y, x) == 0) continue;
      for (int c = 0; c < 3; ++c) {
        const Scalar ds = src.ch[c](y, x) - src.ch[c](y, x - 1);
        const Scalar uo = res.image.ch[c](y, x) - res.image.ch[c](y, x - 1);
        var_src += ds * ds;
        var_out += uo * uo;
      }
      ++n;
    }
  REQUIRE(n > 10);
  CHECK(var_out < var_src * 0.8);
}

TEST_CASE("noise kinds respect their sign contract") {
  SynthConfig cfg;
  cfg.region_area_fraction = {0.2, 0.3};
  cfg.noise_kind = NoiseKind::positive;
  Rng img_rng(8);
  const Image src = Image::constant(32, 32, 0.4);
  Rng rng(3);
  const SynthResult res = synth_noise(src, cfg, rng);
  for (Eigen::Index x = 0; x < 32; ++x)
    for (Eigen::Index y = 0; y < 32; ++y)
      if (res.mask(y, x) != 0)
        for (int c = 0; c < 3; ++c)
          CHECK(res.image.ch[c](y, x) >= src.ch[c](y, x) - 1e-12);
}

TEST_CASE("invalid configuration is rejected") {
  SynthConfig cfg;
  cfg.region_area_fraction = {0.5, 0.1};  // inverted bounds
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  SynthConfig cfg2;
  cfg2.region_count = 0;
  CHECK_THROWS_AS(cfg2.validate(), ConfigError);
}

TEST_CASE("type names round trip") {
  for (const auto type :
       {AnomalyType::misplaced, AnomalyType::blurry, AnomalyType::crack,
        AnomalyType::noise, AnomalyType::combined})
    CHECK(anomaly_type_from_string(to_string(type)) == type);
  CHECK_THROWS_AS(anomaly_type_from_string("sparkly"), ConfigError);
}

TEST_SUITE_END();
