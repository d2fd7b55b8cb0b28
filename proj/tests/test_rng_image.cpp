#include <filesystem>

#include "doctest.h"
#include "oracle_helpers.hpp"
#include "vtfusion/image.hpp"
#include "vtfusion/imageio.hpp"
#include "vtfusion/rng.hpp"

using namespace vtf;

TEST_SUITE_BEGIN("rng_image");

TEST_CASE("rng replay is bit exact") {
  Rng a(12345), b(12345);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next_u64() == b.next_u64());
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal() == b.normal());
  }
}

TEST_CASE("derived seeds differ across streams and indices") {
  const auto s1 = derive_seed(7, 1, 0);
  const auto s2 = derive_seed(7, 2, 0);
  const auto s3 = derive_seed(7, 1, 1);
  CHECK(s1 != s2);
  CHECK(s1 != s3);
  CHECK(s2 != s3);
  CHECK(derive_seed(7, 1, 0) == s1);
}

TEST_CASE("uniform stays in range and covers it") {
  Rng rng(99);
  double lo = 1, hi = 0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("uniform_index is unbiased over a small range") {
  Rng rng(4);
  std::vector<int> counts(5, 0);
  const int draws = 50000;
  for (int i = 0; i < draws; ++i) ++counts[rng.uniform_index(5)];
  for (const int c : counts) {
    CHECK(c > draws / 5 - 800);
    CHECK(c < draws / 5 + 800);
  }
}

TEST_CASE("sample_without_replacement yields distinct indices") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto picks = rng.sample_without_replacement(10, 4);
    CHECK(picks.size() == 4);
    std::sort(picks.begin(), picks.end());
    CHECK(std::adjacent_find(picks.begin(), picks.end()) == picks.end());
    for (const auto p : picks) CHECK(p < 10);
  }
}

TEST_CASE("normal moments are sane") {
  Rng rng(21);
  double sum = 0, sum2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum2 += x * x;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sum2 / n - 1.0) < 0.03);
}

TEST_CASE("bilinear resize preserves constants and is exact at identity") {
  Map2T<Scalar> plane = Map2T<Scalar>::Constant(6, 9, 0.37);
  const auto up = resize_bilinear(plane, 13, 20);
  CHECK(up.rows() == 13);
  CHECK(up.cols() == 20);
  CHECK(((up - 0.37).abs() < 1e-12).all());

  Rng rng(5);
  Map2T<Scalar> noisy(7, 7);
  for (Eigen::Index c = 0; c < 7; ++c)
    for (Eigen::Index r = 0; r < 7; ++r) noisy(r, c) = rng.uniform();
  const auto same = resize_bilinear(noisy, 7, 7);
  CHECK(((same - noisy).abs() < 1e-12).all());
}

TEST_CASE("bilinear resize stays within the input range") {
  Rng rng(6);
  Map2T<Scalar> plane(5, 8);
  for (Eigen::Index c = 0; c < 8; ++c)
    for (Eigen::Index r = 0; r < 5; ++r) plane(r, c) = rng.uniform();
  const auto up = resize_bilinear(plane, 17, 3);
  CHECK(up.maxCoeff() <= plane.maxCoeff() + 1e-12);
  CHECK(up.minCoeff() >= plane.minCoeff() - 1e-12);
}

TEST_CASE("nearest resize of a mask keeps it binary") {
  PixelMask mask = PixelMask::Zero(8, 8);
  mask.block(2, 3, 4, 2) = 1;
  const auto up = resize_nearest(mask, 19, 23);
  CHECK(up.rows() == 19);
  CHECK(((up == 0) || (up == 1)).all());
  CHECK(static_cast<int>((up != 0).count()) > 0);
  const auto same = resize_nearest(mask, 8, 8);
  CHECK((same == mask).all());
}

TEST_CASE("png image round trip is lossless at 8 bits") {
  const auto dir = testutil::temp_dir("png_roundtrip");
  Rng rng(31);
  Image img(17, 23);
  // Paint exact 8-bit levels so encode/decode is the identity.
  for (auto& plane : img.ch)
    for (Eigen::Index c = 0; c < 23; ++c)
      for (Eigen::Index r = 0; r < 17; ++r)
        plane(r, c) = static_cast<Scalar>(rng.uniform_index(256)) / 255.0;
  const auto path = dir + "/img.png";
  write_image_png(path, img);
  const Image back = read_image_png(path);
  CHECK(back.same_shape(img));
  for (int c = 0; c < 3; ++c)
    CHECK((back.ch[c] - img.ch[c]).abs().maxCoeff() < 1e-12);
}

TEST_CASE("mask png round trip binarizes") {
  const auto dir = testutil::temp_dir("mask_roundtrip");
  PixelMask mask = PixelMask::Zero(9, 12);
  mask.block(1, 2, 3, 4) = 1;
  const auto path = dir + "/mask.png";
  write_mask_png(path, mask);
  const PixelMask back = read_mask_png(path);
  CHECK((back == mask).all());
}

TEST_CASE("raw map round trip is bit exact") {
  const auto dir = testutil::temp_dir("map_roundtrip");
  Rng rng(77);
  const PredictionMap map = testutil::random_map(rng, 11, 6, 3.5);
  const auto path = dir + "/map.raw";
  write_map_raw(path, map);
  const PredictionMap back = read_map_raw(path);
  CHECK(fingerprint(back) == fingerprint(map));
}

TEST_CASE("reading a missing file is a data error") {
  CHECK_THROWS_AS(read_image_png("/nonexistent/nowhere.png"), DataError);
  CHECK_THROWS_AS(read_map_raw("/nonexistent/nowhere.raw"), DataError);
}

TEST_SUITE_END();
