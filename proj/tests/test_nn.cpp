#include "doctest.h"
#include "oracle_helpers.hpp"
#include "vtfusion/nn.hpp"

using namespace vtf;
using testutil::max_grad_err;
using testutil::random_map;
using testutil::random_mat;

TEST_SUITE_BEGIN("nn");

namespace {

// Scalar objective <W, Y> for gradient checking matrix-valued forwards.
Scalar dot_objective(const Mat& weight, const Mat& y) {
  return (weight.array() * y.array()).sum();
}

}  // namespace

TEST_CASE("linear gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(derive_seed(100, 1, seed));
    nn::Linear lin;
    lin.init(4, 3, rng, 0.5);
    Mat x = random_mat(rng, 6, 4);
    const Mat w = random_mat(rng, 6, 3);

    auto objective = [&] { return dot_objective(w, lin.forward(x)); };
    lin.gW.setZero();
    lin.gb.setZero();
    const Mat dx = lin.backward(x, w);
    CHECK(max_grad_err(objective, x, dx) < 1e-4);
    CHECK(max_grad_err(objective, lin.W, lin.gW) < 1e-4);
    CHECK(max_grad_err(objective, lin.b, lin.gb) < 1e-4);
  }
}

TEST_CASE("identity-initialized linear is the identity") {
  nn::Linear lin;
  lin.init_identity(5);
  Rng rng(3);
  const Mat x = random_mat(rng, 7, 5);
  CHECK((lin.forward(x) - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("conv3x3 matches a direct sliding-window oracle") {
  Rng rng(9);
  const Eigen::Index h = 5, w = 4, in_c = 2, out_c = 3;
  nn::Conv3x3 conv;
  conv.init(in_c, out_c, rng, 0.4);
  const Mat x = random_mat(rng, h * w, in_c);
  const Mat y = conv.forward(x, h, w);
  REQUIRE(y.rows() == h * w);
  REQUIRE(y.cols() == out_c);

  for (Eigen::Index yy = 0; yy < h; ++yy)
    for (Eigen::Index xx = 0; xx < w; ++xx)
      for (Eigen::Index oc = 0; oc < out_c; ++oc) {
        Scalar acc = conv.b(oc, 0);
        for (Eigen::Index dy = -1; dy <= 1; ++dy)
          for (Eigen::Index dx = -1; dx <= 1; ++dx) {
            const Eigen::Index sy = yy + dy, sx = xx + dx;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
            const Eigen::Index tap = (dy + 1) * 3 + (dx + 1);
            for (Eigen::Index ic = 0; ic < in_c; ++ic)
              acc += x(sy * w + sx, ic) * conv.W(tap * in_c + ic, oc);
          }
        CHECK(std::abs(y(yy * w + xx, oc) - acc) < 1e-12);
      }
}

TEST_CASE("conv3x3 gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(derive_seed(100, 2, seed));
    const Eigen::Index h = 4, w = 5;
    nn::Conv3x3 conv;
    conv.init(2, 2, rng, 0.4);
    Mat x = random_mat(rng, h * w, 2);
    const Mat dy = random_mat(rng, h * w, 2);

    auto objective = [&] { return dot_objective(dy, conv.forward(x, h, w)); };
    nn::Conv3x3::Acts acts;
    conv.forward(x, h, w, &acts);
    conv.gW.setZero();
    conv.gb.setZero();
    const Mat dx = conv.backward(acts, dy, h, w);
    CHECK(max_grad_err(objective, x, dx) < 1e-4);
    CHECK(max_grad_err(objective, conv.W, conv.gW) < 1e-4);
    CHECK(max_grad_err(objective, conv.b, conv.gb) < 1e-4);
  }
}

TEST_CASE("instance norm output is standardized and gradients check") {
  Rng rng(15);
  nn::InstanceNorm norm;
  norm.init(3);
  norm.gamma = random_mat(rng, 3, 1).array() + 1.5;
  norm.beta = random_mat(rng, 3, 1);
  Mat x = random_mat(rng, 12, 3, 2.0);

  nn::InstanceNorm::Acts acts;
  const Mat y = norm.forward(x, &acts);
  for (Eigen::Index c = 0; c < 3; ++c) {
    const Scalar mean = acts.xhat.col(c).mean();
    const Scalar var =
        acts.xhat.col(c).array().square().mean() - mean * mean;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }

  const Mat dy = random_mat(rng, 12, 3);
  auto objective = [&] { return dot_objective(dy, norm.forward(x)); };
  norm.ggamma.setZero();
  norm.gbeta.setZero();
  const Mat dx = norm.backward(acts, dy);
  CHECK(max_grad_err(objective, x, dx) < 1e-4);
  CHECK(max_grad_err(objective, norm.gamma, norm.ggamma) < 1e-4);
  CHECK(max_grad_err(objective, norm.beta, norm.gbeta) < 1e-4);
  (void)y;
}

TEST_CASE("softmax rows sum to one and gradients check") {
  Rng rng(22);
  Mat x = random_mat(rng, 6, 5, 2.0);
  const Mat a = nn::softmax_rows(x);
  for (Eigen::Index r = 0; r < 6; ++r)
    CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-12);

  const Mat dy = random_mat(rng, 6, 5);
  auto objective = [&] { return dot_objective(dy, nn::softmax_rows(x)); };
  const Mat dx = nn::softmax_rows_backward(a, dy);
  CHECK(max_grad_err(objective, x, dx) < 1e-4);
}

TEST_CASE("row normalization gradients check and zero rows pass") {
  Rng rng(23);
  Mat x = random_mat(rng, 5, 4);
  const Mat dy = random_mat(rng, 5, 4);
  auto objective = [&] { return dot_objective(dy, nn::normalize_rows(x)); };
  const Mat dx = nn::normalize_rows_backward(x, dy);
  CHECK(max_grad_err(objective, x, dx) < 1e-4);

  Mat zero = Mat::Zero(2, 3);
  CHECK(nn::normalize_rows(zero).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("activation backwards match finite differences") {
  Rng rng(24);
  Mat x = random_mat(rng, 4, 6);
  const Mat dy = random_mat(rng, 4, 6);

  {
    auto objective = [&] { return dot_objective(dy, nn::tanh_op(x)); };
    const Mat dx = nn::tanh_backward(nn::tanh_op(x), dy);
    CHECK(max_grad_err(objective, x, dx) < 1e-4);
  }
  {
    // Keep away from the rectifier kink.
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        if (std::abs(x(i, j)) < 1e-3) x(i, j) = 0.1;
    auto objective = [&] { return dot_objective(dy, nn::relu(x)); };
    const Mat dx = nn::relu_backward(x, dy);
    CHECK(max_grad_err(objective, x, dx) < 1e-4);
  }
  {
    PredictionMap m = random_map(rng, 4, 6);
    const PredictionMap dm = random_map(rng, 4, 6);
    auto objective = [&] { return (dm * nn::sigmoid(m)).sum(); };
    const PredictionMap dx = nn::sigmoid_backward(nn::sigmoid(m), dm);
    CHECK(max_grad_err(objective, m, dx) < 1e-4);
  }
}

TEST_CASE("pooling and upsampling are exact adjoints") {
  Rng rng(25);
  const Eigen::Index h = 5, w = 7, c = 3;
  // <pool(x), y> == <x, pool_backward(y)> for all x, y.
  {
    const Mat x = random_mat(rng, h * w, c);
    const Mat y =
        random_mat(rng, nn::pooled_extent(h) * nn::pooled_extent(w), c);
    const Scalar lhs = dot_objective(y, nn::avg_pool2(x, h, w));
    const Scalar rhs = dot_objective(x, nn::avg_pool2_backward(y, h, w));
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
  {
    const Eigen::Index oh = 9, ow = 11;
    const Mat x = random_mat(rng, h * w, c);
    const Mat y = random_mat(rng, oh * ow, c);
    const Scalar lhs = dot_objective(y, nn::upsample_nearest(x, h, w, oh, ow));
    const Scalar rhs =
        dot_objective(x, nn::upsample_nearest_backward(y, h, w, oh, ow));
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
  {
    const Eigen::Index oh = 13, ow = 10;
    const PredictionMap x = random_map(rng, h, w);
    const PredictionMap y = random_map(rng, oh, ow);
    const Scalar lhs = (y * nn::upsample_bilinear(x, oh, ow)).sum();
    const Scalar rhs = (x * nn::upsample_bilinear_backward(y, h, w)).sum();
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("avg_pool2 averages ceil-mode windows") {
  Mat x(3 * 3, 1);
  for (Eigen::Index i = 0; i < 9; ++i) x(i, 0) = static_cast<Scalar>(i);
  const Mat y = nn::avg_pool2(x, 3, 3);
  REQUIRE(y.rows() == 4);
  // Grid values: 0 1 2 / 3 4 5 / 6 7 8; windows at (0,0),(0,2),(2,0),(2,2).
  CHECK(y(0, 0) == doctest::Approx((0 + 1 + 3 + 4) / 4.0));
  CHECK(y(1, 0) == doctest::Approx((2 + 5) / 2.0));
  CHECK(y(2, 0) == doctest::Approx((6 + 7) / 2.0));
  CHECK(y(3, 0) == doctest::Approx(8.0));
}

TEST_CASE("adam moves parameters against the gradient") {
  Mat p = Mat::Constant(2, 2, 1.0);
  Mat g = Mat::Constant(2, 2, 0.5);
  nn::Adam adam;
  adam.add_group({{"p", &p, &g}}, 0.1);
  adam.step();
  // First bias-corrected step is lr * sign(grad) up to eps.
  CHECK(p(0, 0) == doctest::Approx(1.0 - 0.1).epsilon(1e-3));
  const Scalar after_one = p(0, 0);
  adam.step();
  CHECK(p(0, 0) < after_one);
}

TEST_SUITE_END();
