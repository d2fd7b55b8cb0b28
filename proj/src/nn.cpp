#include "vtfusion/nn.hpp"

#include <cmath>

namespace vtf::nn {

namespace {

Mat gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                    Scalar stddev) {
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.normal(0.0, stddev);
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

void Linear::init(Eigen::Index in, Eigen::Index out, Rng& rng,
                  Scalar weight_std) {
  W = gaussian_matrix(in, out, rng, weight_std);
  b = Mat::Zero(out, 1);
  gW = Mat::Zero(in, out);
  gb = Mat::Zero(out, 1);
}

void Linear::init_identity(Eigen::Index dim) {
  W = Mat::Identity(dim, dim);
  b = Mat::Zero(dim, 1);
  gW = Mat::Zero(dim, dim);
  gb = Mat::Zero(dim, 1);
}

Mat Linear::forward(const Mat& X) const {
  Mat Y = X * W;
  Y.rowwise() += b.col(0).transpose();
  return Y;
}

Mat Linear::backward(const Mat& X, const Mat& dY) {
  gW.noalias() += X.transpose() * dY;
  gb += dY.colwise().sum().transpose();
  return dY * W.transpose();
}

void Linear::register_params(ParamRegistry& reg, const std::string& prefix) {
  reg.add(prefix + ".W", W, gW);
  reg.add(prefix + ".b", b, gb);
}

// ---------------------------------------------------------------------------
// Conv3x3
// ---------------------------------------------------------------------------

void Conv3x3::init(Eigen::Index in, Eigen::Index out, Rng& rng,
                   Scalar weight_std) {
  in_c = in;
  out_c = out;
  W = gaussian_matrix(9 * in, out, rng, weight_std);
  b = Mat::Zero(out, 1);
  gW = Mat::Zero(9 * in, out);
  gb = Mat::Zero(out, 1);
}

Mat Conv3x3::forward(const Mat& X, Eigen::Index h, Eigen::Index w,
                     Acts* acts) const {
  const Eigen::Index n = h * w;
  Mat cols = Mat::Zero(n, 9 * in_c);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      const Eigen::Index tok = y * w + x;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const Eigen::Index yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const Eigen::Index k = (dy + 1) * 3 + (dx + 1);
          cols.block(tok, k * in_c, 1, in_c) =
              X.block(yy * w + xx, 0, 1, in_c);
        }
    }
  Mat Y = cols * W;
  Y.rowwise() += b.col(0).transpose();
  if (acts) acts->cols = std::move(cols);
  return Y;
}

Mat Conv3x3::backward(const Acts& acts, const Mat& dY, Eigen::Index h,
                      Eigen::Index w) {
  gW.noalias() += acts.cols.transpose() * dY;
  gb += dY.colwise().sum().transpose();
  const Mat dcols = dY * W.transpose();
  Mat dX = Mat::Zero(h * w, in_c);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      const Eigen::Index tok = y * w + x;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const Eigen::Index yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const Eigen::Index k = (dy + 1) * 3 + (dx + 1);
          dX.block(yy * w + xx, 0, 1, in_c) +=
              dcols.block(tok, k * in_c, 1, in_c);
        }
    }
  return dX;
}

void Conv3x3::register_params(ParamRegistry& reg, const std::string& prefix) {
  reg.add(prefix + ".W", W, gW);
  reg.add(prefix + ".b", b, gb);
}

// ---------------------------------------------------------------------------
// InstanceNorm
// ---------------------------------------------------------------------------

void InstanceNorm::init(Eigen::Index channels) {
  gamma = Mat::Ones(channels, 1);
  beta = Mat::Zero(channels, 1);
  ggamma = Mat::Zero(channels, 1);
  gbeta = Mat::Zero(channels, 1);
}

Mat InstanceNorm::forward(const Mat& X, Acts* acts) const {
  const Eigen::Index n = X.rows(), c = X.cols();
  Mat xhat(n, c);
  Vec inv_std(c);
  for (Eigen::Index j = 0; j < c; ++j) {
    const Scalar mean = X.col(j).mean();
    const Scalar var = (X.col(j).array() - mean).square().mean();
    inv_std(j) = Scalar(1) / std::sqrt(var + kEps);
    xhat.col(j) = (X.col(j).array() - mean) * inv_std(j);
  }
  Mat Y = xhat.array().rowwise() * gamma.col(0).transpose().array();
  Y.array().rowwise() += beta.col(0).transpose().array();
  if (acts) {
    acts->xhat = std::move(xhat);
    acts->inv_std = std::move(inv_std);
  }
  return Y;
}

Mat InstanceNorm::backward(const Acts& acts, const Mat& dY) {
  const Eigen::Index n = dY.rows(), c = dY.cols();
  Mat dX(n, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    const auto xh = acts.xhat.col(j).array();
    const auto dy = dY.col(j).array();
    ggamma(j, 0) += (dy * xh).sum();
    gbeta(j, 0) += dy.sum();
    const auto dxhat = dy * gamma(j, 0);
    const Scalar s1 = dxhat.sum();
    const Scalar s2 = (dxhat * xh).sum();
    dX.col(j) = (acts.inv_std(j) / static_cast<Scalar>(n)) *
                (static_cast<Scalar>(n) * dxhat - s1 - xh * s2);
  }
  return dX;
}

void InstanceNorm::register_params(ParamRegistry& reg,
                                   const std::string& prefix) {
  reg.add(prefix + ".gamma", gamma, ggamma);
  reg.add(prefix + ".beta", beta, gbeta);
}

// ---------------------------------------------------------------------------
// Stateless ops
// ---------------------------------------------------------------------------

Mat relu(const Mat& X) { return X.cwiseMax(Scalar(0)); }

Mat relu_backward(const Mat& X, const Mat& dY) {
  return (X.array() > Scalar(0)).cast<Scalar>() * dY.array();
}

Mat tanh_op(const Mat& X) { return X.array().tanh(); }

Mat tanh_backward(const Mat& Y, const Mat& dY) {
  return dY.array() * (Scalar(1) - Y.array().square());
}

PredictionMap sigmoid(const PredictionMap& X) {
  return Scalar(1) / (Scalar(1) + (-X).exp());
}

PredictionMap sigmoid_backward(const PredictionMap& Y,
                               const PredictionMap& dY) {
  return dY * Y * (Scalar(1) - Y);
}

Mat softmax_rows(const Mat& S) {
  Mat A(S.rows(), S.cols());
  for (Eigen::Index r = 0; r < S.rows(); ++r) {
    const Scalar m = S.row(r).maxCoeff();
    Eigen::ArrayXd e = (S.row(r).array() - m).exp();
    A.row(r) = e / e.sum();
  }
  return A;
}

Mat softmax_rows_backward(const Mat& A, const Mat& dA) {
  Mat dS(A.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    const Scalar dot = (A.row(r).array() * dA.row(r).array()).sum();
    dS.row(r) = A.row(r).array() * (dA.row(r).array() - dot);
  }
  return dS;
}

Mat normalize_rows(const Mat& X) {
  Mat Y = X;
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const Scalar norm = X.row(r).norm();
    if (norm > Scalar(0)) Y.row(r) /= norm;
  }
  return Y;
}

Mat normalize_rows_backward(const Mat& X, const Mat& dY) {
  Mat dX(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const Scalar norm = X.row(r).norm();
    if (norm <= Scalar(0)) {
      dX.row(r) = dY.row(r);
      continue;
    }
    const auto u = X.row(r) / norm;
    const Scalar along = dY.row(r).dot(u);
    dX.row(r) = (dY.row(r) - along * u) / norm;
  }
  return dX;
}

Mat avg_pool2(const Mat& X, Eigen::Index h, Eigen::Index w) {
  const Eigen::Index oh = pooled_extent(h), ow = pooled_extent(w);
  Mat Y = Mat::Zero(oh * ow, X.cols());
  for (Eigen::Index y = 0; y < oh; ++y)
    for (Eigen::Index x = 0; x < ow; ++x) {
      const Eigen::Index y1 = std::min(2 * y + 2, h);
      const Eigen::Index x1 = std::min(2 * x + 2, w);
      const Eigen::Index count = (y1 - 2 * y) * (x1 - 2 * x);
      for (Eigen::Index yy = 2 * y; yy < y1; ++yy)
        for (Eigen::Index xx = 2 * x; xx < x1; ++xx)
          Y.row(y * ow + x) += X.row(yy * w + xx);
      Y.row(y * ow + x) /= static_cast<Scalar>(count);
    }
  return Y;
}

Mat avg_pool2_backward(const Mat& dY, Eigen::Index h, Eigen::Index w) {
  const Eigen::Index oh = pooled_extent(h), ow = pooled_extent(w);
  Mat dX = Mat::Zero(h * w, dY.cols());
  for (Eigen::Index y = 0; y < oh; ++y)
    for (Eigen::Index x = 0; x < ow; ++x) {
      const Eigen::Index y1 = std::min(2 * y + 2, h);
      const Eigen::Index x1 = std::min(2 * x + 2, w);
      const Eigen::Index count = (y1 - 2 * y) * (x1 - 2 * x);
      for (Eigen::Index yy = 2 * y; yy < y1; ++yy)
        for (Eigen::Index xx = 2 * x; xx < x1; ++xx)
          dX.row(yy * w + xx) += dY.row(y * ow + x) / static_cast<Scalar>(count);
    }
  return dX;
}

Mat upsample_nearest(const Mat& X, Eigen::Index h, Eigen::Index w,
                     Eigen::Index out_h, Eigen::Index out_w) {
  Mat Y(out_h * out_w, X.cols());
  for (Eigen::Index y = 0; y < out_h; ++y) {
    const Eigen::Index sy = std::min(y * h / out_h, h - 1);
    for (Eigen::Index x = 0; x < out_w; ++x) {
      const Eigen::Index sx = std::min(x * w / out_w, w - 1);
      Y.row(y * out_w + x) = X.row(sy * w + sx);
    }
  }
  return Y;
}

Mat upsample_nearest_backward(const Mat& dY, Eigen::Index h, Eigen::Index w,
                              Eigen::Index out_h, Eigen::Index out_w) {
  Mat dX = Mat::Zero(h * w, dY.cols());
  for (Eigen::Index y = 0; y < out_h; ++y) {
    const Eigen::Index sy = std::min(y * h / out_h, h - 1);
    for (Eigen::Index x = 0; x < out_w; ++x) {
      const Eigen::Index sx = std::min(x * w / out_w, w - 1);
      dX.row(sy * w + sx) += dY.row(y * out_w + x);
    }
  }
  return dX;
}

namespace {

struct Bilerp {
  Eigen::Index i0, i1;
  Scalar w0, w1;
};

Bilerp bilerp_axis(Eigen::Index out_i, Eigen::Index in_n, Eigen::Index out_n) {
  Scalar f = (static_cast<Scalar>(out_i) + Scalar(0.5)) *
                 static_cast<Scalar>(in_n) / static_cast<Scalar>(out_n) -
             Scalar(0.5);
  f = std::clamp(f, Scalar(0), static_cast<Scalar>(in_n - 1));
  Bilerp b;
  b.i0 = static_cast<Eigen::Index>(f);
  b.i1 = std::min(b.i0 + 1, in_n - 1);
  b.w1 = f - static_cast<Scalar>(b.i0);
  b.w0 = Scalar(1) - b.w1;
  return b;
}

}  // namespace

PredictionMap upsample_bilinear(const PredictionMap& X, Eigen::Index out_h,
                                Eigen::Index out_w) {
  const Eigen::Index h = X.rows(), w = X.cols();
  PredictionMap Y(out_h, out_w);
  for (Eigen::Index y = 0; y < out_h; ++y) {
    const Bilerp by = bilerp_axis(y, h, out_h);
    for (Eigen::Index x = 0; x < out_w; ++x) {
      const Bilerp bx = bilerp_axis(x, w, out_w);
      Y(y, x) = by.w0 * (bx.w0 * X(by.i0, bx.i0) + bx.w1 * X(by.i0, bx.i1)) +
                by.w1 * (bx.w0 * X(by.i1, bx.i0) + bx.w1 * X(by.i1, bx.i1));
    }
  }
  return Y;
}

PredictionMap upsample_bilinear_backward(const PredictionMap& dY,
                                         Eigen::Index in_h,
                                         Eigen::Index in_w) {
  const Eigen::Index out_h = dY.rows(), out_w = dY.cols();
  PredictionMap dX = PredictionMap::Zero(in_h, in_w);
  for (Eigen::Index y = 0; y < out_h; ++y) {
    const Bilerp by = bilerp_axis(y, in_h, out_h);
    for (Eigen::Index x = 0; x < out_w; ++x) {
      const Bilerp bx = bilerp_axis(x, in_w, out_w);
      const Scalar g = dY(y, x);
      dX(by.i0, bx.i0) += by.w0 * bx.w0 * g;
      dX(by.i0, bx.i1) += by.w0 * bx.w1 * g;
      dX(by.i1, bx.i0) += by.w1 * bx.w0 * g;
      dX(by.i1, bx.i1) += by.w1 * bx.w1 * g;
    }
  }
  return dX;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void Adam::add_group(const std::vector<ParamRef>& refs, Scalar lr) {
  for (const auto& r : refs) {
    Slot s;
    s.ref = r;
    s.lr = lr;
    s.m = Mat::Zero(r.value->rows(), r.value->cols());
    s.v = Mat::Zero(r.value->rows(), r.value->cols());
    slots_.push_back(std::move(s));
  }
}

void Adam::step() {
  ++t_;
  const Scalar bc1 = Scalar(1) - std::pow(beta1, static_cast<Scalar>(t_));
  const Scalar bc2 = Scalar(1) - std::pow(beta2, static_cast<Scalar>(t_));
  for (auto& s : slots_) {
    const Mat& g = *s.ref.grad;
    s.m = beta1 * s.m + (Scalar(1) - beta1) * g;
    s.v = beta2 * s.v.array().matrix() +
          (Scalar(1) - beta2) * g.array().square().matrix();
    const Mat mhat = s.m / bc1;
    const Mat vhat = s.v / bc2;
    s.ref.value->array() -=
        s.lr * mhat.array() / (vhat.array().sqrt() + eps);
  }
}

}  // namespace vtf::nn
