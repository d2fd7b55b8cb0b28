// Minimal trainable-layer toolkit: dense layers, 3x3 convolution over
// channels-last token matrices, instance normalization, pooling/upsampling,
// softmax, and Adam. Every layer exposes an explicit forward that fills an
// activation record and a backward that accumulates parameter gradients, so
// one module instance can serve several forwards per step.
//
// Token layout convention: a feature map of grid (h, w) with C channels is an
// N x C matrix with N = h*w and token n = y*w + x.

#pragma once

#include <string>
#include <vector>

#include "vtfusion/common.hpp"
#include "vtfusion/rng.hpp"

namespace vtf::nn {

struct ParamRef {
  std::string name;
  Mat* value = nullptr;
  Mat* grad = nullptr;
};

class ParamRegistry {
 public:
  void add(const std::string& name, Mat& value, Mat& grad) {
    refs_.push_back({name, &value, &grad});
  }
  const std::vector<ParamRef>& refs() const { return refs_; }
  std::size_t size() const { return refs_.size(); }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& r : refs_) n += r.value->size();
    return n;
  }
  void zero_grads() {
    for (auto& r : refs_) r.grad->setZero();
  }
  void scale_grads(Scalar s) {
    for (auto& r : refs_) *r.grad *= s;
  }
  std::uint64_t values_fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& r : refs_) h = fingerprint(*r.value, h);
    return h;
  }
  const ParamRef* find(const std::string& name) const {
    for (const auto& r : refs_)
      if (r.name == name) return &r;
    return nullptr;
  }

 private:
  std::vector<ParamRef> refs_;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

// Y = X W + 1 b^T. A 1x1 convolution over tokens is exactly this layer.
struct Linear {
  Mat W;  // in x out
  Mat b;  // out x 1
  Mat gW, gb;

  void init(Eigen::Index in, Eigen::Index out, Rng& rng, Scalar weight_std);
  void init_identity(Eigen::Index dim);  // W = I, b = 0
  Mat forward(const Mat& X) const;
  // Accumulates gW/gb and returns dX. X must be the forward input.
  Mat backward(const Mat& X, const Mat& dY);
  void register_params(ParamRegistry& reg, const std::string& prefix);
};

// 3x3 convolution, zero padding, stride 1, channels-last tokens.
struct Conv3x3 {
  Eigen::Index in_c = 0, out_c = 0;
  Mat W;  // (9*in_c) x out_c
  Mat b;  // out_c x 1
  Mat gW, gb;

  struct Acts {
    Mat cols;  // N x (9*in_c) im2col buffer
  };

  void init(Eigen::Index in, Eigen::Index out, Rng& rng, Scalar weight_std);
  Mat forward(const Mat& X, Eigen::Index h, Eigen::Index w,
              Acts* acts = nullptr) const;
  Mat backward(const Acts& acts, const Mat& dY, Eigen::Index h,
               Eigen::Index w);
  void register_params(ParamRegistry& reg, const std::string& prefix);
};

// Per-channel normalization over the token axis with learnable gain/bias.
struct InstanceNorm {
  Mat gamma;  // C x 1
  Mat beta;   // C x 1
  Mat ggamma, gbeta;
  static constexpr Scalar kEps = 1e-5;

  struct Acts {
    Mat xhat;     // N x C normalized input
    Vec inv_std;  // C
  };

  void init(Eigen::Index channels);
  Mat forward(const Mat& X, Acts* acts = nullptr) const;
  Mat backward(const Acts& acts, const Mat& dY);
  void register_params(ParamRegistry& reg, const std::string& prefix);
};

// ---------------------------------------------------------------------------
// Stateless ops (forward + matching backward)
// ---------------------------------------------------------------------------

Mat relu(const Mat& X);
Mat relu_backward(const Mat& X, const Mat& dY);

Mat tanh_op(const Mat& X);
Mat tanh_backward(const Mat& Y, const Mat& dY);  // Y = tanh(X)

PredictionMap sigmoid(const PredictionMap& X);
PredictionMap sigmoid_backward(const PredictionMap& Y, const PredictionMap& dY);

Mat softmax_rows(const Mat& S);
Mat softmax_rows_backward(const Mat& A, const Mat& dA);  // A = softmax(S)

// L2-normalize each row; zero rows pass through unchanged.
Mat normalize_rows(const Mat& X);
Mat normalize_rows_backward(const Mat& X, const Mat& dY);

// 2x2 mean pooling with partial (ceil-mode) edge windows.
Mat avg_pool2(const Mat& X, Eigen::Index h, Eigen::Index w);
Mat avg_pool2_backward(const Mat& dY, Eigen::Index h, Eigen::Index w);
inline Eigen::Index pooled_extent(Eigen::Index n) { return (n + 1) / 2; }

// Nearest-neighbour upsample of tokens from (h, w) to (out_h, out_w).
Mat upsample_nearest(const Mat& X, Eigen::Index h, Eigen::Index w,
                     Eigen::Index out_h, Eigen::Index out_w);
Mat upsample_nearest_backward(const Mat& dY, Eigen::Index h, Eigen::Index w,
                              Eigen::Index out_h, Eigen::Index out_w);

// Bilinear upsample of a single-channel map (pixel-center alignment, matches
// resize_bilinear) and its adjoint.
PredictionMap upsample_bilinear(const PredictionMap& X, Eigen::Index out_h,
                                Eigen::Index out_w);
PredictionMap upsample_bilinear_backward(const PredictionMap& dY,
                                         Eigen::Index in_h, Eigen::Index in_w);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct Adam {
  Scalar beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  struct Slot {
    ParamRef ref;
    Scalar lr = 0;
    Mat m, v;
  };

  void add_group(const std::vector<ParamRef>& refs, Scalar lr);
  void step();  // consumes current grads; does not zero them
  const std::vector<Slot>& slots() const { return slots_; }

 private:
  std::vector<Slot> slots_;
  long t_ = 0;
};

}  // namespace vtf::nn
