// Multimodal prediction fusion: per-map spatial self-attention, residual
// fusion of the vision and text maps, and a pyramid segmentation head that
// upsamples to image resolution.
//
// Initialization is arranged so the whole path degrades gracefully before
// training: each attention module starts as the identity, the fusion block
// starts as channel averaging, so the fused map begins as (m_v + m_t)/2.
#pragma once

#include <vector>

#include "vtfusion/common.hpp"
#include "vtfusion/nn.hpp"
#include "vtfusion/rng.hpp"

namespace vtf {

struct FusionConfig {
  Eigen::Index attn_embed_dim = 16;    // token width inside the attention
  Eigen::Index residual_channels = 8;  // hidden width of the fusion block
  Eigen::Index seg_channels = 16;      // feature width of the pyramid
  std::vector<int> seg_scales = {1, 2, 4};  // ascending powers of two

  void validate() const;  // throws ConfigError
};

// Single-head spatial self-attention over one prediction map. Tokens are the
// map pixels lifted to attn_embed_dim channels; no positional encoding. The
// output projection starts at zero, making the module the identity at init.
struct MapAttention {
  nn::Linear lift;  // 1 -> E, starts as embedding into the first channel
  nn::Linear wq, wk, wv;
  nn::Linear wo;    // E -> E, zero-initialized (residual branch off at init)
  nn::Linear down;  // E -> 1, starts as projection of the first channel

  struct Acts {
    Mat x;       // N×1 input column
    Mat lifted;  // N×E
    Mat q, k, v;
    Mat attn;    // N×N row-softmax attention
    Mat ctx;     // attn · v
    Mat post;    // lifted + output projection (input to `down`)
  };

  void init(Eigen::Index embed_dim, Rng& rng);
  Mat forward(const Mat& x_col, Acts* acts = nullptr) const;
  Mat backward(const Acts& acts, const Mat& d_out);
  void register_params(nn::ParamRegistry& reg, const std::string& prefix);
};

// Residual block fusing the two attended maps into one channel. Built from
// per-token (1×1) operations only, so it commutes with spatial permutations
// — all spatial mixing belongs to the attention and the pyramid.
struct ResidualFuse {
  nn::Linear conv_in;   // 2 -> C
  nn::InstanceNorm norm;
  nn::Linear conv_out;  // C -> 1, zero-initialized
  nn::Linear skip;      // 2 -> 1, starts as channel mean

  struct Acts {
    Mat x;        // N×2
    Mat pre;      // conv_in output
    nn::InstanceNorm::Acts norm_acts;
    Mat normed;   // norm output (pre-rectifier)
    Mat rectified;
  };

  void init(Eigen::Index channels, Rng& rng);
  Mat forward(const Mat& x2, Acts* acts = nullptr) const;
  Mat backward(const Acts& acts, const Mat& d_out);
  void register_params(nn::ParamRegistry& reg, const std::string& prefix);
};

// Pyramid segmentation head: 3×3 conv features at each configured scale
// (average-pooled downward), top-down merge with nearest upsampling, a
// 1-channel head, bilinear upsampling to the output size, and a sigmoid.
struct SegPyramid {
  Eigen::Index channels = 0;
  std::vector<int> scales;
  std::vector<nn::Conv3x3> down;    // one per scale; first maps 3 -> C
  std::vector<nn::Conv3x3> smooth;  // one per top-down merge
  nn::Conv3x3 head;                 // C -> 1

  struct LevelActs {
    Eigen::Index h = 0, w = 0;
    // Dims at each pooling step leading into this level (empty for scale 1).
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pool_dims;
    nn::Conv3x3::Acts down_acts;
    Mat down_pre;   // pre-rectifier
    Mat feat;       // rectified level feature
    nn::Conv3x3::Acts smooth_acts;  // unused on the coarsest level
    Mat smooth_pre;
    Mat merged;     // final top-down feature at this level
  };
  struct Acts {
    std::vector<LevelActs> levels;
    nn::Conv3x3::Acts head_acts;
    PredictionMap out;  // sigmoid output (for the activation backward)
    Eigen::Index out_h = 0, out_w = 0;
  };

  void init(const FusionConfig& cfg, Rng& rng);
  PredictionMap forward(const Mat& x3, Eigen::Index h, Eigen::Index w,
                        Eigen::Index out_h, Eigen::Index out_w,
                        Acts* acts = nullptr) const;
  // Returns the gradient w.r.t. the 3-channel input.
  Mat backward(const Acts& acts, const PredictionMap& d_out);
  void register_params(nn::ParamRegistry& reg, const std::string& prefix);
};

struct FusionParams {
  FusionConfig cfg;
  MapAttention attn_vision;  // separate weights per modality
  MapAttention attn_text;
  ResidualFuse fuse_block;
  SegPyramid pyramid;

  void init(const FusionConfig& config, Rng& rng);
  void register_params(nn::ParamRegistry& reg);
};

// ---------------------------------------------------------------------------
// Module-level ops
// ---------------------------------------------------------------------------

struct FuseActs {
  MapAttention::Acts vision, text;
  ResidualFuse::Acts fuse;
  Eigen::Index h = 0, w = 0;
};

// m_vt = fused map of the two attended inputs; same h×w shape.
PredictionMap fuse(const PredictionMap& m_v, const PredictionMap& m_t,
                   const FusionParams& params, FuseActs* acts = nullptr);

struct FuseGrads {
  PredictionMap d_v, d_t;
};
FuseGrads fuse_backward(FusionParams& params, const FuseActs& acts,
                        const PredictionMap& d_vt);

struct SegActs {
  SegPyramid::Acts pyramid;
  Eigen::Index h = 0, w = 0;
};

// Final map in [0,1] at out_h×out_w from the three h×w prediction maps.
PredictionMap segment(const PredictionMap& m_v, const PredictionMap& m_t,
                      const PredictionMap& m_vt, const FusionParams& params,
                      Eigen::Index out_h, Eigen::Index out_w,
                      SegActs* acts = nullptr);

struct SegGrads {
  PredictionMap d_v, d_t, d_vt;
};
SegGrads segment_backward(FusionParams& params, const SegActs& acts,
                          const PredictionMap& d_f);

// Image-level anomaly score: maximum over the map.
Scalar image_score(const PredictionMap& m_f);

}  // namespace vtf
