#include "vtfusion/fusion.hpp"

#include <cmath>

namespace vtf {

namespace {

Mat map_to_col(const PredictionMap& m) {
  Mat col(m.size(), 1);
  for (Eigen::Index y = 0; y < m.rows(); ++y)
    for (Eigen::Index x = 0; x < m.cols(); ++x)
      col(y * m.cols() + x, 0) = m(y, x);
  return col;
}

PredictionMap col_to_map(const Mat& col, Eigen::Index h, Eigen::Index w) {
  PredictionMap m(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) m(y, x) = col(y * w + x, 0);
  return m;
}

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void FusionConfig::validate() const {
  if (attn_embed_dim <= 0)
    throw ConfigError("fusion: attn_embed_dim must be positive");
  if (residual_channels <= 0)
    throw ConfigError("fusion: residual_channels must be positive");
  if (seg_channels <= 0)
    throw ConfigError("fusion: seg_channels must be positive");
  if (seg_scales.empty()) throw ConfigError("fusion: seg_scales empty");
  int prev = 0;
  for (int s : seg_scales) {
    if (!power_of_two(s))
      throw ConfigError("fusion: seg_scale " + std::to_string(s) +
                        " is not a power of two");
    if (s <= prev)
      throw ConfigError("fusion: seg_scales must be strictly ascending");
    prev = s;
  }
}

// ---------------------------------------------------------------------------
// MapAttention
// ---------------------------------------------------------------------------

void MapAttention::init(Eigen::Index embed_dim, Rng& rng) {
  const Scalar stddev =
      Scalar(1) / std::sqrt(static_cast<Scalar>(embed_dim));
  lift.init(1, embed_dim, rng, Scalar(0));
  lift.W(0, 0) = 1;  // embed the map into the first channel
  wq.init(embed_dim, embed_dim, rng, stddev);
  wk.init(embed_dim, embed_dim, rng, stddev);
  wv.init(embed_dim, embed_dim, rng, stddev);
  wo.init(embed_dim, embed_dim, rng, Scalar(0));
  down.init(embed_dim, 1, rng, Scalar(0));
  down.W(0, 0) = 1;  // read the first channel back out
}

Mat MapAttention::forward(const Mat& x_col, Acts* acts) const {
  const Scalar scale =
      Scalar(1) / std::sqrt(static_cast<Scalar>(lift.W.cols()));
  Mat lifted = lift.forward(x_col);
  Mat q = wq.forward(lifted);
  Mat k = wk.forward(lifted);
  Mat v = wv.forward(lifted);
  Mat attn = nn::softmax_rows(scale * q * k.transpose());
  Mat ctx = attn * v;
  Mat post = lifted + wo.forward(ctx);
  Mat out = down.forward(post);
  if (acts) {
    acts->x = x_col;
    acts->lifted = std::move(lifted);
    acts->q = std::move(q);
    acts->k = std::move(k);
    acts->v = std::move(v);
    acts->attn = std::move(attn);
    acts->ctx = std::move(ctx);
    acts->post = std::move(post);
  }
  return out;
}

Mat MapAttention::backward(const Acts& acts, const Mat& d_out) {
  const Scalar scale =
      Scalar(1) / std::sqrt(static_cast<Scalar>(lift.W.cols()));
  const Mat d_post = down.backward(acts.post, d_out);
  Mat d_lifted = d_post;  // residual side
  const Mat d_ctx = wo.backward(acts.ctx, d_post);
  const Mat d_attn = d_ctx * acts.v.transpose();
  const Mat d_v = acts.attn.transpose() * d_ctx;
  const Mat d_scores = nn::softmax_rows_backward(acts.attn, d_attn);
  const Mat d_q = scale * d_scores * acts.k;
  const Mat d_k = scale * d_scores.transpose() * acts.q;
  d_lifted += wq.backward(acts.lifted, d_q);
  d_lifted += wk.backward(acts.lifted, d_k);
  d_lifted += wv.backward(acts.lifted, d_v);
  return lift.backward(acts.x, d_lifted);
}

void MapAttention::register_params(nn::ParamRegistry& reg,
                                   const std::string& prefix) {
  lift.register_params(reg, prefix + ".lift");
  wq.register_params(reg, prefix + ".wq");
  wk.register_params(reg, prefix + ".wk");
  wv.register_params(reg, prefix + ".wv");
  wo.register_params(reg, prefix + ".wo");
  down.register_params(reg, prefix + ".down");
}

// ---------------------------------------------------------------------------
// ResidualFuse
// ---------------------------------------------------------------------------

void ResidualFuse::init(Eigen::Index channels, Rng& rng) {
  conv_in.init(2, channels, rng, Scalar(1) / std::sqrt(Scalar(2)));
  norm.init(channels);
  conv_out.init(channels, 1, rng, Scalar(0));
  skip.init(2, 1, rng, Scalar(0));
  skip.W(0, 0) = 0.5;  // channel mean, so the block starts as map averaging
  skip.W(1, 0) = 0.5;
}

Mat ResidualFuse::forward(const Mat& x2, Acts* acts) const {
  Acts local;
  local.x = x2;
  local.pre = conv_in.forward(x2);
  local.normed = norm.forward(local.pre, &local.norm_acts);
  local.rectified = nn::relu(local.normed);
  Mat out = conv_out.forward(local.rectified) + skip.forward(x2);
  if (acts) *acts = std::move(local);
  return out;
}

Mat ResidualFuse::backward(const Acts& acts, const Mat& d_out) {
  const Mat d_rect = conv_out.backward(acts.rectified, d_out);
  const Mat d_normed = nn::relu_backward(acts.normed, d_rect);
  const Mat d_pre = norm.backward(acts.norm_acts, d_normed);
  Mat d_x = conv_in.backward(acts.x, d_pre);
  d_x += skip.backward(acts.x, d_out);
  return d_x;
}

void ResidualFuse::register_params(nn::ParamRegistry& reg,
                                   const std::string& prefix) {
  conv_in.register_params(reg, prefix + ".conv_in");
  norm.register_params(reg, prefix + ".norm");
  conv_out.register_params(reg, prefix + ".conv_out");
  skip.register_params(reg, prefix + ".skip");
}

// ---------------------------------------------------------------------------
// SegPyramid
// ---------------------------------------------------------------------------

void SegPyramid::init(const FusionConfig& cfg, Rng& rng) {
  channels = cfg.seg_channels;
  scales = cfg.seg_scales;
  const auto n_levels = scales.size();
  down.resize(n_levels);
  down[0].init(3, channels, rng, Scalar(1) / std::sqrt(Scalar(9 * 3)));
  const Scalar stddev =
      Scalar(1) / std::sqrt(static_cast<Scalar>(9 * channels));
  for (std::size_t i = 1; i < n_levels; ++i)
    down[i].init(channels, channels, rng, stddev);
  smooth.resize(n_levels > 0 ? n_levels - 1 : 0);
  for (auto& s : smooth) s.init(channels, channels, rng, stddev);
  head.init(channels, 1, rng, stddev);

  // Channel 0 carries the vision map through untouched (center-tap identity
  // at every stage) and is all the head reads at the start, so the stack
  // begins as a monotone function of its most discriminative input. The
  // remaining channels start blind to the two unbounded inputs — the vision
  // and fused maps — keeping their random view only of the bounded text map;
  // fine-tuning can then carve a decision boundary but cannot assemble an
  // opposing slope anywhere near the spine's, and responses keep rising for
  // anomalies stronger than any seen in training instead of extrapolating
  // arbitrarily.
  down[0].W.col(0).setZero();
  for (int k = 0; k < 9; ++k) {
    down[0].W.row(k * 3).setZero();      // vision-map taps
    down[0].W.row(k * 3 + 2).setZero();  // fused-map taps
  }
  down[0].W(4 * 3, 0) = 1;  // window-center vision tap into channel 0
  for (std::size_t i = 1; i < n_levels; ++i) {
    down[i].W.col(0).setZero();
    down[i].W(4 * channels, 0) = 1;
  }
  for (auto& s : smooth) {
    s.W.col(0).setZero();
    s.W(4 * channels, 0) = 1;
  }
  head.W.setZero();
  head.W(4 * channels, 0) = 1;
}

PredictionMap SegPyramid::forward(const Mat& x3, Eigen::Index h,
                                  Eigen::Index w, Eigen::Index out_h,
                                  Eigen::Index out_w, Acts* acts) const {
  const auto n_levels = scales.size();
  Acts local;
  local.levels.resize(n_levels);
  local.out_h = out_h;
  local.out_w = out_w;

  Mat cur = x3;
  Eigen::Index ch = h, cw = w;
  int cur_scale = 1;
  for (std::size_t i = 0; i < n_levels; ++i) {
    LevelActs& la = local.levels[i];
    while (cur_scale < scales[i]) {
      la.pool_dims.emplace_back(ch, cw);
      cur = nn::avg_pool2(cur, ch, cw);
      ch = nn::pooled_extent(ch);
      cw = nn::pooled_extent(cw);
      cur_scale *= 2;
    }
    la.h = ch;
    la.w = cw;
    la.down_pre = down[i].forward(cur, ch, cw, &la.down_acts);
    la.feat = nn::relu(la.down_pre);
    cur = la.feat;
  }

  local.levels[n_levels - 1].merged = local.levels[n_levels - 1].feat;
  for (std::size_t i = n_levels - 1; i-- > 0;) {
    const LevelActs& up_level = local.levels[i + 1];
    LevelActs& la = local.levels[i];
    const Mat up = nn::upsample_nearest(up_level.merged, up_level.h,
                                        up_level.w, la.h, la.w);
    la.smooth_pre = smooth[i].forward(la.feat + up, la.h, la.w,
                                      &la.smooth_acts);
    la.merged = nn::relu(la.smooth_pre);
  }

  const LevelActs& top = local.levels[0];
  const Mat logits = head.forward(top.merged, top.h, top.w, &local.head_acts);
  const PredictionMap upsampled =
      nn::upsample_bilinear(col_to_map(logits, top.h, top.w), out_h, out_w);
  local.out = nn::sigmoid(upsampled);
  PredictionMap result = local.out;
  if (acts) *acts = std::move(local);
  return result;
}

Mat SegPyramid::backward(const Acts& acts, const PredictionMap& d_out) {
  const auto n_levels = scales.size();
  const LevelActs& top = acts.levels[0];
  const PredictionMap d_upsampled = nn::sigmoid_backward(acts.out, d_out);
  const PredictionMap d_logit_map =
      nn::upsample_bilinear_backward(d_upsampled, top.h, top.w);
  const Mat d_merged_top =
      head.backward(acts.head_acts, map_to_col(d_logit_map), top.h, top.w);

  std::vector<Mat> d_feat(n_levels);
  for (std::size_t i = 0; i < n_levels; ++i)
    d_feat[i] = Mat::Zero(acts.levels[i].feat.rows(), channels);

  Mat d_merged = d_merged_top;
  for (std::size_t i = 0; i + 1 < n_levels; ++i) {
    const LevelActs& la = acts.levels[i];
    const LevelActs& up_level = acts.levels[i + 1];
    const Mat d_pre = nn::relu_backward(la.smooth_pre, d_merged);
    const Mat d_sum = smooth[i].backward(la.smooth_acts, d_pre, la.h, la.w);
    d_feat[i] += d_sum;
    d_merged = nn::upsample_nearest_backward(d_sum, up_level.h, up_level.w,
                                             la.h, la.w);
  }
  d_feat[n_levels - 1] += d_merged;  // coarsest level: merged == feat

  for (std::size_t i = n_levels; i-- > 0;) {
    const LevelActs& la = acts.levels[i];
    const Mat d_pre = nn::relu_backward(la.down_pre, d_feat[i]);
    Mat d_cur = down[i].backward(la.down_acts, d_pre, la.h, la.w);
    for (std::size_t p = la.pool_dims.size(); p-- > 0;)
      d_cur = nn::avg_pool2_backward(d_cur, la.pool_dims[p].first,
                                     la.pool_dims[p].second);
    if (i == 0) return d_cur;
    d_feat[i - 1] += d_cur;
  }
  return {};  // unreachable: the loop always returns at i == 0
}

void SegPyramid::register_params(nn::ParamRegistry& reg,
                                 const std::string& prefix) {
  for (std::size_t i = 0; i < down.size(); ++i)
    down[i].register_params(reg, prefix + ".down" + std::to_string(i));
  for (std::size_t i = 0; i < smooth.size(); ++i)
    smooth[i].register_params(reg, prefix + ".smooth" + std::to_string(i));
  head.register_params(reg, prefix + ".head");
}

// ---------------------------------------------------------------------------
// FusionParams and module ops
// ---------------------------------------------------------------------------

void FusionParams::init(const FusionConfig& config, Rng& rng) {
  config.validate();
  cfg = config;
  attn_vision.init(cfg.attn_embed_dim, rng);
  attn_text.init(cfg.attn_embed_dim, rng);
  fuse_block.init(cfg.residual_channels, rng);
  pyramid.init(cfg, rng);
}

void FusionParams::register_params(nn::ParamRegistry& reg) {
  attn_vision.register_params(reg, "fusion.attn_vision");
  attn_text.register_params(reg, "fusion.attn_text");
  fuse_block.register_params(reg, "fusion.fuse");
  pyramid.register_params(reg, "fusion.pyramid");
}

PredictionMap fuse(const PredictionMap& m_v, const PredictionMap& m_t,
                   const FusionParams& params, FuseActs* acts) {
  if (m_v.rows() != m_t.rows() || m_v.cols() != m_t.cols())
    throw ShapeError("fuse: map shapes differ");
  FuseActs local;
  local.h = m_v.rows();
  local.w = m_v.cols();
  const Mat a_v = params.attn_vision.forward(map_to_col(m_v), &local.vision);
  const Mat a_t = params.attn_text.forward(map_to_col(m_t), &local.text);
  Mat x2(a_v.rows(), 2);
  x2.col(0) = a_v;
  x2.col(1) = a_t;
  const Mat out = params.fuse_block.forward(x2, &local.fuse);
  PredictionMap m_vt = col_to_map(out, local.h, local.w);
  if (acts) *acts = std::move(local);
  return m_vt;
}

FuseGrads fuse_backward(FusionParams& params, const FuseActs& acts,
                        const PredictionMap& d_vt) {
  const Mat d_out = map_to_col(d_vt);
  const Mat d_x2 = params.fuse_block.backward(acts.fuse, d_out);
  const Mat d_av = d_x2.col(0);
  const Mat d_at = d_x2.col(1);
  FuseGrads g;
  g.d_v = col_to_map(params.attn_vision.backward(acts.vision, d_av), acts.h,
                     acts.w);
  g.d_t = col_to_map(params.attn_text.backward(acts.text, d_at), acts.h,
                     acts.w);
  return g;
}

PredictionMap segment(const PredictionMap& m_v, const PredictionMap& m_t,
                      const PredictionMap& m_vt, const FusionParams& params,
                      Eigen::Index out_h, Eigen::Index out_w, SegActs* acts) {
  if (m_v.rows() != m_t.rows() || m_v.cols() != m_t.cols() ||
      m_v.rows() != m_vt.rows() || m_v.cols() != m_vt.cols())
    throw ShapeError("segment: map shapes differ");
  SegActs local;
  local.h = m_v.rows();
  local.w = m_v.cols();
  Mat x3(m_v.size(), 3);
  x3.col(0) = map_to_col(m_v);
  x3.col(1) = map_to_col(m_t);
  x3.col(2) = map_to_col(m_vt);
  PredictionMap out = params.pyramid.forward(x3, local.h, local.w, out_h,
                                             out_w, &local.pyramid);
  if (acts) *acts = std::move(local);
  return out;
}

SegGrads segment_backward(FusionParams& params, const SegActs& acts,
                          const PredictionMap& d_f) {
  const Mat d_x3 = params.pyramid.backward(acts.pyramid, d_f);
  SegGrads g;
  g.d_v = col_to_map(d_x3.col(0), acts.h, acts.w);
  g.d_t = col_to_map(d_x3.col(1), acts.h, acts.w);
  g.d_vt = col_to_map(d_x3.col(2), acts.h, acts.w);
  return g;
}

Scalar image_score(const PredictionMap& m_f) {
  if (m_f.size() == 0) throw ArgumentError("image_score: empty map");
  return m_f.maxCoeff();
}

}  // namespace vtf
