#include "vtfusion/backbone.hpp"

#include <cmath>

#include "vtfusion/vlm.hpp"

namespace vtf {

std::string to_string(Backend b) {
  return b == Backend::toy ? "toy" : "pretrained_vlm";
}

Backend backend_from_string(const std::string& s) {
  if (s == "toy") return Backend::toy;
  if (s == "pretrained_vlm") return Backend::pretrained_vlm;
  throw ConfigError("unknown backend '" + s + "'");
}

void BackboneSpec::validate() const {
  if (levels.empty()) throw ConfigError("backbone: levels must be nonempty");
  if (grid_h <= 0 || grid_w <= 0)
    throw ConfigError("backbone: patch grid must be positive");
  if (level_dim <= 0 || joint_dim <= 0)
    throw ConfigError("backbone: feature dims must be positive");
  if (input_h <= 0 || input_w <= 0)
    throw ConfigError("backbone: input size must be positive");
  for (int l : levels)
    if (l < 0) throw ConfigError("backbone: negative level index");
  if (backend == Backend::toy) {
    for (int l : levels)
      if (l >= ToyImageEncoder::kStageCount)
        throw ConfigError("backbone: toy backend has stages 0.." +
                          std::to_string(ToyImageEncoder::kStageCount - 1) +
                          ", got level " + std::to_string(l));
    if (input_h % grid_h != 0 || input_w % grid_w != 0)
      throw ConfigError(
          "backbone: toy backend needs input size divisible by the patch "
          "grid");
  }
}

Mat MultiLevelFeatures::stacked() const {
  if (per_level.empty()) return {};
  const Eigen::Index n = per_level[0].rows();
  const Eigen::Index c = per_level[0].cols();
  Mat out(n, c * level_count());
  for (Eigen::Index l = 0; l < level_count(); ++l)
    out.block(0, l * c, n, c) = per_level[static_cast<std::size_t>(l)];
  return out;
}

std::vector<Mat> MultiLevelFeatures::unstack(const Mat& stacked,
                                             Eigen::Index levels) {
  if (levels <= 0 || stacked.cols() % levels != 0)
    throw ShapeError("unstack: column count not divisible by level count");
  const Eigen::Index c = stacked.cols() / levels;
  std::vector<Mat> out;
  out.reserve(static_cast<std::size_t>(levels));
  for (Eigen::Index l = 0; l < levels; ++l)
    out.push_back(stacked.block(0, l * c, stacked.rows(), c));
  return out;
}

// ---------------------------------------------------------------------------
// Toy backend
// ---------------------------------------------------------------------------

namespace {

std::uint64_t toy_dims_seed(const BackboneSpec& spec, std::uint64_t stream) {
  std::uint64_t s = stream;
  for (std::uint64_t v :
       {static_cast<std::uint64_t>(spec.grid_h),
        static_cast<std::uint64_t>(spec.grid_w),
        static_cast<std::uint64_t>(spec.level_dim),
        static_cast<std::uint64_t>(spec.joint_dim),
        static_cast<std::uint64_t>(spec.input_h),
        static_cast<std::uint64_t>(spec.input_w)})
    s = mix_seed(s ^ v);
  return s;
}

Image standardized(const Image& img, Eigen::Index h, Eigen::Index w,
                   const Scalar mean[3], const Scalar std[3]) {
  Image resized =
      (img.rows() == h && img.cols() == w) ? img : resize_bilinear(img, h, w);
  for (int c = 0; c < 3; ++c)
    resized.ch[c] = (resized.ch[c] - mean[c]) / std[c];
  return resized;
}

}  // namespace

ToyImageEncoder::ToyImageEncoder(const BackboneSpec& spec) : spec_(spec) {
  spec_.validate();
  const Eigen::Index ph = spec_.input_h / spec_.grid_h;
  const Eigen::Index pw = spec_.input_w / spec_.grid_w;
  const Eigen::Index in_dim = 3 * ph * pw;
  const Scalar stddev = Scalar(1) / std::sqrt(static_cast<Scalar>(in_dim));
  const std::uint64_t base = toy_dims_seed(spec_, 0x746f795f696d67ull);
  W_.resize(kStageCount);
  b_.resize(kStageCount);
  for (int s = 0; s < kStageCount; ++s) {
    Rng rng(derive_seed(base, static_cast<std::uint64_t>(s)));
    W_[s] = Mat(in_dim, spec_.level_dim);
    for (Eigen::Index c = 0; c < spec_.level_dim; ++c)
      for (Eigen::Index r = 0; r < in_dim; ++r)
        W_[s](r, c) = rng.normal(0.0, stddev);
    b_[s] = Vec(spec_.level_dim);
    for (Eigen::Index c = 0; c < spec_.level_dim; ++c)
      b_[s](c) = rng.normal(0.0, 0.1);
  }
}

std::vector<Mat> ToyImageEncoder::stages(const Image& img) const {
  if (img.rows() <= 0 || img.cols() <= 0)
    throw ShapeError("toy encoder: empty image");
  static constexpr Scalar kMean[3] = {0.5, 0.5, 0.5};
  static constexpr Scalar kStd[3] = {0.5, 0.5, 0.5};
  const Image x =
      standardized(img, spec_.input_h, spec_.input_w, kMean, kStd);
  const Eigen::Index ph = spec_.input_h / spec_.grid_h;
  const Eigen::Index pw = spec_.input_w / spec_.grid_w;
  const Eigen::Index in_dim = 3 * ph * pw;
  Mat patches(spec_.token_count(), in_dim);
  for (Eigen::Index gy = 0; gy < spec_.grid_h; ++gy)
    for (Eigen::Index gx = 0; gx < spec_.grid_w; ++gx) {
      const Eigen::Index tok = gy * spec_.grid_w + gx;
      for (int c = 0; c < 3; ++c)
        for (Eigen::Index py = 0; py < ph; ++py)
          for (Eigen::Index px = 0; px < pw; ++px)
            patches(tok, (c * ph + py) * pw + px) =
                x.ch[c](gy * ph + py, gx * pw + px);
    }
  std::vector<Mat> out;
  out.reserve(spec_.levels.size());
  for (int l : spec_.levels) {
    Mat y = patches * W_[l];
    y.rowwise() += b_[l].transpose();
    out.push_back(y.array().tanh().matrix());
  }
  return out;
}

std::uint64_t ToyImageEncoder::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (int s = 0; s < kStageCount; ++s) {
    h = vtf::fingerprint(W_[s], h);
    h = vtf::fingerprint(b_[s], h);
  }
  return h;
}

ToyTextEncoder::ToyTextEncoder(const BackboneSpec& spec)
    : joint_dim_(spec.joint_dim) {
  const Scalar stddev = Scalar(1) / std::sqrt(static_cast<Scalar>(kHashDim));
  Rng rng(toy_dims_seed(spec, 0x746f795f747874ull));
  W_ = Mat(kHashDim, joint_dim_);
  for (Eigen::Index c = 0; c < joint_dim_; ++c)
    for (Eigen::Index r = 0; r < kHashDim; ++r)
      W_(r, c) = rng.normal(0.0, stddev);
  b_ = Vec(joint_dim_);
  for (Eigen::Index c = 0; c < joint_dim_; ++c) b_(c) = rng.normal(0.0, 0.1);
}

Vec ToyTextEncoder::encode(const std::string& prompt) const {
  // Hashed bag-of-words into kHashDim buckets with pseudo-random signs.
  Vec hv = Vec::Zero(kHashDim);
  std::size_t i = 0;
  int words = 0;
  while (i < prompt.size()) {
    while (i < prompt.size() && prompt[i] == ' ') ++i;
    std::size_t start = i;
    while (i < prompt.size() && prompt[i] != ' ') ++i;
    if (i == start) break;
    const std::uint64_t h = fingerprint_bytes(prompt.data() + start, i - start);
    const auto bucket = static_cast<Eigen::Index>(h % kHashDim);
    hv(bucket) += ((h >> 32) & 1) ? Scalar(1) : Scalar(-1);
    ++words;
  }
  if (words > 0) hv /= static_cast<Scalar>(words);
  Vec y = W_.transpose() * hv + b_;
  return y.array().tanh();
}

std::uint64_t ToyTextEncoder::fingerprint() const {
  std::uint64_t h = vtf::fingerprint(W_);
  return vtf::fingerprint(b_, h);
}

// ---------------------------------------------------------------------------
// Trainable adaptation
// ---------------------------------------------------------------------------

void ImageAdapter::init(const BackboneSpec& spec, Rng& rng) {
  const Scalar stddev =
      Scalar(1) / std::sqrt(static_cast<Scalar>(spec.level_dim));
  level_maps.resize(spec.levels.size());
  for (auto& lm : level_maps)
    lm.init(spec.level_dim, spec.joint_dim, rng, stddev);
  adaptor.init_identity(spec.joint_dim);
}

MultiLevelFeatures ImageAdapter::forward(const std::vector<Mat>& stage_out,
                                         const BackboneSpec& spec,
                                         Acts* acts) const {
  if (stage_out.size() != level_maps.size())
    throw ShapeError("image adapter: level count mismatch");
  MultiLevelFeatures f;
  f.grid_h = spec.grid_h;
  f.grid_w = spec.grid_w;
  f.per_level.reserve(stage_out.size());
  std::vector<Mat> mapped;
  if (acts) mapped.reserve(stage_out.size());
  for (std::size_t l = 0; l < stage_out.size(); ++l) {
    Mat m = level_maps[l].forward(stage_out[l]);
    f.per_level.push_back(adaptor.forward(m));
    if (acts) mapped.push_back(std::move(m));
  }
  if (acts) {
    acts->stage_out = stage_out;
    acts->mapped = std::move(mapped);
  }
  return f;
}

void ImageAdapter::backward(const Acts& acts,
                            const std::vector<Mat>& d_per_level) {
  if (d_per_level.size() != level_maps.size())
    throw ShapeError("image adapter: gradient level count mismatch");
  for (std::size_t l = 0; l < level_maps.size(); ++l) {
    const Mat d_mapped = adaptor.backward(acts.mapped[l], d_per_level[l]);
    level_maps[l].backward(acts.stage_out[l], d_mapped);
  }
}

void ImageAdapter::register_params(nn::ParamRegistry& reg) {
  for (std::size_t l = 0; l < level_maps.size(); ++l)
    level_maps[l].register_params(reg,
                                  "image_adapter.level" + std::to_string(l));
  adaptor.register_params(reg, "image_adapter.adaptor");
}

void TextAdapter::init(const BackboneSpec& spec, Rng& rng) {
  const Scalar stddev =
      Scalar(1) / std::sqrt(static_cast<Scalar>(spec.joint_dim));
  w1.init(spec.joint_dim, spec.joint_dim, rng, stddev);
  // Zero output map: the residual branch vanishes at step 0, so the adapter
  // starts as plain row normalization of the frozen embeddings.
  w2.init(spec.joint_dim, spec.joint_dim, rng, Scalar(0));
}

Mat TextAdapter::forward(const Mat& t0, Acts* acts) const {
  Mat hidden = nn::tanh_op(w1.forward(t0));
  Mat pre_norm = t0 + w2.forward(hidden);
  Mat out = nn::normalize_rows(pre_norm);
  if (acts) {
    acts->t0 = t0;
    acts->hidden = std::move(hidden);
    acts->pre_norm = std::move(pre_norm);
  }
  return out;
}

Mat TextAdapter::backward(const Acts& acts, const Mat& dT) {
  const Mat d_pre = nn::normalize_rows_backward(acts.pre_norm, dT);
  Mat d_t0 = d_pre;
  const Mat d_hidden = w2.backward(acts.hidden, d_pre);
  const Mat d_act = nn::tanh_backward(acts.hidden, d_hidden);
  d_t0 += w1.backward(acts.t0, d_act);
  return d_t0;
}

void TextAdapter::register_params(nn::ParamRegistry& reg) {
  w1.register_params(reg, "text_adapter.w1");
  w2.register_params(reg, "text_adapter.w2");
}

// ---------------------------------------------------------------------------
// Assembled backbone
// ---------------------------------------------------------------------------

Backbone Backbone::make(const BackboneSpec& spec, Rng& rng,
                        const std::string& weights_path) {
  spec.validate();
  Backbone b;
  b.spec = spec;
  if (spec.backend == Backend::toy) {
    b.frozen_image = std::make_shared<ToyImageEncoder>(spec);
    b.frozen_text = std::make_shared<ToyTextEncoder>(spec);
  } else {
    auto loaded = vlm::load_encoders(spec, weights_path);
    b.frozen_image = loaded.image;
    b.frozen_text = loaded.text;
  }
  b.image_adapter.init(spec, rng);
  b.text_adapter.init(spec, rng);
  return b;
}

MultiLevelFeatures Backbone::encode_image(const Image& img,
                                          ImageAdapter::Acts* acts) const {
  return image_adapter.forward(frozen_image->stages(img), spec, acts);
}

Mat Backbone::frozen_text_embeddings(const std::string& normal_prompt,
                                     const std::string& abnormal_prompt) const {
  Mat t0(2, spec.joint_dim);
  t0.row(0) = frozen_text->encode(normal_prompt).transpose();
  t0.row(1) = frozen_text->encode(abnormal_prompt).transpose();
  return t0;
}

TextEmbedding Backbone::encode_text(const std::string& normal_prompt,
                                    const std::string& abnormal_prompt,
                                    TextAdapter::Acts* acts) const {
  return text_adapter.forward(
      frozen_text_embeddings(normal_prompt, abnormal_prompt), acts);
}

std::uint64_t Backbone::frozen_fingerprint() const {
  const std::uint64_t hi = frozen_image->fingerprint();
  const std::uint64_t ht = frozen_text->fingerprint();
  std::uint64_t h = fingerprint_bytes(&hi, sizeof(hi));
  return fingerprint_bytes(&ht, sizeof(ht), h);
}

void Backbone::register_params(nn::ParamRegistry& reg) {
  image_adapter.register_params(reg);
  text_adapter.register_params(reg);
}

}  // namespace vtf
