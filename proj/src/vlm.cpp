#include "vtfusion/vlm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "json.hpp"
#include "vtfusion/nn.hpp"
#include "vtfusion/rng.hpp"

namespace vtf::vlm {

using nlohmann::json;

void BundleDims::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw LoadError(std::string("weight bundle: ") + what);
  };
  need(image_size > 0 && patch_size > 0, "image/patch size must be positive");
  need(image_size % patch_size == 0,
       "image size must be divisible by patch size");
  need(vision.width > 0 && vision.layers > 0 && vision.heads > 0 &&
           vision.mlp_dim > 0,
       "vision transformer dims must be positive");
  need(vision.width % vision.heads == 0,
       "vision width must be divisible by head count");
  need(context_length > 0, "context length must be positive");
  need(vocab_size >= kMinVocab, "vocab too small for the byte tokenizer");
  need(text.width > 0 && text.layers > 0 && text.heads > 0 && text.mlp_dim > 0,
       "text transformer dims must be positive");
  need(text.width % text.heads == 0,
       "text width must be divisible by head count");
  need(joint_dim > 0, "joint dim must be positive");
}

const Mat& WeightBundle::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw LoadError("weight bundle: missing tensor '" + name + "'");
}

std::uint64_t WeightBundle::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [n, t] : tensors) {
    h = fingerprint_bytes(n.data(), n.size(), h);
    h = vtf::fingerprint(t, h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Tensor directory
// ---------------------------------------------------------------------------

namespace {

struct TensorShape {
  std::string name;
  Eigen::Index rows, cols;
};

void append_block_tensors(std::vector<TensorShape>& out,
                          const std::string& prefix,
                          const TransformerDims& d) {
  const auto w = d.width, m = d.mlp_dim;
  out.push_back({prefix + ".ln1.g", 1, w});
  out.push_back({prefix + ".ln1.b", 1, w});
  for (const char* p : {"Wq", "Wk", "Wv", "Wo"})
    out.push_back({prefix + ".attn." + std::string(p), w, w});
  for (const char* p : {"bq", "bk", "bv", "bo"})
    out.push_back({prefix + ".attn." + std::string(p), 1, w});
  out.push_back({prefix + ".ln2.g", 1, w});
  out.push_back({prefix + ".ln2.b", 1, w});
  out.push_back({prefix + ".mlp.W1", w, m});
  out.push_back({prefix + ".mlp.b1", 1, m});
  out.push_back({prefix + ".mlp.W2", m, w});
  out.push_back({prefix + ".mlp.b2", 1, w});
}

std::vector<TensorShape> expected_tensors(const BundleDims& d) {
  std::vector<TensorShape> out;
  const Eigen::Index n_tok = d.grid() * d.grid();
  out.push_back({"vision.patch_embed.W", 3 * d.patch_size * d.patch_size,
                 d.vision.width});
  out.push_back({"vision.patch_embed.b", 1, d.vision.width});
  out.push_back({"vision.pos", n_tok, d.vision.width});
  for (Eigen::Index i = 0; i < d.vision.layers; ++i)
    append_block_tensors(out, "vision.blk" + std::to_string(i), d.vision);
  out.push_back({"text.token_embed", d.vocab_size, d.text.width});
  out.push_back({"text.pos", d.context_length, d.text.width});
  for (Eigen::Index i = 0; i < d.text.layers; ++i)
    append_block_tensors(out, "text.blk" + std::to_string(i), d.text);
  out.push_back({"text.ln_final.g", 1, d.text.width});
  out.push_back({"text.ln_final.b", 1, d.text.width});
  out.push_back({"text.proj", d.text.width, d.joint_dim});
  return out;
}

void check_tensor_set(const WeightBundle& b) {
  const auto expected = expected_tensors(b.dims);
  if (b.tensors.size() != expected.size())
    throw LoadError("weight bundle: expected " +
                    std::to_string(expected.size()) + " tensors, found " +
                    std::to_string(b.tensors.size()));
  for (const auto& e : expected) {
    const Mat& t = b.tensor(e.name);
    if (t.rows() != e.rows || t.cols() != e.cols)
      throw LoadError("weight bundle: tensor '" + e.name + "' has shape " +
                      std::to_string(t.rows()) + "x" +
                      std::to_string(t.cols()) + ", expected " +
                      std::to_string(e.rows) + "x" + std::to_string(e.cols));
  }
}

constexpr char kMagic[8] = {'V', 'T', 'F', 'V', 'L', 'M', '0', '1'};

void write_u64le(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

json dims_to_json(const BundleDims& d) {
  return json{{"image_size", d.image_size},
              {"patch_size", d.patch_size},
              {"vision",
               {{"width", d.vision.width},
                {"layers", d.vision.layers},
                {"heads", d.vision.heads},
                {"mlp_dim", d.vision.mlp_dim}}},
              {"context_length", d.context_length},
              {"vocab_size", d.vocab_size},
              {"text",
               {{"width", d.text.width},
                {"layers", d.text.layers},
                {"heads", d.text.heads},
                {"mlp_dim", d.text.mlp_dim}}},
              {"joint_dim", d.joint_dim}};
}

TransformerDims transformer_from_json(const json& j) {
  TransformerDims t;
  t.width = j.at("width").get<Eigen::Index>();
  t.layers = j.at("layers").get<Eigen::Index>();
  t.heads = j.at("heads").get<Eigen::Index>();
  t.mlp_dim = j.at("mlp_dim").get<Eigen::Index>();
  return t;
}

BundleDims dims_from_json(const json& j) {
  BundleDims d;
  d.image_size = j.at("image_size").get<Eigen::Index>();
  d.patch_size = j.at("patch_size").get<Eigen::Index>();
  d.vision = transformer_from_json(j.at("vision"));
  d.context_length = j.at("context_length").get<Eigen::Index>();
  d.vocab_size = j.at("vocab_size").get<Eigen::Index>();
  d.text = transformer_from_json(j.at("text"));
  d.joint_dim = j.at("joint_dim").get<Eigen::Index>();
  return d;
}

}  // namespace

WeightBundle read_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("weight bundle: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kMagic))
    throw LoadError("weight bundle: bad magic in '" + path + "'");
  const std::uint64_t header_len = read_u64le(is);
  if (!is || header_len == 0 || header_len > (1ull << 24))
    throw LoadError("weight bundle: bad header length in '" + path + "'");
  std::string header(header_len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw LoadError("weight bundle: truncated header in '" + path + "'");

  WeightBundle b;
  std::vector<TensorShape> dir;
  try {
    const json j = json::parse(header);
    b.dims = dims_from_json(j);
    for (const auto& t : j.at("tensors"))
      dir.push_back({t.at("name").get<std::string>(),
                     t.at("rows").get<Eigen::Index>(),
                     t.at("cols").get<Eigen::Index>()});
  } catch (const json::exception& e) {
    throw LoadError("weight bundle: invalid header in '" + path +
                    "': " + e.what());
  }
  b.dims.validate();

  for (const auto& d : dir) {
    if (d.rows <= 0 || d.cols <= 0)
      throw LoadError("weight bundle: bad shape for tensor '" + d.name + "'");
    Mat t(d.rows, d.cols);
    std::vector<float> row(static_cast<std::size_t>(d.cols));
    for (Eigen::Index r = 0; r < d.rows; ++r) {
      is.read(reinterpret_cast<char*>(row.data()),
              static_cast<std::streamsize>(sizeof(float) * row.size()));
      if (!is)
        throw LoadError("weight bundle: truncated tensor '" + d.name +
                        "' in '" + path + "'");
      for (Eigen::Index c = 0; c < d.cols; ++c)
        t(r, c) = static_cast<Scalar>(row[static_cast<std::size_t>(c)]);
    }
    b.tensors.emplace_back(d.name, std::move(t));
  }
  is.peek();
  if (!is.eof())
    throw LoadError("weight bundle: trailing bytes in '" + path + "'");
  check_tensor_set(b);
  return b;
}

void write_bundle(const std::string& path, const WeightBundle& bundle) {
  json j = dims_to_json(bundle.dims);
  j["tensors"] = json::array();
  for (const auto& [name, t] : bundle.tensors)
    j["tensors"].push_back(
        {{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  const std::string header = j.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("weight bundle: cannot write '" + path + "'");
  os.write(kMagic, 8);
  write_u64le(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : bundle.tensors) {
    std::vector<float> row(static_cast<std::size_t>(t.cols()));
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c)
        row[static_cast<std::size_t>(c)] = static_cast<float>(t(r, c));
      os.write(reinterpret_cast<const char*>(row.data()),
               static_cast<std::streamsize>(sizeof(float) * row.size()));
    }
  }
  if (!os) throw DataError("weight bundle: write failed for '" + path + "'");
}

WeightBundle make_test_bundle(const BundleDims& dims, std::uint64_t seed) {
  dims.validate();
  WeightBundle b;
  b.dims = dims;
  Rng rng(seed);
  for (const auto& shape : expected_tensors(dims)) {
    Mat t(shape.rows, shape.cols);
    const bool is_gain = shape.name.ends_with(".g");
    const bool is_norm_bias =
        shape.name.ends_with("ln1.b") || shape.name.ends_with("ln2.b") ||
        shape.name.ends_with("ln_final.b");
    Scalar base = is_gain ? Scalar(1) : Scalar(0);
    Scalar stddev;
    if (is_gain || is_norm_bias)
      stddev = 0.01;
    else if (shape.name.ends_with(".pos") || shape.name == "text.token_embed")
      stddev = 0.02;
    else
      stddev = Scalar(1) / std::sqrt(static_cast<Scalar>(shape.rows));
    for (Eigen::Index c = 0; c < shape.cols; ++c)
      for (Eigen::Index r = 0; r < shape.rows; ++r)
        t(r, c) = base + rng.normal(0.0, stddev);
    b.tensors.emplace_back(shape.name, std::move(t));
  }
  return b;
}

std::vector<int> tokenize(const std::string& prompt,
                          Eigen::Index context_length) {
  if (static_cast<Eigen::Index>(prompt.size()) + 2 > context_length)
    throw SizingError("prompt of " + std::to_string(prompt.size()) +
                      " bytes does not fit context of " +
                      std::to_string(context_length));
  std::vector<int> toks(static_cast<std::size_t>(context_length), kPadToken);
  std::size_t i = 0;
  toks[i++] = kBeginToken;
  for (unsigned char ch : prompt)
    toks[i++] = kByteTokenBase + static_cast<int>(ch);
  toks[i] = kEndToken;
  return toks;
}

// ---------------------------------------------------------------------------
// Transformer forward
// ---------------------------------------------------------------------------

namespace {

Mat layer_norm(const Mat& x, const Mat& g, const Mat& b) {
  constexpr Scalar kEps = 1e-5;
  Mat y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mean).square().mean();
    y.row(r) = ((x.row(r).array() - mean) / std::sqrt(var + kEps)) *
                   g.row(0).array() +
               b.row(0).array();
  }
  return y;
}

Mat gelu(const Mat& x) {
  return x.unaryExpr([](Scalar v) {
    return Scalar(0.5) * v * (Scalar(1) + std::erf(v / std::sqrt(Scalar(2))));
  });
}

Mat attention(const Mat& x, const WeightBundle& b, const std::string& prefix,
              Eigen::Index heads, bool causal) {
  const Eigen::Index n = x.rows(), w = x.cols();
  const Eigen::Index hd = w / heads;
  auto proj = [&](const char* wn, const char* bn) {
    Mat y = x * b.tensor(prefix + wn);
    y.rowwise() += b.tensor(prefix + bn).row(0);
    return y;
  };
  const Mat q = proj(".attn.Wq", ".attn.bq");
  const Mat k = proj(".attn.Wk", ".attn.bk");
  const Mat v = proj(".attn.Wv", ".attn.bv");
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));
  Mat concat(n, w);
  for (Eigen::Index h = 0; h < heads; ++h) {
    Mat scores = q.block(0, h * hd, n, hd) *
                 k.block(0, h * hd, n, hd).transpose() * scale;
    if (causal)
      for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = r + 1; c < n; ++c) scores(r, c) = Scalar(-1e30);
    concat.block(0, h * hd, n, hd) =
        nn::softmax_rows(scores) * v.block(0, h * hd, n, hd);
  }
  Mat out = concat * b.tensor(prefix + ".attn.Wo");
  out.rowwise() += b.tensor(prefix + ".attn.bo").row(0);
  return out;
}

Mat transformer_block(const Mat& x, const WeightBundle& b,
                      const std::string& prefix, Eigen::Index heads,
                      bool causal) {
  const Mat h =
      x + attention(layer_norm(x, b.tensor(prefix + ".ln1.g"),
                               b.tensor(prefix + ".ln1.b")),
                    b, prefix, heads, causal);
  Mat m = gelu(layer_norm(h, b.tensor(prefix + ".ln2.g"),
                          b.tensor(prefix + ".ln2.b")) *
               b.tensor(prefix + ".mlp.W1"));
  m.rowwise() += b.tensor(prefix + ".mlp.b1").row(0);
  Mat m2 = m * b.tensor(prefix + ".mlp.W2");
  m2.rowwise() += b.tensor(prefix + ".mlp.b2").row(0);
  return h + m2;
}

}  // namespace

VlmImageEncoder::VlmImageEncoder(std::shared_ptr<const WeightBundle> bundle,
                                 std::vector<int> levels)
    : bundle_(std::move(bundle)), levels_(std::move(levels)) {
  for (int l : levels_)
    if (l < 0 || l >= bundle_->dims.vision.layers)
      throw ConfigError("vlm backend: level " + std::to_string(l) +
                        " out of range for " +
                        std::to_string(bundle_->dims.vision.layers) +
                        " vision layers");
}

std::vector<Mat> VlmImageEncoder::stages(const Image& img) const {
  const BundleDims& d = bundle_->dims;
  // Standard contrastive-pretraining channel statistics.
  static constexpr Scalar kMean[3] = {0.48145466, 0.4578275, 0.40821073};
  static constexpr Scalar kStd[3] = {0.26862954, 0.26130258, 0.27577711};
  Image x = (img.rows() == d.image_size && img.cols() == d.image_size)
                ? img
                : resize_bilinear(img, d.image_size, d.image_size);
  for (int c = 0; c < 3; ++c) x.ch[c] = (x.ch[c] - kMean[c]) / kStd[c];

  const Eigen::Index p = d.patch_size, g = d.grid();
  Mat patches(g * g, 3 * p * p);
  for (Eigen::Index gy = 0; gy < g; ++gy)
    for (Eigen::Index gx = 0; gx < g; ++gx)
      for (int c = 0; c < 3; ++c)
        for (Eigen::Index py = 0; py < p; ++py)
          for (Eigen::Index px = 0; px < p; ++px)
            patches(gy * g + gx, (c * p + py) * p + px) =
                x.ch[c](gy * p + py, gx * p + px);

  Mat tok = patches * bundle_->tensor("vision.patch_embed.W");
  tok.rowwise() += bundle_->tensor("vision.patch_embed.b").row(0);
  tok += bundle_->tensor("vision.pos");

  const int max_level = *std::max_element(levels_.begin(), levels_.end());
  std::vector<Mat> block_out(static_cast<std::size_t>(max_level) + 1);
  for (int i = 0; i <= max_level; ++i) {
    tok = transformer_block(tok, *bundle_, "vision.blk" + std::to_string(i),
                            d.vision.heads, /*causal=*/false);
    block_out[static_cast<std::size_t>(i)] = tok;
  }
  std::vector<Mat> out;
  out.reserve(levels_.size());
  for (int l : levels_) out.push_back(block_out[static_cast<std::size_t>(l)]);
  return out;
}

std::uint64_t VlmImageEncoder::fingerprint() const {
  return bundle_->fingerprint();
}

VlmTextEncoder::VlmTextEncoder(std::shared_ptr<const WeightBundle> bundle)
    : bundle_(std::move(bundle)) {}

Vec VlmTextEncoder::encode(const std::string& prompt) const {
  const BundleDims& d = bundle_->dims;
  const std::vector<int> toks = tokenize(prompt, d.context_length);
  const Mat& embed = bundle_->tensor("text.token_embed");
  Mat x(d.context_length, d.text.width);
  Eigen::Index end_pos = 0;
  for (Eigen::Index t = 0; t < d.context_length; ++t) {
    x.row(t) = embed.row(toks[static_cast<std::size_t>(t)]);
    if (toks[static_cast<std::size_t>(t)] == kEndToken) end_pos = t;
  }
  x += bundle_->tensor("text.pos");
  for (Eigen::Index i = 0; i < d.text.layers; ++i)
    x = transformer_block(x, *bundle_, "text.blk" + std::to_string(i),
                          d.text.heads, /*causal=*/true);
  x = layer_norm(x, bundle_->tensor("text.ln_final.g"),
                 bundle_->tensor("text.ln_final.b"));
  return (x.row(end_pos) * bundle_->tensor("text.proj")).transpose();
}

std::uint64_t VlmTextEncoder::fingerprint() const {
  return bundle_->fingerprint();
}

LoadedEncoders load_encoders(const BackboneSpec& spec,
                             const std::string& weights_path) {
  std::string path = weights_path;
  if (path.empty()) {
    if (const char* env = std::getenv("VTFUSION_VLM_WEIGHTS")) path = env;
  }
  if (path.empty())
    throw LoadError(
        "pretrained_vlm backend: no weights available — set the "
        "VTFUSION_VLM_WEIGHTS environment variable or the backbone "
        "weights_path config key");
  auto bundle = std::make_shared<const WeightBundle>(read_bundle(path));
  const BundleDims& d = bundle->dims;
  auto mismatch = [&](const std::string& what, Eigen::Index spec_v,
                      Eigen::Index bundle_v) {
    throw ConfigError("backbone spec does not match weight bundle: " + what +
                      " is " + std::to_string(spec_v) + " in the spec but " +
                      std::to_string(bundle_v) + " in the bundle");
  };
  if (spec.input_h != d.image_size) mismatch("input_h", spec.input_h, d.image_size);
  if (spec.input_w != d.image_size) mismatch("input_w", spec.input_w, d.image_size);
  if (spec.grid_h != d.grid()) mismatch("grid_h", spec.grid_h, d.grid());
  if (spec.grid_w != d.grid()) mismatch("grid_w", spec.grid_w, d.grid());
  if (spec.level_dim != d.vision.width)
    mismatch("level_dim", spec.level_dim, d.vision.width);
  if (spec.joint_dim != d.joint_dim)
    mismatch("joint_dim", spec.joint_dim, d.joint_dim);
  LoadedEncoders enc;
  enc.image = std::make_shared<VlmImageEncoder>(bundle, spec.levels);
  enc.text = std::make_shared<VlmTextEncoder>(bundle);
  return enc;
}

}  // namespace vtf::vlm
