// Pretrained vision-language backend: a transformer weight bundle loaded from
// disk and exposed through the frozen-encoder interface.
//
// The bundle is a single binary file — magic "VTFVLM01", a JSON header with
// the architecture dims and tensor directory, then the tensors as row-major
// little-endian float32 in directory order. Nothing is ever downloaded; a
// missing or malformed file is a LoadError.
#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vtfusion/backbone.hpp"
#include "vtfusion/common.hpp"

namespace vtf::vlm {

struct TransformerDims {
  Eigen::Index width = 0;
  Eigen::Index layers = 0;
  Eigen::Index heads = 0;
  Eigen::Index mlp_dim = 0;
};

struct BundleDims {
  Eigen::Index image_size = 0;  // square input, pixels
  Eigen::Index patch_size = 0;
  TransformerDims vision;
  Eigen::Index context_length = 0;
  Eigen::Index vocab_size = 0;
  TransformerDims text;
  Eigen::Index joint_dim = 0;

  Eigen::Index grid() const { return image_size / patch_size; }
  void validate() const;  // throws LoadError on inconsistent dims
};

struct WeightBundle {
  BundleDims dims;
  // Insertion order is the on-disk order; fingerprints depend on it.
  std::vector<std::pair<std::string, Mat>> tensors;

  const Mat& tensor(const std::string& name) const;
  std::uint64_t fingerprint() const;
};

WeightBundle read_bundle(const std::string& path);
void write_bundle(const std::string& path, const WeightBundle& bundle);

// Random small bundle with the given dims; lets every backend test run
// offline with a file that exercises the full load/forward path.
WeightBundle make_test_bundle(const BundleDims& dims, std::uint64_t seed);

// Byte-level tokenizer: [begin], one token per byte, [end], padded to
// context_length. Lossless for any byte string; throws SizingError when the
// prompt does not fit the context window.
constexpr int kPadToken = 0;
constexpr int kBeginToken = 1;
constexpr int kEndToken = 2;
constexpr int kByteTokenBase = 3;
constexpr Eigen::Index kMinVocab = kByteTokenBase + 256;
std::vector<int> tokenize(const std::string& prompt,
                          Eigen::Index context_length);

class VlmImageEncoder : public FrozenImageEncoder {
 public:
  VlmImageEncoder(std::shared_ptr<const WeightBundle> bundle,
                  std::vector<int> levels);
  std::vector<Mat> stages(const Image& img) const override;
  std::uint64_t fingerprint() const override;

 private:
  std::shared_ptr<const WeightBundle> bundle_;
  std::vector<int> levels_;
};

class VlmTextEncoder : public FrozenTextEncoder {
 public:
  explicit VlmTextEncoder(std::shared_ptr<const WeightBundle> bundle);
  Vec encode(const std::string& prompt) const override;
  std::uint64_t fingerprint() const override;

 private:
  std::shared_ptr<const WeightBundle> bundle_;
};

struct LoadedEncoders {
  std::shared_ptr<const FrozenImageEncoder> image;
  std::shared_ptr<const FrozenTextEncoder> text;
};

// Resolves the bundle path (explicit argument, else the VTFUSION_VLM_WEIGHTS
// environment variable), reads it, and checks the dims against `spec`
// (ConfigError on mismatch). No path at all → LoadError.
LoadedEncoders load_encoders(const BackboneSpec& spec,
                             const std::string& weights_path);

}  // namespace vtf::vlm
