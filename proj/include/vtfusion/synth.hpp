// Diversified anomaly synthesis: pseudo-defect generation with pixel-exact
// masks. Five generators (misplaced patches, local blur, cracks, regional
// noise, and a combined type) share the contract that every changed pixel is
// covered by the returned mask and that identical (image, config, seed)
// replays bit-identically.

#pragma once

#include <optional>
#include <utility>

#include "vtfusion/image.hpp"
#include "vtfusion/rng.hpp"

namespace vtf {

enum class AnomalyType { misplaced, blurry, crack, noise, combined };

enum class NoiseKind { uniform, gaussian, positive };

const char* to_string(AnomalyType t);
AnomalyType anomaly_type_from_string(const std::string& s);

struct SynthConfig {
  AnomalyType anomaly_type = AnomalyType::combined;
  int region_count = 1;
  // Fraction of the image area each region occupies, sampled per region.
  std::pair<double, double> region_area_fraction = {0.01, 0.06};
  std::pair<double, double> blur_sigma_range = {1.0, 4.0};
  // nullopt: the kind itself is sampled per draw.
  std::optional<NoiseKind> noise_kind;
  std::pair<double, double> noise_amplitude = {0.1, 0.4};
  int crack_segments = 6;
  std::pair<int, int> crack_thickness_px = {1, 3};
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct SynthResult {
  Image image;
  PixelMask mask;
  AnomalyType anomaly_type = AnomalyType::combined;
};

// All generators leave pixels outside the mask bit-identical to the input.
// An optional foreground mask restricts region placement.
SynthResult synth_misplaced(const Image& img, const SynthConfig& cfg, Rng& rng,
                            const PixelMask* foreground = nullptr);
SynthResult synth_blurry(const Image& img, const SynthConfig& cfg, Rng& rng,
                         const PixelMask* foreground = nullptr);
SynthResult synth_crack(const Image& img, const SynthConfig& cfg, Rng& rng,
                        const PixelMask* foreground = nullptr);
SynthResult synth_noise(const Image& img, const SynthConfig& cfg, Rng& rng,
                        const PixelMask* foreground = nullptr);
SynthResult synth_combined(const Image& img, const SynthConfig& cfg, Rng& rng,
                           const PixelMask* foreground = nullptr);

// Dispatch on cfg.anomaly_type.
SynthResult synthesize(const Image& img, const SynthConfig& cfg, Rng& rng,
                       const PixelMask* foreground = nullptr);

// One draw of a uniformly random type (the training-time mixture).
SynthResult synthesize_random_type(const Image& img, const SynthConfig& cfg,
                                   Rng& rng,
                                   const PixelMask* foreground = nullptr);

namespace synth_detail {

struct Rect {
  Eigen::Index y0 = 0, x0 = 0, h = 0, w = 0;
  Eigen::Index y1() const { return y0 + h; }
  Eigen::Index x1() const { return x0 + w; }
  bool overlaps(const Rect& o) const {
    return y0 < o.y1() && o.y0 < y1() && x0 < o.x1() && o.x0 < x1();
  }
};

// Separable Gaussian blur with replicate edge handling; kernel radius 3*sigma.
Image gaussian_blur(const Image& img, double sigma);

// Marks the pixels of the segment p0->p1 drawn with a square brush of the
// given thickness. DDA rasterization, one sample per unit Chebyshev step.
void draw_thick_segment(PixelMask& mask, double y0, double x0, double y1,
                        double x1, int thickness);

// Adds noise of the given kind/amplitude inside the rect, then clamps to
// [0, 1]. amplitude == 0 leaves the image bit-identical.
void add_noise(Image& img, const Rect& r, NoiseKind kind, double amplitude,
               Rng& rng);

Rect sample_region(Rng& rng, Eigen::Index h, Eigen::Index w,
                   const SynthConfig& cfg, const PixelMask* foreground);

}  // namespace synth_detail

}  // namespace vtf
