#include "vtfusion/synth.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace vtf {

const char* to_string(AnomalyType t) {
  switch (t) {
    case AnomalyType::misplaced: return "misplaced";
    case AnomalyType::blurry: return "blurry";
    case AnomalyType::crack: return "crack";
    case AnomalyType::noise: return "noise";
    case AnomalyType::combined: return "combined";
  }
  return "?";
}

AnomalyType anomaly_type_from_string(const std::string& s) {
  if (s == "misplaced") return AnomalyType::misplaced;
  if (s == "blurry") return AnomalyType::blurry;
  if (s == "crack") return AnomalyType::crack;
  if (s == "noise") return AnomalyType::noise;
  if (s == "combined") return AnomalyType::combined;
  throw ConfigError("unknown anomaly type: " + s);
}

void SynthConfig::validate() const {
  auto check_range = [](double lo, double hi, const char* name) {
    if (!(lo <= hi)) throw ConfigError(std::string(name) + ": empty range");
  };
  if (region_count < 1) throw ConfigError("region_count must be >= 1");
  check_range(region_area_fraction.first, region_area_fraction.second,
              "region_area_fraction");
  if (!(region_area_fraction.first > 0.0 &&
        region_area_fraction.second < 1.0))
    throw ConfigError("region_area_fraction must lie strictly inside (0,1)");
  check_range(blur_sigma_range.first, blur_sigma_range.second,
              "blur_sigma_range");
  if (!(blur_sigma_range.first > 0.0))
    throw ConfigError("blur_sigma_range lower bound must be > 0");
  check_range(noise_amplitude.first, noise_amplitude.second,
              "noise_amplitude");
  if (noise_amplitude.first < 0.0 || noise_amplitude.second > 1.0)
    throw ConfigError("noise_amplitude must lie in [0,1]");
  if (crack_segments < 1) throw ConfigError("crack_segments must be >= 1");
  if (crack_thickness_px.first < 1 ||
      crack_thickness_px.first > crack_thickness_px.second)
    throw ConfigError("crack_thickness_px: invalid range");
}

namespace synth_detail {

namespace {

// Uniform draw over the set pixels of `fg`; (-1, -1) when the mask is empty.
std::pair<Eigen::Index, Eigen::Index> random_set_pixel(Rng& rng,
                                                       const PixelMask& fg) {
  const auto total = static_cast<std::uint64_t>((fg != 0).count());
  if (total == 0) return {-1, -1};
  auto want = rng.uniform_index(total);
  for (Eigen::Index x = 0; x < fg.cols(); ++x)
    for (Eigen::Index y = 0; y < fg.rows(); ++y)
      if (fg(y, x) != 0 && want-- == 0) return {y, x};
  return {-1, -1};
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
  sigma = std::max(sigma, 1e-3);
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const Eigen::Index h = img.rows(), w = img.cols();
  Image out(h, w);
  Map2T<Scalar> tmp(h, w);
  for (int c = 0; c < 3; ++c) {
    // horizontal pass, replicate edges
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const Eigen::Index xx = std::clamp<Eigen::Index>(x + i, 0, w - 1);
          acc += k[i + radius] * img.ch[c](y, xx);
        }
        tmp(y, x) = acc;
      }
    // vertical pass
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const Eigen::Index yy = std::clamp<Eigen::Index>(y + i, 0, h - 1);
          acc += k[i + radius] * tmp(yy, x);
        }
        out.ch[c](y, x) = acc;
      }
  }
  return out;
}

void draw_thick_segment(PixelMask& mask, double y0, double x0, double y1,
                        double x1, int thickness) {
  const Eigen::Index h = mask.rows(), w = mask.cols();
  const int lo = -(thickness - 1) / 2;
  const int hi = thickness / 2;
  const double dy = y1 - y0, dx = x1 - x0;
  const int steps =
      std::max(1, static_cast<int>(std::ceil(std::max(std::abs(dy),
                                                      std::abs(dx)))));
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const auto cy = static_cast<Eigen::Index>(std::lround(y0 + t * dy));
    const auto cx = static_cast<Eigen::Index>(std::lround(x0 + t * dx));
    for (int oy = lo; oy <= hi; ++oy)
      for (int ox = lo; ox <= hi; ++ox) {
        const Eigen::Index yy = cy + oy, xx = cx + ox;
        if (yy >= 0 && yy < h && xx >= 0 && xx < w) mask(yy, xx) = 1;
      }
  }
}

void add_noise(Image& img, const Rect& r, NoiseKind kind, double amplitude,
               Rng& rng) {
  if (amplitude <= 0.0) return;
  for (Eigen::Index y = r.y0; y < r.y1(); ++y)
    for (Eigen::Index x = r.x0; x < r.x1(); ++x)
      for (int c = 0; c < 3; ++c) {
        double n = 0.0;
        switch (kind) {
          case NoiseKind::uniform:
            n = rng.uniform(-amplitude, amplitude);
            break;
          case NoiseKind::gaussian:
            n = rng.normal(0.0, amplitude * 0.5);
            break;
          case NoiseKind::positive:
            n = std::abs(rng.normal(0.0, amplitude * 0.5));
            break;
        }
        img.ch[c](y, x) =
            std::clamp(img.ch[c](y, x) + n, Scalar(0), Scalar(1));
      }
}

Rect sample_region(Rng& rng, Eigen::Index h, Eigen::Index w,
                   const SynthConfig& cfg, const PixelMask* foreground) {
  const double frac = rng.uniform(cfg.region_area_fraction.first,
                                  cfg.region_area_fraction.second);
  const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
  const double area = frac * static_cast<double>(h) * static_cast<double>(w);
  Rect r;
  r.h = std::clamp<Eigen::Index>(
      static_cast<Eigen::Index>(std::lround(std::sqrt(area * aspect))), 1, h);
  r.w = std::clamp<Eigen::Index>(
      static_cast<Eigen::Index>(std::lround(std::sqrt(area / aspect))), 1, w);
  for (int attempt = 0; attempt < 100; ++attempt) {
    r.y0 = static_cast<Eigen::Index>(rng.uniform_index(h - r.h + 1));
    r.x0 = static_cast<Eigen::Index>(rng.uniform_index(w - r.w + 1));
    if (!foreground) return r;
    const Eigen::Index cy = r.y0 + r.h / 2, cx = r.x0 + r.w / 2;
    if ((*foreground)(cy, cx)) return r;
  }
  // Center placement kept missing (sparse mask); anchor the patch on an
  // explicitly drawn foreground pixel instead.
  const auto [fy, fx] = random_set_pixel(rng, *foreground);
  if (fy >= 0) {
    r.y0 = std::clamp<Eigen::Index>(fy - r.h / 2, 0, h - r.h);
    r.x0 = std::clamp<Eigen::Index>(fx - r.w / 2, 0, w - r.w);
  }
  return r;
}

}  // namespace synth_detail

using synth_detail::Rect;

namespace {

SynthResult make_identity_result(const Image& img, AnomalyType t) {
  SynthResult res;
  res.image = img;
  res.mask = PixelMask::Zero(img.rows(), img.cols());
  res.anomaly_type = t;
  return res;
}

void mark_rect(PixelMask& mask, const Rect& r) {
  mask.block(r.y0, r.x0, r.h, r.w).setConstant(1);
}

// Every pixel outside the placement mask reverts to the source, so a caller-
// supplied foreground confines the anomaly exactly, not just its center.
void restrict_to_foreground(const Image& src, const PixelMask* foreground,
                            SynthResult& res) {
  if (!foreground) return;
  for (Eigen::Index x = 0; x < src.cols(); ++x)
    for (Eigen::Index y = 0; y < src.rows(); ++y) {
      if ((*foreground)(y, x)) continue;
      for (int c = 0; c < 3; ++c) res.image.ch[c](y, x) = src.ch[c](y, x);
      res.mask(y, x) = 0;
    }
}

}  // namespace

SynthResult synth_misplaced(const Image& img, const SynthConfig& cfg, Rng& rng,
                            const PixelMask* foreground) {
  cfg.validate();
  const Eigen::Index h = img.rows(), w = img.cols();
  SynthResult res = make_identity_result(img, AnomalyType::misplaced);

  // worst-case patch dims over the configured fraction/aspect ranges
  const double max_area = cfg.region_area_fraction.second *
                          static_cast<double>(h) * static_cast<double>(w);
  const auto max_side =
      static_cast<Eigen::Index>(std::lround(std::sqrt(max_area * 2.0)));
  if (max_side > h / 2 || max_side > w / 2)
    throw SizingError("image too small for configured patch size");

  std::vector<Rect> dests;
  for (int i = 0; i < cfg.region_count; ++i) {
    Rect dst;
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      dst = synth_detail::sample_region(rng, h, w, cfg, foreground);
      placed = std::none_of(dests.begin(), dests.end(),
                            [&](const Rect& d) { return d.overlaps(dst); });
    }
    if (!placed)
      throw SizingError("cannot place disjoint patches for misplaced type");
    Rect src;
    src.h = dst.h;
    src.w = dst.w;
    src.y0 = static_cast<Eigen::Index>(rng.uniform_index(h - src.h + 1));
    src.x0 = static_cast<Eigen::Index>(rng.uniform_index(w - src.w + 1));
    for (int c = 0; c < 3; ++c)
      res.image.ch[c].block(dst.y0, dst.x0, dst.h, dst.w) =
          img.ch[c].block(src.y0, src.x0, src.h, src.w);
    mark_rect(res.mask, dst);
    dests.push_back(dst);
  }
  restrict_to_foreground(img, foreground, res);
  return res;
}

SynthResult synth_blurry(const Image& img, const SynthConfig& cfg, Rng& rng,
                         const PixelMask* foreground) {
  cfg.validate();
  SynthResult res = make_identity_result(img, AnomalyType::blurry);
  for (int i = 0; i < cfg.region_count; ++i) {
    const Rect r = synth_detail::sample_region(rng, img.rows(), img.cols(),
                                               cfg, foreground);
    const double sigma =
        rng.uniform(cfg.blur_sigma_range.first, cfg.blur_sigma_range.second);
    const Image blurred = synth_detail::gaussian_blur(img, sigma);
    for (int c = 0; c < 3; ++c)
      res.image.ch[c].block(r.y0, r.x0, r.h, r.w) =
          blurred.ch[c].block(r.y0, r.x0, r.h, r.w);
    mark_rect(res.mask, r);
  }
  res.image.clamp01();
  restrict_to_foreground(img, foreground, res);
  return res;
}

SynthResult synth_crack(const Image& img, const SynthConfig& cfg, Rng& rng,
                        const PixelMask* foreground) {
  cfg.validate();
  const Eigen::Index h = img.rows(), w = img.cols();
  SynthResult res = make_identity_result(img, AnomalyType::crack);

  auto walk = [&](PixelMask& mask, double y, double x, double angle,
                  int segments, int thickness) {
    const double base = static_cast<double>(std::min(h, w));
    std::vector<std::pair<double, double>> vertices{{y, x}};
    for (int s = 0; s < segments; ++s) {
      const double step = std::max(2.0, rng.uniform(0.04, 0.12) * base);
      angle += rng.normal(0.0, 0.5);
      double ny = std::clamp(y + step * std::sin(angle), 0.0,
                             static_cast<double>(h - 1));
      double nx = std::clamp(x + step * std::cos(angle), 0.0,
                             static_cast<double>(w - 1));
      synth_detail::draw_thick_segment(mask, y, x, ny, nx, thickness);
      y = ny;
      x = nx;
      vertices.emplace_back(y, x);
    }
    return vertices;
  };

  for (int i = 0; i < cfg.region_count; ++i) {
    PixelMask crack = PixelMask::Zero(h, w);
    double sy = 0, sx = 0;
    bool started = false;
    for (int attempt = 0; attempt < 100 && !started; ++attempt) {
      sy = static_cast<double>(rng.uniform_index(h));
      sx = static_cast<double>(rng.uniform_index(w));
      started = !foreground || (*foreground)(static_cast<Eigen::Index>(sy),
                                             static_cast<Eigen::Index>(sx));
    }
    if (!started) {
      const auto [fy, fx] = synth_detail::random_set_pixel(rng, *foreground);
      if (fy >= 0) {
        sy = static_cast<double>(fy);
        sx = static_cast<double>(fx);
      }
    }
    const int thickness = rng.uniform_int(cfg.crack_thickness_px.first,
                                          cfg.crack_thickness_px.second);
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    auto vertices = walk(crack, sy, sx, angle, cfg.crack_segments, thickness);
    if (cfg.crack_segments >= 3 && rng.bernoulli(0.35)) {
      const auto& v = vertices[rng.uniform_index(vertices.size())];
      const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
      walk(crack, v.first, v.second,
           angle + side * rng.uniform(M_PI / 6.0, M_PI / 3.0),
           std::max(1, cfg.crack_segments / 2), thickness);
    }
    if (foreground) crack = crack * (*foreground);

    // fill with darkened, lightly jittered local background
    const double darken = rng.uniform(0.35, 0.65);
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index x = 0; x < w; ++x) {
        if (!crack(y, x)) continue;
        const double jitter = 1.0 + 0.1 * rng.uniform(-1.0, 1.0);
        for (int c = 0; c < 3; ++c)
          res.image.ch[c](y, x) = std::clamp(
              res.image.ch[c](y, x) * darken * jitter, 0.0, 1.0);
        res.mask(y, x) = 1;
      }
  }
  restrict_to_foreground(img, foreground, res);
  return res;
}

SynthResult synth_noise(const Image& img, const SynthConfig& cfg, Rng& rng,
                        const PixelMask* foreground) {
  cfg.validate();
  SynthResult res = make_identity_result(img, AnomalyType::noise);
  for (int i = 0; i < cfg.region_count; ++i) {
    const Rect r = synth_detail::sample_region(rng, img.rows(), img.cols(),
                                               cfg, foreground);
    const NoiseKind kind =
        cfg.noise_kind ? *cfg.noise_kind
                       : static_cast<NoiseKind>(rng.uniform_index(3));
    const double amplitude =
        rng.uniform(cfg.noise_amplitude.first, cfg.noise_amplitude.second);
    synth_detail::add_noise(res.image, r, kind, amplitude, rng);
    mark_rect(res.mask, r);
  }
  restrict_to_foreground(img, foreground, res);
  return res;
}

SynthResult synth_combined(const Image& img, const SynthConfig& cfg, Rng& rng,
                           const PixelMask* foreground) {
  cfg.validate();
  static constexpr AnomalyType kBase[4] = {
      AnomalyType::misplaced, AnomalyType::blurry, AnomalyType::crack,
      AnomalyType::noise};
  std::vector<AnomalyType> pool(kBase, kBase + 4);
  const int count = rng.uniform_int(2, 4);
  SynthResult res = make_identity_result(img, AnomalyType::combined);
  for (int i = 0; i < count; ++i) {
    const auto j = rng.uniform_index(pool.size());
    SynthConfig sub = cfg;
    sub.anomaly_type = pool[j];
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
    SynthResult part = synthesize(res.image, sub, rng, foreground);
    res.image = std::move(part.image);
    res.mask = res.mask.max(part.mask);
  }
  return res;
}

SynthResult synthesize(const Image& img, const SynthConfig& cfg, Rng& rng,
                       const PixelMask* foreground) {
  switch (cfg.anomaly_type) {
    case AnomalyType::misplaced: return synth_misplaced(img, cfg, rng, foreground);
    case AnomalyType::blurry: return synth_blurry(img, cfg, rng, foreground);
    case AnomalyType::crack: return synth_crack(img, cfg, rng, foreground);
    case AnomalyType::noise: return synth_noise(img, cfg, rng, foreground);
    case AnomalyType::combined: return synth_combined(img, cfg, rng, foreground);
  }
  throw ConfigError("unknown anomaly type");
}

SynthResult synthesize_random_type(const Image& img, const SynthConfig& cfg,
                                   Rng& rng, const PixelMask* foreground) {
  SynthConfig draw = cfg;
  draw.anomaly_type = static_cast<AnomalyType>(rng.uniform_index(5));
  return synthesize(img, draw, rng, foreground);
}

}  // namespace vtf
