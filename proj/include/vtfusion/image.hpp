// RGB image container and resampling helpers.

#pragma once

#include <array>

#include "vtfusion/common.hpp"

namespace vtf {

// H x W x 3 intensity image with values in [0, 1]. Channel planes are
// (row, col) = (y, x) Eigen arrays.
struct Image {
  std::array<Map2T<Scalar>, 3> ch;

  Image() = default;
  Image(Eigen::Index h, Eigen::Index w) {
    for (auto& c : ch) c = Map2T<Scalar>::Zero(h, w);
  }

  Eigen::Index rows() const { return ch[0].rows(); }
  Eigen::Index cols() const { return ch[0].cols(); }

  bool same_shape(const Image& o) const {
    return rows() == o.rows() && cols() == o.cols();
  }

  static Image constant(Eigen::Index h, Eigen::Index w, Scalar v) {
    Image im(h, w);
    for (auto& c : im.ch) c.setConstant(v);
    return im;
  }

  void clamp01() {
    for (auto& c : ch) c = c.min(Scalar(1)).max(Scalar(0));
  }
};

inline bool operator==(const Image& a, const Image& b) {
  if (!a.same_shape(b)) return false;
  for (int c = 0; c < 3; ++c)
    if (!(a.ch[c] == b.ch[c]).all()) return false;
  return true;
}

// Bilinear resize of a single plane (pixel-center alignment).
Map2T<Scalar> resize_bilinear(const Map2T<Scalar>& src, Eigen::Index out_h,
                              Eigen::Index out_w);

Image resize_bilinear(const Image& src, Eigen::Index out_h, Eigen::Index out_w);

// Nearest-neighbour resize; used for ground-truth masks.
PixelMask resize_nearest(const PixelMask& src, Eigen::Index out_h,
                         Eigen::Index out_w);

inline std::uint64_t fingerprint(const Image& im) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& c : im.ch) h = fingerprint(c, h);
  return h;
}

}  // namespace vtf
