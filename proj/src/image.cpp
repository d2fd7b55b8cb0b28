#include "vtfusion/image.hpp"

#include <algorithm>

namespace vtf {

Map2T<Scalar> resize_bilinear(const Map2T<Scalar>& src, Eigen::Index out_h,
                              Eigen::Index out_w) {
  const Eigen::Index h = src.rows(), w = src.cols();
  if (h == out_h && w == out_w) return src;
  Map2T<Scalar> dst(out_h, out_w);
  const Scalar sy = static_cast<Scalar>(h) / static_cast<Scalar>(out_h);
  const Scalar sx = static_cast<Scalar>(w) / static_cast<Scalar>(out_w);
  for (Eigen::Index y = 0; y < out_h; ++y) {
    Scalar fy = (static_cast<Scalar>(y) + Scalar(0.5)) * sy - Scalar(0.5);
    fy = std::clamp(fy, Scalar(0), static_cast<Scalar>(h - 1));
    const Eigen::Index y0 = static_cast<Eigen::Index>(fy);
    const Eigen::Index y1 = std::min(y0 + 1, h - 1);
    const Scalar wy = fy - static_cast<Scalar>(y0);
    for (Eigen::Index x = 0; x < out_w; ++x) {
      Scalar fx = (static_cast<Scalar>(x) + Scalar(0.5)) * sx - Scalar(0.5);
      fx = std::clamp(fx, Scalar(0), static_cast<Scalar>(w - 1));
      const Eigen::Index x0 = static_cast<Eigen::Index>(fx);
      const Eigen::Index x1 = std::min(x0 + 1, w - 1);
      const Scalar wx = fx - static_cast<Scalar>(x0);
      dst(y, x) = (Scalar(1) - wy) * ((Scalar(1) - wx) * src(y0, x0) +
                                      wx * src(y0, x1)) +
                  wy * ((Scalar(1) - wx) * src(y1, x0) + wx * src(y1, x1));
    }
  }
  return dst;
}

Image resize_bilinear(const Image& src, Eigen::Index out_h,
                      Eigen::Index out_w) {
  Image out;
  for (int c = 0; c < 3; ++c)
    out.ch[c] = resize_bilinear(src.ch[c], out_h, out_w);
  return out;
}

PixelMask resize_nearest(const PixelMask& src, Eigen::Index out_h,
                         Eigen::Index out_w) {
  const Eigen::Index h = src.rows(), w = src.cols();
  if (h == out_h && w == out_w) return src;
  PixelMask dst(out_h, out_w);
  for (Eigen::Index y = 0; y < out_h; ++y) {
    const Eigen::Index sy = std::min<Eigen::Index>(y * h / out_h, h - 1);
    for (Eigen::Index x = 0; x < out_w; ++x) {
      const Eigen::Index sx = std::min<Eigen::Index>(x * w / out_w, w - 1);
      dst(y, x) = src(sy, sx);
    }
  }
  return dst;
}

}  // namespace vtf
