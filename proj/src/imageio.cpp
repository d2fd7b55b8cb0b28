#include "vtfusion/imageio.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace vtf {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Decodes any PNG into 8-bit RGB rows.
void decode_png_rgb8(const std::filesystem::path& path, png_uint_32& width,
                     png_uint_32& height, std::vector<unsigned char>& rgb) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw DataError("cannot open image file: " + path.string());

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw DataError("not a PNG file: " + path.string());

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng init failed");
  }
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("PNG decode error: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);             // palette/low-bit-depth -> 8-bit
  png_set_strip_16(png);           // 16-bit -> 8-bit
  png_set_strip_alpha(png);        // drop alpha
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  rgb.assign(static_cast<std::size_t>(height) * stride, 0);
  row_ptrs.resize(height);
  for (png_uint_32 y = 0; y < height; ++y)
    row_ptrs[y] = rgb.data() + static_cast<std::size_t>(y) * stride;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
}

void encode_png(const std::filesystem::path& path, png_uint_32 width,
                png_uint_32 height, int color_type,
                const std::vector<unsigned char>& bytes, std::size_t stride) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot write file: " + path.string());
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng init failed");
  }
  std::vector<png_bytep> row_ptrs(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encode error: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 y = 0; y < height; ++y)
    row_ptrs[y] = const_cast<png_bytep>(bytes.data() +
                                        static_cast<std::size_t>(y) * stride);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

unsigned char to_byte(Scalar v) {
  const Scalar c = std::clamp(v, Scalar(0), Scalar(1));
  return static_cast<unsigned char>(std::lround(c * Scalar(255)));
}

}  // namespace

Image read_image_png(const std::filesystem::path& path) {
  png_uint_32 w = 0, h = 0;
  std::vector<unsigned char> rgb;
  decode_png_rgb8(path, w, h, rgb);
  Image img(h, w);
  const std::size_t stride = static_cast<std::size_t>(w) * 3;
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.ch[c](y, x) =
            static_cast<Scalar>(rgb[y * stride + x * 3 + c]) / Scalar(255);
  return img;
}

void write_image_png(const std::filesystem::path& path, const Image& img) {
  const auto h = static_cast<png_uint_32>(img.rows());
  const auto w = static_cast<png_uint_32>(img.cols());
  const std::size_t stride = static_cast<std::size_t>(w) * 3;
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * stride);
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        bytes[y * stride + x * 3 + c] = to_byte(img.ch[c](y, x));
  encode_png(path, w, h, PNG_COLOR_TYPE_RGB, bytes, stride);
}

PixelMask read_mask_png(const std::filesystem::path& path) {
  png_uint_32 w = 0, h = 0;
  std::vector<unsigned char> rgb;
  decode_png_rgb8(path, w, h, rgb);
  PixelMask mask(h, w);
  const std::size_t stride = static_cast<std::size_t>(w) * 3;
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      mask(y, x) = rgb[y * stride + x * 3] > 127 ? 1 : 0;
  return mask;
}

void write_mask_png(const std::filesystem::path& path, const PixelMask& mask) {
  const auto h = static_cast<png_uint_32>(mask.rows());
  const auto w = static_cast<png_uint_32>(mask.cols());
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w);
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      bytes[static_cast<std::size_t>(y) * w + x] = mask(y, x) ? 255 : 0;
  encode_png(path, w, h, PNG_COLOR_TYPE_GRAY, bytes, w);
}

void write_map_png(const std::filesystem::path& path,
                   const PredictionMap& map) {
  const auto h = static_cast<png_uint_32>(map.rows());
  const auto w = static_cast<png_uint_32>(map.cols());
  const Scalar lo = map.minCoeff();
  const Scalar hi = map.maxCoeff();
  const Scalar span = hi - lo > Scalar(0) ? hi - lo : Scalar(1);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w);
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      bytes[static_cast<std::size_t>(y) * w + x] =
          to_byte((map(y, x) - lo) / span);
  encode_png(path, w, h, PNG_COLOR_TYPE_GRAY, bytes, w);
}

namespace {
constexpr char kMapMagic[8] = {'V', 'T', 'F', 'M', 'A', 'P', '0', '1'};
}

void write_map_raw(const std::filesystem::path& path,
                   const PredictionMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path.string());
  out.write(kMapMagic, sizeof(kMapMagic));
  const std::uint64_t dims[2] = {static_cast<std::uint64_t>(map.rows()),
                                 static_cast<std::uint64_t>(map.cols())};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  for (Eigen::Index y = 0; y < map.rows(); ++y)
    for (Eigen::Index x = 0; x < map.cols(); ++x) {
      const double v = map(y, x);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  if (!out) throw DataError("short write: " + path.string());
}

PredictionMap read_map_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMapMagic, sizeof(magic)) != 0)
    throw DataError("not a map file: " + path.string());
  std::uint64_t dims[2];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  PredictionMap map(static_cast<Eigen::Index>(dims[0]),
                    static_cast<Eigen::Index>(dims[1]));
  for (Eigen::Index y = 0; y < map.rows(); ++y)
    for (Eigen::Index x = 0; x < map.cols(); ++x) {
      double v;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      map(y, x) = v;
    }
  if (!in) throw DataError("truncated map file: " + path.string());
  return map;
}

}  // namespace vtf
