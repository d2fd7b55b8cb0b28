// PNG decode/encode. The dataset format (MVTec-AD layout) and every file the
// CLI emits are PNG; other formats are rejected with a DataError.

#pragma once

#include <filesystem>

#include "vtfusion/image.hpp"

namespace vtf {

Image read_image_png(const std::filesystem::path& path);
void write_image_png(const std::filesystem::path& path, const Image& img);

// Masks are 8-bit grayscale, 0/255 on disk; binarized at >127 on load.
PixelMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const PixelMask& mask);

// Grayscale render of an arbitrary-range map, min-max normalized.
void write_map_png(const std::filesystem::path& path, const PredictionMap& map);

// Raw float64 map container for bit-exact round trips (little magic header +
// dims + row-major doubles).
void write_map_raw(const std::filesystem::path& path, const PredictionMap& map);
PredictionMap read_map_raw(const std::filesystem::path& path);

}  // namespace vtf
