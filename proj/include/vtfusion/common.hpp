// Shared scalar/type aliases and error taxonomy for the vtfusion library.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace vtf {

using Scalar = double;

template <class S>
using Map2T = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecT = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// h x w single-channel map, (row, col) = (y, x).
using PredictionMap = Map2T<Scalar>;
// H x W binary mask, 0 = normal, 1 = anomalous.
using PixelMask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

using Mat = MatT<Scalar>;
using Vec = VecT<Scalar>;

// Error taxonomy. The CLI maps each class to a distinct exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ArgumentError : Error {
  using Error::Error;
};
struct ShapeError : ArgumentError {
  using ArgumentError::ArgumentError;
};
struct SizingError : ArgumentError {
  using ArgumentError::ArgumentError;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct LoadError : DataError {
  using DataError::DataError;
};
struct MetricError : Error {
  using Error::Error;
};
struct TrainingError : Error {
  using Error::Error;
};

// FNV-1a over raw bytes; used for frozen-weight and checkpoint digests.
inline std::uint64_t fingerprint_bytes(const void* data, std::size_t n,
                                       std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

template <class Derived>
std::uint64_t fingerprint(const Eigen::DenseBase<Derived>& m,
                          std::uint64_t h = 0xcbf29ce484222325ull) {
  using S = typename Derived::Scalar;
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      S v = m(r, c);
      h = fingerprint_bytes(&v, sizeof(S), h);
    }
  return h;
}

inline std::string fingerprint_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

}  // namespace vtf
