#pragma once

// Round-to-nearest KV quantizer simulators on synthetic head tensors.
//
// Grouping conventions:
//   per-token   one scale per row (token)
//   per-channel one scale per column, spanning every token of the block
// Symmetric grids have 2^(b-1) - 1 positive levels, so b = 1 is rejected for
// them. Rounding is half-away-from-zero.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rdkv/distortion.hpp"
#include "rdkv/error.hpp"
#include "rdkv/rng.hpp"

namespace rdkv {

enum class Scheme {
  per_token_symmetric,
  per_token_asymmetric,
  per_channel_symmetric,
  hadamard_per_token_symmetric,
  lloyd_max_gaussian,
};

inline constexpr std::array<Scheme, 5> kAllSchemes = {
    Scheme::per_token_symmetric, Scheme::per_token_asymmetric, Scheme::per_channel_symmetric,
    Scheme::hadamard_per_token_symmetric, Scheme::lloyd_max_gaussian};

inline std::string_view scheme_label(Scheme s) {
  switch (s) {
    case Scheme::per_token_symmetric: return "per-token-symmetric";
    case Scheme::per_token_asymmetric: return "per-token-asymmetric";
    case Scheme::per_channel_symmetric: return "per-channel-symmetric";
    case Scheme::hadamard_per_token_symmetric: return "hadamard-per-token-symmetric";
    case Scheme::lloyd_max_gaussian: return "lloyd-max";
  }
  return "?";
}

inline std::string valid_scheme_labels() {
  std::string out;
  for (Scheme s : kAllSchemes) {
    if (!out.empty()) out += ", ";
    out += scheme_label(s);
  }
  return out;
}

// Accepts the labels above and their snake_case spellings.
inline Scheme parse_scheme(std::string_view text) {
  std::string norm(text);
  std::replace(norm.begin(), norm.end(), '_', '-');
  if (norm == "lloyd-max-gaussian") return Scheme::lloyd_max_gaussian;
  for (Scheme s : kAllSchemes) {
    if (norm == scheme_label(s)) return s;
  }
  throw InputError("unknown quantizer '" + std::string(text) + "'; valid: " + valid_scheme_labels());
}

inline bool is_symmetric(Scheme s) {
  return s == Scheme::per_token_symmetric || s == Scheme::per_channel_symmetric ||
         s == Scheme::hadamard_per_token_symmetric;
}

struct QuantizerSpec {
  Scheme scheme = Scheme::per_token_symmetric;
  std::uint64_t seed = 42;  // random sign diagonal for the rotation scheme
  std::string label;

  std::string name() const { return label.empty() ? std::string(scheme_label(scheme)) : label; }
};

// One head's cached states: rows = tokens, cols = head dimension.
struct TensorBlock {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  TensorBlock() = default;
  TensorBlock(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
  TensorBlock(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    validate();
  }

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  std::size_t size() const { return data.size(); }

  void validate() const {
    if (rows <= 0 || cols <= 0) throw InputError("tensor block dimensions must be positive");
    if (data.size() != static_cast<std::size_t>(rows) * cols) {
      throw InputError("tensor block data does not match rows x cols");
    }
    for (double x : data) {
      if (!std::isfinite(x)) throw InputError("tensor block contains a non-finite entry");
    }
  }
};

inline constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place orthonormal fast Walsh-Hadamard transform; it is its own inverse.
inline void hadamard_transform_inplace(std::span<double> v) {
  const std::size_t n = v.size();
  if (!is_power_of_two(n)) {
    throw InputError("hadamard transform: length " + std::to_string(n) + " is not a power of two");
  }
  for (std::size_t half = 1; half < n; half *= 2) {
    for (std::size_t start = 0; start < n; start += 2 * half) {
      for (std::size_t i = start; i < start + half; ++i) {
        const double a = v[i];
        const double b = v[i + half];
        v[i] = a + b;
        v[i + half] = a - b;
      }
    }
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  for (double& x : v) x *= norm;
}

inline std::vector<double> hadamard_transform(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  hadamard_transform_inplace(out);
  return out;
}

inline double mean_squared_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw InputError("mse: size mismatch or empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

inline double mean_squared_error(const TensorBlock& a, const TensorBlock& b) {
  return mean_squared_error(std::span<const double>(a.data), std::span<const double>(b.data));
}

namespace detail {

// A strided view of one quantization group (a row or a column).
struct Group {
  double* base;
  std::size_t count;
  std::size_t stride;
  double& operator[](std::size_t i) const { return base[i * stride]; }
};

inline void symmetric_group(Group g, int bits) {
  const double qmax = static_cast<double>((1 << (bits - 1)) - 1);
  double max_abs = 0.0;
  for (std::size_t i = 0; i < g.count; ++i) max_abs = std::max(max_abs, std::abs(g[i]));
  if (max_abs == 0.0) return;  // all zeros reconstruct exactly
  const double scale = max_abs / qmax;
  for (std::size_t i = 0; i < g.count; ++i) {
    const double q = std::clamp(std::round(g[i] / scale), -qmax, qmax);
    g[i] = q * scale;
  }
}

inline void asymmetric_group(Group g, int bits) {
  const double levels = static_cast<double>((1 << bits) - 1);
  double lo = g[0];
  double hi = g[0];
  for (std::size_t i = 1; i < g.count; ++i) {
    lo = std::min(lo, g[i]);
    hi = std::max(hi, g[i]);
  }
  if (hi == lo) return;  // constant group reconstructs exactly
  const double scale = (hi - lo) / levels;
  for (std::size_t i = 0; i < g.count; ++i) {
    const double q = std::clamp(std::round((g[i] - lo) / scale), 0.0, levels);
    g[i] = lo + q * scale;
  }
}

inline std::vector<double> random_signs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> signs(n);
  for (double& s : signs) s = (rng.next_u64() & 1u) ? -1.0 : 1.0;
  return signs;
}

}  // namespace detail

inline void check_bits(const QuantizerSpec& spec, int bits) {
  if (bits < kMinBits || bits > kMaxBits) {
    throw InputError("quantizer bits must be in [1, 8] (got " + std::to_string(bits) + ")");
  }
  if (bits == 1 && is_symmetric(spec.scheme)) {
    throw InputError("symmetric quantizer '" + std::string(scheme_label(spec.scheme)) +
                     "' needs at least 2 bits (2^(b-1)-1 positive levels)");
  }
}

inline TensorBlock quantize_dequantize(const TensorBlock& block, const QuantizerSpec& spec, int bits) {
  check_bits(spec, bits);
  if (spec.scheme == Scheme::hadamard_per_token_symmetric && !is_power_of_two(static_cast<std::size_t>(block.cols))) {
    throw InputError("hadamard quantizer requires a power-of-two head dimension (got " +
                     std::to_string(block.cols) + ")");
  }
  TensorBlock out = block;
  const auto rows = static_cast<std::size_t>(block.rows);
  const auto cols = static_cast<std::size_t>(block.cols);
  switch (spec.scheme) {
    case Scheme::per_token_symmetric:
      for (std::size_t r = 0; r < rows; ++r) detail::symmetric_group({out.data.data() + r * cols, cols, 1}, bits);
      break;
    case Scheme::per_token_asymmetric:
      for (std::size_t r = 0; r < rows; ++r) detail::asymmetric_group({out.data.data() + r * cols, cols, 1}, bits);
      break;
    case Scheme::per_channel_symmetric:
      for (std::size_t c = 0; c < cols; ++c) detail::symmetric_group({out.data.data() + c, rows, cols}, bits);
      break;
    case Scheme::hadamard_per_token_symmetric: {
      const auto signs = detail::random_signs(cols, spec.seed);
      for (std::size_t r = 0; r < rows; ++r) {
        std::span<double> row(out.data.data() + r * cols, cols);
        for (std::size_t c = 0; c < cols; ++c) row[c] *= signs[c];
        hadamard_transform_inplace(row);
        detail::symmetric_group({row.data(), cols, 1}, bits);
        hadamard_transform_inplace(row);
        for (std::size_t c = 0; c < cols; ++c) row[c] *= signs[c];
      }
      break;
    }
    case Scheme::lloyd_max_gaussian: {
      const LloydMaxResult& book = lloyd_max_codebook(bits);
      for (double& x : out.data) {
        const auto cell = std::upper_bound(book.boundaries.begin(), book.boundaries.end(), x) -
                          book.boundaries.begin();
        x = book.levels[static_cast<std::size_t>(cell)];
      }
      break;
    }
  }
  return out;
}

enum class DataDistribution {
  gaussian,
  heavy_tailed,  // unit Gaussian with 1% of entries scaled by 20
};

inline TensorBlock gaussian_block(int rows, int cols, std::uint64_t seed,
                                  DataDistribution dist = DataDistribution::gaussian) {
  if (rows <= 0 || cols <= 0) throw InputError("block dimensions must be positive");
  TensorBlock block(rows, cols);
  Rng rng(seed);
  for (double& x : block.data) {
    x = rng.normal();
    if (dist == DataDistribution::heavy_tailed && rng.uniform() < 0.01) x *= 20.0;
  }
  return block;
}

inline std::vector<MsePoint> measure_mse(const QuantizerSpec& spec, std::span<const int> bits_list,
                                         int rows, int cols, std::uint64_t seed,
                                         DataDistribution dist = DataDistribution::gaussian) {
  for (int b : bits_list) check_bits(spec, b);
  const TensorBlock block = gaussian_block(rows, cols, seed, dist);
  std::vector<MsePoint> points;
  points.reserve(bits_list.size());
  for (int b : bits_list) {
    points.push_back({static_cast<double>(b), mean_squared_error(block, quantize_dequantize(block, spec, b))});
  }
  return points;
}

}  // namespace rdkv
