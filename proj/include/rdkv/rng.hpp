#pragma once

// Deterministic random streams.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The uniform and normal transforms below are implemented here
// (53-bit mantissa uniform, Box-Muller normal) because the standard library
// distributions are implementation-defined. Together they make every
// synthetic tensor and weight map reproducible across toolchains.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace rdkv {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; values are produced in pairs.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rdkv
