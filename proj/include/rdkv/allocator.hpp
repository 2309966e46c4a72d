#pragma once

// Bit allocation over weighted exponential distortion:
//
//   minimize  J(b) = sum_i w_i * D_i(b_i)
//   s.t.      sum_i b_i = B,  b_min <= b_i <= b_max
//
// continuous_allocate solves the real-valued problem (reverse waterfilling,
// heterogeneous models allowed); greedy_allocate solves the integer problem
// by marginal gain, which is optimal because every D_i is convex.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "rdkv/distortion.hpp"
#include "rdkv/error.hpp"
#include "rdkv/sensitivity.hpp"

namespace rdkv {

struct ComponentId {
  int layer = 0;
  int head = 0;
  Side side = Side::key;

  bool operator==(const ComponentId&) const = default;
};

struct Component {
  ComponentId id;
  double weight = 1.0;
  DistortionModel model;
};

struct AllocationProblem {
  std::vector<Component> components;
  std::int64_t budget = 0;
  int b_min = 1;
  int b_max = kMaxBits;

  std::size_t size() const { return components.size(); }
  double avg_bits() const { return static_cast<double>(budget) / static_cast<double>(size()); }

  void validate() const {
    if (components.empty()) throw InputError("allocation problem has no components");
    if (b_min < 1) throw InfeasibleError("b_min must be >= 1 (got " + std::to_string(b_min) + ")");
    if (b_max > kMaxBits) {
      throw InfeasibleError("b_max must be <= 8 (got " + std::to_string(b_max) + ")");
    }
    if (b_min > b_max) {
      throw InfeasibleError("b_min " + std::to_string(b_min) + " exceeds b_max " + std::to_string(b_max));
    }
    const auto n = static_cast<std::int64_t>(size());
    if (budget < n * b_min) {
      throw InfeasibleError("budget " + std::to_string(budget) + " is below N*b_min = " +
                            std::to_string(n * b_min) + " (b_min = " + std::to_string(b_min) + ")");
    }
    if (budget > n * b_max) {
      throw InfeasibleError("budget " + std::to_string(budget) + " exceeds N*b_max = " +
                            std::to_string(n * b_max) + " (b_max = " + std::to_string(b_max) + ")");
    }
    for (std::size_t i = 0; i < size(); ++i) {
      const double w = components[i].weight;
      if (!std::isfinite(w) || !(w > 0.0)) {
        throw InputError("component " + std::to_string(i) + " has a non-positive weight");
      }
      components[i].model.validate();
    }
  }
};

enum class AllocationMode { continuous, integer };

struct Allocation {
  AllocationMode mode = AllocationMode::integer;
  std::vector<double> bits;
  double objective = 0.0;
  // ln of the water level; NaN for integer allocations.
  double log_water_level = std::numeric_limits<double>::quiet_NaN();

  std::vector<int> integer_bits() const {
    std::vector<int> out(bits.size());
    std::transform(bits.begin(), bits.end(), out.begin(), [](double b) { return static_cast<int>(std::lround(b)); });
    return out;
  }
};

// Ties go to the even neighbour.
inline std::int64_t round_half_even(double x) {
  const double lower = std::floor(x);
  const double frac = x - lower;
  auto r = static_cast<std::int64_t>(lower);
  if (frac > 0.5 || (frac == 0.5 && (r % 2 != 0))) ++r;
  return r;
}

inline double objective(const AllocationProblem& problem, std::span<const double> bits) {
  double j = 0.0;
  for (std::size_t i = 0; i < problem.size(); ++i) {
    j += problem.components[i].weight * problem.components[i].model.eval(bits[i]);
  }
  return j;
}

inline double objective(const AllocationProblem& problem, std::span<const int> bits) {
  std::vector<double> real(bits.begin(), bits.end());
  return objective(problem, std::span<const double>(real));
}

// Problem with one shared model and B = round_half_even(avg_bits * N).
inline AllocationProblem make_problem(std::span<const double> weights, const DistortionModel& model,
                                      double avg_bits, int b_min, int b_max) {
  AllocationProblem p;
  p.components.reserve(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    p.components.push_back({{0, static_cast<int>(i), Side::key}, weights[i], model});
  }
  p.budget = round_half_even(avg_bits * static_cast<double>(weights.size()));
  p.b_min = b_min;
  p.b_max = b_max;
  return p;
}

// ---------------------------------------------------------------------------
// Continuous reverse waterfilling.
//
// A free component sits where its marginal w*alpha*ln(beta)*beta^(-b) equals
// the water level lambda, i.e. b(lambda) = (ln(w*alpha*ln beta) - ln lambda) / ln beta.
// Bisection on ln(lambda) finds the active set; the level over the free set is
// then solved in closed form and pins are adjusted until every bound is
// consistent (at most N adjustments).

inline Allocation continuous_allocate(const AllocationProblem& problem) {
  problem.validate();
  const std::size_t n = problem.size();
  const double budget = static_cast<double>(problem.budget);
  const double lo_bits = problem.b_min;
  const double hi_bits = problem.b_max;

  std::vector<double> log_gain(n);
  std::vector<double> log_beta(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = problem.components[i];
    log_beta[i] = std::log(c.model.beta);
    log_gain[i] = std::log(c.weight) + std::log(c.model.alpha) + std::log(log_beta[i]);
  }
  auto unclipped = [&](std::size_t i, double log_level) { return (log_gain[i] - log_level) / log_beta[i]; };
  auto total_at = [&](double log_level) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::clamp(unclipped(i, log_level), lo_bits, hi_bits);
    return s;
  };

  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    lo = std::min(lo, log_gain[i] - hi_bits * log_beta[i]);
    hi = std::max(hi, log_gain[i] - lo_bits * log_beta[i]);
  }
  double level = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    level = 0.5 * (lo + hi);
    const double total = total_at(level);
    if (std::abs(total - budget) < 1e-9) break;
    if (total > budget) {
      lo = level;
    } else {
      hi = level;
    }
  }

  enum class Pin { free, low, high };
  std::vector<Pin> pin(n, Pin::free);
  for (std::size_t i = 0; i < n; ++i) {
    const double b = unclipped(i, level);
    if (b <= lo_bits) pin[i] = Pin::low;
    if (b >= hi_bits) pin[i] = Pin::high;
  }

  for (std::size_t round = 0; round <= 2 * n + 1; ++round) {
    double free_budget = budget;
    double sum_ratio = 0.0;
    double sum_inv = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (pin[i] == Pin::low) free_budget -= lo_bits;
      if (pin[i] == Pin::high) free_budget -= hi_bits;
      if (pin[i] == Pin::free) {
        sum_ratio += log_gain[i] / log_beta[i];
        sum_inv += 1.0 / log_beta[i];
      }
    }
    if (sum_inv > 0.0) level = (sum_ratio - free_budget) / sum_inv;
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const double b = unclipped(i, level);
      if (pin[i] == Pin::free && b < lo_bits) {
        pin[i] = Pin::low;
        changed = true;
      } else if (pin[i] == Pin::free && b > hi_bits) {
        pin[i] = Pin::high;
        changed = true;
      }
    }
    if (!changed) {
      // Release pins the level no longer supports (bisection placed them by a hair).
      for (std::size_t i = 0; i < n && sum_inv > 0.0; ++i) {
        const double b = unclipped(i, level);
        if ((pin[i] == Pin::low && b > lo_bits) || (pin[i] == Pin::high && b < hi_bits)) {
          pin[i] = Pin::free;
          changed = true;
          break;
        }
      }
    }
    if (!changed) break;
  }

  Allocation out;
  out.mode = AllocationMode::continuous;
  out.log_water_level = level;
  out.bits.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (pin[i]) {
      case Pin::low: out.bits[i] = lo_bits; break;
      case Pin::high: out.bits[i] = hi_bits; break;
      case Pin::free: out.bits[i] = unclipped(i, level); break;
    }
  }
  out.objective = objective(problem, std::span<const double>(out.bits));
  return out;
}

// ---------------------------------------------------------------------------
// Greedy integer allocation: start everyone at b_min and hand out the
// remaining B - N*b_min bits one at a time to the largest weighted marginal
// gain w_i * (D_i(b_i) - D_i(b_i + 1)) among components below b_max.
// Equal gains go to the lower component index.

inline double marginal_gain(const Component& c, int bits) {
  return c.weight * (c.model.eval(bits) - c.model.eval(bits + 1));
}

inline Allocation greedy_allocate(const AllocationProblem& problem) {
  problem.validate();
  const std::size_t n = problem.size();
  std::vector<int> bits(n, problem.b_min);

  struct Entry {
    double gain;
    std::size_t index;
  };
  auto lower_priority = [](const Entry& a, const Entry& b) {
    if (a.gain != b.gain) return a.gain < b.gain;
    return a.index > b.index;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(lower_priority)> heap(lower_priority);
  if (problem.b_min < problem.b_max) {
    for (std::size_t i = 0; i < n; ++i) heap.push({marginal_gain(problem.components[i], bits[i]), i});
  }
  std::int64_t remaining = problem.budget - static_cast<std::int64_t>(n) * problem.b_min;
  while (remaining > 0) {
    const Entry top = heap.top();
    heap.pop();
    const int b = ++bits[top.index];
    --remaining;
    if (b < problem.b_max) heap.push({marginal_gain(problem.components[top.index], b), top.index});
  }

  Allocation out;
  out.mode = AllocationMode::integer;
  out.bits.assign(bits.begin(), bits.end());
  out.objective = objective(problem, std::span<const double>(out.bits));
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics.

struct MarginalGainEntry {
  std::size_t index;
  ComponentId id;
  double gain;
};

// Components already at b_max are left out; sorted by gain, ties by index.
inline std::vector<MarginalGainEntry> marginal_gain_table(std::span<const Component> components,
                                                          std::span<const int> bits, int b_max = kMaxBits) {
  if (bits.size() != components.size()) throw InputError("marginal_gain_table: size mismatch");
  std::vector<MarginalGainEntry> table;
  for (std::size_t i = 0; i < components.size(); ++i) {
    if (bits[i] >= b_max) continue;
    table.push_back({i, components[i].id, marginal_gain(components[i], bits[i])});
  }
  std::stable_sort(table.begin(), table.end(),
                   [](const MarginalGainEntry& a, const MarginalGainEntry& b) { return a.gain > b.gain; });
  return table;
}

// Distortion ratio of uniform over optimal allocation predicted from the
// weights alone: arithmetic mean / geometric mean.
inline double predict_gain(std::span<const double> weights) { return stats(weights).am_gm_ratio(); }

// J_uniform / J_continuous_optimum. The uniform baseline is evaluated at the
// real-valued average B/N even when that is not an integer.
inline double realized_gain(const AllocationProblem& problem) {
  const Allocation best = continuous_allocate(problem);
  const std::vector<double> uniform(problem.size(), problem.avg_bits());
  return objective(problem, std::span<const double>(uniform)) / best.objective;
}

// ---------------------------------------------------------------------------
// Key/value allocation over 2N components.

struct KvAllocation {
  AllocationProblem problem;
  Allocation allocation;
  int num_layers = 0;
  int num_kv_heads = 0;
  double mean_bits_k = 0.0;
  double mean_bits_v = 0.0;

  std::size_t heads() const { return static_cast<std::size_t>(num_layers) * num_kv_heads; }
};

// Components are ordered K(l, h) row-major, then V(l, h).
inline AllocationProblem build_kv_problem(const SensitivityMap& sens, const DistortionModel& model_k,
                                          const DistortionModel& model_v, double avg_bits, int b_min,
                                          int b_max) {
  sens.validate();
  AllocationProblem p;
  p.b_min = b_min;
  p.b_max = b_max;
  for (Side side : {Side::key, Side::value}) {
    const DistortionModel& model = side == Side::key ? model_k : model_v;
    for (int l = 0; l < sens.num_layers; ++l) {
      for (int h = 0; h < sens.num_kv_heads; ++h) {
        p.components.push_back({{l, h, side}, sens.weight(side, l, h), model});
      }
    }
  }
  p.budget = round_half_even(avg_bits * static_cast<double>(p.size()));
  return p;
}

inline KvAllocation allocate_kv_separate(const SensitivityMap& sens, const DistortionModel& model_k,
                                         const DistortionModel& model_v, double avg_bits, int b_min, int b_max,
                                         AllocationMode mode = AllocationMode::integer) {
  KvAllocation out;
  out.problem = build_kv_problem(sens, model_k, model_v, avg_bits, b_min, b_max);
  out.allocation = mode == AllocationMode::integer ? greedy_allocate(out.problem) : continuous_allocate(out.problem);
  out.num_layers = sens.num_layers;
  out.num_kv_heads = sens.num_kv_heads;
  const std::size_t heads = out.heads();
  double sum_k = 0.0;
  double sum_v = 0.0;
  for (std::size_t i = 0; i < heads; ++i) {
    sum_k += out.allocation.bits[i];
    sum_v += out.allocation.bits[heads + i];
  }
  out.mean_bits_k = sum_k / static_cast<double>(heads);
  out.mean_bits_v = sum_v / static_cast<double>(heads);
  return out;
}

// One distortion model shared by keys and values.
inline KvAllocation allocate_kv_joint(const SensitivityMap& sens, const DistortionModel& model, double avg_bits,
                                      int b_min, int b_max, AllocationMode mode = AllocationMode::integer) {
  return allocate_kv_separate(sens, model, model, avg_bits, b_min, b_max, mode);
}

}  // namespace rdkv
