#pragma once

// End-to-end synthetic validation of an allocation with real quantizers, plus
// the exhaustive integer oracle and floor-fraction diagnostic.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdkv/allocator.hpp"
#include "rdkv/quantizers.hpp"
#include "rdkv/sensitivity.hpp"

namespace rdkv {

struct HeadResult {
  ComponentId id;
  double weight = 0.0;
  int bits = 0;
  int uniform_bits = 0;
  double mse = 0.0;
  double uniform_mse = 0.0;
};

struct SimulationReport {
  double j_uniform = 0.0;
  double j_allocated = 0.0;
  double realized_ratio = 0.0;
  double predicted_ratio = 0.0;
  std::vector<HeadResult> heads;  // K(l, h) row-major, then V(l, h)
  std::uint64_t seed = 0;
  nlohmann::json config_echo = nlohmann::json::object();
};

// Integer bits at the same total as `bits`, as even as possible: the first
// (total mod n) components by index get one extra bit.
inline std::vector<int> uniform_bits_like(std::span<const int> bits) {
  std::int64_t total = 0;
  for (int b : bits) total += b;
  const auto n = static_cast<std::int64_t>(bits.size());
  const std::int64_t base = total / n;
  const std::int64_t extra = total - base * n;
  std::vector<int> out(bits.size(), static_cast<int>(base));
  for (std::int64_t i = 0; i < extra; ++i) out[static_cast<std::size_t>(i)] += 1;
  return out;
}

inline std::uint64_t head_seed(std::uint64_t master, int layer, int head, int num_kv_heads, Side side) {
  return master + (static_cast<std::uint64_t>(layer) * num_kv_heads + head) * 2 + static_cast<std::uint64_t>(side);
}

// `bits` holds 2N integer widths ordered like build_kv_problem.
inline SimulationReport simulate(const SensitivityMap& sens, const QuantizerSpec& spec_k, const QuantizerSpec& spec_v,
                                 std::span<const int> bits, int rows, int cols, std::uint64_t seed,
                                 nlohmann::json config_echo = nlohmann::json::object()) {
  sens.validate();
  const std::size_t heads = sens.heads();
  if (bits.size() != 2 * heads) {
    throw InputError("simulate: allocation has " + std::to_string(bits.size()) + " entries, sensitivity map needs " +
                     std::to_string(2 * heads));
  }
  for (std::size_t i = 0; i < bits.size(); ++i) check_bits(i < heads ? spec_k : spec_v, bits[i]);
  const std::vector<int> uniform = uniform_bits_like(bits);
  for (std::size_t i = 0; i < bits.size(); ++i) check_bits(i < heads ? spec_k : spec_v, uniform[i]);

  SimulationReport report;
  report.seed = seed;
  report.config_echo = std::move(config_echo);
  report.heads.reserve(bits.size());
  std::size_t index = 0;
  for (Side side : {Side::key, Side::value}) {
    const QuantizerSpec& spec = side == Side::key ? spec_k : spec_v;
    for (int l = 0; l < sens.num_layers; ++l) {
      for (int h = 0; h < sens.num_kv_heads; ++h, ++index) {
        const TensorBlock block = gaussian_block(rows, cols, head_seed(seed, l, h, sens.num_kv_heads, side));
        HeadResult r;
        r.id = {l, h, side};
        r.weight = sens.weight(side, l, h);
        r.bits = bits[index];
        r.uniform_bits = uniform[index];
        r.mse = mean_squared_error(block, quantize_dequantize(block, spec, r.bits));
        r.uniform_mse = r.uniform_bits == r.bits ? r.mse
                                                 : mean_squared_error(block, quantize_dequantize(block, spec, r.uniform_bits));
        report.heads.push_back(r);
      }
    }
  }
  for (const HeadResult& r : report.heads) {
    report.j_allocated += r.weight * r.mse;
    report.j_uniform += r.weight * r.uniform_mse;
  }
  report.realized_ratio = report.j_uniform / report.j_allocated;
  report.predicted_ratio = predict_gain(sens.all_weights());
  return report;
}

// Exhaustive search over every feasible integer allocation; the first
// minimizer in lexicographic order wins ties.
inline Allocation brute_force_integer_optimum(const AllocationProblem& problem) {
  problem.validate();
  const std::size_t n = problem.size();
  const double span = problem.b_max - problem.b_min + 1;
  if (n > 8 || std::pow(span, static_cast<double>(n)) > 1e7) {
    throw InputError("brute force: instance too large (need N <= 8 and (b_max-b_min+1)^N <= 1e7)");
  }
  std::vector<int> bits(n, problem.b_min);
  std::vector<int> best;
  double best_j = std::numeric_limits<double>::infinity();
  const std::int64_t budget = problem.budget;

  // Recursive fill with remaining-budget pruning.
  auto visit = [&](auto&& self, std::size_t i, std::int64_t used) -> void {
    const auto left = static_cast<std::int64_t>(n - i);
    if (i == n) {
      if (used != budget) return;
      const double j = objective(problem, std::span<const int>(bits));
      if (j < best_j) {
        best_j = j;
        best = bits;
      }
      return;
    }
    for (int b = problem.b_min; b <= problem.b_max; ++b) {
      const std::int64_t after = used + b;
      if (after + (left - 1) * problem.b_min > budget) break;
      if (after + (left - 1) * problem.b_max < budget) continue;
      bits[i] = b;
      self(self, i + 1, after);
    }
  };
  visit(visit, 0, 0);

  Allocation out;
  out.mode = AllocationMode::integer;
  out.bits.assign(best.begin(), best.end());
  out.objective = best_j;
  return out;
}

inline double floor_fraction(const Allocation& alloc, int b_min) {
  if (alloc.bits.empty()) return 0.0;
  std::size_t floored = 0;
  for (double b : alloc.bits) {
    if (std::abs(b - b_min) < 1e-9) ++floored;
  }
  return static_cast<double>(floored) / static_cast<double>(alloc.bits.size());
}

}  // namespace rdkv
