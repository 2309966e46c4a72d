#pragma once

// Per-head sensitivity maps: loading, synthesis and the summary statistics
// that drive allocation and gain prediction.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdkv/error.hpp"
#include "rdkv/rng.hpp"

namespace rdkv {

enum class Side { key = 0, value = 1 };

inline std::string_view to_string(Side side) { return side == Side::key ? "key" : "value"; }

inline Side parse_side(std::string_view text) {
  if (text == "key" || text == "k" || text == "K") return Side::key;
  if (text == "value" || text == "v" || text == "V") return Side::value;
  throw InputError("unknown component '" + std::string(text) + "' (expected key or value)");
}

// L x H grids of key and value importance weights, stored row-major by layer.
struct SensitivityMap {
  int num_layers = 0;
  int num_kv_heads = 0;
  std::vector<double> weights_k;
  std::vector<double> weights_v;
  std::string source_label;
  std::string model;

  std::size_t heads() const { return static_cast<std::size_t>(num_layers) * num_kv_heads; }

  std::size_t index(int layer, int head) const {
    return static_cast<std::size_t>(layer) * num_kv_heads + head;
  }

  double weight(Side side, int layer, int head) const {
    return side == Side::key ? weights_k[index(layer, head)] : weights_v[index(layer, head)];
  }

  std::span<const double> weights(Side side) const {
    return side == Side::key ? std::span<const double>(weights_k) : std::span<const double>(weights_v);
  }

  // Keys followed by values; the order used for 2N-component problems.
  std::vector<double> all_weights() const {
    std::vector<double> out(weights_k);
    out.insert(out.end(), weights_v.begin(), weights_v.end());
    return out;
  }

  // Throws InputError naming the first offending (side, layer, head).
  void validate() const {
    if (num_layers <= 0 || num_kv_heads <= 0) {
      throw InputError("num_layers and num_kv_heads must be positive (got " +
                       std::to_string(num_layers) + "x" + std::to_string(num_kv_heads) + ")");
    }
    for (Side side : {Side::key, Side::value}) {
      const auto grid = weights(side);
      if (grid.size() != heads()) {
        throw InputError("weights_" + std::string(side == Side::key ? "k" : "v") + " has " +
                         std::to_string(grid.size()) + " entries, expected " +
                         std::to_string(heads()));
      }
      for (int l = 0; l < num_layers; ++l) {
        for (int h = 0; h < num_kv_heads; ++h) {
          const double w = grid[index(l, h)];
          if (!std::isfinite(w) || !(w > 0.0)) {
            throw InputError("weights_" + std::string(side == Side::key ? "k" : "v") +
                             " at (layer " + std::to_string(l) + ", head " + std::to_string(h) +
                             ") must be finite and > 0 (got " + std::to_string(w) + ")");
          }
        }
      }
    }
  }

  bool operator==(const SensitivityMap&) const = default;
};

struct SensitivityStats {
  double arithmetic_mean = 0.0;
  double geometric_mean = 0.0;
  double log_std = 0.0;  // population standard deviation of ln w
  std::size_t count = 0;

  double am_gm_ratio() const { return arithmetic_mean / geometric_mean; }
};

inline SensitivityStats stats(std::span<const double> weights) {
  if (weights.empty()) throw InputError("stats: empty weight list");
  double sum = 0.0;
  double log_sum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = weights[i];
    if (!std::isfinite(w) || !(w > 0.0)) {
      throw InputError("stats: weight " + std::to_string(i) + " must be finite and > 0");
    }
    sum += w;
    log_sum += std::log(w);
  }
  const double n = static_cast<double>(weights.size());
  const double log_mean = log_sum / n;
  double log_var = 0.0;
  bool all_equal = true;
  for (double w : weights) {
    const double d = std::log(w) - log_mean;
    log_var += d * d;
    all_equal = all_equal && w == weights[0];
  }
  SensitivityStats s;
  s.count = weights.size();
  s.arithmetic_mean = sum / n;
  s.geometric_mean = std::exp(log_mean);
  s.log_std = all_equal ? 0.0 : std::sqrt(log_var / n);
  // Rounding can push GM a few ulps above AM for equal weights.
  if (all_equal) s.geometric_mean = s.arithmetic_mean;
  return s;
}

// Weights with ln w ~ Normal(mu, sigma^2); keys are drawn first (row-major),
// then values, from one Rng(seed) stream.
inline SensitivityMap synth_lognormal(int num_layers, int num_kv_heads, double mu, double sigma,
                                      std::uint64_t seed) {
  if (num_layers <= 0 || num_kv_heads <= 0) {
    throw InputError("synth_lognormal: dimensions must be positive");
  }
  if (!(sigma >= 0.0) || !std::isfinite(mu)) {
    throw InputError("synth_lognormal: sigma must be >= 0 and mu finite");
  }
  SensitivityMap map;
  map.num_layers = num_layers;
  map.num_kv_heads = num_kv_heads;
  map.source_label = "synthetic";
  map.model = "synthetic-lognormal";
  Rng rng(seed);
  const std::size_t n = map.heads();
  map.weights_k.resize(n);
  map.weights_v.resize(n);
  for (auto* grid : {&map.weights_k, &map.weights_v}) {
    for (double& w : *grid) w = std::exp(mu + sigma * rng.normal());
  }
  return map;
}

inline SensitivityMap uniform_sensitivity(int num_layers, int num_kv_heads, double weight = 1.0) {
  SensitivityMap map;
  map.num_layers = num_layers;
  map.num_kv_heads = num_kv_heads;
  map.source_label = "synthetic";
  map.model = "uniform";
  map.weights_k.assign(map.heads(), weight);
  map.weights_v.assign(map.heads(), weight);
  map.validate();
  return map;
}

namespace detail {

inline std::vector<double> read_grid(const nlohmann::json& j, const char* field, int layers,
                                     int heads) {
  if (!j.contains(field) || !j.at(field).is_array()) {
    throw InputError(std::string("sensitivity file: missing array field '") + field + "'");
  }
  const auto& rows = j.at(field);
  if (rows.size() != static_cast<std::size_t>(layers)) {
    throw InputError(std::string(field) + " has " + std::to_string(rows.size()) +
                     " rows but num_layers = " + std::to_string(layers));
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(layers) * heads);
  for (int l = 0; l < layers; ++l) {
    const auto& row = rows[l];
    if (!row.is_array() || row.size() != static_cast<std::size_t>(heads)) {
      throw InputError(std::string(field) + " row " + std::to_string(l) +
                       " does not have num_kv_heads = " + std::to_string(heads) + " entries");
    }
    for (int h = 0; h < heads; ++h) {
      if (!row[h].is_number()) {
        throw InputError(std::string(field) + " at (layer " + std::to_string(l) + ", head " +
                         std::to_string(h) + ") is not a number");
      }
      out.push_back(row[h].get<double>());
    }
  }
  return out;
}

inline nlohmann::json write_grid(const std::vector<double>& grid, int layers, int heads) {
  nlohmann::json rows = nlohmann::json::array();
  for (int l = 0; l < layers; ++l) {
    nlohmann::json row = nlohmann::json::array();
    for (int h = 0; h < heads; ++h) row.push_back(grid[static_cast<std::size_t>(l) * heads + h]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline SensitivityMap sensitivity_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("sensitivity file: top level must be an object");
  for (const char* key : {"num_layers", "num_kv_heads"}) {
    if (!j.contains(key) || !j.at(key).is_number_integer()) {
      throw InputError(std::string("sensitivity file: missing integer field '") + key + "'");
    }
  }
  SensitivityMap map;
  map.num_layers = j.at("num_layers").get<int>();
  map.num_kv_heads = j.at("num_kv_heads").get<int>();
  if (map.num_layers <= 0 || map.num_kv_heads <= 0) {
    throw InputError("sensitivity file: num_layers and num_kv_heads must be positive");
  }
  map.model = j.value("model", std::string{});
  map.source_label = j.value("source_label", std::string{});
  map.weights_k = detail::read_grid(j, "weights_k", map.num_layers, map.num_kv_heads);
  map.weights_v = detail::read_grid(j, "weights_v", map.num_layers, map.num_kv_heads);
  map.validate();
  return map;
}

inline nlohmann::json to_json(const SensitivityMap& map) {
  return {{"model", map.model},
          {"num_layers", map.num_layers},
          {"num_kv_heads", map.num_kv_heads},
          {"weights_k", detail::write_grid(map.weights_k, map.num_layers, map.num_kv_heads)},
          {"weights_v", detail::write_grid(map.weights_v, map.num_layers, map.num_kv_heads)},
          {"source_label", map.source_label}};
}

inline SensitivityMap load_sensitivity(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open sensitivity file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("sensitivity file '" + path + "': parse error: " + e.what());
  }
  return sensitivity_from_json(j);
}

}  // namespace rdkv
