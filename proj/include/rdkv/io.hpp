#pragma once

// Allocation lookup tables and simulation reports on disk.

#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdkv/allocator.hpp"
#include "rdkv/error.hpp"
#include "rdkv/evaluator.hpp"

namespace rdkv {

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << content;
  if (!out) throw InputError("failed writing '" + path + "'");
}

inline nlohmann::json read_json_file(const std::string& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + what + " '" + path + "'");
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(what + " '" + path + "': parse error: " + e.what());
  }
}

// Per-head integer bit-widths for keys and values, as consumed at inference.
struct AllocationFile {
  double avg_bits = 0.0;
  std::int64_t budget = 0;
  int b_min = 0;
  int b_max = 0;
  int num_layers = 0;
  int num_kv_heads = 0;
  std::vector<int> bits_k;
  std::vector<int> bits_v;
  double mean_bits_k = 0.0;
  double mean_bits_v = 0.0;
  double objective = 0.0;
  double predicted_gain_ratio = 1.0;
  std::string mode = "separate";
  std::vector<std::string> model_refs;
  nlohmann::json config_echo = nlohmann::json::object();

  // Keys then values, the order simulate() expects.
  std::vector<int> all_bits() const {
    std::vector<int> out(bits_k);
    out.insert(out.end(), bits_v.begin(), bits_v.end());
    return out;
  }
};

inline AllocationFile make_allocation_file(const KvAllocation& kv, double avg_bits, std::string mode,
                                           std::vector<std::string> model_refs, nlohmann::json config_echo) {
  AllocationFile f;
  f.avg_bits = avg_bits;
  f.budget = kv.problem.budget;
  f.b_min = kv.problem.b_min;
  f.b_max = kv.problem.b_max;
  f.num_layers = kv.num_layers;
  f.num_kv_heads = kv.num_kv_heads;
  const auto bits = kv.allocation.integer_bits();
  const std::size_t heads = kv.heads();
  f.bits_k.assign(bits.begin(), bits.begin() + static_cast<std::ptrdiff_t>(heads));
  f.bits_v.assign(bits.begin() + static_cast<std::ptrdiff_t>(heads), bits.end());
  f.mean_bits_k = kv.mean_bits_k;
  f.mean_bits_v = kv.mean_bits_v;
  f.objective = kv.allocation.objective;
  std::vector<double> weights;
  for (const auto& c : kv.problem.components) weights.push_back(c.weight);
  f.predicted_gain_ratio = predict_gain(weights);
  f.mode = std::move(mode);
  f.model_refs = std::move(model_refs);
  f.config_echo = std::move(config_echo);
  return f;
}

inline nlohmann::json to_json(const AllocationFile& f) {
  auto grid = [&](const std::vector<int>& flat) {
    nlohmann::json rows = nlohmann::json::array();
    for (int l = 0; l < f.num_layers; ++l) {
      rows.push_back(std::vector<int>(flat.begin() + static_cast<std::ptrdiff_t>(l) * f.num_kv_heads,
                                      flat.begin() + static_cast<std::ptrdiff_t>(l + 1) * f.num_kv_heads));
    }
    return rows;
  };
  return {{"avg_bits", f.avg_bits},
          {"budget", f.budget},
          {"b_min", f.b_min},
          {"b_max", f.b_max},
          {"mode", f.mode},
          {"bits_k", grid(f.bits_k)},
          {"bits_v", grid(f.bits_v)},
          {"mean_bits_k", f.mean_bits_k},
          {"mean_bits_v", f.mean_bits_v},
          {"objective", f.objective},
          {"predicted_gain_ratio", f.predicted_gain_ratio},
          {"model_refs", f.model_refs},
          {"config_echo", f.config_echo}};
}

inline AllocationFile allocation_file_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("allocation file: top level must be an object");
  for (const char* key : {"bits_k", "bits_v", "budget", "b_min", "b_max"}) {
    if (!j.contains(key)) throw InputError(std::string("allocation file: missing field '") + key + "'");
  }
  AllocationFile f;
  f.avg_bits = j.value("avg_bits", 0.0);
  f.budget = j.at("budget").get<std::int64_t>();
  f.b_min = j.at("b_min").get<int>();
  f.b_max = j.at("b_max").get<int>();
  f.mode = j.value("mode", std::string("separate"));
  f.mean_bits_k = j.value("mean_bits_k", 0.0);
  f.mean_bits_v = j.value("mean_bits_v", 0.0);
  f.objective = j.value("objective", 0.0);
  f.predicted_gain_ratio = j.value("predicted_gain_ratio", 1.0);
  if (j.contains("model_refs")) f.model_refs = j.at("model_refs").get<std::vector<std::string>>();
  if (j.contains("config_echo")) f.config_echo = j.at("config_echo");
  std::vector<std::vector<int>> grid_k;
  std::vector<std::vector<int>> grid_v;
  try {
    grid_k = j.at("bits_k").get<std::vector<std::vector<int>>>();
    grid_v = j.at("bits_v").get<std::vector<std::vector<int>>>();
  } catch (const nlohmann::json::exception&) {
    throw InputError("allocation file: bits_k / bits_v must be integer grids");
  }
  if (grid_k.empty() || grid_k.size() != grid_v.size()) {
    throw InputError("allocation file: bits_k and bits_v must have the same nonzero number of layers");
  }
  f.num_layers = static_cast<int>(grid_k.size());
  f.num_kv_heads = static_cast<int>(grid_k.front().size());
  for (std::size_t l = 0; l < grid_k.size(); ++l) {
    if (grid_k[l].size() != static_cast<std::size_t>(f.num_kv_heads) ||
        grid_v[l].size() != static_cast<std::size_t>(f.num_kv_heads)) {
      throw InputError("allocation file: ragged bit grid at layer " + std::to_string(l));
    }
    f.bits_k.insert(f.bits_k.end(), grid_k[l].begin(), grid_k[l].end());
    f.bits_v.insert(f.bits_v.end(), grid_v[l].begin(), grid_v[l].end());
  }
  return f;
}

inline AllocationFile load_allocation_file(const std::string& path) {
  return allocation_file_from_json(read_json_file(path, "allocation file"));
}

inline nlohmann::json to_json(const SimulationReport& r) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : r.heads) {
    heads.push_back({{"layer", h.id.layer},
                     {"head", h.id.head},
                     {"side", std::string(to_string(h.id.side))},
                     {"weight", h.weight},
                     {"bits", h.bits},
                     {"uniform_bits", h.uniform_bits},
                     {"mse", h.mse},
                     {"uniform_mse", h.uniform_mse}});
  }
  return {{"j_uniform", r.j_uniform},
          {"j_allocated", r.j_allocated},
          {"realized_ratio", r.realized_ratio},
          {"predicted_ratio", r.predicted_ratio},
          {"seed", r.seed},
          {"per_head", std::move(heads)},
          {"config_echo", r.config_echo}};
}

inline std::string per_head_mse_csv(const SimulationReport& r) {
  std::string out = "layer,head,side,bits,mse\n";
  char buf[64];
  for (const auto& h : r.heads) {
    std::snprintf(buf, sizeof buf, "%d,%.10g\n", h.bits, h.mse);
    out += std::to_string(h.id.layer) + "," + std::to_string(h.id.head) + "," + std::string(to_string(h.id.side)) +
           "," + buf;
  }
  return out;
}

}  // namespace rdkv
