#pragma once

// Exponential distortion-rate models D(b) = alpha * beta^(-b), the Lloyd-Max
// oracle for the unit Gaussian, and log-domain least-squares calibration.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "rdkv/error.hpp"
#include "rdkv/sensitivity.hpp"

namespace rdkv {

inline constexpr int kMinBits = 1;
inline constexpr int kMaxBits = 8;

struct DistortionModel {
  double alpha = 1.0;
  double beta = 2.0;
  double r_squared = 1.0;
  std::vector<double> fit_bits;

  // Per-element MSE at `bits`.
  double eval(double bits) const { return alpha * std::pow(beta, -bits); }

  // -dD/db, the continuous marginal distortion reduction per bit.
  double slope_magnitude(double bits) const { return alpha * std::log(beta) * std::pow(beta, -bits); }

  void validate() const {
    if (!std::isfinite(alpha) || !(alpha > 0.0)) {
      throw InputError("distortion model: alpha must be finite and > 0");
    }
    if (!std::isfinite(beta) || !(beta > 1.0)) {
      throw InputError("distortion model: beta must be finite and > 1 (got " +
                       std::to_string(beta) + ")");
    }
  }
};

inline double eval_distortion(const DistortionModel& model, double bits) {
  model.validate();
  if (!std::isfinite(bits)) throw InputError("eval_distortion: bits must be finite");
  return model.eval(bits);
}

struct MsePoint {
  double bits = 0.0;
  double mse = 0.0;
};

// ---------------------------------------------------------------------------
// Unit Gaussian helpers. erfc keeps both tails accurate to ~1e-16 relative.

inline double gaussian_pdf(double x) {
  if (std::isinf(x)) return 0.0;
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double gaussian_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Upper tail, 1 - cdf(x).
inline double gaussian_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

inline double gaussian_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

// Probability of (a, b); evaluated on the tail that avoids cancellation.
inline double gaussian_mass(double a, double b) {
  return a >= 0.0 ? gaussian_sf(a) - gaussian_sf(b) : gaussian_cdf(b) - gaussian_cdf(a);
}

// ---------------------------------------------------------------------------
// Lloyd-Max design for N(0, 1).

struct LloydOptions {
  int max_iterations = 300;
  double tolerance = 1e-12;  // stop when the largest centroid move is below this
  bool record_trace = false;

  // Quantile init with a 300-iteration budget. Reproduces the standard
  // reference table (b=5 and b=6 have not fully converged at that point).
  static LloydOptions reference() { return {}; }

  // Runs to the 1e-12 movement tolerance or 10,000 iterations.
  static LloydOptions converged() { return {10000, 1e-12, false}; }
};

struct LloydMaxResult {
  int bits = 0;
  std::vector<double> boundaries;  // 2^b - 1 interior thresholds, ascending
  std::vector<double> levels;      // 2^b reconstruction points (cell centroids)
  double mse = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> mse_trace;   // MSE before each boundary update, if requested
};

namespace detail {

struct CellMoments {
  double mass;
  double centroid;
  double mse;
};

inline CellMoments gaussian_cell(double a, double b) {
  const double mass = gaussian_mass(a, b);
  const double pa = gaussian_pdf(a);
  const double pb = gaussian_pdf(b);
  const double centroid = (pa - pb) / mass;
  const double a_term = std::isinf(a) ? 0.0 : a * pa;
  const double b_term = std::isinf(b) ? 0.0 : b * pb;
  // integral of x^2 phi over (a, b) is mass + a phi(a) - b phi(b)
  const double second = mass + a_term - b_term;
  return {mass, centroid, std::max(0.0, second - mass * centroid * centroid)};
}

inline double centroids_and_mse(const std::vector<double>& boundaries, std::vector<double>& levels) {
  const std::size_t cells = boundaries.size() + 1;
  levels.resize(cells);
  double mse = 0.0;
  for (std::size_t j = 0; j < cells; ++j) {
    const double a = j == 0 ? -INFINITY : boundaries[j - 1];
    const double b = j + 1 == cells ? INFINITY : boundaries[j];
    const CellMoments cell = gaussian_cell(a, b);
    levels[j] = cell.centroid;
    mse += cell.mse;
  }
  return mse;
}

}  // namespace detail

inline LloydMaxResult lloyd_max_design(int bits, const LloydOptions& options = LloydOptions::reference()) {
  if (bits < kMinBits || bits > kMaxBits) {
    throw InputError("lloyd_max: bits must be in [1, 8] (got " + std::to_string(bits) + ")");
  }
  const std::size_t cells = std::size_t{1} << bits;
  LloydMaxResult out;
  out.bits = bits;
  out.boundaries.resize(cells - 1);
  for (std::size_t i = 1; i < cells; ++i) {
    out.boundaries[i - 1] = gaussian_quantile(static_cast<double>(i) / static_cast<double>(cells));
  }
  std::vector<double> previous;
  for (int it = 0; it < options.max_iterations; ++it) {
    const double mse = detail::centroids_and_mse(out.boundaries, out.levels);
    if (options.record_trace) out.mse_trace.push_back(mse);
    if (!previous.empty()) {
      double movement = 0.0;
      for (std::size_t j = 0; j < cells; ++j) {
        movement = std::max(movement, std::abs(out.levels[j] - previous[j]));
      }
      if (movement < options.tolerance) {
        out.converged = true;
        break;
      }
    }
    previous = out.levels;
    for (std::size_t i = 0; i + 1 < cells; ++i) {
      out.boundaries[i] = 0.5 * (out.levels[i] + out.levels[i + 1]);
    }
    out.iterations = it + 1;
  }
  out.mse = detail::centroids_and_mse(out.boundaries, out.levels);
  if (options.record_trace) out.mse_trace.push_back(out.mse);
  return out;
}

// Cached reference-protocol design; safe for concurrent callers.
inline const LloydMaxResult& lloyd_max_codebook(int bits) {
  if (bits < kMinBits || bits > kMaxBits) {
    throw InputError("lloyd_max: bits must be in [1, 8] (got " + std::to_string(bits) + ")");
  }
  static std::mutex mutex;
  static std::array<std::optional<LloydMaxResult>, kMaxBits + 1> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[static_cast<std::size_t>(bits)];
  if (!slot) slot = lloyd_max_design(bits);
  return *slot;
}

inline double lloyd_max_mse(int bits) { return lloyd_max_codebook(bits).mse; }

// ---------------------------------------------------------------------------
// Calibration.

inline DistortionModel fit_exponential(std::span<const MsePoint> points) {
  std::set<double> distinct;
  for (const auto& p : points) {
    if (!std::isfinite(p.bits)) throw InputError("fit_exponential: bits must be finite");
    if (!std::isfinite(p.mse) || !(p.mse > 0.0)) {
      throw InputError("fit_exponential: mse must be finite and > 0 (bits " +
                       std::to_string(p.bits) + ")");
    }
    distinct.insert(p.bits);
  }
  if (distinct.size() < 2) {
    throw InputError("fit_exponential: need at least 2 distinct bit-widths");
  }
  const double n = static_cast<double>(points.size());
  double mean_b = 0.0;
  double mean_y = 0.0;
  for (const auto& p : points) {
    mean_b += p.bits;
    mean_y += std::log(p.mse);
  }
  mean_b /= n;
  mean_y /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (const auto& p : points) {
    const double db = p.bits - mean_b;
    const double dy = std::log(p.mse) - mean_y;
    sxx += db * db;
    sxy += db * dy;
    syy += dy * dy;
  }
  const double slope = sxy / sxx;
  const double intercept = mean_y - slope * mean_b;
  if (!(slope < 0.0)) {
    std::ostringstream msg;
    msg << "calibration failure: log-MSE slope " << slope << " >= 0 gives beta <= 1";
    throw CalibrationError(msg.str(), slope);
  }
  double ss_res = 0.0;
  for (const auto& p : points) {
    const double r = std::log(p.mse) - (intercept + slope * p.bits);
    ss_res += r * r;
  }
  DistortionModel model;
  model.alpha = std::exp(intercept);
  model.beta = std::exp(-slope);
  model.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  model.fit_bits.assign(distinct.begin(), distinct.end());
  return model;
}

struct FitQualityRow {
  double bits;
  double measured;
  double fitted;
  double ratio;  // fitted / measured
};

struct FitQualityReport {
  std::vector<FitQualityRow> rows;
  double max_relative_error = 0.0;
  double worst_bits = 0.0;
};

inline FitQualityReport fit_quality_report(std::span<const MsePoint> points, const DistortionModel& model) {
  FitQualityReport report;
  for (const auto& p : points) {
    const double fitted = model.eval(p.bits);
    const FitQualityRow row{p.bits, p.mse, fitted, fitted / p.mse};
    const double rel = std::abs(row.ratio - 1.0);
    if (report.rows.empty() || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_bits = p.bits;
    }
    report.rows.push_back(row);
  }
  return report;
}

// ---------------------------------------------------------------------------
// File formats.

// A model together with the quantizer/component it was calibrated for.
struct CalibratedModel {
  std::string quantizer;
  Side component = Side::key;
  DistortionModel model;
};

inline nlohmann::json to_json(const CalibratedModel& m) {
  return {{"quantizer", m.quantizer},
          {"component", std::string(to_string(m.component))},
          {"alpha", m.model.alpha},
          {"beta", m.model.beta},
          {"r2", m.model.r_squared},
          {"fit_bits", m.model.fit_bits}};
}

inline CalibratedModel calibrated_model_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("model file: top level must be an object");
  for (const char* key : {"alpha", "beta"}) {
    if (!j.contains(key) || !j.at(key).is_number()) {
      throw InputError(std::string("model file: missing numeric field '") + key + "'");
    }
  }
  CalibratedModel m;
  m.quantizer = j.value("quantizer", std::string{});
  m.component = parse_side(j.value("component", std::string("key")));
  m.model.alpha = j.at("alpha").get<double>();
  m.model.beta = j.at("beta").get<double>();
  m.model.r_squared = j.value("r2", 1.0);
  if (j.contains("fit_bits")) m.model.fit_bits = j.at("fit_bits").get<std::vector<double>>();
  m.model.validate();
  return m;
}

inline CalibratedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("model file '" + path + "': parse error: " + e.what());
  }
  return calibrated_model_from_json(j);
}

struct MseRecord {
  std::string quantizer;
  Side component = Side::key;
  MsePoint point;
};

inline constexpr const char* kMseCsvHeader = "quantizer,component,bits,mse";

inline std::string format_mse_csv(std::span<const MseRecord> records) {
  std::string out = std::string(kMseCsvHeader) + "\n";
  char buf[128];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, ",%.10g,%.10g\n", r.point.bits, r.point.mse);
    out += r.quantizer + "," + std::string(to_string(r.component)) + buf;
  }
  return out;
}

inline std::vector<MseRecord> parse_mse_csv(std::istream& in) {
  // Lines starting with '#' are comments (the CLI records its flags there).
  std::string line;
  do {
    if (!std::getline(in, line)) throw InputError("MSE CSV: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
  } while (!line.empty() && line.front() == '#');
  if (line != kMseCsvHeader) {
    throw InputError("MSE CSV: expected header '" + std::string(kMseCsvHeader) + "'");
  }
  std::vector<MseRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 4) {
      throw InputError("MSE CSV line " + std::to_string(line_no) + ": expected 4 fields");
    }
    MseRecord r;
    r.quantizer = fields[0];
    r.component = parse_side(fields[1]);
    try {
      r.point.bits = std::stod(fields[2]);
      r.point.mse = std::stod(fields[3]);
    } catch (const std::exception&) {
      throw InputError("MSE CSV line " + std::to_string(line_no) + ": non-numeric bits or mse");
    }
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<MseRecord> load_mse_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open MSE CSV '" + path + "'");
  return parse_mse_csv(in);
}

}  // namespace rdkv
