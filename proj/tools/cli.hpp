#pragma once

// Subcommand implementations for the `rdkv` command-line tool. Kept in a
// header so the test suite can drive the CLI in-process.

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rdkv/rdkv.hpp"

namespace rdkv::cli {

// Reference table for the unit-Gaussian Lloyd-Max quantizer:
// bits, exact MSE, fitted exponential, fitted / exact.
struct ReferenceRow {
  int bits;
  double exact;
  double fitted;
  double ratio;
};

inline const std::vector<ReferenceRow>& reference_table() {
  static const std::vector<ReferenceRow> rows = {
      {1, 3.634e-01, 3.907e-01, 1.075}, {2, 1.175e-01, 1.124e-01, 0.956}, {3, 3.455e-02, 3.231e-02, 0.935},
      {4, 9.501e-03, 9.290e-03, 0.978}, {5, 2.512e-03, 2.671e-03, 1.063}, {6, 7.647e-04, 7.681e-04, 1.004},
  };
  return rows;
}

// True when `value` rounds to `expected` at `digits` significant figures,
// i.e. lies within half a unit of the last kept digit.
inline bool agrees_to_sig_figs(double value, double expected, int digits = 3) {
  if (expected == 0.0) return value == 0.0;
  const double exponent = std::floor(std::log10(std::abs(expected)));
  const double half_unit = 0.5 * std::pow(10.0, exponent - (digits - 1));
  return std::abs(value - expected) <= half_unit * (1.0 + 1e-12);
}

inline std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

inline std::string g8(double v) { return fmt("%.8g", v); }

// Every parsed option of a subcommand, for provenance in output files.
inline nlohmann::json config_echo(const CLI::App& sub) {
  nlohmann::json flags = nlohmann::json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_lnames().empty() ? opt->get_name() : opt->get_lnames().front();
    if (name == "help" || name.empty()) continue;
    const auto& results = opt->results();
    if (results.empty()) {
      flags[name] = opt->get_default_str();
    } else if (results.size() == 1) {
      flags[name] = results.front();
    } else {
      flags[name] = results;
    }
  }
  return {{"command", sub.get_name()}, {"flags", flags}};
}

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// ---------------------------------------------------------------------------

struct CalibrateArgs {
  std::string quantizer;
  std::string component = "key";
  std::vector<int> bits = {2, 3, 4, 5, 6};
  int rows = 4096;
  int cols = 128;
  std::uint64_t seed = 42;
  std::string distribution = "gaussian";
  std::string out;
};

inline int cmd_calibrate(const CalibrateArgs& a, const CLI::App& sub, Streams io) {
  QuantizerSpec spec{parse_scheme(a.quantizer), a.seed, a.quantizer};
  const Side side = parse_side(a.component);
  DataDistribution dist = DataDistribution::gaussian;
  if (a.distribution == "heavy-tailed") {
    dist = DataDistribution::heavy_tailed;
  } else if (a.distribution != "gaussian") {
    throw InputError("unknown distribution '" + a.distribution + "' (gaussian, heavy-tailed)");
  }
  const auto points = measure_mse(spec, a.bits, a.rows, a.cols, a.seed, dist);
  std::vector<MseRecord> records;
  for (const auto& p : points) records.push_back({a.quantizer, side, p});
  const std::string csv = "# config_echo: " + config_echo(sub).dump() + "\n" + format_mse_csv(records);
  write_text_file(a.out, csv);
  io.out << "quantizer " << a.quantizer << " (" << to_string(side) << "), " << a.rows << "x" << a.cols
         << ", seed " << a.seed << "\n";
  for (const auto& p : points) io.out << "  bits " << p.bits << "  mse " << g8(p.mse) << "\n";
  io.out << "wrote " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string in;
  std::string quantizer;
  std::string component;
  std::string out;
};

inline int cmd_fit(const FitArgs& a, const CLI::App& sub, Streams io) {
  const auto records = load_mse_csv(a.in);
  std::map<std::pair<std::string, std::string>, std::vector<MsePoint>> groups;
  for (const auto& r : records) {
    if (!a.quantizer.empty() && r.quantizer != a.quantizer) continue;
    if (!a.component.empty() && r.component != parse_side(a.component)) continue;
    groups[{r.quantizer, std::string(to_string(r.component))}].push_back(r.point);
  }
  if (groups.empty()) throw InputError("no MSE rows in '" + a.in + "' match the selection");
  if (groups.size() > 1) {
    std::string names;
    for (const auto& [key, pts] : groups) names += " " + key.first + "/" + key.second;
    throw InputError("'" + a.in + "' holds several curves; pick one with --quantizer/--component:" + names);
  }
  const auto& [key, points] = *groups.begin();
  CalibratedModel cal;
  cal.quantizer = key.first;
  cal.component = parse_side(key.second);
  cal.model = fit_exponential(points);
  const FitQualityReport q = fit_quality_report(points, cal.model);

  nlohmann::json j = to_json(cal);
  j["config_echo"] = config_echo(sub);
  write_text_file(a.out, j.dump(2) + "\n");

  io.out << "quantizer " << cal.quantizer << " (" << key.second << ")\n"
         << "alpha " << g8(cal.model.alpha) << "\n"
         << "beta  " << g8(cal.model.beta) << "\n"
         << "r2    " << fmt("%.6f", cal.model.r_squared) << "\n"
         << "bits  measured        fitted          ratio\n";
  for (const auto& row : q.rows) {
    io.out << fmt("%-5g ", row.bits) << fmt("%-15.7e ", row.measured) << fmt("%-15.7e ", row.fitted)
           << fmt("%.6f", row.ratio) << "\n";
  }
  io.out << "max relative error " << fmt("%.6f", q.max_relative_error) << " at bits " << q.worst_bits << "\n"
         << "wrote " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct AllocateArgs {
  std::string sensitivity;
  std::string mode = "separate";
  std::string model;
  std::string model_k;
  std::string model_v;
  double avg_bits = 0.0;
  int b_min = 2;
  int b_max = 8;
  std::string out;
};

inline int cmd_allocate(const AllocateArgs& a, const CLI::App& sub, Streams io) {
  const SensitivityMap sens = load_sensitivity(a.sensitivity);
  std::vector<std::string> refs;
  DistortionModel mk;
  DistortionModel mv;
  if (a.mode == "joint") {
    if (a.model.empty()) throw InputError("joint mode needs --model");
    mk = mv = load_model(a.model).model;
    refs = {a.model};
  } else if (a.mode == "separate") {
    const std::string kpath = a.model_k.empty() ? a.model : a.model_k;
    const std::string vpath = a.model_v.empty() ? a.model : a.model_v;
    if (kpath.empty() || vpath.empty()) throw InputError("separate mode needs --model-k and --model-v");
    mk = load_model(kpath).model;
    mv = load_model(vpath).model;
    refs = {kpath, vpath};
  } else {
    throw InputError("unknown mode '" + a.mode + "' (joint, separate)");
  }
  const KvAllocation kv = allocate_kv_separate(sens, mk, mv, a.avg_bits, a.b_min, a.b_max);
  const AllocationFile file = make_allocation_file(kv, a.avg_bits, a.mode, refs, config_echo(sub));
  write_text_file(a.out, to_json(file).dump(2) + "\n");
  io.out << "mode " << a.mode << ", " << 2 * kv.heads() << " components\n"
         << "budget " << file.budget << " bits (avg " << g8(a.avg_bits) << ", bounds [" << a.b_min << ", "
         << a.b_max << "])\n"
         << "mean_bits_k " << g8(file.mean_bits_k) << "\n"
         << "mean_bits_v " << g8(file.mean_bits_v) << "\n"
         << "objective " << g8(file.objective) << "\n"
         << "predicted_gain_ratio " << g8(file.predicted_gain_ratio) << "\n"
         << "wrote " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string sensitivity;
};

inline int cmd_predict_gain(const PredictArgs& a, Streams io) {
  const SensitivityMap sens = load_sensitivity(a.sensitivity);
  auto row = [&](const char* name, std::span<const double> w) {
    const SensitivityStats s = stats(w);
    io.out << std::left << std::setw(9) << name << " N " << s.count << "  AM " << g8(s.arithmetic_mean) << "  GM "
           << g8(s.geometric_mean) << "  AM/GM " << g8(s.am_gm_ratio()) << "  sigma_ln_w " << g8(s.log_std)
           << "  exp(sigma^2/2) " << g8(std::exp(0.5 * s.log_std * s.log_std)) << "\n";
  };
  const std::vector<double> all = sens.all_weights();
  row("combined", all);
  row("key", sens.weights(Side::key));
  row("value", sens.weights(Side::value));
  return 0;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string sensitivity;
  std::string allocation;
  std::string quantizer_k = "lloyd-max";
  std::string quantizer_v = "lloyd-max";
  int rows = 2048;
  int cols = 128;
  std::uint64_t seed = 42;
  std::string out;
  std::string mse_csv;
};

inline int cmd_simulate(const SimulateArgs& a, const CLI::App& sub, Streams io) {
  const SensitivityMap sens = load_sensitivity(a.sensitivity);
  const AllocationFile alloc = load_allocation_file(a.allocation);
  if (alloc.num_layers != sens.num_layers || alloc.num_kv_heads != sens.num_kv_heads) {
    throw InputError("allocation grid " + std::to_string(alloc.num_layers) + "x" + std::to_string(alloc.num_kv_heads) +
                     " does not match sensitivity map " + std::to_string(sens.num_layers) + "x" +
                     std::to_string(sens.num_kv_heads));
  }
  const QuantizerSpec qk{parse_scheme(a.quantizer_k), a.seed, a.quantizer_k};
  const QuantizerSpec qv{parse_scheme(a.quantizer_v), a.seed, a.quantizer_v};
  const std::vector<int> bits = alloc.all_bits();
  const SimulationReport report = simulate(sens, qk, qv, bits, a.rows, a.cols, a.seed, config_echo(sub));
  write_text_file(a.out, to_json(report).dump(2) + "\n");
  if (!a.mse_csv.empty()) write_text_file(a.mse_csv, per_head_mse_csv(report));
  io.out << "j_uniform " << g8(report.j_uniform) << "\n"
         << "j_allocated " << g8(report.j_allocated) << "\n"
         << "realized_ratio " << g8(report.realized_ratio) << "\n"
         << "predicted_ratio " << g8(report.predicted_ratio) << "\n"
         << "wrote " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ValidateArgs {
  std::vector<int> bits = {1, 2, 3, 4, 5, 6};
  std::vector<std::string> inject;  // "BITS=VALUE" overrides of the embedded exact column
};

inline int cmd_validate(const ValidateArgs& a, Streams io) {
  std::vector<ReferenceRow> expected = reference_table();
  for (const std::string& spec : a.inject) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw InputError("--inject-expected wants BITS=VALUE (got '" + spec + "')");
    const int b = std::stoi(spec.substr(0, eq));
    if (b < 1 || b > 6) throw InputError("--inject-expected: bits must be in 1..6");
    expected[static_cast<std::size_t>(b - 1)].exact = std::stod(spec.substr(eq + 1));
  }
  for (int b : a.bits) {
    if (b < 1 || b > 6) throw InputError("validate: --bits entries must be in 1..6");
  }

  std::vector<MsePoint> points;
  for (int b = 1; b <= 6; ++b) points.push_back({static_cast<double>(b), lloyd_max_mse(b)});
  const DistortionModel model = fit_exponential(points);
  const FitQualityReport q = fit_quality_report(points, model);

  io.out << "Lloyd-Max MSE for N(0,1) vs fitted exponential (alpha " << g8(model.alpha) << ", beta "
         << g8(model.beta) << ", r2 " << fmt("%.6f", model.r_squared) << ")\n"
         << "bits  exact        expected     fit          expected     ratio     expected  status\n";
  std::vector<int> failed;
  for (int b : a.bits) {
    const auto& row = q.rows[static_cast<std::size_t>(b - 1)];
    const auto& ref = expected[static_cast<std::size_t>(b - 1)];
    const bool ok = agrees_to_sig_figs(row.measured, ref.exact);
    if (!ok) failed.push_back(b);
    io.out << fmt("%-5.0f ", static_cast<double>(b)) << fmt("%-12.4e ", row.measured) << fmt("%-12.3e ", ref.exact)
           << fmt("%-12.4e ", row.fitted) << fmt("%-12.3e ", ref.fitted) << fmt("%-9.4f ", row.ratio)
           << fmt("%-9.3f ", ref.ratio) << (ok ? "ok" : "MISMATCH") << "\n";
  }
  io.out << "max relative error " << fmt("%.4f", q.max_relative_error) << " at " << q.worst_bits << " bit(s)\n";
  if (!failed.empty()) {
    io.out << "FAIL\n";
    std::string rows;
    for (int b : failed) rows += (rows.empty() ? "" : ", ") + std::to_string(b);
    io.err << "error: validate: mismatch at bit " << rows << " (exact MSE differs at 3 significant figures)\n";
    return 1;
  }
  io.out << "PASS\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  int layers = 36;
  int heads = 8;
  double mu = 0.0;
  double sigma = 1.0;
  std::uint64_t seed = 42;
  std::string out;
};

inline int cmd_synth(const SynthArgs& a, const CLI::App& sub, Streams io) {
  SensitivityMap map = synth_lognormal(a.layers, a.heads, a.mu, a.sigma, a.seed);
  nlohmann::json j = to_json(map);
  j["config_echo"] = config_echo(sub);
  write_text_file(a.out, j.dump() + "\n");
  io.out << "wrote " << a.out << " (" << a.layers << "x" << a.heads << ", sigma " << g8(a.sigma) << ", seed "
         << a.seed << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Rate-distortion bit allocation for KV caches", "rdkv"};
  app.require_subcommand(1);
  Streams io{out, err};

  CalibrateArgs cal;
  auto* calibrate = app.add_subcommand("calibrate", "measure quantizer MSE on seeded Gaussian data");
  calibrate->add_option("--quantizer", cal.quantizer, "scheme: " + valid_scheme_labels())->required();
  calibrate->add_option("--component", cal.component, "key or value")->capture_default_str();
  calibrate->add_option("--bits", cal.bits, "bit-widths")->delimiter(',')->capture_default_str();
  calibrate->add_option("--rows", cal.rows)->capture_default_str()->check(CLI::PositiveNumber);
  calibrate->add_option("--cols", cal.cols)->capture_default_str()->check(CLI::PositiveNumber);
  calibrate->add_option("--seed", cal.seed)->capture_default_str();
  calibrate->add_option("--distribution", cal.distribution, "gaussian or heavy-tailed")->capture_default_str();
  calibrate->add_option("--out", cal.out, "MSE CSV path")->required();

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "fit D(b) = alpha * beta^-b to an MSE CSV");
  fit_cmd->add_option("--in", fit.in, "MSE CSV")->required();
  fit_cmd->add_option("--quantizer", fit.quantizer, "select rows by quantizer");
  fit_cmd->add_option("--component", fit.component, "select rows by component");
  fit_cmd->add_option("--out", fit.out, "model JSON path")->required();

  AllocateArgs alloc;
  auto* allocate = app.add_subcommand("allocate", "greedy per-head bit allocation");
  allocate->add_option("--sensitivity", alloc.sensitivity)->required();
  allocate->add_option("--mode", alloc.mode, "joint or separate")->capture_default_str();
  allocate->add_option("--model", alloc.model, "model JSON (joint mode, or both sides)");
  allocate->add_option("--model-k", alloc.model_k, "key model JSON");
  allocate->add_option("--model-v", alloc.model_v, "value model JSON");
  allocate->add_option("--avg-bits", alloc.avg_bits)->required();
  allocate->add_option("--b-min", alloc.b_min)->capture_default_str();
  allocate->add_option("--b-max", alloc.b_max)->capture_default_str();
  allocate->add_option("--out", alloc.out, "allocation JSON path")->required();

  PredictArgs pred;
  auto* predict = app.add_subcommand("predict-gain", "AM/GM gain prediction from sensitivities");
  predict->add_option("--sensitivity", pred.sensitivity)->required();

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "apply an allocation to synthetic heads");
  simulate_cmd->add_option("--sensitivity", sim.sensitivity)->required();
  simulate_cmd->add_option("--allocation", sim.allocation)->required();
  simulate_cmd->add_option("--quantizer-k", sim.quantizer_k)->capture_default_str();
  simulate_cmd->add_option("--quantizer-v", sim.quantizer_v)->capture_default_str();
  simulate_cmd->add_option("--rows", sim.rows)->capture_default_str()->check(CLI::PositiveNumber);
  simulate_cmd->add_option("--cols", sim.cols)->capture_default_str()->check(CLI::PositiveNumber);
  simulate_cmd->add_option("--seed", sim.seed)->capture_default_str();
  simulate_cmd->add_option("--out", sim.out, "report JSON path")->required();
  simulate_cmd->add_option("--mse-csv", sim.mse_csv, "optional per-head MSE CSV");

  ValidateArgs val;
  auto* validate = app.add_subcommand("validate", "check the Lloyd-Max reference table");
  validate->add_option("--bits", val.bits, "rows to check")->delimiter(',')->capture_default_str();
  validate->add_option("--inject-expected", val.inject, "override an expected exact value, BITS=VALUE")
      ->group("");

  SynthArgs syn;
  auto* synth = app.add_subcommand("synth-sensitivity", "write a seeded log-normal sensitivity map");
  synth->add_option("--layers", syn.layers)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--heads", syn.heads)->capture_default_str()->check(CLI::PositiveNumber);
  synth->add_option("--mu", syn.mu)->capture_default_str();
  synth->add_option("--sigma", syn.sigma)->capture_default_str();
  synth->add_option("--seed", syn.seed)->capture_default_str();
  synth->add_option("--out", syn.out)->required();

  try {
    app.parse(argc, argv);
    if (calibrate->parsed()) return cmd_calibrate(cal, *calibrate, io);
    if (fit_cmd->parsed()) return cmd_fit(fit, *fit_cmd, io);
    if (allocate->parsed()) return cmd_allocate(alloc, *allocate, io);
    if (predict->parsed()) return cmd_predict_gain(pred, io);
    if (simulate_cmd->parsed()) return cmd_simulate(sim, *simulate_cmd, io);
    if (validate->parsed()) return cmd_validate(val, io);
    if (synth->parsed()) return cmd_synth(syn, *synth, io);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace rdkv::cli
