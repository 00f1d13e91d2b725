#pragma once

// Run configuration, dispatch to the engines and on-disk results.
// Config schema: docs/config.md.

#include "phasehop/hopping.hpp"
#include "phasehop/meanfield.hpp"
#include "phasehop/qcle.hpp"
#include "phasehop/quantum.hpp"
#include "phasehop/record.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef PHASEHOP_VERSION
#define PHASEHOP_VERSION "0.1.0"
#endif

namespace phasehop {

using json = nlohmann::json;

enum class RunKind { sh, mf, qcle, exact };

inline std::string to_string(RunKind k) {
  switch (k) {
    case RunKind::sh: return "sh";
    case RunKind::mf: return "mf";
    case RunKind::qcle: return "qcle";
    case RunKind::exact: return "exact";
  }
  return "?";
}

inline RunKind parse_run_kind(const std::string& s) {
  if (s == "sh") return RunKind::sh;
  if (s == "mf") return RunKind::mf;
  if (s == "qcle") return RunKind::qcle;
  if (s == "exact") return RunKind::exact;
  throw ConfigError("unknown method kind '" + s + "'");
}

struct RunConfig {
  RunKind kind = RunKind::sh;
  ModelSpec model;
  HopMethod hop = HopMethod::pdpssh;
  MeanFieldMode mf_mode = MeanFieldMode::phasespace;
  QcleVariant qcle = QcleVariant::aqcle;
  int substeps = 10;
  NucVec X0, P0;
  double sigma = 1.0;
  int state = 0;
  bool adiabatic_start = false;
  double dt = 0.0;
  double t_final = 0.0;
  double record_dt = 0.0;
  long ntraj = 1000;
  std::uint64_t seed = 1;
  double x_stop = 0.0;
  int threads = 0;
  PhaseSpaceGrid phase_grid;
  std::vector<Axis> axes;
  std::vector<double> snapshot_times;
  int snapshot_state = 0;
  std::string out_dir;
  json echo;  // normalized config, defaults filled in
};

namespace detail {

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

inline double get_number(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError("missing " + where + "." + key);
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + " must be a number");
  return v.get<double>();
}

inline double number_or(const json& obj, const std::string& key, double fallback, const std::string& where) {
  return obj.contains(key) ? get_number(obj, key, where) : fallback;
}

inline long integer_or(const json& obj, const std::string& key, long fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) throw ConfigError(where + "." + key + " must be an integer");
  return v.get<long>();
}

inline std::string string_or(const json& obj, const std::string& key, const std::string& fallback,
                             const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ConfigError(where + "." + key + " must be a string");
  return v.get<std::string>();
}

inline NucVec get_vector(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError("missing " + where + "." + key);
  const auto& v = obj.at(key);
  std::vector<double> xs;
  if (v.is_number()) {
    xs.push_back(v.get<double>());
  } else if (v.is_array()) {
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(where + "." + key + " entries must be numbers");
      xs.push_back(e.get<double>());
    }
  } else {
    throw ConfigError(where + "." + key + " must be a number or an array of numbers");
  }
  NucVec out(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) out(static_cast<Eigen::Index>(i)) = xs[i];
  return out;
}

inline json to_json(const NucVec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

template <class F>
auto rethrow_as_config(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace detail

/// Builds a model from {"kind", "params", "precondition"}; `fallback` is the
/// precondition used when the block does not name one.
inline ModelSpec parse_model_block(const json& block, Precondition fallback, json& echo) {
  detail::reject_unknown(block, {"kind", "params", "precondition"}, "model");
  if (!block.contains("kind") || !block.at("kind").is_string()) throw ConfigError("model.kind must be a string");
  const std::string kind_name = block.at("kind").get<std::string>();
  std::map<std::string, double> params;
  if (block.contains("params")) {
    const auto& p = block.at("params");
    if (!p.is_object()) throw ConfigError("model.params must be an object");
    for (const auto& [k, v] : p.items()) {
      if (!v.is_number()) throw ConfigError("model.params." + k + " must be a number");
      params[k] = v.get<double>();
    }
  }
  const auto pre = block.contains("precondition")
                       ? detail::rethrow_as_config([&] {
                           return parse_precondition(detail::string_or(block, "precondition", "", "model"));
                         })
                       : fallback;
  const ModelKind kind = detail::rethrow_as_config([&] { return parse_model_kind(kind_name); });
  if (kind == ModelKind::custom) throw ConfigError("custom models cannot be built from a config file");
  ModelSpec m = detail::rethrow_as_config([&] { return make_model(kind, params, pre); });
  echo = json::object();
  echo["kind"] = kind_name;
  echo["params"] = json::object();
  for (const auto& [k, v] : m.params) echo["params"][k] = v;
  echo["precondition"] = to_string(pre);
  return m;
}

/// Validates a run config for `expected` (the subcommand's method kind).
inline RunConfig parse_run_config(const json& root, RunKind expected) {
  detail::reject_unknown(root, {"model", "method", "initial", "numerics", "output"}, "config");
  for (const char* s : {"model", "initial", "numerics"})
    if (!root.contains(s)) throw ConfigError(std::string("missing section '") + s + "'");
  RunConfig c;
  c.kind = expected;
  json echo = json::object();

  // method
  const json method = root.contains("method") ? root.at("method") : json::object();
  detail::reject_unknown(method, {"kind", "variant", "mode", "substeps"}, "method");
  const std::string kind_name = detail::string_or(method, "kind", to_string(expected), "method");
  if (parse_run_kind(kind_name) != expected)
    throw ConfigError("method.kind '" + kind_name + "' does not match subcommand run-" + to_string(expected));
  json mecho = {{"kind", to_string(expected)}};
  Precondition pre_default = Precondition::diabatic;
  switch (expected) {
    case RunKind::sh: {
      if (method.contains("mode")) throw ConfigError("method.mode applies to mean-field runs only");
      c.hop = parse_hop_method(detail::string_or(method, "variant", "pdpssh", "method"));
      c.substeps = static_cast<int>(detail::integer_or(method, "substeps", 10, "method"));
      if (c.substeps < 1) throw ConfigError("method.substeps must be at least 1");
      pre_default = precondition_for(c.hop);
      mecho["variant"] = to_string(c.hop);
      mecho["substeps"] = c.substeps;
      break;
    }
    case RunKind::mf: {
      if (method.contains("variant") || method.contains("substeps"))
        throw ConfigError("mean-field runs take method.mode only");
      c.mf_mode = parse_meanfield_mode(detail::string_or(method, "mode", "phasespace", "method"));
      pre_default = Precondition::pseudodiabatic;
      mecho["mode"] = to_string(c.mf_mode);
      break;
    }
    case RunKind::qcle: {
      if (method.contains("mode") || method.contains("substeps"))
        throw ConfigError("QCLE runs take method.variant only");
      c.qcle = parse_qcle_variant(detail::string_or(method, "variant", "aqcle", "method"));
      pre_default = c.qcle == QcleVariant::pqcle ? Precondition::pseudodiabatic : Precondition::adiabatic;
      mecho["variant"] = to_string(c.qcle);
      break;
    }
    case RunKind::exact: {
      if (method.contains("mode") || method.contains("substeps") || method.contains("variant"))
        throw ConfigError("exact runs take no method options");
      break;
    }
  }
  echo["method"] = mecho;

  // model
  json model_echo;
  c.model = parse_model_block(root.at("model"), pre_default, model_echo);
  if (expected == RunKind::sh && c.model.precondition != precondition_for(c.hop))
    throw ConfigError("model.precondition '" + to_string(c.model.precondition) + "' conflicts with " +
                      to_string(c.hop) + " (needs " + to_string(precondition_for(c.hop)) + ")");
  if (expected == RunKind::qcle) {
    detail::check_variant_basis(c.qcle, c.model.precondition);
    if (c.model.n_nuc != 1) throw ConfigError("QCLE runs need a one-dimensional model");
  }
  echo["model"] = model_echo;

  // initial
  const auto& init = root.at("initial");
  detail::reject_unknown(init, {"X0", "P0", "sigma", "state", "basis"}, "initial");
  c.X0 = detail::get_vector(init, "X0", "initial");
  c.P0 = detail::get_vector(init, "P0", "initial");
  if (c.X0.size() != c.model.n_nuc || c.P0.size() != c.model.n_nuc)
    throw ConfigError("initial.X0 and initial.P0 need " + std::to_string(c.model.n_nuc) + " entries");
  c.sigma = detail::get_number(init, "sigma", "initial");
  if (!(c.sigma > 0.0)) throw ConfigError("initial.sigma must be positive");
  c.state = static_cast<int>(detail::integer_or(init, "state", 0, "initial"));
  if (c.state < 0 || c.state >= c.model.n_states) throw ConfigError("initial.state out of range");
  const std::string default_basis = expected == RunKind::qcle ? "adiabatic" : "diabatic";
  const std::string basis = detail::string_or(init, "basis", default_basis, "initial");
  if (basis != "adiabatic" && basis != "diabatic") throw ConfigError("initial.basis must be adiabatic or diabatic");
  if (expected == RunKind::mf && basis != "diabatic") throw ConfigError("mean-field runs start on a diabat");
  c.adiabatic_start = basis == "adiabatic";
  echo["initial"] = {{"X0", detail::to_json(c.X0)},
                     {"P0", detail::to_json(c.P0)},
                     {"sigma", c.sigma},
                     {"state", c.state},
                     {"basis", basis}};

  // numerics
  const auto& num = root.at("numerics");
  std::set<std::string> allowed = {"dt", "t_final", "record_dt", "threads"};
  if (expected == RunKind::sh || expected == RunKind::mf) allowed.insert({"ntraj", "seed", "x_stop"});
  if (expected == RunKind::qcle || expected == RunKind::exact) allowed.insert("grid");
  detail::reject_unknown(num, allowed, "numerics");
  const double dt_default = expected == RunKind::qcle ? 0.2 : expected == RunKind::exact ? 0.1 : 0.0;
  c.dt = dt_default > 0.0 ? detail::number_or(num, "dt", dt_default, "numerics")
                          : detail::get_number(num, "dt", "numerics");
  if (!(c.dt > 0.0)) throw ConfigError("numerics.dt must be positive");
  c.t_final = detail::get_number(num, "t_final", "numerics");
  if (c.t_final < 0.0) throw ConfigError("numerics.t_final must be non-negative");
  c.record_dt = detail::number_or(num, "record_dt", 0.0, "numerics");
  if (c.record_dt < 0.0) throw ConfigError("numerics.record_dt must be non-negative");
  c.threads = static_cast<int>(detail::integer_or(num, "threads", 0, "numerics"));
  if (c.threads < 0) throw ConfigError("numerics.threads must be non-negative");
  json necho = {{"dt", c.dt}, {"t_final", c.t_final}, {"record_dt", c.record_dt}, {"threads", c.threads}};
  if (expected == RunKind::sh || expected == RunKind::mf) {
    c.ntraj = detail::integer_or(num, "ntraj", 1000, "numerics");
    if (c.ntraj < 1) throw ConfigError("numerics.ntraj must be at least 1");
    const long seed = detail::integer_or(num, "seed", 1, "numerics");
    if (seed < 0) throw ConfigError("numerics.seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(seed);
    c.x_stop = detail::number_or(num, "x_stop", 0.0, "numerics");
    if (c.x_stop < 0.0) throw ConfigError("numerics.x_stop must be non-negative");
    necho["ntraj"] = c.ntraj;
    necho["seed"] = c.seed;
    necho["x_stop"] = c.x_stop;
  }
  if (expected == RunKind::qcle) {
    const json grid = num.contains("grid") ? num.at("grid") : json::object();
    detail::reject_unknown(grid, {"x_min", "x_max", "n_x", "p_min", "p_max", "n_p"}, "numerics.grid");
    PhaseSpaceGrid g;
    g.x_min = detail::number_or(grid, "x_min", g.x_min, "numerics.grid");
    g.x_max = detail::number_or(grid, "x_max", g.x_max, "numerics.grid");
    g.n_x = static_cast<int>(detail::integer_or(grid, "n_x", g.n_x, "numerics.grid"));
    g.p_min = detail::number_or(grid, "p_min", g.p_min, "numerics.grid");
    g.p_max = detail::number_or(grid, "p_max", g.p_max, "numerics.grid");
    g.n_p = static_cast<int>(detail::integer_or(grid, "n_p", g.n_p, "numerics.grid"));
    g.validate();
    c.phase_grid = g;
    necho["grid"] = {{"x_min", g.x_min}, {"x_max", g.x_max}, {"n_x", g.n_x},
                     {"p_min", g.p_min}, {"p_max", g.p_max}, {"n_p", g.n_p}};
  }
  if (expected == RunKind::exact) {
    if (!num.contains("grid") || !num.at("grid").is_array())
      throw ConfigError("numerics.grid must be an array of {min, max, n}, one per nuclear dof");
    json gecho = json::array();
    for (const auto& a : num.at("grid")) {
      detail::reject_unknown(a, {"min", "max", "n"}, "numerics.grid[]");
      Axis ax{detail::get_number(a, "min", "numerics.grid[]"), detail::get_number(a, "max", "numerics.grid[]"),
              static_cast<int>(detail::integer_or(a, "n", 0, "numerics.grid[]"))};
      if (ax.n < 4 || !(ax.max > ax.min)) throw ConfigError("numerics.grid[] needs n >= 4 and max > min");
      c.axes.push_back(ax);
      gecho.push_back({{"min", ax.min}, {"max", ax.max}, {"n", ax.n}});
    }
    if (static_cast<int>(c.axes.size()) != c.model.n_nuc)
      throw ConfigError("numerics.grid needs one axis per nuclear dof");
    necho["grid"] = gecho;
  }
  echo["numerics"] = necho;

  // output
  const json out = root.contains("output") ? root.at("output") : json::object();
  detail::reject_unknown(out, {"directory", "snapshot_times", "snapshot_state"}, "output");
  c.out_dir = detail::string_or(out, "directory", "", "output");
  if (out.contains("snapshot_times")) {
    if (expected != RunKind::qcle) throw ConfigError("output.snapshot_times applies to QCLE runs only");
    const auto& st = out.at("snapshot_times");
    if (!st.is_array()) throw ConfigError("output.snapshot_times must be an array");
    for (const auto& t : st) {
      if (!t.is_number()) throw ConfigError("output.snapshot_times entries must be numbers");
      const double v = t.get<double>();
      if (v < 0.0 || v > c.t_final + 1e-9) throw ConfigError("snapshot time outside [0, t_final]");
      c.snapshot_times.push_back(v);
    }
  }
  c.snapshot_state = static_cast<int>(detail::integer_or(out, "snapshot_state", 0, "output"));
  if (c.snapshot_state < 0 || c.snapshot_state >= c.model.n_states)
    throw ConfigError("output.snapshot_state out of range");
  echo["output"] = {{"directory", c.out_dir},
                    {"snapshot_times", c.snapshot_times},
                    {"snapshot_state", c.snapshot_state}};
  c.echo = echo;
  return c;
}

/// Sets root[a][b]... = value for a dotted path "a.b.c". The value is parsed
/// as JSON when possible, otherwise kept as a string.
inline void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("bad override path '" + path + "'");
    if (!node->is_object()) throw ConfigError("override path '" + path + "' crosses a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

inline json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return j;
}

namespace detail {

template <int N>
RunRecord dispatch_run(const RunConfig& c) {
  EnsembleSpec e;
  e.R0 = c.X0;
  e.P0 = c.P0;
  e.sigma = c.sigma;
  e.state = c.state;
  e.diabatic_start = !c.adiabatic_start;
  e.ntraj = c.ntraj;
  e.dt = c.dt;
  e.t_final = c.t_final;
  e.record_dt = c.record_dt;
  e.seed = c.seed;
  e.substeps = c.substeps;
  e.x_stop = c.x_stop;
  e.threads = c.threads;
  switch (c.kind) {
    case RunKind::sh: return run_ensemble<N>(c.model, e);
    case RunKind::mf: return run_meanfield_ensemble<N>(c.model, c.mf_mode, e);
    case RunKind::qcle: {
      auto f = rethrow_as_config([&] {
        return init_wigner_field<N>(c.model, c.phase_grid, c.X0(0), c.P0(0), c.sigma, c.state, c.adiabatic_start);
      });
      QcleOptions o;
      o.dt = c.dt;
      o.t_final = c.t_final;
      o.record_dt = c.record_dt;
      o.snapshot_times = c.snapshot_times;
      o.snapshot_state = c.snapshot_state;
      o.threads = c.threads;
      return propagate_qcle<N>(c.model, c.qcle, f, o);
    }
    case RunKind::exact: {
      auto wp = rethrow_as_config(
          [&] { return init_gaussian(c.model, c.axes, c.X0, c.P0, c.sigma, c.state, c.adiabatic_start); });
      return propagate_split_operator(c.model, wp, {c.dt, c.t_final, c.record_dt});
    }
  }
  throw ConfigError("unknown run kind");
}

}  // namespace detail

inline RunRecord run_config(const RunConfig& c) {
  switch (c.model.n_states) {
    case 2: return detail::dispatch_run<2>(c);
    case 4: return detail::dispatch_run<4>(c);
    default: return detail::dispatch_run<Eigen::Dynamic>(c);
  }
}

inline json make_manifest(const RunConfig& c, const std::string& command, const std::string& status,
                          double wall_time, const json& diagnostics) {
  json m;
  m["program"] = "phasehop";
  m["version"] = PHASEHOP_VERSION;
  m["command"] = command;
  m["status"] = status;
  m["config"] = c.echo;
  if (c.kind == RunKind::sh || c.kind == RunKind::mf) {
    m["seed"] = c.seed;
    m["rng"] = "philox4x32-10; key = seed, one stream per trajectory index";
  }
  const int cap = thread_cap();
  m["threads"] = c.threads > 0 ? (cap > 0 ? std::min(c.threads, cap) : c.threads) : worker_count();
  m["wall_time_s"] = wall_time;
  m["diagnostics"] = diagnostics;
  return m;
}

/// Exit codes of a run.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

struct RunOutcome {
  int exit_code = kExitOk;
  std::string message;
};

/// Validates, runs and writes outputs. Config errors leave `out` untouched.
inline RunOutcome execute_run(const json& root, RunKind kind, const std::string& command,
                              const std::filesystem::path& out_override) {
  RunConfig c;
  try {
    c = parse_run_config(root, kind);
  } catch (const Error& e) {
    return {kExitConfig, e.what()};
  }
  const std::filesystem::path out = out_override.empty() ? std::filesystem::path(c.out_dir) : out_override;
  if (out.empty()) return {kExitConfig, "no output directory (use --out or output.directory)"};
  c.echo["output"]["directory"] = out.string();
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  try {
    const RunRecord rec = run_config(c);
    write_record(out, rec, make_manifest(c, command, "ok", elapsed(), rec.diagnostics));
    return {kExitOk, ""};
  } catch (const ConfigError& e) {
    return {kExitConfig, e.what()};
  } catch (const PartialRunError& e) {
    json diag = e.partial().diagnostics;
    diag["error"] = e.what();
    auto manifest = make_manifest(c, command, "failed", elapsed(), diag);
    manifest["partial"] = true;
    write_record(out, e.partial(), manifest);
    return {kExitRuntime, e.what()};
  } catch (const Error& e) {
    auto manifest = make_manifest(c, command, "failed", elapsed(), json{{"error", e.what()}});
    manifest["partial"] = false;
    std::filesystem::create_directories(out);
    atomic_write(out / "manifest.json", manifest.dump(2) + "\n");
    return {kExitRuntime, e.what()};
  }
}

// ---- inspect ---------------------------------------------------------------

/// Phase-space adiabat energies and Berry curvature on a product grid of
/// R and P points. Columns: R_a..., P_a..., E_n..., B_ab_n... (a < b).
inline std::string inspect_csv(const ModelSpec& m, const std::vector<Axis>& r_axes, const std::vector<Axis>& p_axes) {
  const int nn = m.n_nuc;
  if (static_cast<int>(r_axes.size()) != nn || static_cast<int>(p_axes.size()) != nn)
    throw ConfigError("inspect grid needs one R and one P axis per nuclear dof");
  std::ostringstream os;
  for (int a = 0; a < nn; ++a) os << (a ? "," : "") << "R_" << a;
  for (int a = 0; a < nn; ++a) os << ",P_" << a;
  for (int s = 0; s < m.n_states; ++s) os << ",E_" << s;
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < nn; ++a)
      for (int b = a + 1; b < nn; ++b) os << ",B_" << a << b << "_" << s;
  os << '\n';
  std::vector<const Axis*> axes;
  for (const auto& a : r_axes) axes.push_back(&a);
  for (const auto& a : p_axes) axes.push_back(&a);
  // closed grids: n points from min to max inclusive
  auto coord = [](const Axis& a, int i) { return a.n == 1 ? a.min : a.min + (a.max - a.min) * i / (a.n - 1); };
  std::vector<int> idx(axes.size(), 0);
  while (true) {
    NucVec r(nn), p(nn);
    for (int a = 0; a < nn; ++a) {
      r(a) = coord(*axes[a], idx[a]);
      p(a) = coord(*axes[nn + a], idx[nn + a]);
    }
    const Eigen::MatrixXcd hw = build_hw<Eigen::Dynamic>(m, r, p);
    const auto es = eigensystem<Eigen::Dynamic>(hw);
    for (int a = 0; a < nn; ++a) os << (a ? "," : "") << format_double(r(a));
    for (int a = 0; a < nn; ++a) os << ',' << format_double(p(a));
    for (int s = 0; s < m.n_states; ++s) os << ',' << format_double(es.E(s));
    if (nn > 1) {
      for (int s = 0; s < m.n_states; ++s) {
        NucMat b = NucMat::Constant(nn, nn, std::numeric_limits<double>::quiet_NaN());
        try {
          b = berry_curvature<Eigen::Dynamic>(m, r, p, s);
        } catch (const DegeneracyError&) {
        }
        for (int a = 0; a < nn; ++a)
          for (int c = a + 1; c < nn; ++c) os << ',' << format_double(b(a, c));
      }
    }
    os << '\n';
    std::size_t k = 0;
    while (k < idx.size() && ++idx[k] == axes[k]->n) idx[k++] = 0;
    if (k == idx.size()) break;
  }
  return os.str();
}

inline RunOutcome execute_inspect(const json& root, const std::filesystem::path& out_override) {
  std::string csv;
  json echo;
  std::filesystem::path out = out_override;
  try {
    detail::reject_unknown(root, {"model", "inspect", "output"}, "config");
    if (!root.contains("model") || !root.contains("inspect")) throw ConfigError("inspect needs model and inspect sections");
    json model_echo;
    const ModelSpec m = parse_model_block(root.at("model"), Precondition::pseudodiabatic, model_echo);
    const auto& ins = root.at("inspect");
    detail::reject_unknown(ins, {"R", "P"}, "inspect");
    auto axes = [&](const char* key) {
      if (!ins.contains(key) || !ins.at(key).is_array())
        throw ConfigError(std::string("inspect.") + key + " must be an array of {min, max, n}");
      std::vector<Axis> v;
      for (const auto& a : ins.at(key)) {
        detail::reject_unknown(a, {"min", "max", "n"}, std::string("inspect.") + key + "[]");
        Axis ax{detail::get_number(a, "min", "inspect"), detail::get_number(a, "max", "inspect"),
                static_cast<int>(detail::integer_or(a, "n", 0, "inspect"))};
        if (ax.n < 1 || ax.max < ax.min) throw ConfigError("inspect axes need n >= 1 and max >= min");
        v.push_back(ax);
      }
      return v;
    };
    const auto r_axes = axes("R");
    const auto p_axes = axes("P");
    if (out.empty() && root.contains("output")) {
      detail::reject_unknown(root.at("output"), {"directory"}, "output");
      out = detail::string_or(root.at("output"), "directory", "", "output");
    }
    if (out.empty()) throw ConfigError("no output directory (use --out or output.directory)");
    csv = inspect_csv(m, r_axes, p_axes);
    echo = {{"model", model_echo}, {"inspect", ins}};
  } catch (const Error& e) {
    return {kExitConfig, e.what()};
  }
  json manifest = {{"program", "phasehop"}, {"version", PHASEHOP_VERSION}, {"command", "inspect"},
                   {"status", "ok"},        {"config", echo}};
  atomic_write(out / "frames.csv", csv);
  atomic_write(out / "manifest.json", manifest.dump(2) + "\n");
  return {kExitOk, ""};
}

// ---- compare ---------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  if (!std::getline(in, line)) throw ConfigError(path.string() + " is empty");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split(line);
    if (row.size() != t.header.size()) throw ConfigError(path.string() + ": row width differs from header");
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline double parse_cell(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw ConfigError("bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("bad number '" + s + "'");
  }
}

struct Comparison {
  std::string csv;  // channel,state,fraction_a,fraction_b,difference
  double max_channel_difference = 0.0;
  double max_population_difference = 0.0;
  std::vector<std::string> compared_columns;
};

/// Per-channel differences (b - a) and the largest |difference| over shared
/// channels and shared population columns.
inline Comparison compare_runs(const std::filesystem::path& a, const std::filesystem::path& b) {
  Comparison out;
  const auto sa = read_csv(a / "scattering.csv");
  const auto sb = read_csv(b / "scattering.csv");
  const std::vector<std::string> scat_header = {"channel", "state", "fraction", "stderr"};
  if (sa.header != scat_header || sb.header != scat_header) throw ConfigError("unexpected scattering.csv header");
  std::ostringstream os;
  os << "channel,state,fraction_a,fraction_b,difference\n";
  for (const auto& ra : sa.rows) {
    for (const auto& rb : sb.rows) {
      if (ra[0] != rb[0] || ra[1] != rb[1]) continue;
      const double fa = parse_cell(ra[2]);
      const double fb = parse_cell(rb[2]);
      os << ra[0] << ',' << ra[1] << ',' << format_double(fa) << ',' << format_double(fb) << ','
         << format_double(fb - fa) << '\n';
      out.max_channel_difference = std::max(out.max_channel_difference, std::abs(fb - fa));
    }
  }
  out.csv = os.str();
  const auto pa = read_csv(a / "populations.csv");
  const auto pb = read_csv(b / "populations.csv");
  if (pa.header.empty() || pa.header[0] != "t" || pb.header.empty() || pb.header[0] != "t")
    throw ConfigError("populations.csv must start with a t column");
  if (pa.rows.size() != pb.rows.size()) throw ConfigError("populations.csv files have different row counts");
  for (std::size_t i = 0; i < pa.rows.size(); ++i)
    if (std::abs(parse_cell(pa.rows[i][0]) - parse_cell(pb.rows[i][0])) > 1e-9)
      throw ConfigError("populations.csv time rows differ");
  for (std::size_t ca = 1; ca < pa.header.size(); ++ca) {
    if (pa.header[ca].rfind("pop_", 0) != 0) continue;
    for (std::size_t cb = 1; cb < pb.header.size(); ++cb) {
      if (pb.header[cb] != pa.header[ca]) continue;
      out.compared_columns.push_back(pa.header[ca]);
      for (std::size_t i = 0; i < pa.rows.size(); ++i)
        out.max_population_difference = std::max(
            out.max_population_difference, std::abs(parse_cell(pb.rows[i][cb]) - parse_cell(pa.rows[i][ca])));
    }
  }
  return out;
}

inline RunOutcome execute_compare(const std::filesystem::path& a, const std::filesystem::path& b,
                                  const std::filesystem::path& out) {
  Comparison cmp;
  try {
    if (out.empty()) throw ConfigError("compare needs --out");
    cmp = compare_runs(a, b);
  } catch (const Error& e) {
    return {kExitConfig, e.what()};
  }
  json summary = {{"program", "phasehop"},
                  {"version", PHASEHOP_VERSION},
                  {"command", "compare"},
                  {"status", "ok"},
                  {"a", a.string()},
                  {"b", b.string()},
                  {"max_abs_channel_difference", cmp.max_channel_difference},
                  {"max_abs_population_difference", cmp.max_population_difference},
                  {"compared_columns", cmp.compared_columns}};
  atomic_write(out / "comparison.csv", cmp.csv);
  atomic_write(out / "manifest.json", summary.dump(2) + "\n");
  return {kExitOk, "max |channel difference| = " + format_double(cmp.max_channel_difference) +
                       ", max |population difference| = " + format_double(cmp.max_population_difference)};
}

}  // namespace phasehop
