/**
 * @file cli.hpp
 * @brief The algsode command line: subcommands flow, exp, bvp, h0, lift, gexp, gbvp, verify.
 *
 * Every command merges an optional JSON config (--config) with command-line flags (flags
 * win), builds a registry instance or an inline model, runs, prints a JSON result record
 * and writes it plus any trajectory CSV into --output-dir.
 *
 * Exit codes: 0 success, 1 solver failure or failed verification, 2 bad input.
 */
#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "algsode/expmap.hpp"
#include "algsode/instances.hpp"
#include "algsode/io.hpp"
#include "algsode/verify.hpp"

namespace algsode::cli {

using Json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitSolverFailure = 1;
inline constexpr int kExitBadInput = 2;

namespace detail {

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

// Flags shared by every subcommand.
inline const std::vector<FlagSpec>& common_flags() {
  static const std::vector<FlagSpec> flags{
      {"--instance", "instance", "registry instance name"},
      {"--output-dir", "output_dir", "directory for result files (default .)"},
      {"--seed", "seed", "seed for sampled checks (default $ALGSODE_SEED or 0)"},
      {"--abs-tol", "abs_tol", "integrator absolute tolerance"},
      {"--rel-tol", "rel_tol", "integrator relative tolerance"},
      {"--method", "method", "integrator: dopri45 or rk4"},
      {"--max-steps", "max_steps", "integrator step limit"},
      {"--initial-step", "initial_step", "integrator initial (or fixed) step"},
      {"--sample-interval", "sample_interval", "uniform output spacing for trajectories (0 = accepted steps)"},
      {"--residual-tol", "residual_tol", "Newton residual tolerance"},
      {"--max-iters", "max_iters", "Newton iteration limit"},
      {"--damping", "damping", "initial Newton step fraction"},
      {"--jacobian", "jacobian", "Newton Jacobian: variational or fd"},
  };
  return flags;
}

inline const std::map<std::string, std::vector<FlagSpec>>& command_flags() {
  static const std::map<std::string, std::vector<FlagSpec>> flags{
      {"flow",
       {{"--q0", "q0", "initial base point"}, {"--y0,--v", "y0", "initial fiber vector"}, {"--t", "t", "final time"}}},
      {"exp",
       {{"--h", "h", "time step (comma list for a sweep)"},
        {"--q0", "q0", "base point"},
        {"--v", "v", "fiber vector"},
        {"--mode", "mode", "pair (default), mid or one"}}},
      {"bvp",
       {{"--h", "h", "time step (comma list for a sweep)"},
        {"--from", "from", "start point"},
        {"--to", "to", "end point"},
        {"--guess", "guess", "initial fiber vector (default (to - from)/h)"}}},
      {"h0",
       {{"--q0", "q0", "box center"},
        {"--R", "R", "base box half-width"},
        {"--Rdot", "Rdot", "velocity box half-width"},
        {"--margin", "margin", "relative safety margin in (0, 1)"},
        {"--h-max", "h_max", "cap on h0"},
        {"--grid", "grid", "grid points per axis"},
        {"--samples", "samples", "random samples"},
        {"--inflation", "inflation", "multiplier (>= 1) on the sampled maxima"},
        {"--refine", "refine", "local ascent from the best samples (true/false)"}}},
      {"lift",
       {{"--g", "g", "groupoid element"},
        {"--v", "v", "alpha-vertical vector at g"},
        {"--t", "t", "integrate the lifted SODE for this time"},
        {"--samples", "samples", "samples for the relatedness defect"}}},
      {"gexp",
       {{"--h", "h", "time step"}, {"--q", "q", "base point (omit for a Lie algebra)"}, {"--a", "a", "algebroid vector"}}},
      {"gbvp", {{"--h", "h", "time step"}, {"--g", "g", "target element"}, {"--guess", "guess", "initial algebroid vector"}}},
      {"verify", {{"--samples", "samples", "samples for pointwise checks"}}},
  };
  return flags;
}

// Config keys that are not plain flags.
inline const std::set<std::string>& structural_keys() {
  static const std::set<std::string> keys{"command", "instance", "params", "model"};
  return keys;
}

[[noreturn]] inline void bad_config(const std::string& msg) { throw Error(ErrorCode::config_error, msg); }

inline std::optional<double> parse_number(const std::string& text) {
  std::size_t used = 0;
  try {
    const double x = std::stod(text, &used);
    if (used == text.size()) return x;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

inline std::optional<Vector> parse_number_list(const std::string& text) {
  std::vector<double> xs;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto x = parse_number(item);
    if (!x) return std::nullopt;
    xs.push_back(*x);
  }
  if (xs.empty()) return std::nullopt;
  return Eigen::Map<const Vector>(xs.data(), static_cast<Index>(xs.size()));
}

/// Merged view of config values and flags with typed access.
class Settings {
 public:
  explicit Settings(Json values) : values_(std::move(values)) {}

  [[nodiscard]] bool has(const std::string& key) const { return values_.contains(key) && !values_[key].is_null(); }
  [[nodiscard]] const Json& raw(const std::string& key) const { return values_.at(key); }

  [[nodiscard]] double number(const std::string& key) const {
    if (!has(key)) bad_config("missing required value '" + key + "'");
    const Json& v = values_[key];
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      if (const auto x = parse_number(v.get<std::string>())) return *x;
    }
    bad_config("'" + key + "' must be a number");
  }

  [[nodiscard]] double number(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }

  [[nodiscard]] long integer(const std::string& key, long fallback) const {
    if (!has(key)) return fallback;
    const double x = number(key);
    if (x != std::floor(x) || std::abs(x) > 1e15) bad_config("'" + key + "' must be an integer");
    return static_cast<long>(x);
  }

  [[nodiscard]] Vector vector(const std::string& key) const {
    if (!has(key)) bad_config("missing required value '" + key + "'");
    return to_vector(key, values_[key]);
  }

  [[nodiscard]] Vector vector(const std::string& key, const Vector& fallback) const {
    return has(key) ? vector(key) : fallback;
  }

  [[nodiscard]] std::string text(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const Json& v = values_[key];
    if (!v.is_string()) bad_config("'" + key + "' must be a string");
    return v.get<std::string>();
  }

  [[nodiscard]] bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const Json& v = values_[key];
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "true" || s == "1" || s == "yes") return true;
      if (s == "false" || s == "0" || s == "no") return false;
    }
    bad_config("'" + key + "' must be true or false");
  }

  static Vector to_vector(const std::string& key, const Json& v) {
    if (v.is_number()) return Vector::Constant(1, v.get<double>());
    if (v.is_array()) {
      Vector out(static_cast<Index>(v.size()));
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) bad_config("'" + key + "' must be a list of numbers");
        out[static_cast<Index>(i)] = v[i].get<double>();
      }
      return out;
    }
    if (v.is_string()) {
      if (v.get<std::string>().empty()) return Vector(0);
      if (const auto x = parse_number_list(v.get<std::string>())) return *x;
    }
    bad_config("'" + key + "' must be a list of numbers");
  }

 private:
  Json values_;
};

inline Json read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad_config("cannot read config file " + path);
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::parse_error, path + ": " + e.what());
  }
  if (!doc.is_object()) bad_config(path + ": top level must be an object");
  std::set<std::string> known = structural_keys();
  for (const auto& f : common_flags()) known.insert(f.key);
  for (const auto& [cmd, flags] : command_flags()) {
    for (const auto& f : flags) known.insert(f.key);
  }
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) bad_config(path + ": unknown key '" + key + "'");
  }
  return doc;
}

inline ParamValue param_from_json(const std::string& key, const Json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array() && !v.empty() && v[0].is_array()) {
    const std::size_t rows = v.size();
    const std::size_t cols = v[0].size();
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
      if (!v[i].is_array() || v[i].size() != cols) bad_config("parameter '" + key + "': ragged matrix");
      for (std::size_t j = 0; j < cols; ++j) {
        if (!v[i][j].is_number()) bad_config("parameter '" + key + "': matrix entries must be numbers");
        m(static_cast<Index>(i), static_cast<Index>(j)) = v[i][j].get<double>();
      }
    }
    return m;
  }
  if (v.is_array()) return Settings::to_vector("parameter '" + key + "'", v);
  bad_config("parameter '" + key + "' has an unsupported type");
}

inline ParamValue param_from_text(const std::string& text) {
  if (const auto x = parse_number(text)) return *x;
  if (const auto v = parse_number_list(text)) return *v;
  return text;
}

inline Expression expression_at(const Json& v, const std::string& where) {
  if (v.is_number()) return Expression::constant(v.get<double>());
  if (!v.is_string()) bad_config(where + ": expected a number or an expression string");
  try {
    return Expression::parse(v.get<std::string>());
  } catch (const Error& e) {
    throw Error(e.code(), where + ": " + e.what());
  }
}

// Flattened k x k x k table, index (a * k + b) * k + c.
inline std::vector<Expression> table3(const Json& v, Index k, const std::string& where) {
  const auto uk = static_cast<std::size_t>(k);
  if (!v.is_array() || v.size() != uk) bad_config(where + ": expected " + std::to_string(k) + " blocks");
  std::vector<Expression> out;
  for (std::size_t a = 0; a < uk; ++a) {
    if (!v[a].is_array() || v[a].size() != uk) bad_config(where + ": block " + std::to_string(a) + " has the wrong size");
    for (std::size_t b = 0; b < uk; ++b) {
      if (!v[a][b].is_array() || v[a][b].size() != uk) bad_config(where + ": row has the wrong size");
      for (std::size_t c = 0; c < uk; ++c) {
        out.push_back(expression_at(v[a][b][c], where + "[" + std::to_string(a) + "][" + std::to_string(b) + "][" +
                                                    std::to_string(c) + "]"));
      }
    }
  }
  return out;
}

/// Inline model: base chart, rank, anchor, structure, gamma (or quadratic coefficients), params.
inline BuiltInstance inline_model(const Json& m) {
  static const std::set<std::string> allowed{"name",  "base",      "rank",   "anchor",        "structure",
                                             "gamma", "quadratic", "params", "fibration_base"};
  if (!m.is_object()) bad_config("model must be an object");
  for (const auto& [key, value] : m.items()) {
    if (!allowed.count(key)) bad_config("model: unknown key '" + key + "'");
  }
  if (!m.contains("base")) bad_config("model: missing 'base'");
  const Json& b = m["base"];
  ChartBox base;
  if (b.contains("lower") || b.contains("upper")) {
    base = ChartBox(Settings::to_vector("model.base.lower", b.value("lower", Json::array())),
                    Settings::to_vector("model.base.upper", b.value("upper", Json::array())));
  } else {
    const long dim = b.value("dim", -1L);
    if (dim < 0) bad_config("model.base: give lower/upper or dim");
    base = ChartBox::cube(dim, b.value("half_width", 10.0));
  }
  const Index n = base.dim();
  const Index k = m.value("rank", static_cast<long>(n));
  if (k < 0) bad_config("model.rank must be >= 0");

  Parameters params;
  if (m.contains("params")) {
    for (const auto& [key, value] : m["params"].items()) {
      if (!value.is_number()) bad_config("model.params." + key + " must be a number");
      params[key] = value.get<double>();
    }
  }

  std::vector<Expression> anchor;
  if (m.contains("anchor")) {
    const Json& a = m["anchor"];
    if (!a.is_array() || static_cast<Index>(a.size()) != n) bad_config("model.anchor: expected " + std::to_string(n) + " rows");
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!a[i].is_array() || static_cast<Index>(a[i].size()) != k) bad_config("model.anchor: row has the wrong size");
      for (std::size_t j = 0; j < a[i].size(); ++j) {
        anchor.push_back(expression_at(a[i][j], "model.anchor[" + std::to_string(i) + "][" + std::to_string(j) + "]"));
      }
    }
  } else {
    if (n != k) bad_config("model.anchor is required when rank differs from the base dimension");
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < k; ++j) anchor.push_back(Expression::constant(i == j ? 1.0 : 0.0));
    }
  }
  std::vector<Expression> structure;
  if (m.contains("structure")) structure = table3(m["structure"], k, "model.structure");

  const AlgebroidModel model(base, k, std::move(anchor), std::move(structure), params);
  std::optional<SodeField> sode;
  if (m.contains("quadratic")) {
    if (m.contains("gamma")) bad_config("model: give either gamma or quadratic, not both");
    sode = spray_from_coefficients(model, table3(m["quadratic"], k, "model.quadratic"), params);
  } else if (m.contains("gamma")) {
    const Json& g = m["gamma"];
    if (!g.is_array() || static_cast<Index>(g.size()) != k) bad_config("model.gamma: expected " + std::to_string(k) + " entries");
    std::vector<Expression> gamma;
    for (std::size_t a = 0; a < g.size(); ++a) gamma.push_back(expression_at(g[a], "model.gamma[" + std::to_string(a) + "]"));
    sode = SodeField(model, std::move(gamma), params);
  }
  std::optional<Index> fibration_base;
  if (m.contains("fibration_base")) {
    const long fb = m["fibration_base"].get<long>();
    if (fb < 0 || fb > n) bad_config("model.fibration_base out of range");
    fibration_base = fb;
  }
  return {m.value("name", std::string("inline")), model, sode, std::nullopt, fibration_base};
}

inline BuiltInstance build_from(const Settings& s, const std::vector<std::string>& param_flags) {
  if (s.has("model")) {
    if (s.has("instance")) bad_config("give either an instance or an inline model, not both");
    if (!param_flags.empty()) bad_config("--param applies to registry instances only");
    return inline_model(s.raw("model"));
  }
  if (!s.has("instance")) bad_config("no model: pass --instance or a config with 'instance' or 'model'");
  InstanceSpec spec;
  const Json& inst = s.raw("instance");
  const Json* params = s.has("params") ? &s.raw("params") : nullptr;
  if (inst.is_string()) {
    spec.name = inst.get<std::string>();
  } else if (inst.is_object()) {
    spec.name = inst.value("name", std::string());
    if (inst.contains("params")) params = &inst["params"];
  } else {
    bad_config("'instance' must be a name or an object");
  }
  if (params) {
    if (!params->is_object()) bad_config("'params' must be an object");
    for (const auto& [key, value] : params->items()) spec.params[key] = param_from_json(key, value);
  }
  for (const auto& p : param_flags) {
    const auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0) bad_config("--param expects key=value, got '" + p + "'");
    spec.params[p.substr(0, eq)] = param_from_text(p.substr(eq + 1));
  }
  return build_model(spec);
}

inline IntegratorConfig integrator_from(const Settings& s) {
  IntegratorConfig cfg;
  cfg.abs_tol = s.number("abs_tol", cfg.abs_tol);
  cfg.rel_tol = s.number("rel_tol", cfg.rel_tol);
  cfg.max_steps = s.integer("max_steps", cfg.max_steps);
  cfg.initial_step = s.number("initial_step", cfg.initial_step);
  cfg.sample_interval = s.number("sample_interval", cfg.sample_interval);
  const std::string method = s.text("method", "dopri45");
  if (method == "dopri45") {
    cfg.method = IntegrationMethod::dopri45;
  } else if (method == "rk4") {
    cfg.method = IntegrationMethod::rk4;
  } else {
    bad_config("method must be dopri45 or rk4");
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    bad_config(e.what());
  }
  return cfg;
}

inline NewtonConfig newton_from(const Settings& s) {
  NewtonConfig cfg;
  cfg.residual_tol = s.number("residual_tol", cfg.residual_tol);
  cfg.max_iters = static_cast<int>(s.integer("max_iters", cfg.max_iters));
  cfg.damping = s.number("damping", cfg.damping);
  const std::string mode = s.text("jacobian", "variational");
  if (mode == "variational") {
    cfg.jacobian_mode = JacobianMode::variational;
  } else if (mode == "fd" || mode == "finite-difference") {
    cfg.jacobian_mode = JacobianMode::finite_difference;
  } else {
    bad_config("jacobian must be variational or fd");
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    bad_config(e.what());
  }
  return cfg;
}

inline std::uint64_t seed_from(const Settings& s) {
  if (s.has("seed")) {
    const long seed = s.integer("seed", 0);
    if (seed < 0) bad_config("seed must be >= 0");
    return static_cast<std::uint64_t>(seed);
  }
  if (const char* env = std::getenv("ALGSODE_SEED")) {
    const auto x = parse_number(env);
    if (!x || *x < 0 || *x != std::floor(*x)) bad_config("ALGSODE_SEED must be a non-negative integer");
    return static_cast<std::uint64_t>(*x);
  }
  return 0;
}

inline Json to_json(const Vector& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Json to_json(const Matrix& m) {
  Json out = Json::array();
  for (Index i = 0; i < m.rows(); ++i) out.push_back(to_json(Vector(m.row(i).transpose())));
  return out;
}

/// One h value or a comma-separated sweep.
inline std::vector<double> h_values(const Settings& s) {
  const Vector hs = s.vector("h");
  if (hs.size() == 0) bad_config("'h' is empty");
  return {hs.data(), hs.data() + hs.size()};
}

inline const SodeField& require_sode(const BuiltInstance& inst) {
  if (!inst.sode) bad_config("instance '" + inst.name + "' has no SODE");
  return *inst.sode;
}

inline const GroupoidModel& require_groupoid(const BuiltInstance& inst) {
  if (!inst.groupoid) bad_config("instance '" + inst.name + "' has no groupoid model");
  return *inst.groupoid;
}

inline void require_size(const Vector& v, Index n, const std::string& key) {
  if (v.size() != n) {
    throw Error(ErrorCode::dimension_mismatch,
                "'" + key + "' has " + std::to_string(v.size()) + " entries, expected " + std::to_string(n));
  }
}

/// What a command produced; files are written by the caller after the command finishes.
struct Outcome {
  Json values = Json::object();
  std::optional<double> residual;
  std::optional<int> iterations;
  std::optional<Trajectory> csv;
  Index csv_n = 0;
  Index csv_k = 0;
  std::string text;  // printed instead of the JSON record (verify table)
  bool failed = false;
  std::string status = "ok";

  // Keeps a trajectory that stopped early and marks the run as a solver failure.
  void keep(const Trajectory& traj, Index n, Index k) {
    csv = traj;
    csv_n = n;
    csv_k = k;
    if (!traj.completed()) {
      failed = true;
      status = traj.status == IvpStatus::left_domain ? "left-domain" : "stiff/failure";
      values["t_exit"] = traj.t_exit;
      values["message"] = traj.message;
    }
  }
};

inline Trajectory single_sample(const Vector& q, const Vector& y) {
  Trajectory t;
  t.t = {0.0};
  t.q = {q};
  t.y = {y};
  return t;
}

inline Outcome cmd_flow(const Settings& s, const BuiltInstance& inst) {
  const SodeField& sode = require_sode(inst);
  const Vector q0 = s.vector("q0", Vector::Zero(sode.base_dim()));
  const Vector y0 = s.vector("y0");
  require_size(q0, sode.base_dim(), "q0");
  require_size(y0, sode.fiber_dim(), "y0");
  const double t = s.number("t");
  if (!(t >= 0.0)) bad_config("t must be >= 0");
  const Trajectory traj = flow(sode, q0, y0, t, integrator_from(s));
  Outcome out;
  out.values["t"] = traj.t.back();
  out.values["q"] = to_json(traj.final_q());
  out.values["y"] = to_json(traj.final_y());
  out.values["samples"] = traj.size();
  out.keep(traj, sode.base_dim(), sode.fiber_dim());
  return out;
}

inline Outcome cmd_exp(const Settings& s, const BuiltInstance& inst) {
  const SodeField& sode = require_sode(inst);
  const IntegratorConfig icfg = integrator_from(s);
  const Vector q0 = s.vector("q0", Vector::Zero(sode.base_dim()));
  const Vector v = s.vector("v");
  require_size(q0, sode.base_dim(), "q0");
  require_size(v, sode.fiber_dim(), "v");
  const std::string mode = s.text("mode", "pair");
  if (mode != "pair" && mode != "mid" && mode != "one") bad_config("mode must be pair, mid or one");
  const auto hs = mode == "one" ? std::vector<double>{1.0} : h_values(s);
  Outcome out;
  Json sweep = Json::array();
  for (double h : hs) {
    std::pair<Vector, Vector> ends;
    if (mode == "pair") ends = exp_pair(sode, h, q0, v, icfg);
    if (mode == "mid") ends = exp_mid(sode, h, q0, v, icfg);
    if (mode == "one") ends = exp_one(sode, q0, v, icfg);
    sweep.push_back({{"h", h}, {"start", to_json(ends.first)}, {"end", to_json(ends.second)}});
  }
  out.values["mode"] = mode;
  if (hs.size() == 1) {
    out.values["h"] = hs[0];
    out.values["start"] = sweep[0]["start"];
    out.values["end"] = sweep[0]["end"];
    const double h = hs[0];
    if (mode == "mid") {
      // Trajectory over [-h/2, h/2] is reported from its left end.
      const Trajectory back = flow(sode, q0, v, -0.5 * h, icfg);
      algsode::detail::require_completed(back);
      out.csv = h == 0.0 ? single_sample(back.final_q(), back.final_y())
                         : flow(sode, back.final_q(), back.final_y(), h, icfg);
    } else {
      out.csv = h == 0.0 ? single_sample(q0, v) : flow(sode, q0, v, h, icfg);
    }
    out.csv_n = sode.base_dim();
    out.csv_k = sode.fiber_dim();
  } else {
    out.values["sweep"] = sweep;
  }
  return out;
}

inline Outcome cmd_bvp(const Settings& s, const BuiltInstance& inst) {
  const SodeField& sode = require_sode(inst);
  const IntegratorConfig icfg = integrator_from(s);
  const NewtonConfig ncfg = newton_from(s);
  const Vector from = s.vector("from");
  const Vector to = s.vector("to");
  require_size(from, sode.base_dim(), "from");
  require_size(to, sode.base_dim(), "to");
  std::optional<Vector> guess;
  if (s.has("guess")) {
    guess = s.vector("guess");
    require_size(*guess, sode.fiber_dim(), "guess");
  }
  const auto hs = h_values(s);
  Outcome out;
  if (hs.size() == 1) {
    const auto [r, sol] = retraction_pair(sode, hs[0], from, to, guess, ncfg, icfg);
    out.values["h"] = hs[0];
    out.values["v"] = to_json(r.minus);
    out.values["plus"] = to_json(r.plus);
    out.residual = sol.residual;
    out.iterations = sol.iterations;
    out.csv = sol.trajectory;
    out.csv_n = sode.base_dim();
    out.csv_k = sode.fiber_dim();
    return out;
  }
  Json sweep = Json::array();
  for (double h : hs) {
    Json entry{{"h", h}};
    try {
      const auto [r, sol] = retraction_pair(sode, h, from, to, guess, ncfg, icfg);
      entry["status"] = "ok";
      entry["v"] = to_json(r.minus);
      entry["plus"] = to_json(r.plus);
      entry["residual"] = sol.residual;
      entry["iterations"] = sol.iterations;
    } catch (const Error& e) {
      if (!is_solver_failure(e.code())) throw;
      entry["status"] = std::string(to_string(e.code()));
      entry["message"] = e.what();
      out.failed = true;
      out.status = "failed";
    }
    sweep.push_back(entry);
  }
  out.values["sweep"] = sweep;
  return out;
}

inline Outcome cmd_h0(const Settings& s, const BuiltInstance& inst) {
  const SodeField& sode = require_sode(inst);
  H0Config cfg;
  cfg.margin = s.number("margin", cfg.margin);
  cfg.h_max = s.number("h_max", cfg.h_max);
  cfg.grid_points = static_cast<int>(s.integer("grid", cfg.grid_points));
  cfg.random_samples = static_cast<int>(s.integer("samples", cfg.random_samples));
  cfg.inflation = s.number("inflation", cfg.inflation);
  cfg.refine = s.boolean("refine", cfg.refine);
  const Vector q0 = s.vector("q0", Vector::Zero(sode.base_dim()));
  require_size(q0, sode.base_dim(), "q0");
  const std::uint64_t seed = seed_from(s);
  const H0Certificate c = h0_certificate(sode, q0, s.number("R"), s.number("Rdot"), cfg, seed);
  Outcome out;
  out.values["seed"] = seed;
  out.values["h0"] = c.h0;
  out.values["C"] = c.C;
  out.values["Cdot"] = c.Cdot;
  out.values["M"] = c.M;
  out.values["R"] = c.R;
  out.values["Rdot"] = c.Rdot;
  out.values["margin"] = c.margin;
  out.values["lipschitz_bound"] = std::isfinite(c.lipschitz_bound) ? Json(c.lipschitz_bound) : Json("inf");
  out.values["base_bound"] = std::isfinite(c.base_bound) ? Json(c.base_bound) : Json("inf");
  out.values["fiber_bound"] = std::isfinite(c.fiber_bound) ? Json(c.fiber_bound) : Json("inf");
  out.values["binding"] = c.binding;
  out.values["grid_points_per_axis"] = c.grid_points_per_axis;
  out.values["evaluations"] = c.evaluations;
  return out;
}

inline Outcome cmd_lift(const Settings& s, const BuiltInstance& inst) {
  const GroupoidModel& gpd = require_groupoid(inst);
  const SodeField& sode = require_sode(inst);
  const LiftedSode lifted = lift_sode(gpd, sode);
  const int samples = static_cast<int>(s.integer("samples", 100));
  const std::uint64_t seed = seed_from(s);
  Outcome out;
  out.values["seed"] = seed;
  out.values["psi_defect"] = psi_defect(gpd, lifted, sode, samples, seed);
  out.values["samples"] = samples;
  if (s.has("g") || s.has("v")) {
    const Vector g = s.vector("g");
    const Vector v = s.vector("v");
    require_size(g, gpd.element_dim(), "g");
    require_size(v, gpd.element_dim(), "v");
    out.values["psi"] = to_json(psi_apply(gpd, {g, v}));
    out.values["velocity"] = to_json(lifted.base_velocity(g, v));
    out.values["acceleration"] = to_json(lifted.fiber_acceleration(g, v));
    if (s.has("t")) {
      const Trajectory traj = flow(lifted, g, v, s.number("t"), integrator_from(s));
      out.values["g_final"] = to_json(traj.final_q());
      out.keep(traj, gpd.element_dim(), gpd.element_dim());
    }
  }
  return out;
}

inline Outcome cmd_gexp(const Settings& s, const BuiltInstance& inst) {
  const GroupoidModel& gpd = require_groupoid(inst);
  const LiftedSode lifted = lift_sode(gpd, require_sode(inst));
  const double h = s.number("h");
  const Vector q = s.vector("q", Vector::Zero(gpd.base_dim()));
  const Vector a = s.vector("a");
  require_size(q, gpd.base_dim(), "q");
  require_size(a, gpd.rank(), "a");
  const IntegratorConfig icfg = integrator_from(s);
  Outcome out;
  out.csv_n = gpd.element_dim();
  out.csv_k = gpd.element_dim();
  if (h == 0.0) {
    const Vector g = groupoid_exp(lifted, h, q, a, icfg);
    out.values["g"] = to_json(g);
    out.csv = single_sample(g, gpd.algebroid_frame(q) * a);
    return out;
  }
  const Trajectory traj = groupoid_flow(lifted, h, q, a, icfg);
  out.values["h"] = h;
  out.values["g"] = to_json(traj.final_q());
  out.values["alpha_drift"] = alpha_drift(gpd, traj);
  out.keep(traj, gpd.element_dim(), gpd.element_dim());
  return out;
}

inline Outcome cmd_gbvp(const Settings& s, const BuiltInstance& inst) {
  const GroupoidModel& gpd = require_groupoid(inst);
  const LiftedSode lifted = lift_sode(gpd, require_sode(inst));
  const double h = s.number("h");
  const Vector g = s.vector("g");
  require_size(g, gpd.element_dim(), "g");
  std::optional<Vector> guess;
  if (s.has("guess")) {
    guess = s.vector("guess");
    require_size(*guess, gpd.rank(), "guess");
  }
  const GroupoidBvpSolution sol = groupoid_bvp(lifted, h, g, guess, newton_from(s), integrator_from(s));
  Outcome out;
  out.values["h"] = h;
  out.values["minus"] = to_json(sol.retraction.minus);
  out.values["plus"] = to_json(sol.retraction.plus);
  out.values["base_start"] = to_json(sol.base.q.front());
  out.values["base_end"] = to_json(sol.base.q.back());
  out.residual = sol.residual;
  out.iterations = sol.iterations;
  out.csv = sol.base;
  out.csv_n = gpd.base_dim();
  out.csv_k = gpd.rank();
  return out;
}

inline std::string verify_table(const VerifyReport& report) {
  std::ostringstream t;
  std::size_t width = 5;
  for (const auto& c : report.checks) width = std::max(width, c.name.size());
  t << "instance " << report.instance << '\n';
  t << std::left << std::setw(static_cast<int>(width) + 2) << "check" << std::setw(14) << "value" << std::setw(12)
    << "tolerance"
    << "result\n";
  int passed = 0;
  for (const auto& c : report.checks) {
    std::ostringstream value;
    value << std::setprecision(3) << c.value;
    std::ostringstream tol;
    tol << std::setprecision(3) << c.tolerance;
    t << std::left << std::setw(static_cast<int>(width) + 2) << c.name << std::setw(14) << value.str() << std::setw(12)
      << tol.str() << (c.passed ? "PASS" : "FAIL");
    if (!c.note.empty()) t << "  (" << c.note << ')';
    t << '\n';
    passed += c.passed ? 1 : 0;
  }
  t << passed << '/' << report.checks.size() << " checks passed\n";
  return t.str();
}

inline Outcome cmd_verify(const Settings& s, const BuiltInstance& inst) {
  VerifyConfig cfg;
  cfg.samples = static_cast<int>(s.integer("samples", cfg.samples));
  if (cfg.samples < 1) bad_config("samples must be >= 1");
  const std::uint64_t seed = seed_from(s);
  const VerifyReport report = verify_instance(inst, seed, cfg);
  Outcome out;
  out.values["seed"] = seed;
  Json checks = Json::array();
  for (const auto& c : report.checks) {
    Json entry{{"name", c.name},
               {"value", std::isfinite(c.value) ? Json(c.value) : Json("inf")},
               {"tolerance", c.tolerance},
               {"passed", c.passed}};
    if (!c.note.empty()) entry["note"] = c.note;
    checks.push_back(entry);
  }
  out.values["checks"] = checks;
  out.values["passed"] = report.passed();
  out.text = verify_table(report);
  out.failed = !report.passed();
  if (out.failed) out.status = "failed";
  return out;
}

inline Json record(const std::string& command, const std::string& instance, const std::string& status) {
  return Json{{"command", command}, {"instance", instance}, {"status", status}, {"values", Json::object()},
              {"residual", nullptr}, {"iterations", nullptr}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::config_error, "cannot open " + path.string() + " for writing");
  f << text;
}

}  // namespace detail

/// Runs one command line (without the program name); returns the exit code.
inline int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  using namespace detail;
  CLI::App app{"Flows, exponential maps and shooting for SODEs on Lie algebroids and groupoids", "algsode"};
  app.require_subcommand(1);
  app.set_help_flag("--help", "print this help and exit");  // -h would clash with --h
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> flag_options;
  std::vector<std::string> param_flags;
  std::string config_path;

  std::map<std::string, CLI::App*> subs;
  static const std::map<std::string, std::string> descriptions{
      {"flow", "integrate the SODE from (q0, y0) for time t"},
      {"exp", "exponential map (pair, midpoint or h = 1 form)"},
      {"bvp", "shooting: fiber vector connecting two points in time h"},
      {"h0", "certified step-size bound on a box around q0"},
      {"lift", "SODE lifted to the alpha-vertical bundle of a groupoid"},
      {"gexp", "groupoid exponential of an algebroid vector"},
      {"gbvp", "groupoid shooting inside an alpha-fiber"},
      {"verify", "run the invariant suite of an instance"},
  };
  for (const auto& [name, flags] : command_flags()) {
    CLI::App* sub = app.add_subcommand(name, descriptions.at(name));
    subs[name] = sub;
    auto add = [&](const FlagSpec& f) {
      const std::string id = name + "/" + f.key;
      flag_options[id] = sub->add_option(f.flag, flag_values[id], f.help)->allow_extra_args(false);
    };
    for (const auto& f : common_flags()) add(f);
    for (const auto& f : flags) add(f);
    sub->add_option("--param", param_flags, "instance parameter key=value (repeatable)");
    sub->add_option("--config", config_path, "JSON config file; flags override its values");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitBadInput;
  }

  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }

  Json result = record(command, "", "ok");
  std::optional<std::filesystem::path> dir;
  // Writes the JSON record (and CSV) into the output directory; returns the files written.
  auto write_outputs = [&](const std::optional<Trajectory>& csv, Index n, Index k) {
    Json files = Json::array();
    if (!dir) return files;
    if (csv) {
      const auto csv_path = *dir / (command + ".csv");
      write_trajectory_csv(csv_path.string(), *csv, n, k);
      files.push_back(csv_path.string());
    }
    const auto json_path = *dir / (command + ".json");
    files.push_back(json_path.string());
    result["files"] = files;
    write_text(json_path, result.dump(2) + "\n");
    return files;
  };
  try {
    Json merged = config_path.empty() ? Json::object() : read_config(config_path);
    if (merged.contains("command") && merged["command"] != command) {
      bad_config("config is for command '" + merged["command"].get<std::string>() + "'");
    }
    merged.erase("command");
    for (const auto& [id, opt] : flag_options) {
      if (opt->count() == 0 || id.rfind(command + "/", 0) != 0) continue;
      merged[id.substr(command.size() + 1)] = flag_values[id];
    }
    const Settings settings(merged);
    const std::filesystem::path out_dir = settings.text("output_dir", ".");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) bad_config("cannot create output directory " + out_dir.string() + ": " + ec.message());
    const BuiltInstance inst = build_from(settings, param_flags);
    result["instance"] = inst.name;
    dir = out_dir;

    Outcome outcome;
    if (command == "flow") outcome = cmd_flow(settings, inst);
    if (command == "exp") outcome = cmd_exp(settings, inst);
    if (command == "bvp") outcome = cmd_bvp(settings, inst);
    if (command == "h0") outcome = cmd_h0(settings, inst);
    if (command == "lift") outcome = cmd_lift(settings, inst);
    if (command == "gexp") outcome = cmd_gexp(settings, inst);
    if (command == "gbvp") outcome = cmd_gbvp(settings, inst);
    if (command == "verify") outcome = cmd_verify(settings, inst);

    result["status"] = outcome.status;
    result["values"] = outcome.values;
    if (outcome.residual) result["residual"] = *outcome.residual;
    if (outcome.iterations) result["iterations"] = *outcome.iterations;
    write_outputs(outcome.csv, outcome.csv_n, outcome.csv_k);

    if (outcome.text.empty()) {
      out << result.dump(2) << '\n';
    } else {
      out << outcome.text;
    }
    return outcome.failed ? kExitSolverFailure : kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    if (!is_solver_failure(e.code())) return kExitBadInput;
    result["status"] = std::string(to_string(e.code()));
    result["message"] = e.what();
    try {
      write_outputs(std::nullopt, 0, 0);
    } catch (const Error& w) {
      err << "error: " << w.what() << '\n';
    }
    out << result.dump(2) << '\n';
    return kExitSolverFailure;
  } catch (const Json::exception& e) {
    err << "error: config-error: " << e.what() << '\n';
    return kExitBadInput;
  }
}

}  // namespace algsode::cli
