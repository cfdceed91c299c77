#pragma once

// Named scenarios shared by the command-line tool and the acceptance binary.
// Each one builds a network, feeds it data, runs the engine and evaluates the
// criterion that the scenario is meant to demonstrate for a single seed.

#include "pfn/builders.hpp"
#include "pfn/datagen.hpp"
#include "pfn/describe.hpp"
#include "pfn/engine.hpp"
#include "pfn/io.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace pfn {

// ---------------------------------------------------------------------------
// Observation strings: VAR:SLICE=STATE or VAR:SLICE:INDEX=VALUE, 1-based.

struct ObservationItem {
  std::string var;
  Index slice = 0;               // 0-based once parsed
  std::optional<Index> index;    // 0-based component
  std::string state;             // when no index
  double value = 0.0;            // when index
};

inline std::vector<ObservationItem> parse_observations(const std::string& text) {
  static const std::regex item(R"(^\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(\d+)\s*(?::\s*(\d+)\s*)?=\s*([^\s,]+)\s*$)");
  std::vector<ObservationItem> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string part = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    std::smatch m;
    if (!std::regex_match(part, m, item))
      throw ValidationError("bad observation '" + part + "' (use var:slice=State or var:slice:index=value)");
    ObservationItem o;
    o.var = m[1];
    o.slice = std::stol(m[2]) - 1;
    if (o.slice < 0) throw ValidationError("observation '" + part + "': slices start at 1");
    if (m[3].matched) {
      o.index = std::stol(m[3]) - 1;
      if (*o.index < 0) throw ValidationError("observation '" + part + "': components start at 1");
      try {
        std::size_t used = 0;
        o.value = std::stod(m[4], &used);
        if (used != static_cast<std::size_t>(m[4].length())) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ValidationError("observation '" + part + "': value must be a number");
      }
    } else {
      o.state = m[4];
    }
    out.push_back(std::move(o));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<VarId> find_variable_nocase(const FactorNetwork& net, const std::string& name) {
  auto lower = [](std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
  };
  if (auto exact = net.find_variable(name)) return exact;
  for (std::size_t i = 0; i < net.variables().size(); ++i)
    if (lower(net.variables()[i].name) == lower(name)) return VarId{i};
  return std::nullopt;
}

/// Maps a state name to an index for a variable; nullopt means unknown.
/// "off" is handled before the resolver is asked.
using StateResolver = std::function<std::optional<std::size_t>(const std::string& var, const std::string& state)>;

inline std::optional<std::size_t> default_state_index(const std::string& state) {
  static const std::regex s_k(R"(^[Ss]?(\d+)$)");
  std::smatch m;
  if (!std::regex_match(state, m, s_k)) return std::nullopt;
  const long k = std::stol(m[1]);
  if (k < 1) return std::nullopt;
  return static_cast<std::size_t>(k - 1);
}

inline void apply_observation(FactorNetwork& net, const ObservationItem& o, const StateResolver& resolve = {}) {
  const auto id = find_variable_nocase(net, o.var);
  if (!id) throw ValidationError("observation: no variable named '" + o.var + "'");
  const Variable& v = net.variable(*id);
  if (o.slice >= v.slices)
    throw ValidationError("observation: " + v.name + " has " + std::to_string(v.slices) + " slices");
  if (o.index) {
    if (*o.index >= v.dim)
      throw ValidationError("observation: " + v.name + " has " + std::to_string(v.dim) + " components");
    net.observe_entry(*id, *o.index, o.slice, o.value);
    return;
  }
  std::optional<std::size_t> k;
  if (o.state != "off") {
    if (resolve) k = resolve(v.name, o.state);
    if (!k) k = default_state_index(o.state);
    if (!k || *k >= static_cast<std::size_t>(v.dim))
      throw ValidationError("observation: unknown state '" + o.state + "' for " + v.name);
  }
  net.observe_slice(*id, o.slice, state_basis(k, static_cast<std::size_t>(v.dim)));
}

// ---------------------------------------------------------------------------
// Oracles

/// Every state path of length T through d whose slice t passes allowed(t, s).
/// The off state takes part only when the diagram has transitions into or out
/// of it; off -> off is always allowed. Stops after `limit` paths.
inline std::vector<std::vector<StateRef>> enumerate_paths(
    const TransitionDiagram& d, Index T, const std::function<bool(Index, StateRef)>& allowed,
    std::size_t limit = 10000) {
  std::vector<StateRef> states;
  for (std::size_t i = 0; i < d.state_count; ++i) states.push_back(i);
  const bool has_off = std::any_of(d.transitions.begin(), d.transitions.end(),
                                   [](const Transition& t) { return !t.from || !t.to; });
  if (has_off) states.push_back(off_state);
  std::vector<std::vector<StateRef>> out;
  std::vector<StateRef> path;
  std::function<void(Index)> grow = [&](Index t) {
    if (out.size() >= limit) return;
    if (t == T) {
      out.push_back(path);
      return;
    }
    for (StateRef s : states) {
      if (allowed && !allowed(t, s)) continue;
      if (t > 0 && !(path.back() == s && !s) && !d.allows(path.back(), s)) continue;
      path.push_back(s);
      grow(t + 1);
      path.pop_back();
    }
  };
  grow(0);
  return out;
}

/// Constraint from the fully observed slices of a state variable.
inline std::function<bool(Index, StateRef)> observed_state_constraint(const Variable& v) {
  return [&v](Index t, StateRef s) {
    if (!v.slice_observed(t)) return true;
    const auto col = v.value.col(t);
    if (col.sum() <= 0.0) return !s;
    Index r = 0;
    col.maxCoeff(&r);
    return s && static_cast<Index>(*s) == r;
  };
}

struct CoupledPath {
  std::vector<StateRef> lower, upper;
};

/// Joint paths of a two-level model whose simultaneous transitions are
/// coupled by the table.
inline std::vector<CoupledPath> enumerate_coupled_paths(
    const TransitionDiagram& lower, const TransitionDiagram& upper, const CouplingTable& table, Index T,
    const std::function<bool(Index, StateRef)>& lower_allowed,
    const std::function<bool(Index, StateRef)>& upper_allowed, std::size_t limit = 10000) {
  std::set<std::pair<std::size_t, std::size_t>> pairs(table.pairs.begin(), table.pairs.end());
  std::vector<CoupledPath> out;
  CoupledPath path;
  std::function<void(Index)> grow = [&](Index t) {
    if (out.size() >= limit) return;
    if (t == T) {
      out.push_back(path);
      return;
    }
    for (std::size_t u = 0; u < upper.state_count; ++u) {
      if (upper_allowed && !upper_allowed(t, u)) continue;
      for (std::size_t l = 0; l < lower.state_count; ++l) {
        if (lower_allowed && !lower_allowed(t, l)) continue;
        if (t > 0) {
          const auto tu = upper.find_transition(path.upper.back(), u);
          const auto tl = lower.find_transition(path.lower.back(), l);
          if (!tu || !tl || !pairs.count({*tu, *tl})) continue;
        }
        path.upper.push_back(u);
        path.lower.push_back(l);
        grow(t + 1);
        path.upper.pop_back();
        path.lower.pop_back();
      }
    }
  };
  grow(0);
  return out;
}

/// Both sides scaled to unit column sums; for each reference column the
/// smallest L1 distance to any learned column. Returns the worst of those.
inline double basis_match_error(const Matrix& reference, const Matrix& learned) {
  Matrix R = reference, L = learned;
  for (Index c = 0; c < R.cols(); ++c)
    if (R.col(c).sum() > 0.0) R.col(c) /= R.col(c).sum();
  for (Index c = 0; c < L.cols(); ++c)
    if (L.col(c).sum() > 0.0) L.col(c) /= L.col(c).sum();
  double worst = 0.0;
  for (Index c = 0; c < R.cols(); ++c) {
    double best = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < L.cols(); ++k) best = std::min(best, (R.col(c) - L.col(k)).cwiseAbs().sum());
    worst = std::max(worst, best);
  }
  return worst;
}

/// Fraction of entries above rel * max.
inline double active_fraction(const Matrix& M, double rel = 1e-3) {
  const double peak = M.maxCoeff();
  if (!(peak > 0.0)) return 0.0;
  return (M.array() > rel * peak).cast<double>().mean();
}

/// Largest share of a column's sum held by one entry, over the given slices.
inline double min_dominance(const Matrix& X, const std::vector<Index>& slices) {
  double worst = 1.0;
  for (Index t : slices) {
    const double s = X.col(t).sum();
    if (s > 0.0) worst = std::min(worst, X.col(t).maxCoeff() / s);
  }
  return worst;
}

struct SliceComparison {
  int argmax_mismatches = 0;
  double worst_relative_sum = 0.0;  // over slices where the reference is active
  double worst_empty_sum = 0.0;     // column sum where the reference is empty
};

inline SliceComparison compare_slices(const Matrix& inferred, const Matrix& reference) {
  SliceComparison r;
  for (Index t = 0; t < reference.cols(); ++t) {
    const double ref = reference.col(t).sum();
    const double got = inferred.col(t).sum();
    if (ref <= 0.0) {
      r.worst_empty_sum = std::max(r.worst_empty_sum, got);
      continue;
    }
    Index a = 0, b = 0;
    inferred.col(t).maxCoeff(&a);
    reference.col(t).maxCoeff(&b);
    r.argmax_mismatches += a != b;
    r.worst_relative_sum = std::max(r.worst_relative_sum, std::abs(got - ref) / ref);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
  std::string experiment;
  std::string variant;  // empty: the experiment's first variant
  std::uint64_t seed = 0;
  std::optional<long> iters;
  std::optional<double> tol;
  std::optional<double> epsilon;
  std::optional<std::string> averaging;  // scheme1 | scheme2
  std::optional<double> init_scale;
  std::optional<bool> stop_on_convergence;
  unsigned threads = 0;
  std::optional<Index> T;
  std::optional<std::pair<double, double>> noise;
  std::vector<double> scales;
  std::optional<Index> columns;
  std::optional<std::vector<SparsenessSchedule::Point>> sparseness;
  std::vector<std::string> observe;
  std::string input;                  // WAV for sparse-hier
  Index window = 1024;
  std::optional<Index> hop;
  std::optional<Json> network;        // user network description (experiment "network")
  std::vector<std::pair<std::string, std::string>> data;  // variable -> CSV
  std::string out = "out";
};

inline const std::vector<std::pair<std::string, std::vector<std::string>>>& experiment_catalog() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> catalog = {
      {"chain-deterministic", {"full", "partial", "noisy", "superposed"}},
      {"chain-nondeterministic", {"exact", "sparse", "sample"}},
      {"learn-transitions", {"six", "eight", "sparse-eight", "mixture", "mixture-noisy"}},
      {"regex-hier", {"default"}},
      {"target-tracker", {"clean", "noisy", "sparse", "hide-observations", "predict", "hide-tail"}},
      {"sparse-hier", {"sparse", "dense"}},
      {"network", {"default"}},
  };
  return catalog;
}

inline const std::vector<std::string>& experiment_variants(const std::string& experiment) {
  for (const auto& [name, variants] : experiment_catalog())
    if (name == experiment) return variants;
  std::string known;
  for (const auto& [name, variants] : experiment_catalog()) known += (known.empty() ? "" : ", ") + name;
  throw ValidationError("unknown experiment '" + experiment + "' (known: " + known + ")");
}

inline std::string resolve_variant(const ExperimentConfig& c) {
  const auto& variants = experiment_variants(c.experiment);
  if (c.variant.empty()) return variants.front();
  if (std::find(variants.begin(), variants.end(), c.variant) == variants.end()) {
    std::string known;
    for (const auto& v : variants) known += (known.empty() ? "" : ", ") + v;
    throw ValidationError("experiment '" + c.experiment + "' has no variant '" + c.variant + "' (known: " + known + ")");
  }
  return c.variant;
}

inline const std::set<std::string>& experiment_config_keys() {
  static const std::set<std::string> keys = {
      "experiment", "variant", "seed", "iters", "tol", "epsilon", "averaging", "init_scale",
      "stop_on_convergence", "threads", "T", "noise", "scales", "columns", "sparseness", "observe",
      "input", "window", "hop", "network", "data", "out"};
  return keys;
}

/// Fills `c` from a JSON object. Relative paths are resolved against `base_dir`.
inline void merge_experiment_config(ExperimentConfig& c, const Json& j, const std::string& base_dir = "") {
  const std::string where = "config";
  detail::reject_unknown_keys(j, experiment_config_keys(), where);
  auto resolve_path = [&](std::string p) {
    if (!base_dir.empty() && !p.empty() && p.front() != '/') p = base_dir + "/" + p;
    return p;
  };
  using detail::get_field;
  if (j.contains("experiment")) c.experiment = get_field<std::string>(j, "experiment", where);
  if (j.contains("variant")) c.variant = get_field<std::string>(j, "variant", where);
  if (j.contains("seed")) c.seed = get_field<std::uint64_t>(j, "seed", where);
  if (j.contains("iters")) c.iters = get_field<long>(j, "iters", where);
  if (j.contains("tol")) c.tol = get_field<double>(j, "tol", where);
  if (j.contains("epsilon")) c.epsilon = get_field<double>(j, "epsilon", where);
  if (j.contains("averaging")) c.averaging = get_field<std::string>(j, "averaging", where);
  if (j.contains("init_scale")) c.init_scale = get_field<double>(j, "init_scale", where);
  if (j.contains("stop_on_convergence")) c.stop_on_convergence = get_field<bool>(j, "stop_on_convergence", where);
  if (j.contains("threads")) c.threads = get_field<unsigned>(j, "threads", where);
  if (j.contains("T")) c.T = get_field<Index>(j, "T", where);
  if (j.contains("noise")) {
    const auto n = get_field<std::vector<double>>(j, "noise", where);
    if (n.size() != 2) throw ValidationError(where + ": 'noise' is [low, high]");
    c.noise = std::pair{n[0], n[1]};
  }
  if (j.contains("scales")) c.scales = get_field<std::vector<double>>(j, "scales", where);
  if (j.contains("columns")) c.columns = get_field<Index>(j, "columns", where);
  if (j.contains("sparseness")) {
    std::vector<SparsenessSchedule::Point> pts;
    for (const auto& p : get_field<std::vector<std::vector<double>>>(j, "sparseness", where)) {
      if (p.size() != 2) throw ValidationError(where + ": 'sparseness' is a list of [iteration, theta]");
      pts.push_back({static_cast<long>(p[0]), p[1]});
    }
    c.sparseness = pts;
  }
  if (j.contains("observe")) {
    const Json& o = j.at("observe");
    if (o.is_string()) c.observe = {o.get<std::string>()};
    else c.observe = get_field<std::vector<std::string>>(j, "observe", where);
  }
  if (j.contains("input")) c.input = resolve_path(get_field<std::string>(j, "input", where));
  if (j.contains("window")) c.window = get_field<Index>(j, "window", where);
  if (j.contains("hop")) c.hop = get_field<Index>(j, "hop", where);
  if (j.contains("network")) {
    const Json& n = j.at("network");
    c.network = n.is_string() ? read_json_file(resolve_path(n.get<std::string>())) : n;
  }
  if (j.contains("data")) {
    const Json& d = j.at("data");
    if (!d.is_object()) throw ValidationError(where + ": 'data' maps variable names to CSV paths");
    c.data.clear();
    for (const auto& [var, path] : d.items()) {
      if (!path.is_string()) throw ValidationError(where + ": data path for '" + var + "' must be a string");
      c.data.push_back({var, resolve_path(path.get<std::string>())});
    }
  }
  if (j.contains("out")) c.out = resolve_path(get_field<std::string>(j, "out", where));
}

// ---------------------------------------------------------------------------
// Results

struct ExperimentResult {
  std::string experiment, variant;
  std::uint64_t seed = 0;
  RunTrace trace;
  std::string criterion;  // what `passed` asserts
  bool passed = false;
  Json metrics = Json::object();
  std::vector<std::pair<std::string, Matrix>> images;
};

inline Json summary_json(const ExperimentResult& r) {
  Json s;
  s["experiment"] = r.experiment;
  s["variant"] = r.variant;
  s["seed"] = r.seed;
  s["iterations"] = r.trace.iterations;
  s["converged"] = r.trace.converged;
  Json eq = Json::object();
  if (!r.trace.rmse.empty())
    for (std::size_t e = 0; e < r.trace.equations.size(); ++e) eq[r.trace.equations[e]] = r.trace.rmse.back()[e];
  s["final_rmse"] = eq;
  s["criterion"] = r.criterion;
  s["passed"] = r.passed;
  s["metrics"] = r.metrics;
  return s;
}

namespace detail {

inline InferenceConfig base_inference(const ExperimentConfig& c, long iters, double tol) {
  InferenceConfig ic;
  ic.max_iters = c.iters.value_or(iters);
  ic.rmse_tol = c.tol.value_or(tol);
  ic.seed = c.seed;
  ic.threads = c.threads;
  if (c.epsilon) ic.epsilon = *c.epsilon;
  if (c.init_scale) ic.init_scale = *c.init_scale;
  if (c.stop_on_convergence) ic.stop_on_convergence = *c.stop_on_convergence;
  if (c.averaging) {
    if (*c.averaging == "scheme1") ic.averaging = AveragingScheme::scheme1;
    else if (*c.averaging == "scheme2") ic.averaging = AveragingScheme::scheme2;
    else throw ValidationError("config: averaging must be scheme1 or scheme2");
  }
  if (c.sparseness) ic.sparseness = SparsenessSchedule(*c.sparseness);
  return ic;
}

inline void apply_observations(FactorNetwork& net, const std::vector<std::string>& items,
                               const StateResolver& resolve = {}) {
  for (const std::string& text : items)
    for (const ObservationItem& o : parse_observations(text)) apply_observation(net, o, resolve);
}

inline void add_images(ExperimentResult& r, const FactorNetwork& net, std::initializer_list<VarId> vars) {
  for (VarId v : vars) r.images.push_back({net.variable(v).name, net.variable(v).value});
}

inline std::vector<Index> hidden_slices(const Variable& v) {
  std::vector<Index> out;
  for (Index t = 0; t < v.slices; ++t)
    if (!v.slice_observed(t)) out.push_back(t);
  return out;
}

// Path starting in `first` and following the only transition out of each
// state; the diagram must be deterministic.
inline std::vector<StateRef> forced_path(const TransitionDiagram& d, StateRef first, Index T) {
  std::vector<StateRef> p{first};
  while (static_cast<Index>(p.size()) < T) {
    StateRef next;
    int count = 0;
    for (const Transition& t : d.transitions)
      if (t.from == p.back()) next = t.to, ++count;
    if (count != 1) throw ValidationError("forced_path: diagram is not deterministic");
    p.push_back(next);
  }
  return p;
}

// -- chain, deterministic ---------------------------------------------------

inline ExperimentResult chain_deterministic(const ExperimentConfig& c, const std::string& variant) {
  ExperimentResult r;
  const TransitionDiagram d = cycle_diagram(4);
  const Matrix W = transition_basis_matrix(d);
  const Index T = c.T.value_or(10);
  const std::vector<StateRef> path = forced_path(d, 0, T);
  const Matrix X = encode_states(path, d.state_count);
  ChainModel m = build_chain_network(W, T);

  if (variant == "full") {
    m.net.observe(m.x, X);
    r.trace = run(m.net, base_inference(c, 500, 1e-4));
    const Matrix& H = m.net.variable(m.h).value;
    const Matrix Htrue = encode_transitions(d, path);
    const double dev = (H - Htrue).cwiseAbs().maxCoeff();
    r.metrics["max_h_deviation"] = dev;
    r.criterion = "max RMSE < 1e-4 and every H entry within 1e-3 of the one-hot encoding";
    r.passed = r.trace.converged && dev < 1e-3;
  } else if (variant == "partial") {
    if (c.observe.empty()) m.net.observe_slice(m.x, 0, X.col(0));
    else apply_observations(m.net, c.observe);
    const auto paths = enumerate_paths(d, T, observed_state_constraint(m.net.variable(m.x)));
    if (paths.size() != 1)
      throw ValidationError("partial: the observations allow " + std::to_string(paths.size()) +
                            " paths; the criterion needs exactly one");
    r.trace = run(m.net, base_inference(c, 500, 1e-4));
    const Matrix& Xi = m.net.variable(m.x).value;
    const bool match = argmax_path(Xi) == paths.front();
    r.metrics["argmax_matches"] = match;
    r.metrics["max_x_deviation"] = (Xi - encode_states(paths.front(), d.state_count)).cwiseAbs().maxCoeff();
    r.criterion = "argmax of every slice of X equals the unique consistent path";
    r.passed = match;
  } else if (variant == "noisy") {
    const auto [lo, hi] = c.noise.value_or(std::pair{0.0, 0.1});
    m.net.observe(m.x, add_uniform_noise(X, lo, hi, 100 + c.seed));
    r.trace = run(m.net, base_inference(c, 1000, 1e-4));
    r.criterion = "final max RMSE in [0.02, 0.05]";
    const double e = r.trace.final_max_rmse();
    r.passed = e >= 0.02 && e <= 0.05;
  } else {  // superposed
    const std::vector<StateRef> path_b = forced_path(d, 2, T);
    const Matrix Xs = mix_sequences({{0.5, X}, {1.0, encode_states(path_b, d.state_count)}});
    m.net.observe(m.x, Xs);
    r.trace = run(m.net, base_inference(c, 5000, 1e-4));
    ChainModel oracle = build_chain_network(W, T);
    compile(oracle.net);
    oracle.net.variable(oracle.x).value = Xs;
    oracle.net.variable(oracle.h).value =
        0.5 * encode_transitions(d, path) + 1.0 * encode_transitions(d, path_b);
    make_consistent(oracle.net);
    const double cost = total_cost(oracle.net);
    r.metrics["oracle_cost"] = cost;
    r.criterion = "max RMSE < 1e-4 and the superposed oracle assignment has total cost < 1e-8";
    r.passed = r.trace.converged && cost < 1e-8;
  }
  add_images(r, m.net, {m.x, m.h});
  return r;
}

// -- chain, nondeterministic ------------------------------------------------

inline ExperimentResult chain_nondeterministic(const ExperimentConfig& c, const std::string& variant) {
  ExperimentResult r;
  const TransitionDiagram d = branching_diagram();
  const Index T = c.T.value_or(10);
  ChainModel m = build_chain_network(transition_basis_matrix(d), T);
  InferenceConfig ic = base_inference(c, 3000, 1e-4);

  if (variant != "sample") {
    if (c.observe.empty()) {
      m.net.observe_slice(m.x, 1, state_basis(1, 4));
      m.net.observe_slice(m.x, 3, state_basis(2, 4));
      m.net.observe_slice(m.x, 4, state_basis(3, 4));
      if (variant == "exact") m.net.observe_slice(m.x, T - 1, state_basis(1, 4));
    } else {
      apply_observations(m.net, c.observe);
    }
  }
  if (variant != "exact" && !c.sparseness) ic.sparseness = SparsenessSchedule::constant(0.1);
  if (variant == "sample" && !c.init_scale) ic.init_scale = 1.0;
  r.trace = run(m.net, ic);
  const Matrix& X = m.net.variable(m.x).value;

  if (variant == "exact") {
    const auto paths = enumerate_paths(d, T, observed_state_constraint(m.net.variable(m.x)));
    r.metrics["consistent_paths"] = paths.size();
    double worst_off = 0.0;
    for (Index t = 0; t < T; ++t) {
      const double s = X.col(t).sum();
      if (s > 0.0) worst_off = std::max(worst_off, (s - X.col(t).maxCoeff()) / s);
    }
    const bool match = paths.size() == 1 && argmax_path(X) == paths.front();
    r.metrics["argmax_matches"] = match;
    r.metrics["worst_off_fraction"] = worst_off;
    r.criterion = "argmax equals the unique consistent path and off-components < 1e-3 of each column sum";
    r.passed = match && worst_off < 1e-3;
  } else if (variant == "sparse") {
    const double dom = min_dominance(X, hidden_slices(m.net.variable(m.x)));
    r.metrics["min_dominance"] = dom;
    r.criterion = "one component holds > 90% of every hidden slice's column sum";
    r.passed = dom > 0.9;
  } else {
    const bool valid = is_valid_path(d, argmax_path(X));
    r.metrics["valid_path"] = valid;
    r.criterion = "consecutive argmax states form diagram transitions";
    r.passed = valid;
  }
  add_images(r, m.net, {m.x, m.h});
  return r;
}

// -- learning ---------------------------------------------------------------

inline ExperimentResult learn_transitions(const ExperimentConfig& c, const std::string& variant) {
  ExperimentResult r;
  const TransitionDiagram d = branching_diagram();
  const Matrix truth = transition_basis_matrix(d);
  const Index T = c.T.value_or(1000);
  const bool mixture = variant.rfind("mixture", 0) == 0;
  Matrix X;
  if (!mixture) {
    X = sample_elementary_sequence(d, T, 1000 + c.seed, std::nullopt);
  } else {
    const std::vector<double> scales = c.scales.empty() ? std::vector<double>{0.5, 1.0, 1.5} : c.scales;
    std::vector<std::pair<double, Matrix>> terms;
    for (std::size_t k = 0; k < scales.size(); ++k)
      terms.push_back({scales[k], sample_elementary_sequence(d, T, 2000 + scales.size() * c.seed + k, std::nullopt)});
    X = mix_sequences(terms);
    if (variant == "mixture-noisy") {
      const auto [lo, hi] = c.noise.value_or(std::pair{0.0, 0.1});
      X = add_uniform_noise(X, lo, hi, 3000 + c.seed);
    }
  }
  const Index cols = c.columns.value_or(variant == "six" ? 6 : 8);
  const NormalizationPolicy policy = variant == "sparse-eight"
                                         ? NormalizationPolicy::equal_subcolumn_sums({4, 4})
                                         : NormalizationPolicy::unit_column_sum();
  ChainModel m = build_chain_network(Matrix::Constant(truth.rows(), cols, 1.0), T, true, policy);
  m.net.observe(m.x, X);
  InferenceConfig ic = base_inference(c, 3000, 1e-6);
  if (variant == "sparse-eight" && !c.sparseness) ic.sparseness = SparsenessSchedule::constant(0.1);
  r.trace = run(m.net, ic);

  const Matrix& W = m.net.block(m.w).value;
  const double match = basis_match_error(truth, W);
  int small = 0;
  for (Index k = 0; k < W.cols(); ++k) small += W.col(k).sum() < 0.05;
  r.metrics["basis_l1_error"] = match;
  r.metrics["small_columns"] = small;
  const double rmse = r.trace.final_max_rmse();
  if (variant == "six") {
    r.criterion = "learned W matches the 6 true columns with L1 < 0.05";
    r.passed = match < 0.05;
  } else if (variant == "eight") {
    r.criterion = "final max RMSE < 1e-3";
    r.passed = rmse < 1e-3;
  } else if (variant == "sparse-eight") {
    r.criterion = "at least 2 learned columns have column sum < 0.05";
    r.passed = small >= 2;
  } else if (variant == "mixture") {
    r.criterion = "final max RMSE < 1e-3 and true columns recovered with L1 < 0.05";
    r.passed = rmse < 1e-3 && match < 0.05;
  } else {
    r.criterion = "true columns recovered with L1 < 0.15";
    r.passed = match < 0.15;
  }
  r.images.push_back({"W", W});
  add_images(r, m.net, {m.h});
  return r;
}

// -- regex hierarchy --------------------------------------------------------

inline ExperimentResult regex_hier(const ExperimentConfig& c) {
  ExperimentResult r;
  const TransitionDiagram lo = regex_lower_diagram(), up = regex_upper_diagram();
  const CouplingTable table = regex_coupling_table();
  const Index T = c.T.value_or(10);
  TwoLevelModel m = build_two_level_network(transition_basis_matrix(lo), transition_basis_matrix(up),
                                            coupling_matrix(table, up.transitions.size(), lo.transitions.size()), T);
  const StateResolver names = [&](const std::string& var, const std::string& state) -> std::optional<std::size_t> {
    if (var == "X1") return lo.find_state(state);
    if (var == "X2") return up.find_state(state);
    return std::nullopt;
  };
  if (c.observe.empty()) apply_observations(m.net, {"x2:2=S2,x2:7=S4"}, names);
  else apply_observations(m.net, c.observe, names);

  r.trace = run(m.net, base_inference(c, 500, 1e-4));
  const Matrix& X1 = m.net.variable(m.x1).value;
  const Matrix& X2 = m.net.variable(m.x2).value;

  // Slices 1..T-1 must be determined by the observations; the last one may branch.
  const auto paths = enumerate_coupled_paths(lo, up, table, T, observed_state_constraint(m.net.variable(m.x1)),
                                             observed_state_constraint(m.net.variable(m.x2)));
  bool unique_prefix = !paths.empty();
  for (const CoupledPath& p : paths)
    for (Index t = 0; t + 1 < T; ++t)
      unique_prefix = unique_prefix && p.lower[t] == paths.front().lower[t] && p.upper[t] == paths.front().upper[t];
  bool match = unique_prefix;
  if (match) {
    const auto a1 = argmax_path(X1), a2 = argmax_path(X2);
    for (Index t = 0; t + 1 < T; ++t)
      match = match && a1[t] == paths.front().lower[t] && a2[t] == paths.front().upper[t];
  }
  const double sum_gap = std::max(std::abs(X1.col(T - 1).sum() - X1.col(T - 2).sum()),
                                  std::abs(X2.col(T - 1).sum() - X2.col(T - 2).sum()));
  r.metrics["consistent_paths"] = paths.size();
  r.metrics["prefix_matches"] = match;
  r.metrics["last_slice_sum_gap"] = sum_gap;
  r.criterion = "all equations reach RMSE < 1e-4, slices before the last match the oracle path by argmax, "
                "and last-slice column sums equal the previous slice within 1e-3";
  r.passed = r.trace.converged && match && sum_gap < 1e-3;
  add_images(r, m.net, {m.x1, m.x2, m.h1, m.h2, m.v});
  return r;
}

// -- target tracker ---------------------------------------------------------

struct TrackerRun {
  TrackerModel model;
  RunTrace trace;
};

inline ExperimentResult target_tracker(const ExperimentConfig& c, const std::string& variant) {
  ExperimentResult r;
  const TrackerSpec spec = default_tracker_spec();
  const Index T = kDefaultSceneSlices;
  TrackerModel oracle = build_target_tracker(spec, T);
  assign_tracker_scene(oracle, default_tracker_scene());
  const Matrix clean = oracle.net.variable(oracle.x1).value;
  const bool noisy = variant == "noisy" || variant == "sparse" || variant == "hide-observations";
  Matrix X1 = clean;
  if (noisy) {
    const auto [lo, hi] = c.noise.value_or(std::pair{0.0, 0.06});
    X1 = add_uniform_noise(clean, lo, hi, 4000 + c.seed);
  }

  InferenceConfig ic = base_inference(c, 10000, 1e-3);
  if (!c.stop_on_convergence) ic.stop_on_convergence = false;
  if (!c.sparseness) {
    if (variant == "sparse") ic.sparseness = SparsenessSchedule::ramp(5000, 10000, 0.05);
    if (variant == "hide-observations") ic.sparseness = SparsenessSchedule::ramp(5000, ic.max_iters - 20, 0.05);
  }
  if (variant == "hide-observations") ic.overrides.push_back({ic.max_iters - 19, "X1", Role::hidden});

  auto observed_run = [&](const std::vector<Index>& hidden) {
    TrackerRun out{build_target_tracker(spec, T), {}};
    out.model.net.observe(out.model.x1, X1);
    for (Index t : hidden) out.model.net.set_role(out.model.x1, t, Role::hidden);
    apply_observations(out.model.net, c.observe);
    out.trace = run(out.model.net, ic);
    return out;
  };

  std::vector<Index> hidden;
  if (variant == "predict") hidden = {24};
  if (variant == "hide-tail") hidden = {21, 22, 23, 24, 25};
  TrackerRun main = observed_run(hidden);
  r.trace = main.trace;
  TrackerModel& m = main.model;
  const VarId xs[] = {m.x1, m.x2, m.x3, m.x4, m.x5};
  const VarId os[] = {oracle.x1, oracle.x2, oracle.x3, oracle.x4, oracle.x5};

  if (variant == "clean" || noisy) {
    int mismatches = 0;
    double rel = 0.0, empty = 0.0;
    for (int k = 1; k < 5; ++k) {
      const SliceComparison s = compare_slices(m.net.variable(xs[k]).value, oracle.net.variable(os[k]).value);
      mismatches += s.argmax_mismatches;
      rel = std::max(rel, s.worst_relative_sum);
      empty = std::max(empty, s.worst_empty_sum);
    }
    r.metrics["argmax_mismatches"] = mismatches;
    r.metrics["worst_relative_sum_error"] = rel;
    r.metrics["worst_empty_slice_sum"] = empty;
    if (variant == "clean") {
      r.criterion = "max RMSE < 1e-3; X2..X5 match the generating assignment by argmax with column sums within 2%";
      r.passed = r.trace.final_max_rmse() < 1e-3 && mismatches == 0 && rel < 0.02 && empty < 0.02 * 0.6;
    } else {
      // Noise has no exact solution; ask for the right label in most alive slices.
      const SliceComparison labels = compare_slices(m.net.variable(m.x5).value, oracle.net.variable(oracle.x5).value);
      const Matrix& truth = oracle.net.variable(oracle.x5).value;
      const double alive = static_cast<double>((truth.colwise().sum().array() > 0.0).count());
      const double share = 1.0 - labels.argmax_mismatches / alive;
      r.metrics["label_mismatches"] = labels.argmax_mismatches;
      r.metrics["label_accuracy"] = share;
      r.criterion = "X5 argmax names the true target type in at least 90% of the slices where a target is alive";
      r.passed = share >= 0.9;
    }
  } else if (variant == "predict") {
    TrackerRun full = observed_run({});
    double worst = 0.0;
    for (int k = 0; k < 5; ++k)
      worst = std::max(worst, (m.net.variable(xs[k]).value - full.model.net.variable(xs[k]).value).cwiseAbs().maxCoeff());
    r.metrics["max_difference_from_full_run"] = worst;
    r.metrics["full_run_max_rmse"] = full.trace.final_max_rmse();
    r.criterion = "X1..X5 equal the fully observed run entrywise within 1e-3";
    r.passed = worst < 1e-3;
  } else {  // hide-tail
    double worst_gap = 0.0;
    int superposed = 0;
    Json sums = Json::array();
    for (Index t : hidden) {
      double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
      for (VarId v : xs) {
        const double s = m.net.variable(v).value.col(t).sum();
        lo = std::min(lo, s);
        hi = std::max(hi, s);
      }
      worst_gap = std::max(worst_gap, hi - lo);
      const auto x4 = m.net.variable(m.x4).value.col(t);
      const double total = x4.sum();
      int active = 0;
      for (Index i = 0; i < x4.size(); ++i) active += total > 0.0 && x4(i) > 0.05 * total;
      superposed += active >= 2;
      sums.push_back(m.net.variable(m.x4).value.col(t).sum());
    }
    r.metrics["hidden_slice_state_sums"] = sums;
    r.metrics["worst_cross_variable_sum_gap"] = worst_gap;
    r.metrics["superposed_slices"] = superposed;
    r.criterion = "in every hidden slice X1..X5 column sums agree within 1e-3, and at least one hidden slice "
                  "superposes two or more states";
    r.passed = worst_gap < 1e-3 && superposed >= 1;
  }
  add_images(r, m.net, {m.x1, m.x2, m.x3, m.x4, m.x5});
  return r;
}

// -- sparse hierarchy -------------------------------------------------------

inline HierarchySpec paper_hierarchy(Index bottom_dim, Index T) {
  HierarchySpec spec;
  spec.slices = T;
  spec.levels = {{bottom_dim, 4, 1, 1}, {50, 4, 4, 2}, {40, 4, 16, 4}, {40, 1, 1, 1}};
  return spec;
}

inline ExperimentResult sparse_hier(const ExperimentConfig& c, const std::string& variant) {
  ExperimentResult r;
  Matrix X;
  if (!c.input.empty()) {
    const WavAudio audio = read_wav(c.input);
    const Index hop = c.hop.value_or(std::max<Index>(1, audio.sample_rate / 41));
    X = stft_magnitude(audio.samples, c.window, hop);
    const double peak = X.maxCoeff();
    if (peak > 0.0) X /= peak;
  } else {
    HierarchyModel gen = build_sparse_hierarchy(paper_hierarchy(64, c.T.value_or(256)));
    X = synth_hierarchy(gen, {}, 5000 + c.seed);
  }
  HierarchyModel m = build_sparse_hierarchy(paper_hierarchy(X.rows(), X.cols()));
  m.net.observe(m.x[0], X);
  InferenceConfig ic = base_inference(c, 800, 1e-4);
  if (!c.stop_on_convergence) ic.stop_on_convergence = false;
  if (!c.init_scale) ic.init_scale = 1.0;
  if (variant == "sparse" && !c.sparseness) ic.sparseness = SparsenessSchedule::ramp(ic.max_iters / 2, ic.max_iters, 0.2);
  r.trace = run(m.net, ic);

  FactorNetwork top_down = m.net;
  propagate_down(top_down);
  const double rmse = std::sqrt((top_down.variable(m.x[0]).value - X).array().square().mean());
  Json active = Json::array();
  std::vector<double> fractions;
  for (VarId v : m.x) {
    fractions.push_back(active_fraction(m.net.variable(v).value));
    active.push_back(fractions.back());
  }
  bool decreasing = true;
  for (std::size_t k = 2; k < fractions.size(); ++k) decreasing = decreasing && fractions[k] < fractions[k - 1];
  r.metrics["reconstruction_rmse_from_top"] = rmse;
  r.metrics["active_fraction_per_level"] = active;
  r.criterion = "reconstruction from the top level has RMSE < 0.1 and the active fraction strictly "
                "decreases from level 2 to the top";
  r.passed = rmse < 0.1 && decreasing;
  for (VarId v : m.x) r.images.push_back({m.net.variable(v).name, m.net.variable(v).value});
  r.images.push_back({"X1_from_top", top_down.variable(m.x[0]).value});
  return r;
}

// -- user network -----------------------------------------------------------

inline ExperimentResult user_network(const ExperimentConfig& c) {
  if (!c.network) throw ValidationError("experiment 'network' needs a 'network' description");
  ExperimentResult r;
  FactorNetwork net = network_from_json(*c.network);
  for (const auto& [var, path] : c.data) {
    const auto id = find_variable_nocase(net, var);
    if (!id) throw ValidationError("data: no variable named '" + var + "'");
    net.observe(*id, read_matrix_csv(path).matrix());
  }
  apply_observations(net, c.observe);
  r.trace = run(net, base_inference(c, 1000, 1e-4));
  r.criterion = "all equations reach RMSE below the tolerance";
  r.passed = r.trace.converged;
  for (const Variable& v : net.variables()) r.images.push_back({v.name, v.value});
  for (const ParamBlock& b : net.blocks())
    if (b.learnable) r.images.push_back({b.name, b.value});
  return r;
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  const std::string variant = resolve_variant(c);
  ExperimentResult r;
  if (c.experiment == "chain-deterministic") r = detail::chain_deterministic(c, variant);
  else if (c.experiment == "chain-nondeterministic") r = detail::chain_nondeterministic(c, variant);
  else if (c.experiment == "learn-transitions") r = detail::learn_transitions(c, variant);
  else if (c.experiment == "regex-hier") r = detail::regex_hier(c);
  else if (c.experiment == "target-tracker") r = detail::target_tracker(c, variant);
  else if (c.experiment == "sparse-hier") r = detail::sparse_hier(c, variant);
  else r = detail::user_network(c);
  r.experiment = c.experiment;
  r.variant = variant;
  r.seed = c.seed;
  return r;
}

/// Network for `validate`: built, leveled and merged, but never iterated.
inline FactorNetwork build_experiment_network(const ExperimentConfig& c) {
  const std::string variant = resolve_variant(c);
  FactorNetwork net;
  if (c.experiment == "chain-deterministic") {
    net = build_chain_network(transition_basis_matrix(cycle_diagram(4)), c.T.value_or(10)).net;
  } else if (c.experiment == "chain-nondeterministic") {
    net = build_chain_network(transition_basis_matrix(branching_diagram()), c.T.value_or(10)).net;
  } else if (c.experiment == "learn-transitions") {
    net = build_chain_network(Matrix::Constant(8, c.columns.value_or(variant == "six" ? 6 : 8), 1.0),
                              c.T.value_or(1000), true).net;
  } else if (c.experiment == "regex-hier") {
    const auto lo = regex_lower_diagram(), up = regex_upper_diagram();
    net = build_two_level_network(transition_basis_matrix(lo), transition_basis_matrix(up),
                                  coupling_matrix(regex_coupling_table(), up.transitions.size(), lo.transitions.size()),
                                  c.T.value_or(10)).net;
  } else if (c.experiment == "target-tracker") {
    net = build_target_tracker(default_tracker_spec(), kDefaultSceneSlices).net;
  } else if (c.experiment == "sparse-hier") {
    net = build_sparse_hierarchy(detail::paper_hierarchy(c.input.empty() ? 64 : c.window / 2, c.T.value_or(256))).net;
  } else {
    if (!c.network) throw ValidationError("experiment 'network' needs a 'network' description");
    net = network_from_json(*c.network);
  }
  compile(net);
  return net;
}

/// Plain-text shape and level report.
inline std::string describe_network(const FactorNetwork& net) {
  std::ostringstream out;
  out << "levels: " << net.levels() << '\n';
  std::map<int, std::vector<std::string>> by_level;
  for (const Variable& v : net.variables()) by_level[v.level].push_back(v.name);
  for (const auto& [level, names] : by_level) {
    out << "level " << level << " (" << names.size() << " variables):";
    for (const auto& n : names) out << ' ' << n;
    out << '\n';
  }
  out << "variables:\n";
  for (const Variable& v : net.variables())
    out << "  " << v.name << ' ' << v.dim << 'x' << v.slices << " level " << v.level << '\n';
  out << "blocks:\n";
  for (const ParamBlock& b : net.blocks())
    out << "  " << b.name << ' ' << shape_string(b.value) << (b.learnable ? " learnable" : "") << '\n';
  out << "equations:\n";
  for (const MergedEquation& eq : net.merged())
    out << "  " << eq.name << " level " << eq.level << " columns " << eq.columns() << '\n';
  return out.str();
}

}  // namespace pfn
