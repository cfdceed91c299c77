#pragma once

#include "pfn/network.hpp"
#include "pfn/rng.hpp"

#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace pfn {

enum class AveragingScheme {
  scheme1,  // parents from level-l equations after the up step, child slots after the down step
  scheme2,  // every copy of the variable
};

struct ObservationOverride {
  long iteration;  // applied at the start of this iteration (1-based)
  std::string variable;
  Role role;
};

struct InferenceConfig {
  long max_iters = 1000;
  double rmse_tol = 1e-4;
  double epsilon = kDefaultEpsilon;
  AveragingScheme averaging = AveragingScheme::scheme1;
  SparsenessSchedule sparseness;

  bool learning = true;                   // master switch
  std::map<std::string, bool> learn;      // per-block override of ParamBlock::learnable
  bool normalize_under_sparseness = false;

  double init_scale = 1e-6;
  double block_init_scale = 1.0;
  bool initialize = true;                 // false: continue from current values
  bool init_learnable_blocks = true;
  std::uint64_t seed = 0;

  std::vector<ObservationOverride> overrides;
  bool stop_on_convergence = true;
  unsigned threads = 0;                   // 0: PFN_THREADS or 1

  void validate() const {
    if (!(rmse_tol > 0.0)) throw ParameterError("InferenceConfig: rmse_tol must be > 0");
    if (max_iters < 1) throw ParameterError("InferenceConfig: max_iters must be >= 1");
    if (!(init_scale > 0.0)) throw ParameterError("InferenceConfig: init_scale must be > 0");
    if (!(block_init_scale > 0.0))
      throw ParameterError("InferenceConfig: block_init_scale must be > 0");
    if (epsilon < 0.0) throw ParameterError("InferenceConfig: epsilon must be >= 0");
  }
};

struct RunTrace {
  std::vector<std::string> equations;
  std::vector<std::vector<double>> rmse;  // [iteration][equation]
  std::vector<double> total_cost;
  long iterations = 0;
  bool converged = false;

  double max_rmse(std::size_t i) const {
    double m = 0.0;
    for (double r : rmse.at(i)) m = std::max(m, r);
    return m;
  }
  double final_max_rmse() const { return rmse.empty() ? 0.0 : max_rmse(rmse.size() - 1); }
};

inline void write_trace_csv(const RunTrace& trace, std::ostream& out) {
  out << "iteration,equation,rmse,total_cost\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < trace.rmse.size(); ++i)
    for (std::size_t e = 0; e < trace.equations.size(); ++e)
      out << i + 1 << ',' << trace.equations[e] << ',' << trace.rmse[i][e] << ','
          << trace.total_cost[i] << '\n';
}

inline unsigned resolve_threads(const InferenceConfig& config) {
  if (config.threads > 0) return config.threads;
  if (const char* env = std::getenv("PFN_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return 1;
}

namespace detail {

inline void require_compiled(FactorNetwork& net) {
  if (!net.compiled()) compile(net);
}

inline bool learning_active(const ParamBlock& block, const InferenceConfig& config, long iteration) {
  if (!config.learning) return false;
  bool on = block.learnable;
  if (auto it = config.learn.find(block.name); it != config.learn.end()) on = it->second;
  return on && iteration % block.update_period == 0;
}

inline std::string tie_key(const FactorNetwork& net, BlockId id) {
  const ParamBlock& b = net.block(id);
  return b.tie_group.empty() ? "#" + std::to_string(id.index) : "@" + b.tie_group;
}

inline bool skip_unit_sums(const NormalizationPolicy& policy, double theta,
                           const InferenceConfig& config) {
  using Kind = NormalizationPolicy::Kind;
  const bool unit = policy.kind == Kind::unit_column_sum || policy.kind == Kind::joint_column_sum;
  return unit && theta > 0.0 && !config.normalize_under_sparseness;
}

/// Normalizes the given blocks of one equation, joint kinds together, then
/// copies each result over the other members of its tie group.
inline void normalize_blocks(FactorNetwork& net, const std::vector<BlockId>& ids, double theta,
                             const InferenceConfig& config) {
  using Kind = NormalizationPolicy::Kind;
  std::vector<BlockId> joint;
  for (BlockId id : ids) {
    ParamBlock& b = net.block(id);
    if (skip_unit_sums(b.normalization, theta, config)) continue;
    if (b.normalization.kind == Kind::joint_column_sum)
      joint.push_back(id);
    else
      normalize(b.value, b.normalization);
  }
  if (!joint.empty()) {
    Eigen::RowVectorXd sums = Eigen::RowVectorXd::Zero(net.block(joint.front()).value.cols());
    for (BlockId id : joint) {
      const Matrix& v = net.block(id).value;
      if (v.cols() != sums.cols())
        throw DimensionError("joint normalization needs equal column counts");
      sums += v.colwise().sum();
    }
    for (BlockId id : joint) {
      Matrix& v = net.block(id).value;
      for (Index c = 0; c < v.cols(); ++c)
        if (sums(c) > 0.0) v.col(c) /= sums(c);
    }
  }
  for (BlockId id : ids) {
    const ParamBlock& src = net.block(id);
    if (src.tie_group.empty()) continue;
    for (ParamBlock& other : net.blocks())
      if (&other != &src && other.tie_group == src.tie_group) other.value = src.value;
  }
}

inline void update_equation(FactorNetwork& net, std::size_t e, const InferenceConfig& config,
                            long iteration) {
  MergedEquation& eq = net.merged()[e];
  const double theta = config.sparseness(iteration);

  std::vector<std::size_t> learned;
  for (std::size_t k = 0; k < eq.blocks.size(); ++k)
    if (learning_active(net.block(eq.blocks[k]), config, iteration)) learned.push_back(k);

  Matrix W = assemble_weights(net, eq);
  Matrix S;
  if (theta > 0.0) S = smoothing_matrix(W.cols(), theta);

  if (!learned.empty()) {
    const Matrix Wn = theta > 0.0 ? nmf_left_update(eq.child_copy, W, S * eq.parent_copy, config.epsilon)
                                  : nmf_left_update(eq.child_copy, W, eq.parent_copy, config.epsilon);
    // A block used for several parents of this equation takes the mean of its slices.
    std::map<std::size_t, std::pair<Matrix, int>> updates;
    for (std::size_t k : learned) {
      const Band& band = eq.parents[k];
      auto [it, fresh] = updates.try_emplace(eq.blocks[k].index, Wn.middleCols(band.offset, band.rows), 1);
      if (!fresh) {
        it->second.first += Wn.middleCols(band.offset, band.rows);
        ++it->second.second;
      }
    }
    std::vector<BlockId> ids;
    for (auto& [index, update] : updates) {
      net.blocks()[index].value = update.first / static_cast<double>(update.second);
      ids.push_back(BlockId{index});
    }
    normalize_blocks(net, ids, theta, config);
    W = assemble_weights(net, eq);
  }

  if (theta > 0.0)
    eq.parent_copy = nmf_right_update(eq.child_copy, W * S, eq.parent_copy, config.epsilon);
  else
    eq.parent_copy = nmf_right_update(eq.child_copy, W, eq.parent_copy, config.epsilon);
}

template <typename Fn>
void for_each_equation(const std::vector<std::size_t>& eqs, unsigned threads, Fn&& fn) {
  if (threads <= 1 || eqs.size() <= 1) {
    for (std::size_t e : eqs) fn(e);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, eqs.size());
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < eqs.size(); i += workers) fn(eqs[i]);
    });
}

inline std::vector<std::size_t> equations_at(const FactorNetwork& net, int level) {
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < net.merged().size(); ++e)
    if (net.merged()[e].level == level) out.push_back(e);
  return out;
}

/// Equations of one level may run concurrently unless two of them learn the
/// same (tied) block in this iteration.
inline bool parallel_safe(const FactorNetwork& net, const std::vector<std::size_t>& eqs,
                          const InferenceConfig& config, long iteration) {
  std::set<std::string> seen;
  for (std::size_t e : eqs) {
    std::set<std::string> mine;
    for (BlockId id : net.merged()[e].blocks)
      if (learning_active(net.block(id), config, iteration)) mine.insert(tie_key(net, id));
    for (const std::string& k : mine)
      if (!seen.insert(k).second) return false;
  }
  return true;
}

inline Matrix& copy_matrix(FactorNetwork& net, const CopySite& s) {
  MergedEquation& eq = net.merged()[s.equation];
  return s.parent ? eq.parent_copy : eq.child_copy;
}

inline const Band& site_band(const FactorNetwork& net, const CopySite& s) {
  const MergedEquation& eq = net.merged()[s.equation];
  return s.parent ? eq.parents[s.band] : eq.child[s.band];
}

/// Sets each hidden entry of `var` to the mean over the copies accepted by
/// `use`, keeps observed entries, then writes the value to every copy of
/// each slice that took part.
template <typename Pred>
void average_variable(FactorNetwork& net, VarId var, Pred&& use) {
  Variable& v = net.variable(var);
  const auto& sites = net.sites(var);
  Matrix sum = Matrix::Zero(v.dim, v.slices);
  std::vector<int> count(static_cast<std::size_t>(v.slices), 0);
  for (const CopySite& s : sites) {
    if (!use(s)) continue;
    const Band& band = site_band(net, s);
    sum.col(s.slice) += copy_matrix(net, s).block(band.offset, s.column, band.rows, 1);
    ++count[static_cast<std::size_t>(s.slice)];
  }
  for (Index t = 0; t < v.slices; ++t) {
    const int c = count[static_cast<std::size_t>(t)];
    if (c == 0) continue;
    const Vector mean = sum.col(t) / static_cast<double>(c);
    v.value.col(t) = v.observed.col(t).select(v.value.col(t), mean);
  }
  for (const CopySite& s : sites) {
    if (count[static_cast<std::size_t>(s.slice)] == 0) continue;
    const Band& band = site_band(net, s);
    copy_matrix(net, s).block(band.offset, s.column, band.rows, 1) = v.value.col(s.slice);
  }
}

}  // namespace detail

/// Left update (when learning) and right update for every equation whose
/// child is at `level`.
inline void up_step(FactorNetwork& net, int level, const InferenceConfig& config, long iteration = 1) {
  detail::require_compiled(net);
  const auto eqs = detail::equations_at(net, level);
  const unsigned threads =
      detail::parallel_safe(net, eqs, config, iteration) ? resolve_threads(config) : 1;
  detail::for_each_equation(eqs, threads,
                            [&](std::size_t e) { detail::update_equation(net, e, config, iteration); });
}

/// Value propagation: child copy <- W * parent copies.
inline void down_step(FactorNetwork& net, int level, const InferenceConfig& config = {}) {
  detail::require_compiled(net);
  const auto eqs = detail::equations_at(net, level);
  detail::for_each_equation(eqs, resolve_threads(config), [&](std::size_t e) {
    MergedEquation& eq = net.merged()[e];
    eq.child_copy = assemble_weights(net, eq) * eq.parent_copy;
  });
}

/// Variables appearing as parents of level-`level` equations take the mean of
/// those parent copies.
inline void average_parents(FactorNetwork& net, int level) {
  detail::require_compiled(net);
  std::set<VarId> vars;
  for (std::size_t e : detail::equations_at(net, level))
    for (const Band& b : net.merged()[e].parents) vars.insert(b.var);
  for (VarId v : vars)
    detail::average_variable(net, v, [&](const CopySite& s) {
      return s.parent && net.merged()[s.equation].level == level;
    });
}

/// Child slots of level-`level` equations are averaged into their variables.
inline void average_children(FactorNetwork& net, int level) {
  detail::require_compiled(net);
  std::set<VarId> vars;
  for (std::size_t e : detail::equations_at(net, level))
    for (const Band& b : net.merged()[e].child) vars.insert(b.var);
  for (VarId v : vars)
    detail::average_variable(net, v, [&](const CopySite& s) {
      return !s.parent && net.merged()[s.equation].level == level;
    });
}

/// Every variable at `level` takes the mean over its complete copy set.
inline void average_level(FactorNetwork& net, int level) {
  detail::require_compiled(net);
  for (std::size_t i = 0; i < net.variables().size(); ++i)
    if (net.variables()[i].level == level)
      detail::average_variable(net, VarId{i}, [](const CopySite&) { return true; });
}

/// Sum over equations of ||child - W * parents||^2, from model values.
inline double total_cost(FactorNetwork& net) {
  detail::require_compiled(net);
  double cost = 0.0;
  for (const MergedEquation& eq : net.merged())
    cost += squared_error(gather(net, eq.child, eq.columns()), assemble_weights(net, eq),
                          gather(net, eq.parents, eq.columns()));
  return cost;
}

/// RMSE of one merged equation evaluated on its local copies.
inline double equation_rmse(const FactorNetwork& net, std::size_t e) {
  const MergedEquation& eq = net.merged().at(e);
  return reconstruction_rmse(eq.child_copy, assemble_weights(net, eq), eq.parent_copy);
}

/// Generation pass from the top level down: every child variable becomes
/// W * parents (the mean when several equations produce the same slice).
/// Masks are ignored, so observed values are overwritten as well.
inline void propagate_down(FactorNetwork& net) {
  detail::require_compiled(net);
  for (int l = net.levels() - 1; l >= 1; --l) {
    std::map<std::size_t, std::pair<Matrix, std::vector<int>>> acc;
    for (std::size_t e : detail::equations_at(net, l)) {
      const MergedEquation& eq = net.merged()[e];
      const Matrix child = assemble_weights(net, eq) * gather(net, eq.parents, eq.columns());
      for (const Band& b : eq.child) {
        const Variable& v = net.variable(b.var);
        auto [it, fresh] = acc.try_emplace(
            b.var.index, Matrix::Zero(v.dim, v.slices),
            std::vector<int>(static_cast<std::size_t>(v.slices), 0));
        for (Index n = 0; n < eq.columns(); ++n) {
          it->second.first.col(b.slices[n]) += child.block(b.offset, n, b.rows, 1);
          ++it->second.second[static_cast<std::size_t>(b.slices[n])];
        }
      }
    }
    for (auto& [index, sum] : acc) {
      Variable& v = net.variables()[index];
      for (Index t = 0; t < v.slices; ++t)
        if (int c = sum.second[static_cast<std::size_t>(t)]; c > 0)
          v.value.col(t) = sum.first.col(t) / static_cast<double>(c);
    }
  }
  make_consistent(net);
}

/// Hidden entries uniform in (0, init_scale]; learnable blocks uniform in
/// (0, block_init_scale] and normalized; then all copies made consistent.
inline void initialize(FactorNetwork& net, const InferenceConfig& config, Rng& rng) {
  detail::require_compiled(net);
  for (Variable& v : net.variables())
    for (Index c = 0; c < v.slices; ++c)
      for (Index r = 0; r < v.dim; ++r)
        if (!v.observed(r, c)) v.value(r, c) = rng.uniform_positive(config.init_scale);

  if (config.init_learnable_blocks && config.learning) {
    std::set<std::string> seen;
    for (std::size_t b = 0; b < net.blocks().size(); ++b) {
      ParamBlock& block = net.block(BlockId{b});
      const bool on = config.learn.count(block.name) ? config.learn.at(block.name) : block.learnable;
      if (!on || !seen.insert(detail::tie_key(net, BlockId{b})).second) continue;
      for (Index c = 0; c < block.value.cols(); ++c)
        for (Index r = 0; r < block.value.rows(); ++r)
          block.value(r, c) = rng.uniform_positive(config.block_init_scale);
    }
    const double theta = config.sparseness(1);
    for (const MergedEquation& eq : net.merged()) {
      std::vector<BlockId> ids;
      for (BlockId id : eq.blocks) {
        const ParamBlock& block = net.block(id);
        const bool on = config.learn.count(block.name) ? config.learn.at(block.name) : block.learnable;
        if (on && std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
      }
      detail::normalize_blocks(net, ids, theta, config);
    }
  }
  make_consistent(net);
}

/// Joint inference and learning. Each iteration runs the up pass over levels
/// 1..L-1 and the down pass back, each step followed by averaging.
inline RunTrace run(FactorNetwork& net, const InferenceConfig& config) {
  config.validate();
  detail::require_compiled(net);
  for (const ObservationOverride& o : config.overrides) net.require_variable(o.variable);
  if (config.initialize) {
    Rng rng(config.seed);
    initialize(net, config, rng);
  }

  RunTrace trace;
  for (const MergedEquation& eq : net.merged()) trace.equations.push_back(eq.name);
  const int L = net.levels();
  const bool scheme1 = config.averaging == AveragingScheme::scheme1;

  for (long it = 1; it <= config.max_iters; ++it) {
    for (const ObservationOverride& o : config.overrides)
      if (o.iteration == it) net.set_role(net.require_variable(o.variable), o.role);

    for (int l = 1; l < L; ++l) {
      up_step(net, l, config, it);
      if (scheme1)
        average_parents(net, l);
      else
        average_level(net, l + 1);
    }
    for (int l = L - 1; l >= 1; --l) {
      down_step(net, l, config);
      if (scheme1)
        average_children(net, l);
      else
        average_level(net, l);
    }

    std::vector<double> rmse(net.merged().size());
    double cost = 0.0;
    for (std::size_t e = 0; e < rmse.size(); ++e) {
      rmse[e] = equation_rmse(net, e);
      cost += rmse[e] * rmse[e] * static_cast<double>(net.merged()[e].child_copy.size());
      if (!std::isfinite(rmse[e]))
        throw NumericError("non-finite value in equation '" + net.merged()[e].name + "'", it);
    }
    trace.rmse.push_back(std::move(rmse));
    trace.total_cost.push_back(cost);
    trace.iterations = it;
    if (config.stop_on_convergence && trace.final_max_rmse() < config.rmse_tol) break;
  }
  trace.converged = !trace.rmse.empty() && trace.final_max_rmse() < config.rmse_tol;
  return trace;
}

}  // namespace pfn
