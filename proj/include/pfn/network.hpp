#pragma once

#include "pfn/kernels.hpp"

#include <algorithm>
#include <compare>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace pfn {

enum class Role { hidden, observed };

struct VarId {
  std::size_t index = 0;
  friend auto operator<=>(const VarId&, const VarId&) = default;
};

struct BlockId {
  std::size_t index = 0;
  friend auto operator<=>(const BlockId&, const BlockId&) = default;
};

struct EquationId {
  std::size_t index = 0;
  friend auto operator<=>(const EquationId&, const EquationId&) = default;
};

/// A model variable. Time-replicated variables keep one column per slice.
struct Variable {
  std::string name;
  Index dim = 0;
  Index slices = 1;
  Matrix value;
  Mask observed;  // entry-wise, same shape as value
  int level = 0;

  bool slice_observed(Index t) const { return observed.col(t).all(); }
  bool any_observed() const { return observed.any(); }
};

/// One slot in an equation: a slice of a variable, or the constant zero
/// that stands in for a slice before the start of the sequence.
struct SliceRef {
  VarId var;
  Index slice = 0;
  bool padding = false;
};

inline SliceRef at(VarId v, Index slice = 0) { return {v, slice, false}; }
inline SliceRef zero_padding(VarId v) { return {v, -1, true}; }

struct ParamBlock {
  std::string name;
  Matrix value;
  bool learnable = false;
  std::string tie_group;  // empty when untied
  NormalizationPolicy normalization;
  int update_period = 1;
};

/// child = sum_k blocks[k] * parents[k]. A child made of several slots is
/// the vertical stack of those slots.
struct FactorEquation {
  std::string name;
  std::vector<SliceRef> child;
  std::vector<SliceRef> parents;
  std::vector<BlockId> blocks;
};

/// Rows [offset, offset+rows) of a merged equation's stacked matrix, holding
/// variable `var` at slices[n] in column n (-1 for zero padding).
struct Band {
  VarId var;
  Index offset = 0;
  Index rows = 0;
  std::vector<Index> slices;
};

/// Vector equations with the same structure and tied blocks, one column per
/// member. child_copy and parent_copy are the equation's local variables.
struct MergedEquation {
  std::string name;
  std::vector<EquationId> members;
  std::vector<Band> child;
  std::vector<Band> parents;
  std::vector<BlockId> blocks;  // one per parent band
  int level = 0;
  Matrix child_copy;
  Matrix parent_copy;

  Index columns() const { return static_cast<Index>(members.size()); }
  Index child_rows() const { return child_copy.rows(); }
  Index parent_rows() const { return parent_copy.rows(); }
};

/// Where one slice of a variable lives inside a merged equation's copies.
struct CopySite {
  std::size_t equation;
  bool parent;
  std::size_t band;
  Index column;
  Index slice;
};

class FactorNetwork {
 public:
  VarId add_variable(std::string name, Index dim, Role role = Role::hidden, Index slices = 1) {
    if (dim < 1) throw ParameterError("add_variable: dim must be >= 1");
    if (slices < 1) throw ParameterError("add_variable: slice count must be >= 1");
    if (find_variable(name)) throw ValidationError("add_variable: duplicate id '" + name + "'");
    Variable v;
    v.name = std::move(name);
    v.dim = dim;
    v.slices = slices;
    v.value = Matrix::Zero(dim, slices);
    v.observed = Mask::Constant(dim, slices, role == Role::observed);
    variables_.push_back(std::move(v));
    invalidate();
    return VarId{variables_.size() - 1};
  }

  BlockId add_block(ParamBlock block) {
    if (find_block(block.name)) throw ValidationError("add_block: duplicate id '" + block.name + "'");
    if (!is_non_negative(block.value))
      throw ParameterError("add_block: '" + block.name + "' has a negative entry");
    if (block.update_period < 1) throw ParameterError("add_block: update period must be >= 1");
    blocks_.push_back(std::move(block));
    invalidate();
    return BlockId{blocks_.size() - 1};
  }

  BlockId add_block(std::string name, Matrix value, bool learnable = false,
                    NormalizationPolicy policy = {}, std::string tie_group = {}) {
    return add_block(ParamBlock{std::move(name), std::move(value), learnable, std::move(tie_group),
                                std::move(policy), 1});
  }

  EquationId add_equation(std::vector<SliceRef> child, std::vector<SliceRef> parents,
                          std::vector<BlockId> blocks, std::string name = {}) {
    if (name.empty()) name = "eq" + std::to_string(equations_.size() + 1);
    const std::string where = "add_equation '" + name + "': ";
    if (child.empty()) throw ValidationError(where + "no child");
    if (parents.empty()) throw ValidationError(where + "no parents");
    if (blocks.size() != parents.size())
      throw ValidationError(where + "needs exactly one block per parent");

    Index child_rows = 0;
    for (const SliceRef& c : child) {
      check_ref(c, where);
      if (c.padding) throw ValidationError(where + "child slot cannot be padding");
      child_rows += variables_[c.var.index].dim;
    }
    for (std::size_t k = 0; k < parents.size(); ++k) {
      const SliceRef& p = parents[k];
      check_ref(p, where);
      for (const SliceRef& c : child)
        if (c.var == p.var)
          throw ValidationError(where + "'" + variables_[p.var.index].name +
                                "' is both child and parent");
      for (std::size_t m = 0; m < k; ++m)
        if (!p.padding && !parents[m].padding && parents[m].var == p.var &&
            parents[m].slice == p.slice)
          throw ValidationError(where + "parent '" + slot_name(p) + "' repeated");
      if (blocks[k].index >= blocks_.size()) throw ValidationError(where + "unknown block");
      const Matrix& W = blocks_[blocks[k].index].value;
      const Index parent_dim = variables_[p.var.index].dim;
      if (W.rows() != child_rows || W.cols() != parent_dim)
        throw DimensionError(where + "block '" + blocks_[blocks[k].index].name + "' is " +
                             shape_string(W) + ", expected " + std::to_string(child_rows) + "x" +
                             std::to_string(parent_dim));
    }
    equations_.push_back(FactorEquation{std::move(name), std::move(child), std::move(parents),
                                        std::move(blocks)});
    invalidate();
    return EquationId{equations_.size() - 1};
  }

  EquationId add_equation(SliceRef child, std::vector<SliceRef> parents,
                          std::vector<BlockId> blocks, std::string name = {}) {
    return add_equation(std::vector<SliceRef>{child}, std::move(parents), std::move(blocks),
                        std::move(name));
  }

  /// Marks every entry observed and stores the observation.
  void observe(VarId id, const Matrix& values) {
    Variable& v = variable(id);
    require_same_shape(v.value, values, "observe");
    if (!is_non_negative(values)) throw ParameterError("observe: negative observation");
    v.value = values;
    v.observed.setConstant(true);
  }

  void observe_slice(VarId id, Index slice, const Vector& values) {
    Variable& v = variable(id);
    if (slice < 0 || slice >= v.slices) throw DimensionError("observe_slice: slice out of range");
    if (values.size() != v.dim) throw DimensionError("observe_slice: wrong dimension");
    if (!is_non_negative(values)) throw ParameterError("observe_slice: negative observation");
    v.value.col(slice) = values;
    v.observed.col(slice).setConstant(true);
  }

  void observe_entry(VarId id, Index row, Index slice, double value) {
    Variable& v = variable(id);
    if (row < 0 || row >= v.dim || slice < 0 || slice >= v.slices)
      throw DimensionError("observe_entry: index out of range");
    if (!(value >= 0.0) || !std::isfinite(value))
      throw ParameterError("observe_entry: negative observation");
    v.value(row, slice) = value;
    v.observed(row, slice) = true;
  }

  /// Switching to observed keeps the current values as the observation.
  void set_role(VarId id, Role role) { variable(id).observed.setConstant(role == Role::observed); }

  void set_role(VarId id, Index slice, Role role) {
    Variable& v = variable(id);
    if (slice < 0 || slice >= v.slices) throw DimensionError("set_role: slice out of range");
    v.observed.col(slice).setConstant(role == Role::observed);
  }

  const std::vector<Variable>& variables() const { return variables_; }
  std::vector<Variable>& variables() { return variables_; }
  const Variable& variable(VarId id) const { return variables_.at(id.index); }
  Variable& variable(VarId id) { return variables_.at(id.index); }

  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::vector<ParamBlock>& blocks() { return blocks_; }
  const ParamBlock& block(BlockId id) const { return blocks_.at(id.index); }
  ParamBlock& block(BlockId id) { return blocks_.at(id.index); }

  const std::vector<FactorEquation>& equations() const { return equations_; }

  std::optional<VarId> find_variable(const std::string& name) const {
    for (std::size_t i = 0; i < variables_.size(); ++i)
      if (variables_[i].name == name) return VarId{i};
    return std::nullopt;
  }

  std::optional<BlockId> find_block(const std::string& name) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      if (blocks_[i].name == name) return BlockId{i};
    return std::nullopt;
  }

  VarId require_variable(const std::string& name) const {
    if (auto id = find_variable(name)) return *id;
    throw ValidationError("unknown variable '" + name + "'");
  }

  BlockId require_block(const std::string& name) const {
    if (auto id = find_block(name)) return *id;
    throw ValidationError("unknown block '" + name + "'");
  }

  /// Number of levels L; valid once assign_levels has run.
  int levels() const { return levels_; }
  bool leveled() const { return leveled_; }
  bool compiled() const { return compiled_; }

  const std::vector<MergedEquation>& merged() const { return merged_; }
  std::vector<MergedEquation>& merged() { return merged_; }

  const std::vector<CopySite>& sites(VarId id) const { return sites_.at(id.index); }

  std::string slot_name(const SliceRef& r) const {
    const Variable& v = variables_.at(r.var.index);
    if (r.padding) return v.name + "[pad]";
    if (v.slices == 1) return v.name;
    return v.name + "[" + std::to_string(r.slice + 1) + "]";
  }

 private:
  friend int assign_levels(FactorNetwork& net);
  friend void tie_and_merge(FactorNetwork& net);

  void check_ref(const SliceRef& r, const std::string& where) const {
    if (r.var.index >= variables_.size()) throw ValidationError(where + "unknown variable");
    if (r.padding) return;
    const Variable& v = variables_[r.var.index];
    if (r.slice < 0 || r.slice >= v.slices)
      throw DimensionError(where + "slice " + std::to_string(r.slice) + " out of range for '" +
                           v.name + "'");
  }

  void invalidate() {
    leveled_ = false;
    compiled_ = false;
    merged_.clear();
    sites_.clear();
  }

  std::vector<Variable> variables_;
  std::vector<ParamBlock> blocks_;
  std::vector<FactorEquation> equations_;
  int levels_ = 0;
  bool leveled_ = false;
  bool compiled_ = false;
  std::vector<MergedEquation> merged_;
  std::vector<std::vector<CopySite>> sites_;
};

/// Longest-path layering from the sinks. Every slot of a stacked child shares
/// the equation's level; parents sit strictly above it. Returns L.
inline int assign_levels(FactorNetwork& net) {
  auto& vars = net.variables_;
  const auto& eqs = net.equations_;
  const std::size_t n = vars.size();

  // Cycle check on the variable graph, parent -> child.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> out(n);  // (child, equation)
  for (std::size_t e = 0; e < eqs.size(); ++e)
    for (const SliceRef& p : eqs[e].parents)
      for (const SliceRef& c : eqs[e].child) out[p.var.index].push_back({c.var.index, e});

  enum class Mark { fresh, active, done };
  std::vector<Mark> mark(n, Mark::fresh);
  std::vector<std::pair<std::size_t, std::size_t>> stack;  // (node, next edge)
  for (std::size_t root = 0; root < n; ++root) {
    if (mark[root] != Mark::fresh) continue;
    stack.push_back({root, 0});
    mark[root] = Mark::active;
    while (!stack.empty()) {
      auto& [node, edge] = stack.back();
      if (edge == out[node].size()) {
        mark[node] = Mark::done;
        stack.pop_back();
        continue;
      }
      const auto [next, eq] = out[node][edge++];
      if (mark[next] == Mark::active)
        throw ValidationError("cycle detected: back-edge " + vars[node].name + " -> " +
                              vars[next].name + " in equation '" + eqs[eq].name + "'");
      if (mark[next] == Mark::fresh) {
        mark[next] = Mark::active;
        stack.push_back({next, 0});
      }
    }
  }

  std::vector<int> level(n, 1);
  bool changed = true;
  std::size_t passes = 0;
  while (changed) {
    changed = false;
    if (++passes > n + 2)
      throw ValidationError("assign_levels: stacked child slots cannot share a level");
    for (const FactorEquation& eq : eqs) {
      int el = 1;
      for (const SliceRef& c : eq.child) el = std::max(el, level[c.var.index]);
      for (const SliceRef& c : eq.child)
        if (level[c.var.index] < el) level[c.var.index] = el, changed = true;
      for (const SliceRef& p : eq.parents)
        if (level[p.var.index] < el + 1) level[p.var.index] = el + 1, changed = true;
    }
  }

  int L = 0;
  std::vector<bool> used(n, false);
  for (const FactorEquation& eq : eqs) {
    for (const SliceRef& c : eq.child) used[c.var.index] = true;
    for (const SliceRef& p : eq.parents) used[p.var.index] = true;
  }
  for (std::size_t i = 0; i < n; ++i) {
    vars[i].level = level[i];
    if (used[i]) L = std::max(L, level[i]);
  }
  net.levels_ = L;
  net.leveled_ = true;
  return L;
}

/// Groups vector equations that share structure and tied blocks into matrix
/// equations whose columns are the members, then records where every slice
/// of every variable lives among the local copies.
inline void tie_and_merge(FactorNetwork& net) {
  if (!net.leveled_) assign_levels(net);
  const auto& eqs = net.equations_;
  const auto& blocks = net.blocks_;

  std::map<std::string, BlockId> tie_shape;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].tie_group.empty()) continue;
    auto [it, fresh] = tie_shape.emplace(blocks[b].tie_group, BlockId{b});
    const Matrix& first = blocks[it->second.index].value;
    if (!fresh && (first.rows() != blocks[b].value.rows() || first.cols() != blocks[b].value.cols()))
      throw DimensionError("tie group '" + blocks[b].tie_group + "': block '" + blocks[b].name +
                           "' is " + shape_string(blocks[b].value) + ", expected " +
                           shape_string(first));
  }
  auto tie_key = [&](BlockId id) {
    const ParamBlock& b = blocks[id.index];
    return b.tie_group.empty() ? "#" + std::to_string(id.index) : "@" + b.tie_group;
  };

  std::vector<MergedEquation> merged;
  std::map<std::string, std::size_t> group_of;
  for (std::size_t e = 0; e < eqs.size(); ++e) {
    const FactorEquation& eq = eqs[e];
    std::ostringstream key;
    for (const SliceRef& c : eq.child) key << c.var.index << ',';
    key << '|';
    for (std::size_t k = 0; k < eq.parents.size(); ++k)
      key << eq.parents[k].var.index << ':' << tie_key(eq.blocks[k]) << ',';

    auto [it, fresh] = group_of.emplace(key.str(), merged.size());
    if (fresh) {
      MergedEquation m;
      m.name = eq.name;
      Index offset = 0;
      for (const SliceRef& c : eq.child) {
        const Index rows = net.variables_[c.var.index].dim;
        m.child.push_back(Band{c.var, offset, rows, {}});
        offset += rows;
      }
      offset = 0;
      for (const SliceRef& p : eq.parents) {
        const Index rows = net.variables_[p.var.index].dim;
        m.parents.push_back(Band{p.var, offset, rows, {}});
        offset += rows;
      }
      m.blocks = eq.blocks;
      m.level = net.variables_[eq.child.front().var.index].level;
      merged.push_back(std::move(m));
    }
    MergedEquation& m = merged[it->second];
    m.members.push_back(EquationId{e});
    for (std::size_t b = 0; b < eq.child.size(); ++b) m.child[b].slices.push_back(eq.child[b].slice);
    for (std::size_t b = 0; b < eq.parents.size(); ++b)
      m.parents[b].slices.push_back(eq.parents[b].padding ? -1 : eq.parents[b].slice);
  }

  std::vector<std::vector<CopySite>> sites(net.variables_.size());
  for (std::size_t e = 0; e < merged.size(); ++e) {
    MergedEquation& m = merged[e];
    const Index rows_c = m.child.back().offset + m.child.back().rows;
    const Index rows_p = m.parents.back().offset + m.parents.back().rows;
    m.child_copy = Matrix::Zero(rows_c, m.columns());
    m.parent_copy = Matrix::Zero(rows_p, m.columns());
    for (std::size_t b = 0; b < m.child.size(); ++b)
      for (Index n = 0; n < m.columns(); ++n)
        sites[m.child[b].var.index].push_back({e, false, b, n, m.child[b].slices[n]});
    for (std::size_t b = 0; b < m.parents.size(); ++b)
      for (Index n = 0; n < m.columns(); ++n)
        if (m.parents[b].slices[n] >= 0)
          sites[m.parents[b].var.index].push_back({e, true, b, n, m.parents[b].slices[n]});
  }
  net.merged_ = std::move(merged);
  net.sites_ = std::move(sites);
  net.compiled_ = true;
}

/// Stacked matrix built from model variable values (zero where padded).
inline Matrix gather(const FactorNetwork& net, const std::vector<Band>& bands, Index columns) {
  const Index rows = bands.back().offset + bands.back().rows;
  Matrix out = Matrix::Zero(rows, columns);
  for (const Band& b : bands) {
    const Matrix& value = net.variable(b.var).value;
    for (Index n = 0; n < columns; ++n)
      if (b.slices[n] >= 0) out.block(b.offset, n, b.rows, 1) = value.col(b.slices[n]);
  }
  return out;
}

/// [W_1 W_2 ... W_P] for one merged equation.
inline Matrix assemble_weights(const FactorNetwork& net, const MergedEquation& eq) {
  if (eq.blocks.size() == 1) return net.block(eq.blocks.front()).value;
  Matrix W(eq.child_rows(), eq.parent_rows());
  for (std::size_t k = 0; k < eq.blocks.size(); ++k)
    W.middleCols(eq.parents[k].offset, eq.parents[k].rows) = net.block(eq.blocks[k]).value;
  return W;
}

/// Sets every local copy to its model variable's value.
inline void make_consistent(FactorNetwork& net) {
  if (!net.compiled()) tie_and_merge(net);
  for (MergedEquation& eq : net.merged()) {
    eq.child_copy = gather(net, eq.child, eq.columns());
    eq.parent_copy = gather(net, eq.parents, eq.columns());
  }
}

/// Largest |copy - model value| over all local copies.
inline double max_copy_deviation(const FactorNetwork& net) {
  double worst = 0.0;
  for (const MergedEquation& eq : net.merged()) {
    worst = std::max(worst, (eq.child_copy - gather(net, eq.child, eq.columns())).cwiseAbs().maxCoeff());
    worst = std::max(worst,
                     (eq.parent_copy - gather(net, eq.parents, eq.columns())).cwiseAbs().maxCoeff());
  }
  return worst;
}

/// Levels, merged equations and consistent copies, ready for the engine.
inline void compile(FactorNetwork& net) {
  assign_levels(net);
  tie_and_merge(net);
  make_consistent(net);
}

/// Plain-text graph in the order the nodes and arcs are created when the
/// equations are walked in declaration order. Arcs into a child that already
/// has incoming arcs get one more dash than the largest existing count.
inline std::string export_graph_description(const FactorNetwork& net) {
  std::ostringstream out;
  std::map<std::string, int> max_dashes;
  auto node = [&](const SliceRef& r) {
    const std::string id = net.slot_name(r);
    if (max_dashes.emplace(id, 0).second) {
      const Variable& v = net.variable(r.var);
      out << "node " << id << " dim=" << v.dim
          << " shaded=" << (v.slice_observed(r.slice) ? "yes" : "no") << '\n';
    }
    return id;
  };
  for (const FactorEquation& eq : net.equations()) {
    std::vector<std::pair<std::string, int>> children;
    for (const SliceRef& c : eq.child) {
      const std::string id = node(c);
      children.push_back({id, max_dashes[id] + 1});
    }
    for (std::size_t k = 0; k < eq.parents.size(); ++k) {
      const SliceRef& p = eq.parents[k];
      if (p.padding) continue;
      const std::string pid = node(p);
      for (const auto& [cid, dashes] : children)
        out << "arc " << pid << " -> " << cid << " block=" << net.block(eq.blocks[k]).name
            << " dashes=" << dashes << '\n';
    }
    for (const auto& [cid, dashes] : children) max_dashes[cid] = std::max(max_dashes[cid], dashes);
  }
  return out.str();
}

}  // namespace pfn
