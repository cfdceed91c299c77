#pragma once

#include "pfn/network.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pfn {

/// 0-based state index; std::nullopt is the off state.
using StateRef = std::optional<std::size_t>;
inline constexpr std::nullopt_t off_state = std::nullopt;

struct Transition {
  StateRef from;
  StateRef to;
};

struct TransitionDiagram {
  std::size_t state_count = 0;
  std::vector<Transition> transitions;
  std::vector<std::string> state_names;  // optional; defaults to S1..SM

  void validate() const {
    if (state_count < 1) throw ValidationError("TransitionDiagram: no states");
    if (transitions.empty()) throw ValidationError("TransitionDiagram: no transitions");
    if (!state_names.empty() && state_names.size() != state_count)
      throw ValidationError("TransitionDiagram: state name count mismatch");
    for (const Transition& t : transitions) {
      if ((t.from && *t.from >= state_count) || (t.to && *t.to >= state_count))
        throw ValidationError("TransitionDiagram: state index out of range");
      if (!t.from && !t.to) throw ValidationError("TransitionDiagram: off -> off transition");
    }
  }

  std::string state_name(std::size_t i) const {
    return state_names.empty() ? "S" + std::to_string(i + 1) : state_names.at(i);
  }

  std::optional<std::size_t> find_state(const std::string& name) const {
    for (std::size_t i = 0; i < state_count; ++i)
      if (state_name(i) == name) return i;
    return std::nullopt;
  }

  /// Index of the transition from -> to, if the diagram has it.
  std::optional<std::size_t> find_transition(StateRef from, StateRef to) const {
    for (std::size_t k = 0; k < transitions.size(); ++k)
      if (transitions[k].from == from && transitions[k].to == to) return k;
    return std::nullopt;
  }

  bool allows(StateRef from, StateRef to) const { return find_transition(from, to).has_value(); }
};

/// Unit vector for state i, zero vector for the off state.
inline Vector state_basis(StateRef i, std::size_t M) {
  Vector v = Vector::Zero(static_cast<Index>(M));
  if (i) {
    if (*i >= M) throw ParameterError("state_basis: index out of range");
    v(static_cast<Index>(*i)) = 1.0;
  }
  return v;
}

/// Column k stacks the source basis vector over the destination basis vector.
inline Matrix transition_basis_matrix(const TransitionDiagram& d) {
  d.validate();
  const auto M = static_cast<Index>(d.state_count);
  Matrix W = Matrix::Zero(2 * M, static_cast<Index>(d.transitions.size()));
  for (std::size_t k = 0; k < d.transitions.size(); ++k) {
    const auto c = static_cast<Index>(k);
    W.col(c).head(M) = state_basis(d.transitions[k].from, d.state_count);
    W.col(c).tail(M) = state_basis(d.transitions[k].to, d.state_count);
  }
  return W;
}

/// S1 -> S2 -> ... -> SM -> S1.
inline TransitionDiagram cycle_diagram(std::size_t M) {
  TransitionDiagram d{M, {}, {}};
  for (std::size_t i = 0; i < M; ++i) d.transitions.push_back({i, (i + 1) % M});
  return d;
}

/// Four-state diagram with a self-loop on S3 and a shortcut S2 -> S4.
inline TransitionDiagram branching_diagram() {
  return TransitionDiagram{4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {2, 2}, {1, 3}}, {}};
}

// ---------------------------------------------------------------------------
// Single transition model: X_c = W H with X_c columns (x_t; x_{t+1}).

struct ChainModel {
  FactorNetwork net;
  VarId x, h;
  BlockId w;
  Index states = 0, transitions = 0, slices = 0;
};

inline ChainModel build_chain_network(const Matrix& W, Index T, bool learnable = false,
                                      NormalizationPolicy policy = {}) {
  if (W.rows() < 2 || W.rows() % 2 != 0)
    throw DimensionError("build_chain_network: W needs an even row count");
  if (T < 2) throw ParameterError("build_chain_network: T must be >= 2");
  ChainModel m;
  m.states = W.rows() / 2;
  m.transitions = W.cols();
  m.slices = T;
  m.x = m.net.add_variable("X", m.states, Role::hidden, T);
  m.h = m.net.add_variable("H", m.transitions, Role::hidden, T - 1);
  m.w = m.net.add_block("W", W, learnable, std::move(policy));
  for (Index t = 0; t + 1 < T; ++t)
    m.net.add_equation({at(m.x, t), at(m.x, t + 1)}, {at(m.h, t)}, {m.w}, "chain");
  return m;
}

// ---------------------------------------------------------------------------
// Coupled two-level transition model.

/// Pairs (upper transition, lower transition) that may co-occur, 0-based.
struct CouplingTable {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

inline Matrix coupling_matrix(const CouplingTable& table, std::size_t upper_count,
                              std::size_t lower_count) {
  const auto Ru = static_cast<Index>(upper_count);
  const auto Rl = static_cast<Index>(lower_count);
  Matrix U = Matrix::Zero(Ru + Rl, static_cast<Index>(table.pairs.size()));
  for (std::size_t j = 0; j < table.pairs.size(); ++j) {
    const auto [up, low] = table.pairs[j];
    if (up >= upper_count || low >= lower_count)
      throw ParameterError("coupling_matrix: pair " + std::to_string(j + 1) + " out of range");
    U(static_cast<Index>(up), static_cast<Index>(j)) = 1.0;
    U(Ru + static_cast<Index>(low), static_cast<Index>(j)) = 1.0;
  }
  return U;
}

struct TwoLevelModel {
  FactorNetwork net;
  VarId x1, x2, h1, h2, v;
  BlockId w1, w2, u;
  Index slices = 0;
};

/// X1_c = W1 H1, X2_c = W2 H2, (H2; H1) = U V.
inline TwoLevelModel build_two_level_network(const Matrix& W1, const Matrix& W2, const Matrix& U,
                                             Index T) {
  if (U.rows() != W2.cols() + W1.cols())
    throw DimensionError("build_two_level_network: U has " + std::to_string(U.rows()) +
                         " rows, expected " + std::to_string(W2.cols() + W1.cols()));
  if (W1.rows() % 2 != 0 || W2.rows() % 2 != 0)
    throw DimensionError("build_two_level_network: transition bases need even row counts");
  if (T < 2) throw ParameterError("build_two_level_network: T must be >= 2");
  TwoLevelModel m;
  m.slices = T;
  m.x1 = m.net.add_variable("X1", W1.rows() / 2, Role::hidden, T);
  m.x2 = m.net.add_variable("X2", W2.rows() / 2, Role::hidden, T);
  m.h1 = m.net.add_variable("H1", W1.cols(), Role::hidden, T - 1);
  m.h2 = m.net.add_variable("H2", W2.cols(), Role::hidden, T - 1);
  m.v = m.net.add_variable("V", U.cols(), Role::hidden, T - 1);
  m.w1 = m.net.add_block("W1", W1);
  m.w2 = m.net.add_block("W2", W2);
  m.u = m.net.add_block("U", U);
  for (Index t = 0; t + 1 < T; ++t)
    m.net.add_equation({at(m.x1, t), at(m.x1, t + 1)}, {at(m.h1, t)}, {m.w1}, "lower");
  for (Index t = 0; t + 1 < T; ++t)
    m.net.add_equation({at(m.x2, t), at(m.x2, t + 1)}, {at(m.h2, t)}, {m.w2}, "upper");
  for (Index t = 0; t + 1 < T; ++t)
    m.net.add_equation({at(m.h2, t), at(m.h1, t)}, {at(m.v, t)}, {m.u}, "coupling");
  return m;
}

/// Lower level of the regular-expression example: d, e, end.
inline TransitionDiagram regex_lower_diagram() {
  return TransitionDiagram{3, {{0, 1}, {1, 2}, {1, 0}, {2, 0}, {2, 2}}, {"d", "e", "end"}};
}

/// Upper level: a, b, refine, c, refine, end.
inline TransitionDiagram regex_upper_diagram() {
  return TransitionDiagram{6,
                           {{0, 0}, {0, 1}, {1, 2}, {1, 3}, {2, 3}, {3, 4}, {4, 5}, {5, 0}, {4, 4},
                            {2, 2}, {5, 5}},
                           {"S1", "S2", "S3", "S4", "S5", "S6"}};
}

inline CouplingTable regex_coupling_table() {
  // (upper, lower), 1-based as usually written, converted below.
  const std::vector<std::pair<std::size_t, std::size_t>> one_based = {
      {3, 4}, {10, 1}, {10, 3}, {5, 2}, {6, 4}, {9, 1}, {9, 3},
      {7, 2}, {11, 5}, {8, 5},  {1, 5}, {2, 5}, {4, 5}};
  CouplingTable t;
  for (auto [u, l] : one_based) t.pairs.push_back({u - 1, l - 1});
  return t;
}

// ---------------------------------------------------------------------------
// Multiple target tracker.

/// High-level position transition kinds, in basis order a1..a4.
enum class PositionMove { self = 0, change = 1, on = 2, off = 3 };

inline PositionMove position_move(const Transition& t) {
  if (!t.from) return PositionMove::on;
  if (!t.to) return PositionMove::off;
  return *t.from == *t.to ? PositionMove::self : PositionMove::change;
}

/// Self-loops, increments, decrements, turn-on, turn-off; 5P - 2 transitions.
inline TransitionDiagram position_transition_diagram(std::size_t P) {
  if (P < 2) throw ParameterError("position_transition_diagram: P must be >= 2");
  TransitionDiagram d{P, {}, {}};
  for (std::size_t i = 0; i < P; ++i) d.transitions.push_back({i, i});
  for (std::size_t i = 0; i + 1 < P; ++i) d.transitions.push_back({i, i + 1});
  for (std::size_t i = 0; i + 1 < P; ++i) d.transitions.push_back({i + 1, i});
  for (std::size_t i = 0; i < P; ++i) d.transitions.push_back({off_state, i});
  for (std::size_t i = 0; i < P; ++i) d.transitions.push_back({i, off_state});
  return d;
}

/// Column for (component i, position j) has ones at row i of the emission
/// band, row j of the position band and row i+j of the observation band
/// (0-based, so component 0 at position 0 lands on observation row 0).
inline Matrix pattern_translation_coupling(Index pattern_size, Index P) {
  if (pattern_size < 1 || P < 1) throw ParameterError("pattern_translation_coupling: empty band");
  const Index obs = P - 1 + pattern_size;
  Matrix W = Matrix::Zero(pattern_size + P + obs, pattern_size * P);
  for (Index i = 0; i < pattern_size; ++i)
    for (Index j = 0; j < P; ++j) {
      const Index c = i * P + j;
      W(i, c) = 1.0;
      W(pattern_size + j, c) = 1.0;
      W(pattern_size + P + i + j, c) = 1.0;
    }
  return W;
}

inline Index pattern_column(Index component, Index position, Index P) {
  return component * P + position;
}

struct TrackerSpec {
  Index pattern_size = 5;
  Index positions = 15;
  TransitionDiagram states;               // target state diagram
  std::vector<std::size_t> state_label;   // target type of each state
  std::size_t label_count = 2;
  std::vector<Vector> emissions;          // one pattern per state
  std::vector<std::pair<std::size_t, PositionMove>> state_position_coupling;

  void validate() const {
    states.validate();
    if (emissions.size() != states.state_count)
      throw DimensionError("TrackerSpec: need one emission per state");
    for (const Vector& e : emissions) {
      if (e.size() != pattern_size) throw DimensionError("TrackerSpec: emission length mismatch");
      if (!is_non_negative(e)) throw ParameterError("TrackerSpec: negative emission");
    }
    if (state_label.size() != states.state_count)
      throw DimensionError("TrackerSpec: need one label per state");
    for (std::size_t l : state_label)
      if (l >= label_count) throw ParameterError("TrackerSpec: label out of range");
    for (const auto& [t, move] : state_position_coupling)
      if (t >= states.transitions.size())
        throw ParameterError("TrackerSpec: coupled transition out of range");
    if (positions < 2) throw ParameterError("TrackerSpec: need at least 2 positions");
  }

  /// Coupling column for (state transition, move), if the pair may co-occur.
  std::optional<std::size_t> coupling_column(std::size_t transition, PositionMove move) const {
    for (std::size_t j = 0; j < state_position_coupling.size(); ++j)
      if (state_position_coupling[j].first == transition && state_position_coupling[j].second == move)
        return j;
    return std::nullopt;
  }
};

/// Two target types: A cycles S1..S5 and may repeat from S5 to S2; B runs
/// S6..S9 and may repeat from S9 to S7. Each state emits a distinct one-hot
/// pattern within its type, so every emission has unit sum and the forced
/// co-activation of emission, position and observation stays exact.
inline TrackerSpec default_tracker_spec(Index positions = 15) {
  TrackerSpec s;
  s.pattern_size = 5;
  s.positions = positions;
  s.states = TransitionDiagram{9,
                               {{0, 1},
                                {1, 2},
                                {2, 3},
                                {3, 4},
                                {4, off_state},
                                {4, 1},
                                {off_state, 0},
                                {5, 6},
                                {6, 7},
                                {7, 8},
                                {8, off_state},
                                {8, 6},
                                {off_state, 5}},
                               {}};
  s.state_label = {0, 0, 0, 0, 0, 1, 1, 1, 1};
  s.label_count = 2;
  const std::vector<Index> hot = {0, 2, 4, 3, 1, 4, 1, 2, 3};
  for (Index k : hot) {
    Vector e = Vector::Zero(s.pattern_size);
    e(k) = 1.0;
    s.emissions.push_back(e);
  }
  using PM = PositionMove;
  s.state_position_coupling = {{5, PM::change}, {5, PM::self}, {11, PM::change}, {11, PM::self},
                               {6, PM::on},     {12, PM::on},  {4, PM::off},     {10, PM::off},
                               {0, PM::self},   {1, PM::self}, {2, PM::self},    {3, PM::self},
                               {7, PM::self},   {8, PM::self}, {9, PM::self}};
  return s;
}

struct TrackerModel {
  FactorNetwork net;
  TrackerSpec spec;
  TransitionDiagram position_diagram;
  VarId x1, x2, x3, x4, x5, u1, u2, u3, h1, h2, h3, v1, v2;
  BlockId w1, w2, w3, w4, w5, w6, w7;
  Index slices = 0;
};

inline TrackerModel build_target_tracker(const TrackerSpec& spec, Index T) {
  spec.validate();
  if (T < 2) throw ParameterError("build_target_tracker: T must be >= 2");
  TrackerModel m;
  m.spec = spec;
  m.slices = T;
  m.position_diagram = position_transition_diagram(static_cast<std::size_t>(spec.positions));

  const Index P = spec.positions;
  const Index E = spec.pattern_size;
  const auto S = static_cast<Index>(spec.states.state_count);
  const auto R = static_cast<Index>(spec.states.transitions.size());
  const auto Tpos = static_cast<Index>(m.position_diagram.transitions.size());
  const auto Lbl = static_cast<Index>(spec.label_count);
  const auto Q = static_cast<Index>(spec.state_position_coupling.size());

  Matrix W3 = Matrix::Zero(S + E, S);
  Matrix W7 = Matrix::Zero(Lbl + S, S);
  for (Index i = 0; i < S; ++i) {
    W3(i, i) = 1.0;
    W3.col(i).tail(E) = spec.emissions[static_cast<std::size_t>(i)];
    W7(static_cast<Index>(spec.state_label[static_cast<std::size_t>(i)]), i) = 1.0;
    W7(Lbl + i, i) = 1.0;
  }
  Matrix W4 = Matrix::Zero(4 + Tpos, Tpos);
  for (Index i = 0; i < Tpos; ++i) {
    W4(static_cast<Index>(position_move(m.position_diagram.transitions[static_cast<std::size_t>(i)])), i) = 1.0;
    W4(4 + i, i) = 1.0;
  }
  Matrix W5 = Matrix::Zero(R + 4, Q);
  for (Index j = 0; j < Q; ++j) {
    const auto& [t, move] = spec.state_position_coupling[static_cast<std::size_t>(j)];
    W5(static_cast<Index>(t), j) = 1.0;
    W5(R + static_cast<Index>(move), j) = 1.0;
  }

  FactorNetwork& net = m.net;
  m.x1 = net.add_variable("X1", P - 1 + E, Role::hidden, T);
  m.x2 = net.add_variable("X2", P, Role::hidden, T);
  m.x3 = net.add_variable("X3", E, Role::hidden, T);
  m.x4 = net.add_variable("X4", S, Role::hidden, T);
  m.x5 = net.add_variable("X5", Lbl, Role::hidden, T);
  m.u1 = net.add_variable("U1", E * P, Role::hidden, T);
  m.u2 = net.add_variable("U2", S, Role::hidden, T);
  m.u3 = net.add_variable("U3", S, Role::hidden, T);
  m.h1 = net.add_variable("H1", Tpos, Role::hidden, T - 1);
  m.h2 = net.add_variable("H2", 4, Role::hidden, T - 1);
  m.h3 = net.add_variable("H3", R, Role::hidden, T - 1);
  m.v1 = net.add_variable("V1", Tpos, Role::hidden, T - 1);
  m.v2 = net.add_variable("V2", Q, Role::hidden, T - 1);

  m.w1 = net.add_block("W1", pattern_translation_coupling(E, P));
  m.w2 = net.add_block("W2", transition_basis_matrix(m.position_diagram));
  m.w3 = net.add_block("W3", W3);
  m.w4 = net.add_block("W4", W4);
  m.w5 = net.add_block("W5", W5);
  m.w6 = net.add_block("W6", transition_basis_matrix(spec.states));
  m.w7 = net.add_block("W7", W7);

  for (Index t = 0; t < T; ++t)
    net.add_equation({at(m.x3, t), at(m.x2, t), at(m.x1, t)}, {at(m.u1, t)}, {m.w1},
                     "pattern-translation");
  for (Index t = 0; t < T; ++t)
    net.add_equation({at(m.x4, t), at(m.x3, t)}, {at(m.u2, t)}, {m.w3}, "state-emission");
  for (Index t = 0; t < T; ++t)
    net.add_equation({at(m.x5, t), at(m.x4, t)}, {at(m.u3, t)}, {m.w7}, "label-state");
  for (Index t = 0; t + 1 < T; ++t)
    net.add_equation({at(m.x2, t), at(m.x2, t + 1)}, {at(m.h1, t)}, {m.w2}, "position-transition");
  for (Index t = 0; t + 1 < T; ++t)
    net.add_equation({at(m.x4, t), at(m.x4, t + 1)}, {at(m.h3, t)}, {m.w6}, "state-transition");
  for (Index t = 0; t + 1 < T; ++t)
    net.add_equation({at(m.h2, t), at(m.h1, t)}, {at(m.v1, t)}, {m.w4}, "position-coupling");
  for (Index t = 0; t + 1 < T; ++t)
    net.add_equation({at(m.h3, t), at(m.h2, t)}, {at(m.v2, t)}, {m.w5}, "state-position-coupling");
  return m;
}

// ---------------------------------------------------------------------------
// Sparse hierarchical sequence model.

struct HierarchySpec {
  struct Level {
    Index dim = 1;
    Index children = 1;    // p: parent slices feeding each slice of this level
    Index separation = 1;  // q: spacing between them
    int update_period = 1; // learning period of this level's blocks
  };
  std::vector<Level> levels;  // bottom first; children/separation of the top level are unused
  Index slices = 1;

  void validate() const {
    if (levels.size() < 2) throw ParameterError("HierarchySpec: need at least 2 levels");
    if (slices < 1) throw ParameterError("HierarchySpec: slice count must be >= 1");
    for (const Level& l : levels)
      if (l.dim < 1 || l.children < 1 || l.separation < 1 || l.update_period < 1)
        throw ParameterError("HierarchySpec: dims, p, q and periods must be >= 1");
  }
};

struct HierarchyModel {
  FactorNetwork net;
  HierarchySpec spec;
  std::vector<VarId> x;                   // x[i] is level i+1
  std::vector<std::vector<BlockId>> w;    // w[i][k] multiplies level i+2 shifted by k*q
};

/// X^i_t = sum_k W^i_k X^{i+1}_{t - k q}, slices before the start padded with zero.
inline HierarchyModel build_sparse_hierarchy(const HierarchySpec& spec) {
  spec.validate();
  HierarchyModel m;
  m.spec = spec;
  const Index T = spec.slices;
  for (std::size_t i = 0; i < spec.levels.size(); ++i)
    m.x.push_back(m.net.add_variable("X" + std::to_string(i + 1), spec.levels[i].dim, Role::hidden, T));
  for (std::size_t i = 0; i + 1 < spec.levels.size(); ++i) {
    const auto& lvl = spec.levels[i];
    const Index rows = lvl.dim;
    const Index cols = spec.levels[i + 1].dim;
    const double fill = 1.0 / static_cast<double>(rows * lvl.children);
    std::vector<BlockId> ids;
    for (Index k = 0; k < lvl.children; ++k) {
      ParamBlock b{"W" + std::to_string(i + 1) + "_" + std::to_string(k + 1),
                   Matrix::Constant(rows, cols, fill), true, {},
                   NormalizationPolicy::joint_column_sum(), lvl.update_period};
      ids.push_back(m.net.add_block(std::move(b)));
    }
    m.w.push_back(ids);
    for (Index t = 0; t < T; ++t) {
      std::vector<SliceRef> parents;
      for (Index k = 0; k < lvl.children; ++k) {
        const Index s = t - k * lvl.separation;
        parents.push_back(s >= 0 ? at(m.x[i + 1], s) : zero_padding(m.x[i + 1]));
      }
      m.net.add_equation(at(m.x[i], t), parents, ids, "level" + std::to_string(i + 1));
    }
  }
  return m;
}

}  // namespace pfn
