#pragma once

#include "pfn/builders.hpp"
#include "pfn/engine.hpp"
#include "pfn/rng.hpp"

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

namespace pfn {

/// Walks the diagram for T slices. The first state is drawn uniformly unless
/// given; at a branch the outgoing transitions are sorted by destination
/// (off first) and one is picked with a uniform index.
inline std::vector<StateRef> sample_state_path(const TransitionDiagram& d, Index T, Rng& rng,
                                               std::optional<StateRef> initial = std::nullopt) {
  d.validate();
  if (T < 1) throw ParameterError("sample_state_path: T must be >= 1");
  std::vector<StateRef> path;
  path.push_back(initial ? *initial : StateRef{rng.index(d.state_count)});
  while (static_cast<Index>(path.size()) < T) {
    std::vector<StateRef> next;
    for (const Transition& t : d.transitions)
      if (t.from == path.back()) next.push_back(t.to);
    if (next.empty()) {
      const std::string name = path.back() ? d.state_name(*path.back()) : "off";
      throw ValidationError("sample_state_path: dead end at state " + name);
    }
    std::sort(next.begin(), next.end());
    path.push_back(next[rng.index(next.size())]);
  }
  return path;
}

/// One basis column per slice.
inline Matrix encode_states(const std::vector<StateRef>& path, std::size_t M) {
  Matrix X(static_cast<Index>(M), static_cast<Index>(path.size()));
  for (std::size_t t = 0; t < path.size(); ++t) X.col(static_cast<Index>(t)) = state_basis(path[t], M);
  return X;
}

/// One-hot transition activations, R x (T-1).
inline Matrix encode_transitions(const TransitionDiagram& d, const std::vector<StateRef>& path) {
  Matrix H = Matrix::Zero(static_cast<Index>(d.transitions.size()),
                          std::max<Index>(0, static_cast<Index>(path.size()) - 1));
  for (std::size_t t = 0; t + 1 < path.size(); ++t) {
    auto k = d.find_transition(path[t], path[t + 1]);
    if (!k) throw ValidationError("encode_transitions: step " + std::to_string(t + 1) + " not in diagram");
    H(static_cast<Index>(*k), static_cast<Index>(t)) = 1.0;
  }
  return H;
}

inline Matrix sample_elementary_sequence(const TransitionDiagram& d, Index T, std::uint64_t seed,
                                         std::optional<StateRef> initial = std::nullopt) {
  Rng rng(seed);
  return encode_states(sample_state_path(d, T, rng, initial), d.state_count);
}

/// Per-column argmax; an all-zero column reads as the off state.
inline std::vector<StateRef> argmax_path(const Matrix& X) {
  std::vector<StateRef> path;
  for (Index c = 0; c < X.cols(); ++c) {
    Index r = 0;
    const double m = X.col(c).maxCoeff(&r);
    path.push_back(m > 0.0 ? StateRef{static_cast<std::size_t>(r)} : off_state);
  }
  return path;
}

inline bool is_valid_path(const TransitionDiagram& d, const std::vector<StateRef>& path) {
  for (std::size_t t = 0; t + 1 < path.size(); ++t)
    if (!d.allows(path[t], path[t + 1])) return false;
  return true;
}

inline Matrix mix_sequences(const std::vector<std::pair<double, Matrix>>& terms) {
  if (terms.empty()) throw ParameterError("mix_sequences: no terms");
  Matrix out = Matrix::Zero(terms.front().second.rows(), terms.front().second.cols());
  for (const auto& [scale, X] : terms) {
    if (!(scale > 0.0)) throw ParameterError("mix_sequences: scales must be > 0");
    require_same_shape(out, X, "mix_sequences");
    out += scale * X;
  }
  return out;
}

/// X + U[lo, hi], drawn column by column.
inline Matrix add_uniform_noise(const Matrix& X, double lo, double hi, std::uint64_t seed) {
  if (!(lo >= 0.0 && hi >= lo)) throw ParameterError("add_uniform_noise: need 0 <= lo <= hi");
  Rng rng(seed);
  Matrix out = X;
  for (Index c = 0; c < X.cols(); ++c)
    for (Index r = 0; r < X.rows(); ++r) out(r, c) += rng.uniform(lo, hi);
  return out;
}

// ---------------------------------------------------------------------------
// Target scenes.

/// A target of one type, alive for position_path.size() slices from onset.
/// Its state path starts at the type's entry state and follows the only
/// non-off transition at each step; it must be able to die where it stops.
struct TargetEvent {
  std::size_t type = 0;
  Index onset = 0;
  double magnitude = 1.0;
  std::vector<Index> position_path;  // 0-based positions
};

struct TargetTrack {
  std::vector<std::size_t> states;
  std::vector<std::size_t> transitions;  // between consecutive alive slices
  std::optional<std::size_t> on, off;    // entry/exit transitions, when inside [0, T)
};

inline TargetTrack resolve_track(const TargetEvent& ev, const TrackerSpec& spec, Index T) {
  const TransitionDiagram& d = spec.states;
  const std::string where = "target event at onset " + std::to_string(ev.onset + 1) + ": ";
  if (ev.position_path.empty()) throw ValidationError(where + "empty position path");
  if (!(ev.magnitude > 0.0)) throw ValidationError(where + "magnitude must be > 0");
  if (ev.onset < 0 || ev.onset >= T) throw ValidationError(where + "onset outside the sequence");

  TargetTrack track;
  for (std::size_t k = 0; k < d.transitions.size(); ++k) {
    const Transition& t = d.transitions[k];
    if (!t.from && t.to && spec.state_label.at(*t.to) == ev.type) {
      track.on = k;
      track.states.push_back(*t.to);
      break;
    }
  }
  if (track.states.empty()) throw ValidationError(where + "type has no entry transition");

  const Index alive = std::min<Index>(static_cast<Index>(ev.position_path.size()), T - ev.onset);
  for (Index s = 1; s < alive; ++s) {
    std::optional<std::size_t> chosen;
    for (std::size_t k = 0; k < d.transitions.size(); ++k) {
      const Transition& t = d.transitions[k];
      if (t.from == track.states.back() && t.to) {
        if (chosen) throw ValidationError(where + "state path is ambiguous");
        chosen = k;
      }
    }
    if (!chosen) throw ValidationError(where + "outlives its state cycle");
    track.transitions.push_back(*chosen);
    track.states.push_back(*d.transitions[*chosen].to);
  }
  if (ev.onset == 0) track.on.reset();
  const Index end = ev.onset + static_cast<Index>(ev.position_path.size());
  if (end < T) {
    track.off = d.find_transition(track.states.back(), off_state);
    if (!track.off) throw ValidationError(where + "cannot die in state " + d.state_name(track.states.back()));
  }

  for (Index s = 0; s < alive; ++s) {
    const Index p = ev.position_path[static_cast<std::size_t>(s)];
    if (p < 0 || p >= spec.positions) throw ValidationError(where + "position out of range");
    if (s == 0) continue;
    const Index step = p - ev.position_path[static_cast<std::size_t>(s - 1)];
    if (step < -1 || step > 1) throw ValidationError(where + "position jumps by more than one");
    if (step != 0 && !spec.coupling_column(track.transitions[static_cast<std::size_t>(s - 1)],
                                           PositionMove::change))
      throw ValidationError(where + "position changes on a transition that forbids it");
  }
  return track;
}

/// Direct stamping: each alive slice adds magnitude times the current state's
/// emission, shifted down by the current position.
inline Matrix synth_target_observations(const std::vector<TargetEvent>& events, const TrackerSpec& spec,
                                        Index T) {
  spec.validate();
  Matrix X = Matrix::Zero(spec.positions - 1 + spec.pattern_size, T);
  for (const TargetEvent& ev : events) {
    const TargetTrack track = resolve_track(ev, spec, T);
    for (std::size_t s = 0; s < track.states.size(); ++s) {
      const Index t = ev.onset + static_cast<Index>(s);
      X.col(t).segment(ev.position_path[s], spec.pattern_size) +=
          ev.magnitude * spec.emissions[track.states[s]];
    }
  }
  return X;
}

/// Writes the exact hidden assignment of every tracker variable for a scene,
/// with X1 holding the generated observations.
inline void assign_tracker_scene(TrackerModel& m, const std::vector<TargetEvent>& events) {
  const TrackerSpec& spec = m.spec;
  FactorNetwork& net = m.net;
  for (Variable& v : net.variables()) v.value.setZero();
  const TransitionDiagram& pos = m.position_diagram;
  const Index P = spec.positions;
  const Index T = m.slices;

  auto add = [&](VarId id, Index row, Index col, double a) { net.variable(id).value(row, col) += a; };
  auto between = [&](Index t, std::size_t state_tr, StateRef p_from, StateRef p_to, double a) {
    const auto ptr = pos.find_transition(p_from, p_to);
    if (!ptr) throw ValidationError("assign_tracker_scene: position step not in diagram");
    const PositionMove move = position_move(pos.transitions[*ptr]);
    const auto col = spec.coupling_column(state_tr, move);
    if (!col) throw ValidationError("assign_tracker_scene: state/position pair cannot co-occur");
    add(m.h3, static_cast<Index>(state_tr), t, a);
    add(m.h1, static_cast<Index>(*ptr), t, a);
    add(m.h2, static_cast<Index>(move), t, a);
    add(m.v1, static_cast<Index>(*ptr), t, a);
    add(m.v2, static_cast<Index>(*col), t, a);
  };

  for (const TargetEvent& ev : events) {
    const TargetTrack track = resolve_track(ev, spec, T);
    const double a = ev.magnitude;
    for (std::size_t s = 0; s < track.states.size(); ++s) {
      const Index t = ev.onset + static_cast<Index>(s);
      const std::size_t st = track.states[s];
      const Index p = ev.position_path[s];
      const Vector& e = spec.emissions[st];
      add(m.x2, p, t, a * e.sum());
      net.variable(m.x3).value.col(t) += a * e;
      add(m.x4, static_cast<Index>(st), t, a);
      add(m.x5, static_cast<Index>(spec.state_label[st]), t, a);
      for (Index i = 0; i < spec.pattern_size; ++i)
        if (e(i) > 0.0) add(m.u1, pattern_column(i, p, P), t, a * e(i));
      add(m.u2, static_cast<Index>(st), t, a);
      add(m.u3, static_cast<Index>(st), t, a);
      if (s > 0)
        between(t - 1, track.transitions[s - 1],
                static_cast<std::size_t>(ev.position_path[s - 1]), static_cast<std::size_t>(p), a);
    }
    if (track.on)
      between(ev.onset - 1, *track.on, off_state, static_cast<std::size_t>(ev.position_path.front()), a);
    if (track.off) {
      const Index last = ev.onset + static_cast<Index>(track.states.size()) - 1;
      between(last, *track.off, static_cast<std::size_t>(ev.position_path[track.states.size() - 1]),
              off_state, a);
    }
  }
  net.variable(m.x1).value = synth_target_observations(events, spec, T);
  make_consistent(net);
}

/// Three targets over 26 slices: A-type magnitude 1.0 alive at slices 3-7,
/// A-type 0.6 at 4-8 (two targets during 4-7), and a B-type 0.8 at 13-25
/// that repeats its loop three times while drifting in position.
inline std::vector<TargetEvent> default_tracker_scene() {
  std::vector<TargetEvent> events;
  events.push_back({0, 2, 1.0, std::vector<Index>(5, 2)});
  events.push_back({0, 3, 0.6, std::vector<Index>(5, 5)});
  std::vector<Index> b;
  for (int i = 0; i < 4; ++i) b.push_back(9);
  for (int i = 0; i < 3; ++i) b.push_back(10);
  for (int i = 0; i < 3; ++i) b.push_back(11);
  for (int i = 0; i < 3; ++i) b.push_back(10);
  events.push_back({1, 12, 0.8, b});
  return events;
}

inline constexpr Index kDefaultSceneSlices = 26;

// ---------------------------------------------------------------------------
// Sparse hierarchy data.

struct HierarchySynthesis {
  double top_density = 0.02;    // chance that a top-level entry is active
  double block_density = 0.15;  // chance that a block entry is nonzero
  double peak = 1.0;            // bottom level is rescaled to this maximum
};

/// Random sparse blocks and top-level activations, propagated down. Leaves
/// every level's generating value in the network and returns the bottom.
inline Matrix synth_hierarchy(HierarchyModel& m, const HierarchySynthesis& opt, std::uint64_t seed) {
  Rng rng(seed);
  FactorNetwork& net = m.net;
  for (std::size_t i = 0; i < m.w.size(); ++i) {
    for (BlockId id : m.w[i]) {
      Matrix& W = net.block(id).value;
      for (Index c = 0; c < W.cols(); ++c)
        for (Index r = 0; r < W.rows(); ++r)
          W(r, c) = rng.uniform() < opt.block_density ? rng.uniform_positive(1.0) : 0.0;
    }
    // Every column gets at least one entry somewhere among its blocks.
    const Index cols = net.block(m.w[i].front()).value.cols();
    const Index rows = net.block(m.w[i].front()).value.rows();
    for (Index c = 0; c < cols; ++c) {
      double s = 0.0;
      for (BlockId id : m.w[i]) s += net.block(id).value.col(c).sum();
      if (s == 0.0) {
        const BlockId id = m.w[i][rng.index(m.w[i].size())];
        net.block(id).value(static_cast<Index>(rng.index(static_cast<std::size_t>(rows))), c) = 1.0;
      }
    }
    InferenceConfig plain;
    detail::normalize_blocks(net, m.w[i], 0.0, plain);
  }
  Variable& top = net.variable(m.x.back());
  for (Index c = 0; c < top.slices; ++c)
    for (Index r = 0; r < top.dim; ++r)
      top.value(r, c) = rng.uniform() < opt.top_density ? rng.uniform_positive(1.0) : 0.0;
  compile(net);
  propagate_down(net);
  const double peak = net.variable(m.x.front()).value.maxCoeff();
  if (peak > 0.0) {
    for (VarId v : m.x) net.variable(v).value *= opt.peak / peak;
    make_consistent(net);
  }
  return net.variable(m.x.front()).value;
}

}  // namespace pfn
