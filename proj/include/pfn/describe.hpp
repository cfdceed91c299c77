#pragma once

// JSON descriptions of networks, diagrams, coupling tables and target scenes.
// Slices, states and transitions are 1-based in every description.

#include "pfn/builders.hpp"
#include "pfn/datagen.hpp"
#include "pfn/network.hpp"

#include "json.hpp"

#include <fstream>
#include <regex>
#include <set>
#include <string>
#include <vector>

namespace pfn {

using Json = nlohmann::json;

namespace detail {

inline void reject_unknown_keys(const Json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ValidationError(where + ": unknown key '" + key + "'");
}

template <typename T>
T get_field(const Json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + ": missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ValidationError(where + ": bad '" + key + "': " + e.what());
  }
}

inline const Json& require_array(const Json& j, const std::string& key) {
  if (!j.contains(key) || !j.at(key).is_array()) throw ValidationError("network: '" + key + "' must be an array");
  return j.at(key);
}

template <typename T>
T get_or(const Json& j, const std::string& key, T fallback, const std::string& where) {
  return j.contains(key) ? get_field<T>(j, key, where) : fallback;
}

inline Matrix matrix_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty() || !j.front().is_array())
    throw ValidationError(where + ": matrix must be a non-empty array of rows");
  Matrix M(static_cast<Index>(j.size()), static_cast<Index>(j.front().size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != j.front().size())
      throw ValidationError(where + ": ragged matrix at row " + std::to_string(r + 1));
    for (std::size_t c = 0; c < j[r].size(); ++c) {
      if (!j[r][c].is_number()) throw ValidationError(where + ": non-numeric entry");
      M(static_cast<Index>(r), static_cast<Index>(c)) = j[r][c].get<double>();
    }
  }
  return M;
}

inline Json matrix_to_json(const Matrix& M) {
  Json rows = Json::array();
  for (Index r = 0; r < M.rows(); ++r) {
    Json row = Json::array();
    for (Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Normalization

inline NormalizationPolicy normalization_from_json(const Json& j, const std::string& where) {
  if (j.is_string()) {
    const auto kind = j.get<std::string>();
    if (kind == "none") return NormalizationPolicy::none();
    if (kind == "unit_column_sum") return NormalizationPolicy::unit_column_sum();
    if (kind == "joint_column_sum") return NormalizationPolicy::joint_column_sum();
    throw ValidationError(where + ": unknown normalization '" + kind + "'");
  }
  detail::reject_unknown_keys(j, {"kind", "partition"}, where);
  const auto kind = detail::get_field<std::string>(j, "kind", where);
  if (kind == "equal_subcolumn_sums")
    return NormalizationPolicy::equal_subcolumn_sums(
        detail::get_field<std::vector<Index>>(j, "partition", where));
  if (j.contains("partition")) throw ValidationError(where + ": partition only applies to equal_subcolumn_sums");
  return normalization_from_json(Json(kind), where);
}

inline Json normalization_to_json(const NormalizationPolicy& p) {
  using Kind = NormalizationPolicy::Kind;
  switch (p.kind) {
    case Kind::none: return "none";
    case Kind::unit_column_sum: return "unit_column_sum";
    case Kind::joint_column_sum: return "joint_column_sum";
    case Kind::equal_subcolumn_sums: return Json{{"kind", "equal_subcolumn_sums"}, {"partition", p.partition}};
  }
  return "none";
}

// ---------------------------------------------------------------------------
// Transition diagrams: {"states": ["S1", ...], "transitions": [["S1", "S2"], ["off", "S1"]]}.
// "state_count" may replace "states"; names then default to S1..SM.

inline TransitionDiagram diagram_from_json(const Json& j) {
  const std::string where = "diagram";
  detail::reject_unknown_keys(j, {"states", "state_count", "transitions"}, where);
  TransitionDiagram d;
  if (j.contains("states")) {
    d.state_names = detail::get_field<std::vector<std::string>>(j, "states", where);
    d.state_count = d.state_names.size();
    if (j.contains("state_count") && j.at("state_count").get<std::size_t>() != d.state_count)
      throw ValidationError(where + ": state_count disagrees with states");
  } else {
    d.state_count = detail::get_field<std::size_t>(j, "state_count", where);
  }
  auto lookup = [&](const std::string& name) -> StateRef {
    if (name == "off") return off_state;
    if (auto i = d.find_state(name)) return *i;
    throw ValidationError(where + ": unknown state '" + name + "'");
  };
  for (const auto& t : detail::get_field<std::vector<std::vector<std::string>>>(j, "transitions", where)) {
    if (t.size() != 2) throw ValidationError(where + ": a transition is a [from, to] pair");
    d.transitions.push_back({lookup(t[0]), lookup(t[1])});
  }
  d.validate();
  return d;
}

inline Json diagram_to_json(const TransitionDiagram& d) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < d.state_count; ++i) names.push_back(d.state_name(i));
  Json transitions = Json::array();
  for (const Transition& t : d.transitions)
    transitions.push_back({t.from ? d.state_name(*t.from) : "off", t.to ? d.state_name(*t.to) : "off"});
  return Json{{"states", names}, {"transitions", transitions}};
}

// {"pairs": [[upper, lower], ...]}
inline CouplingTable coupling_from_json(const Json& j) {
  detail::reject_unknown_keys(j, {"pairs"}, "coupling");
  CouplingTable table;
  for (const auto& p : detail::get_field<std::vector<std::vector<std::size_t>>>(j, "pairs", "coupling")) {
    if (p.size() != 2 || p[0] < 1 || p[1] < 1)
      throw ValidationError("coupling: pairs are 1-based [upper, lower]");
    table.pairs.push_back({p[0] - 1, p[1] - 1});
  }
  return table;
}

inline Json coupling_to_json(const CouplingTable& table) {
  Json pairs = Json::array();
  for (const auto& [u, l] : table.pairs) pairs.push_back({u + 1, l + 1});
  return Json{{"pairs", pairs}};
}

// [{"type": 1, "onset": 3, "magnitude": 1.0, "positions": [3, 3, 3, 3, 3]}, ...]
inline std::vector<TargetEvent> events_from_json(const Json& j) {
  if (!j.is_array()) throw ValidationError("events: expected an array");
  std::vector<TargetEvent> events;
  for (std::size_t k = 0; k < j.size(); ++k) {
    const std::string where = "events[" + std::to_string(k + 1) + "]";
    detail::reject_unknown_keys(j[k], {"type", "onset", "magnitude", "positions"}, where);
    TargetEvent ev;
    const auto type = detail::get_field<std::size_t>(j[k], "type", where);
    const auto onset = detail::get_field<Index>(j[k], "onset", where);
    if (type < 1 || onset < 1) throw ValidationError(where + ": type and onset are 1-based");
    ev.type = type - 1;
    ev.onset = onset - 1;
    ev.magnitude = detail::get_or<double>(j[k], "magnitude", 1.0, where);
    for (Index p : detail::get_field<std::vector<Index>>(j[k], "positions", where)) {
      if (p < 1) throw ValidationError(where + ": positions are 1-based");
      ev.position_path.push_back(p - 1);
    }
    events.push_back(std::move(ev));
  }
  return events;
}

inline Json events_to_json(const std::vector<TargetEvent>& events) {
  Json out = Json::array();
  for (const TargetEvent& ev : events) {
    std::vector<Index> positions;
    for (Index p : ev.position_path) positions.push_back(p + 1);
    out.push_back({{"type", ev.type + 1}, {"onset", ev.onset + 1}, {"magnitude", ev.magnitude},
                   {"positions", positions}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// User networks.
//
// {
//   "variables": [{"name": "X", "dim": 4, "slices": 10, "role": "hidden"}],
//   "blocks": [{"name": "W", "value": [[...]], "learnable": false,
//               "tie": "", "normalization": "unit_column_sum", "update_period": 1}],
//   "equations": [{"name": "chain", "for": [1, 9],
//                  "child": ["X[t]", "X[t+1]"], "parents": ["H[t]"], "blocks": ["W"]}]
// }
//
// A block may give "rows"/"cols"/"fill" instead of "value". Slot references
// are NAME, NAME[k] or, inside a "for" range, NAME[t], NAME[t+k], NAME[t-k].
// A parent index below 1 is the zero padding of that variable.

struct SlotSpec {
  std::string var;
  bool relative = false;
  Index offset = 1;  // absolute slice, or shift from t
};

inline SlotSpec parse_slot(const std::string& text) {
  static const std::regex pattern(R"(^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\[\s*(?:(t)\s*(?:([+-])\s*(\d+))?|(\d+))\s*\])?\s*$)");
  std::smatch m;
  if (!std::regex_match(text, m, pattern))
    throw ValidationError("bad slot reference '" + text + "' (use NAME, NAME[k] or NAME[t+k])");
  SlotSpec s;
  s.var = m[1];
  if (m[2].matched) {
    s.relative = true;
    s.offset = m[4].matched ? std::stol(m[4]) : 0;
    if (m[3].matched && m[3] == "-") s.offset = -s.offset;
  } else if (m[5].matched) {
    s.offset = std::stol(m[5]);
  }
  return s;
}

inline FactorNetwork network_from_json(const Json& j) {
  detail::reject_unknown_keys(j, {"variables", "blocks", "equations"}, "network");
  FactorNetwork net;
  const Json& vars = detail::require_array(j, "variables");
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const std::string where = "variables[" + std::to_string(i + 1) + "]";
    detail::reject_unknown_keys(vars[i], {"name", "dim", "slices", "role"}, where);
    const auto role = detail::get_or<std::string>(vars[i], "role", "hidden", where);
    if (role != "hidden" && role != "observed")
      throw ValidationError(where + ": role must be hidden or observed");
    net.add_variable(detail::get_field<std::string>(vars[i], "name", where),
                     detail::get_field<Index>(vars[i], "dim", where),
                     role == "observed" ? Role::observed : Role::hidden,
                     detail::get_or<Index>(vars[i], "slices", 1, where));
  }
  const Json& blocks = detail::require_array(j, "blocks");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string where = "blocks[" + std::to_string(i + 1) + "]";
    detail::reject_unknown_keys(blocks[i],
                                {"name", "value", "rows", "cols", "fill", "learnable", "tie",
                                 "normalization", "update_period"},
                                where);
    ParamBlock b;
    b.name = detail::get_field<std::string>(blocks[i], "name", where);
    if (blocks[i].contains("value")) {
      b.value = detail::matrix_from_json(blocks[i].at("value"), where);
    } else {
      b.value = Matrix::Constant(detail::get_field<Index>(blocks[i], "rows", where),
                                 detail::get_field<Index>(blocks[i], "cols", where),
                                 detail::get_or<double>(blocks[i], "fill", 1.0, where));
    }
    b.learnable = detail::get_or<bool>(blocks[i], "learnable", false, where);
    b.tie_group = detail::get_or<std::string>(blocks[i], "tie", "", where);
    if (blocks[i].contains("normalization"))
      b.normalization = normalization_from_json(blocks[i].at("normalization"), where);
    b.update_period = detail::get_or<int>(blocks[i], "update_period", 1, where);
    net.add_block(std::move(b));
  }
  const Json& eqs = detail::require_array(j, "equations");
  for (std::size_t i = 0; i < eqs.size(); ++i) {
    const std::string where = "equations[" + std::to_string(i + 1) + "]";
    detail::reject_unknown_keys(eqs[i], {"name", "for", "child", "parents", "blocks"}, where);
    const auto name = detail::get_or<std::string>(eqs[i], "name", "", where);
    Index from = 1, to = 1;
    const bool ranged = eqs[i].contains("for");
    if (ranged) {
      const auto range = detail::get_field<std::vector<Index>>(eqs[i], "for", where);
      if (range.size() != 2 || range[0] > range[1])
        throw ValidationError(where + ": 'for' is [first, last]");
      from = range[0];
      to = range[1];
    }
    std::vector<BlockId> block_ids;
    for (const auto& b : detail::get_field<std::vector<std::string>>(eqs[i], "blocks", where))
      block_ids.push_back(net.require_block(b));
    const auto child = detail::get_field<std::vector<std::string>>(eqs[i], "child", where);
    const auto parents = detail::get_field<std::vector<std::string>>(eqs[i], "parents", where);
    auto resolve = [&](const std::string& text, Index t, bool parent) {
      const SlotSpec s = parse_slot(text);
      if (s.relative && !ranged) throw ValidationError(where + ": '" + text + "' uses t outside a 'for' range");
      const VarId v = net.require_variable(s.var);
      const Index slice = s.relative ? t + s.offset : s.offset;
      if (slice < 1) {
        if (!parent) throw ValidationError(where + ": child slot '" + text + "' before slice 1");
        return zero_padding(v);
      }
      if (slice > net.variable(v).slices)
        throw ValidationError(where + ": '" + text + "' at t=" + std::to_string(t) + " past the last slice");
      return at(v, slice - 1);
    };
    for (Index t = from; t <= to; ++t) {
      std::vector<SliceRef> c, p;
      for (const auto& s : child) c.push_back(resolve(s, t, false));
      for (const auto& s : parents) p.push_back(resolve(s, t, true));
      net.add_equation(std::move(c), std::move(p), block_ids, name);
    }
  }
  return net;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace pfn
