#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowmine/causality.hpp"
#include "flowmine/error.hpp"
#include "flowmine/message.hpp"

namespace flowmine {

using LocalId = int;

struct FlowNode {
  LocalId id;
  Message message;

  bool operator==(const FlowNode&) const = default;
};

/// A message flow: a DAG over messages with one start and one or more ends.
struct FlowSpec {
  std::string name;
  std::vector<FlowNode> nodes;
  std::vector<std::pair<LocalId, LocalId>> edges;
  LocalId start = 0;
  std::vector<LocalId> ends;

  bool operator==(const FlowSpec&) const = default;

  const FlowNode* find(LocalId id) const {
    for (const auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }

  const Message& message(LocalId id) const {
    const auto* n = find(id);
    if (!n) throw data_error("flow '" + name + "' has no node " + std::to_string(id));
    return n->message;
  }

  bool is_end(LocalId id) const {
    return std::find(ends.begin(), ends.end(), id) != ends.end();
  }

  /// Sorted successor ids of every node.
  std::map<LocalId, std::vector<LocalId>> adjacency() const {
    std::map<LocalId, std::vector<LocalId>> adj;
    for (const auto& n : nodes) adj[n.id];
    for (const auto& [u, v] : edges) adj[u].push_back(v);
    for (auto& [_, s] : adj) {
      std::sort(s.begin(), s.end());
      s.erase(std::unique(s.begin(), s.end()), s.end());
    }
    return adj;
  }
};

struct FlowSet {
  std::vector<FlowSpec> flows;

  bool operator==(const FlowSet&) const = default;

  const FlowSpec* find(const std::string& name) const {
    for (const auto& f : flows)
      if (f.name == name) return &f;
    return nullptr;
  }

  /// Distinct messages in order of first appearance.
  std::vector<Message> universe() const {
    std::vector<Message> out;
    for (const auto& f : flows)
      for (const auto& n : f.nodes)
        if (std::find(out.begin(), out.end(), n.message) == out.end())
          out.push_back(n.message);
    return out;
  }
};

/// Local-id path from start to an end.
using Branch = std::vector<LocalId>;

enum class ViolationKind {
  empty,
  duplicate_id,
  duplicate_message,
  dangling_edge,
  self_loop,
  cycle,
  missing_start,
  start_has_incoming,
  no_ends,
  missing_end,
  off_path_node,
  non_causal_edge,
};

inline const char* to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::empty: return "empty";
    case ViolationKind::duplicate_id: return "duplicate-id";
    case ViolationKind::duplicate_message: return "duplicate-message";
    case ViolationKind::dangling_edge: return "dangling-edge";
    case ViolationKind::self_loop: return "self-loop";
    case ViolationKind::cycle: return "cycle";
    case ViolationKind::missing_start: return "missing-start";
    case ViolationKind::start_has_incoming: return "start-has-incoming";
    case ViolationKind::no_ends: return "no-ends";
    case ViolationKind::missing_end: return "missing-end";
    case ViolationKind::off_path_node: return "off-path-node";
    case ViolationKind::non_causal_edge: return "non-causal-edge";
  }
  return "?";
}

struct Violation {
  ViolationKind kind;
  std::string detail;
};

namespace detail {

inline std::string edge_str(LocalId u, LocalId v) {
  return std::to_string(u) + "->" + std::to_string(v);
}

// Nodes reachable from `from` following `adj`.
inline std::set<LocalId> reach(const std::map<LocalId, std::vector<LocalId>>& adj,
                               const std::vector<LocalId>& from) {
  std::set<LocalId> seen(from.begin(), from.end());
  std::vector<LocalId> stack(from.begin(), from.end());
  while (!stack.empty()) {
    auto u = stack.back();
    stack.pop_back();
    auto it = adj.find(u);
    if (it == adj.end()) continue;
    for (auto v : it->second)
      if (seen.insert(v).second) stack.push_back(v);
  }
  return seen;
}

}  // namespace detail

/// Checks every structural invariant of a flow; an empty result means valid.
inline std::vector<Violation> validate_flow(
    const FlowSpec& f, CausalityDirection dir = CausalityDirection::forward) {
  std::vector<Violation> out;
  auto add = [&](ViolationKind k, std::string d) { out.push_back({k, std::move(d)}); };

  if (f.nodes.empty()) {
    add(ViolationKind::empty, "flow '" + f.name + "' has no messages");
    return out;
  }

  std::set<LocalId> ids;
  for (const auto& n : f.nodes)
    if (!ids.insert(n.id).second)
      add(ViolationKind::duplicate_id, "node " + std::to_string(n.id));
  for (std::size_t i = 0; i < f.nodes.size(); ++i)
    for (std::size_t j = i + 1; j < f.nodes.size(); ++j)
      if (f.nodes[i].message == f.nodes[j].message)
        add(ViolationKind::duplicate_message,
            "nodes " + std::to_string(f.nodes[i].id) + " and " +
                std::to_string(f.nodes[j].id) + " are both " + f.nodes[i].message.str());

  bool edges_ok = true;
  for (const auto& [u, v] : f.edges) {
    if (!ids.count(u) || !ids.count(v)) {
      add(ViolationKind::dangling_edge, "edge " + detail::edge_str(u, v));
      edges_ok = false;
      continue;
    }
    if (u == v) add(ViolationKind::self_loop, "edge " + detail::edge_str(u, v));
  }

  if (!ids.count(f.start))
    add(ViolationKind::missing_start, "start " + std::to_string(f.start));
  if (f.ends.empty()) add(ViolationKind::no_ends, "flow '" + f.name + "'");
  for (auto e : f.ends)
    if (!ids.count(e)) add(ViolationKind::missing_end, "end " + std::to_string(e));
  if (!edges_ok) return out;

  for (const auto& [u, v] : f.edges) {
    if (v == f.start)
      add(ViolationKind::start_has_incoming, "edge " + detail::edge_str(u, v));
    if (u != v && !causal(f.message(u), f.message(v), dir))
      add(ViolationKind::non_causal_edge,
          "edge " + detail::edge_str(u, v) + " (" + f.message(u).str() + " -> " +
              f.message(v).str() + ")");
  }

  // Kahn's algorithm; whatever is left over sits on a cycle.
  auto adj = f.adjacency();
  std::map<LocalId, int> indeg;
  for (const auto& [u, succ] : adj) {
    indeg[u];
    for (auto v : succ) ++indeg[v];
  }
  std::vector<LocalId> ready;
  for (const auto& [u, d] : indeg)
    if (d == 0) ready.push_back(u);
  std::size_t removed = 0;
  while (!ready.empty()) {
    auto u = ready.back();
    ready.pop_back();
    ++removed;
    for (auto v : adj[u])
      if (--indeg[v] == 0) ready.push_back(v);
  }
  if (removed != adj.size()) {
    std::string on_cycle;
    for (const auto& [u, d] : indeg)
      if (d > 0) on_cycle += (on_cycle.empty() ? "" : ",") + std::to_string(u);
    add(ViolationKind::cycle, "nodes {" + on_cycle + "}");
  }

  if (ids.count(f.start) && !f.ends.empty()) {
    std::map<LocalId, std::vector<LocalId>> radj;
    for (const auto& [u, succ] : adj) {
      radj[u];
      for (auto v : succ) radj[v].push_back(u);
    }
    const auto fwd = detail::reach(adj, {f.start});
    const auto bwd = detail::reach(radj, f.ends);
    for (const auto& n : f.nodes)
      if (!fwd.count(n.id) || !bwd.count(n.id))
        add(ViolationKind::off_path_node,
            "node " + std::to_string(n.id) + " is not on a start-to-end path");
  }
  return out;
}

/// Every simple start-to-end path, lexicographic by id sequence. A path that
/// passes through one end on its way to another is reported at both ends.
inline std::vector<Branch> branches(const FlowSpec& f) {
  std::vector<Branch> out;
  if (!f.find(f.start)) return out;
  const auto adj = f.adjacency();
  Branch path{f.start};
  std::set<LocalId> on_path{f.start};

  auto dfs = [&](auto&& self, LocalId u) -> void {
    if (f.is_end(u)) out.push_back(path);
    auto it = adj.find(u);
    if (it == adj.end()) return;
    for (auto v : it->second) {
      if (on_path.count(v)) continue;
      path.push_back(v);
      on_path.insert(v);
      self(self, v);
      on_path.erase(v);
      path.pop_back();
    }
  };
  dfs(dfs, f.start);
  return out;
}

/// A branch rendered as its message sequence.
inline std::vector<Message> branch_messages(const FlowSpec& f, const Branch& b) {
  std::vector<Message> out;
  out.reserve(b.size());
  for (auto id : b) out.push_back(f.message(id));
  return out;
}

// ---------------------------------------------------------------------------
// Flow file (JSON)

namespace detail {

using json = nlohmann::json;

inline void require_keys(const json& obj, std::initializer_list<const char*> keys,
                         const std::string& where) {
  if (!obj.is_object()) throw data_error(where + ": expected an object");
  for (const auto& [k, _] : obj.items()) {
    bool known = false;
    for (const char* want : keys) known = known || k == want;
    if (!known) throw data_error(where + ": unknown key '" + k + "'");
  }
  for (const char* want : keys)
    if (!obj.contains(want)) throw data_error(where + ": missing key '" + want + "'");
}

inline int as_int(const json& j, const std::string& where) {
  if (!j.is_number_integer()) throw data_error(where + ": expected an integer");
  return j.get<int>();
}

inline std::string as_string(const json& j, const std::string& where) {
  if (!j.is_string()) throw data_error(where + ": expected a string");
  return j.get<std::string>();
}

}  // namespace detail

inline FlowSpec flow_from_json(const nlohmann::json& jf, const std::string& where) {
  detail::require_keys(jf, {"name", "messages", "edges", "start", "ends"}, where);
  FlowSpec f;
  f.name = detail::as_string(jf["name"], where + ".name");
  const std::string at = "flow '" + f.name + "'";
  if (!jf["messages"].is_array()) throw data_error(at + ".messages: expected an array");
  std::set<LocalId> ids;
  for (const auto& jm : jf["messages"]) {
    detail::require_keys(jm, {"id", "src", "dest", "cmd"}, at + ".messages[]");
    FlowNode n{detail::as_int(jm["id"], at + ".id"),
               make_message(detail::as_string(jm["src"], at + ".src"),
                            detail::as_string(jm["dest"], at + ".dest"),
                            detail::as_string(jm["cmd"], at + ".cmd"))};
    if (!ids.insert(n.id).second)
      throw data_error(at + ": duplicate local id " + std::to_string(n.id));
    f.nodes.push_back(std::move(n));
  }
  if (!jf["edges"].is_array()) throw data_error(at + ".edges: expected an array");
  for (const auto& je : jf["edges"]) {
    if (!je.is_array() || je.size() != 2)
      throw data_error(at + ".edges: each edge must be [from, to]");
    LocalId u = detail::as_int(je[0], at + ".edges");
    LocalId v = detail::as_int(je[1], at + ".edges");
    if (!ids.count(u) || !ids.count(v))
      throw data_error(at + ": dangling edge " + detail::edge_str(u, v));
    f.edges.emplace_back(u, v);
  }
  f.start = detail::as_int(jf["start"], at + ".start");
  if (!jf["ends"].is_array()) throw data_error(at + ".ends: expected an array");
  for (const auto& je : jf["ends"]) f.ends.push_back(detail::as_int(je, at + ".ends"));
  return f;
}

/// Parses and validates a flow file. Throws on the first problem; never
/// returns a partial set.
inline FlowSet parse_flow_file(const std::string& text,
                               CausalityDirection dir = CausalityDirection::forward) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw data_error("flow file syntax error at byte " + std::to_string(e.byte) + ": " +
                     e.what());
  }
  detail::require_keys(j, {"flows"}, "flow file");
  if (!j["flows"].is_array()) throw data_error("flow file: 'flows' must be an array");
  FlowSet fs;
  std::set<std::string> names;
  std::size_t i = 0;
  for (const auto& jf : j["flows"]) {
    auto f = flow_from_json(jf, "flows[" + std::to_string(i++) + "]");
    if (!names.insert(f.name).second)
      throw data_error("duplicate flow name '" + f.name + "'");
    auto violations = validate_flow(f, dir);
    if (!violations.empty())
      throw data_error("flow '" + f.name + "' invalid: " + to_string(violations[0].kind) +
                       " " + violations[0].detail);
    fs.flows.push_back(std::move(f));
  }
  return fs;
}

inline nlohmann::ordered_json flow_to_json(const FlowSpec& f) {
  nlohmann::ordered_json jf;
  jf["name"] = f.name;
  jf["messages"] = nlohmann::ordered_json::array();
  for (const auto& n : f.nodes) {
    nlohmann::ordered_json jm;
    jm["id"] = n.id;
    jm["src"] = n.message.src;
    jm["dest"] = n.message.dest;
    jm["cmd"] = n.message.cmd;
    jf["messages"].push_back(jm);
  }
  jf["edges"] = nlohmann::ordered_json::array();
  for (const auto& [u, v] : f.edges) jf["edges"].push_back({u, v});
  jf["start"] = f.start;
  jf["ends"] = f.ends;
  return jf;
}

inline std::string render_flow_file(const FlowSet& fs) {
  nlohmann::ordered_json j;
  j["flows"] = nlohmann::ordered_json::array();
  for (const auto& f : fs.flows) j["flows"].push_back(flow_to_json(f));
  return j.dump(2) + "\n";
}

}  // namespace flowmine
