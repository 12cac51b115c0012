#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowmine/error.hpp"
#include "flowmine/message.hpp"

namespace flowmine {

enum class CausalityDirection {
  forward,  // mi.dest == mj.src: the receiver of mi originates mj
  literal,  // mi.src == mj.dest
};

/// Structural causality between two messages. Self-pairs are never causal.
inline bool causal(const Message& mi, const Message& mj,
                   CausalityDirection dir = CausalityDirection::forward) {
  if (mi == mj) return false;
  return dir == CausalityDirection::forward ? mi.dest == mj.src : mi.src == mj.dest;
}

/// Directed graph over unique messages with an edge wherever causal() holds.
/// May contain cycles through shared components.
class CausalityGraph {
 public:
  CausalityGraph() = default;

  CausalityGraph(std::span<const Message> messages, CausalityDirection dir)
      : nodes_(messages.begin(), messages.end()), direction_(dir) {
    std::sort(nodes_.begin(), nodes_.end());
    nodes_.erase(std::unique(nodes_.begin(), nodes_.end()), nodes_.end());
    out_.resize(nodes_.size());
    in_.resize(nodes_.size());
    for (std::size_t u = 0; u < nodes_.size(); ++u) {
      for (std::size_t v = 0; v < nodes_.size(); ++v) {
        if (causal(nodes_[u], nodes_[v], dir)) {
          out_[u].push_back(v);
          in_[v].push_back(u);
        }
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Message>& nodes() const { return nodes_; }
  const Message& node(std::size_t i) const { return nodes_[i]; }
  CausalityDirection direction() const { return direction_; }

  std::optional<std::size_t> index_of(const Message& m) const {
    auto it = std::lower_bound(nodes_.begin(), nodes_.end(), m);
    if (it == nodes_.end() || *it != m) return std::nullopt;
    return static_cast<std::size_t>(it - nodes_.begin());
  }

  bool contains(const Message& m) const { return index_of(m).has_value(); }

  /// Out-neighbours in canonical (lexicographic) order.
  const std::vector<std::size_t>& successors(std::size_t u) const { return out_[u]; }
  const std::vector<std::size_t>& predecessors(std::size_t v) const { return in_[v]; }

  bool has_edge(const Message& u, const Message& v) const {
    auto iu = index_of(u);
    auto iv = index_of(v);
    if (!iu || !iv) return false;
    const auto& s = out_[*iu];
    return std::binary_search(s.begin(), s.end(), *iv);
  }

  std::size_t edge_count() const {
    std::size_t n = 0;
    for (const auto& s : out_) n += s.size();
    return n;
  }

  std::vector<std::pair<Message, Message>> edges() const {
    std::vector<std::pair<Message, Message>> out;
    for (std::size_t u = 0; u < nodes_.size(); ++u)
      for (auto v : out_[u]) out.emplace_back(nodes_[u], nodes_[v]);
    return out;
  }

 private:
  std::vector<Message> nodes_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::vector<std::size_t>> in_;
  CausalityDirection direction_ = CausalityDirection::forward;
};

inline CausalityGraph build_causality_graph(
    std::span<const Message> messages,
    CausalityDirection dir = CausalityDirection::forward) {
  if (messages.empty()) throw data_error("causality graph needs at least one message");
  return CausalityGraph(messages, dir);
}

/// One `u -> v` line per edge, lexicographic. Isolated nodes are listed bare.
inline std::string render_edges(const std::vector<std::pair<Message, Message>>& edges,
                                const std::vector<Message>& nodes = {}) {
  std::vector<std::string> lines;
  std::vector<Message> touched;
  for (const auto& [u, v] : edges) {
    lines.push_back(u.str() + " -> " + v.str());
    touched.push_back(u);
    touched.push_back(v);
  }
  std::sort(touched.begin(), touched.end());
  for (const auto& n : nodes)
    if (!std::binary_search(touched.begin(), touched.end(), n)) lines.push_back(n.str());
  std::sort(lines.begin(), lines.end());
  lines.erase(std::unique(lines.begin(), lines.end()), lines.end());
  std::string out = "digraph {\n";
  for (const auto& l : lines) out += "  " + l + "\n";
  out += "}\n";
  return out;
}

inline std::string render_graph(const CausalityGraph& g) {
  return render_edges(g.edges(), g.nodes());
}

}  // namespace flowmine
