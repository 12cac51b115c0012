#pragma once

#include <algorithm>
#include <cstdio>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flowmine/causality.hpp"
#include "flowmine/encoder.hpp"
#include "flowmine/error.hpp"
#include "flowmine/flow_model.hpp"
#include "flowmine/tokenizer.hpp"

namespace flowmine {

struct FlowPair {
  std::string name;  // flow name for the mined spec; may be empty
  Message start;
  Message end;
};

enum class ContextMode {
  prefix,       // whole path so far (truncated to the model window)
  predecessor,  // only the last message on the path
};

struct MiningConfig {
  double theta = 0.75;
  std::vector<FlowPair> pairs;
  ScoreMode score_mode = ScoreMode::renormalized;
  ContextMode context = ContextMode::prefix;
  std::optional<std::size_t> max_path_len;  // nodes per path; defaults to |G|
};

using Edge = std::pair<Message, Message>;

struct MinedFlow {
  Message start;
  Message end;
  std::vector<std::vector<Message>> accepted_paths;  // lexicographic
  std::vector<Edge> edges;                           // union of accepted-path edges, sorted
  std::map<Edge, double> edge_scores;                // best score seen on an accepted path
  bool unreached = true;

  std::vector<Message> nodes() const {
    std::vector<Message> out;
    for (const auto& p : accepted_paths) out.insert(out.end(), p.begin(), p.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
};

/// Breadth-first expansion of simple paths from `start`. A successor is
/// followed only when the model scores it at or above theta; paths that stop
/// short of `end` are dropped.
inline MinedFlow mine_flow(const CausalityGraph& g, const EncoderModel& model,
                           const MessageVocab& vocab, const Message& start, const Message& end,
                           const MiningConfig& mc) {
  const auto s = g.index_of(start);
  const auto e = g.index_of(end);
  if (!s) throw data_error("start message " + start.str() + " is not in the causality graph");
  if (!e) throw data_error("end message " + end.str() + " is not in the causality graph");
  const std::size_t max_len = mc.max_path_len.value_or(g.size());

  std::vector<TokenId> token(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto id = vocab.id_of(g.node(i));
    if (!id) throw data_error("graph node " + g.node(i).str() + " is missing from the vocabulary");
    token[i] = *id;
  }

  struct Partial {
    std::vector<std::size_t> nodes;
    std::vector<double> scores;  // scores[i] belongs to edge nodes[i] -> nodes[i+1]
  };

  MinedFlow out{start, end, {}, {}, {}, true};
  std::deque<Partial> frontier;
  frontier.push_back({{*s}, {}});
  std::vector<TokenId> context;
  std::vector<TokenId> cand_tokens;
  std::vector<std::size_t> candidates;

  while (!frontier.empty()) {
    Partial p = std::move(frontier.front());
    frontier.pop_front();
    const auto u = p.nodes.back();
    if (u == *e) {
      std::vector<Message> path;
      for (auto n : p.nodes) path.push_back(g.node(n));
      for (std::size_t i = 0; i + 1 < p.nodes.size(); ++i) {
        Edge edge{g.node(p.nodes[i]), g.node(p.nodes[i + 1])};
        auto [it, fresh] = out.edge_scores.emplace(edge, p.scores[i]);
        if (!fresh) it->second = std::max(it->second, p.scores[i]);
      }
      out.accepted_paths.push_back(std::move(path));
      continue;
    }
    if (p.nodes.size() >= max_len) continue;

    candidates.clear();
    for (auto v : g.successors(u))
      if (std::find(p.nodes.begin(), p.nodes.end(), v) == p.nodes.end()) candidates.push_back(v);
    if (candidates.empty()) continue;

    context.clear();
    if (mc.context == ContextMode::prefix) {
      for (auto n : p.nodes) context.push_back(token[n]);
    } else {
      context.push_back(token[u]);
    }
    cand_tokens.clear();
    for (auto v : candidates) cand_tokens.push_back(token[v]);
    const auto scores = score_next(model, vocab, context, cand_tokens, mc.score_mode);

    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (scores[i] < mc.theta) continue;
      Partial next = p;
      next.nodes.push_back(candidates[i]);
      next.scores.push_back(scores[i]);
      frontier.push_back(std::move(next));
    }
  }

  std::sort(out.accepted_paths.begin(), out.accepted_paths.end());
  for (const auto& [edge, _] : out.edge_scores) out.edges.push_back(edge);
  out.unreached = out.accepted_paths.empty();
  return out;
}

struct MiningResult {
  FlowSet flows;                // one spec per distinct start that reached an end
  std::vector<MinedFlow> mined;  // one entry per configured pair, in pair order
};

/// Builds a FlowSpec from the union of accepted paths sharing one start.
inline FlowSpec assemble_flow(const std::string& name, const std::vector<const MinedFlow*>& parts) {
  FlowSpec f;
  f.name = name;
  std::vector<std::vector<Message>> paths;
  for (const auto* m : parts) paths.insert(paths.end(), m->accepted_paths.begin(), m->accepted_paths.end());
  std::sort(paths.begin(), paths.end());

  std::map<Message, LocalId> ids;
  auto id_of = [&](const Message& m) {
    auto [it, fresh] = ids.emplace(m, static_cast<LocalId>(f.nodes.size()));
    if (fresh) f.nodes.push_back({it->second, m});
    return it->second;
  };
  for (const auto& p : paths) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto v = id_of(p[i]);
      if (i > 0) f.edges.emplace_back(ids.at(p[i - 1]), v);
    }
  }
  std::sort(f.edges.begin(), f.edges.end());
  f.edges.erase(std::unique(f.edges.begin(), f.edges.end()), f.edges.end());
  if (!paths.empty()) f.start = ids.at(paths.front().front());
  for (const auto* m : parts) {
    if (m->unreached) continue;
    const auto id = ids.at(m->end);
    if (!f.is_end(id)) f.ends.push_back(id);
  }
  std::sort(f.ends.begin(), f.ends.end());
  return f;
}

/// Mines every (start, end) pair and merges pairs that share a start into one flow.
inline MiningResult mine_all(const CausalityGraph& g, const EncoderModel& model,
                             const MessageVocab& vocab, const MiningConfig& mc) {
  if (mc.pairs.empty()) throw usage_error("mining needs at least one (start, end) pair");
  MiningResult r;
  for (const auto& pair : mc.pairs) r.mined.push_back(mine_flow(g, model, vocab, pair.start, pair.end, mc));

  std::vector<Message> starts;
  for (const auto& pair : mc.pairs)
    if (std::find(starts.begin(), starts.end(), pair.start) == starts.end()) starts.push_back(pair.start);
  for (const auto& start : starts) {
    std::vector<const MinedFlow*> parts;
    std::string name;
    for (std::size_t i = 0; i < mc.pairs.size(); ++i) {
      if (mc.pairs[i].start != start) continue;
      if (name.empty()) name = mc.pairs[i].name;
      if (!r.mined[i].unreached) parts.push_back(&r.mined[i]);
    }
    if (parts.empty()) continue;
    if (name.empty()) name = "flow_" + std::to_string(r.flows.flows.size());
    r.flows.flows.push_back(assemble_flow(name, parts));
  }
  return r;
}

/// Edges of G on some start-to-end route: the unpruned causality subgraph.
inline std::vector<Edge> causal_subgraph(const CausalityGraph& g, const Message& start,
                                         const Message& end) {
  const auto s = g.index_of(start);
  const auto e = g.index_of(end);
  if (!s || !e) return {};
  auto reach = [&](std::size_t from, bool forward) {
    std::vector<bool> seen(g.size(), false);
    std::vector<std::size_t> stack{from};
    seen[from] = true;
    while (!stack.empty()) {
      auto u = stack.back();
      stack.pop_back();
      for (auto v : forward ? g.successors(u) : g.predecessors(u))
        if (!seen[v]) {
          seen[v] = true;
          stack.push_back(v);
        }
    }
    return seen;
  };
  const auto fwd = reach(*s, true);
  const auto bwd = reach(*e, false);
  std::vector<Edge> out;
  for (std::size_t u = 0; u < g.size(); ++u) {
    if (!fwd[u] || !bwd[u] || u == *e) continue;
    for (auto v : g.successors(u))
      if (fwd[v] && bwd[v] && v != *s) out.emplace_back(g.node(u), g.node(v));
  }
  return out;
}

/// `u -> v<TAB>score` lines, one block per mined pair.
inline std::string render_score_report(const MiningResult& r) {
  std::string out;
  char buf[64];
  for (const auto& m : r.mined) {
    out += "# " + m.start.str() + " => " + m.end.str() + (m.unreached ? " unreached" : "") + "\n";
    for (const auto& [edge, score] : m.edge_scores) {
      std::snprintf(buf, sizeof buf, "%.6f", score);
      out += edge.first.str() + " -> " + edge.second.str() + "\t" + buf + "\n";
    }
  }
  return out;
}

}  // namespace flowmine
