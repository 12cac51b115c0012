#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "flowmine/flowmine.hpp"

namespace fmtest {

using namespace flowmine;

inline Message msg(std::string_view s) { return parse_message(s); }

inline std::filesystem::path data_dir() { return FLOWMINE_DATA_DIR; }

inline FlowSet benchmark_flows() {
  return parse_flow_file(io::read_file(data_dir() / "benchmark_flows.json"));
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("flowmine_test_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Builds a flow from "a:b:c" strings; node ids are the list indices.
inline FlowSpec make_flow(const std::string& name, const std::vector<std::string>& messages,
                          const std::vector<std::pair<int, int>>& edges, int start,
                          std::vector<int> ends) {
  FlowSpec f;
  f.name = name;
  for (std::size_t i = 0; i < messages.size(); ++i)
    f.nodes.push_back({static_cast<LocalId>(i), msg(messages[i])});
  f.edges = edges;
  f.start = start;
  f.ends = std::move(ends);
  return f;
}

// Union-find over component slots, used to make random DAG edges causal.
struct Slots {
  std::vector<int> parent;
  int add() {
    parent.push_back(static_cast<int>(parent.size()));
    return parent.back();
  }
  int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

/// Random valid flow: a layered DAG whose every node lies on a start-to-end
/// path, with components assigned so every edge satisfies forward causality.
/// Messages are unique through a per-node command; `tag` keeps flows apart.
inline FlowSpec random_flow(Rng& rng, const std::string& tag, int max_nodes = 8) {
  const int n = 2 + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(max_nodes - 1)));
  // node 0 = start, node n-1 = end, middle nodes in topological order
  std::vector<std::pair<int, int>> edges;
  for (int v = 1; v < n; ++v) {
    const int u = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(v)));
    edges.emplace_back(u, v);
  }
  for (int u = 0; u < n - 1; ++u) {
    bool has_out = false;
    for (auto& e : edges) has_out = has_out || e.first == u;
    if (!has_out) edges.emplace_back(u, n - 1);
  }
  const int extra = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n)));
  for (int k = 0; k < extra; ++k) {
    int u = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n)));
    int v = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n)));
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    if (v == 0) continue;
    edges.emplace_back(u, v);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  Slots s;
  std::vector<int> src(n), dst(n);
  for (int i = 0; i < n; ++i) {
    src[i] = s.add();
    dst[i] = s.add();
  }
  for (auto [u, v] : edges) s.unite(dst[u], src[v]);
  std::map<int, std::string> name;
  auto comp = [&](int slot) {
    auto r = s.find(slot);
    auto it = name.find(r);
    if (it == name.end()) it = name.emplace(r, tag + "C" + std::to_string(name.size())).first;
    return it->second;
  };
  FlowSpec f;
  f.name = tag;
  for (int i = 0; i < n; ++i)
    f.nodes.push_back({i, make_message(comp(src[i]), comp(dst[i]), tag + "m" + std::to_string(i))});
  f.edges = edges;
  f.start = 0;
  f.ends = {n - 1};
  return f;
}

/// Set of 2..max_flows random flows over disjoint message universes.
inline FlowSet random_flow_set(Rng& rng, int max_flows = 3, int max_nodes = 8) {
  FlowSet fs;
  const int k = 1 + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(max_flows)));
  for (int i = 0; i < k; ++i)
    fs.flows.push_back(random_flow(rng, "f" + std::to_string(i), max_nodes));
  return fs;
}

/// Independent simple-path enumeration under forward causality; nullopt once
/// more than `budget` partial paths have been expanded.
inline std::optional<std::vector<std::vector<Message>>> brute_force_paths(
    const std::vector<Message>& nodes, const Message& start, const Message& end,
    std::size_t budget = std::numeric_limits<std::size_t>::max()) {
  std::vector<std::vector<Message>> out;
  std::vector<Message> path{start};
  std::size_t steps = 0;
  auto rec = [&](auto&& self) -> bool {
    if (++steps > budget) return false;
    const Message u = path.back();
    if (u == end) {
      out.push_back(path);
      return true;
    }
    for (const auto& v : nodes) {
      if (!(u.dest == v.src) || u == v) continue;
      if (std::find(path.begin(), path.end(), v) != path.end()) continue;
      path.push_back(v);
      const bool ok = self(self);
      path.pop_back();
      if (!ok) return false;
    }
    return true;
  };
  if (!rec(rec)) return std::nullopt;
  std::sort(out.begin(), out.end());
  return out;
}

/// Small model for structural tests.
inline EncoderModel tiny_model(int vocab_size, std::uint64_t seed = 7, double init_std = 0.02) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.layers = 1;
  c.heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.max_seq = 12;
  c.dropout = 0.0;
  return init_model(c, seed, init_std);
}

/// Micro model with non-trivial biases and gains so every gradient is exercised.
inline EncoderModel micro_model(std::uint64_t seed, double init_std, bool tie = true) {
  ModelConfig c;
  c.vocab_size = 6;
  c.layers = 1;
  c.heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.max_seq = 8;
  c.dropout = 0.0;
  c.tie_head = tie;
  auto m = init_model(c, seed, init_std);
  // Non-trivial biases and gains so their gradients are exercised.
  Rng rng(seed ^ 0xabcdef);
  m.params.for_each([&](const std::string& name, Matrix& t) {
    if (name.find("bias") != std::string::npos || name.ends_with(".b1") || name.ends_with(".b2"))
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal(0.0, init_std);
    if (name.find("gain") != std::string::npos)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = 1.0 + rng.normal(0.0, 0.1);
  });
  return m;
}

struct GradCheck {
  double worst = 0.0;  // max relative error over all scalars
  std::string where;
  std::size_t checked = 0;
};

/// Analytic gradients (dropout off) against central differences with step h.
inline GradCheck check_gradients(EncoderModel& m, const std::vector<TrainSequence>& batch, double h) {
  TrainConfig tc;
  Trainer trainer(m, tc);
  Parameters grads;
  trainer.gradients(batch, grads, false);
  auto loss_at = [&]() {
    std::vector<Matrix> logits;
    std::vector<std::vector<TokenId>> labels;
    for (const auto& s : batch) {
      logits.push_back(forward_sequence(m, s.input_ids, s.attention));
      labels.push_back(s.labels);
    }
    return mlm_loss(logits, labels).loss;
  };
  GradCheck r;
  std::vector<Matrix*> analytic;
  grads.for_each([&](const std::string&, Matrix& g) { analytic.push_back(&g); });
  std::size_t t = 0;
  m.params.for_each([&](const std::string& name, Matrix& x) {
    const Matrix& g = *analytic[t++];
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double orig = x.data()[i];
      x.data()[i] = orig + h;
      const double up = loss_at();
      x.data()[i] = orig - h;
      const double down = loss_at();
      x.data()[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = g.data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++r.checked;
      if (rel > r.worst) {
        r.worst = rel;
        r.where = name + "[" + std::to_string(i) + "]";
      }
    }
  });
  return r;
}

}  // namespace fmtest
