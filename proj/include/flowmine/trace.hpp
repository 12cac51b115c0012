#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "flowmine/error.hpp"
#include "flowmine/flow_model.hpp"
#include "flowmine/message.hpp"
#include "flowmine/random.hpp"

namespace flowmine {

/// Messages observed at the same instant. The generator only emits singletons.
using Step = std::vector<Message>;

struct Trace {
  std::vector<Step> steps;

  bool operator==(const Trace&) const = default;

  std::size_t message_count() const {
    std::size_t n = 0;
    for (const auto& s : steps) n += s.size();
    return n;
  }
};

using TraceSet = std::vector<Trace>;

struct GenConfig {
  std::int64_t runs = 600;
  std::int64_t instances_per_flow = 1;
  std::uint64_t seed = 0;
};

inline void check(const GenConfig& cfg) {
  if (cfg.runs < 0) throw usage_error("gen.runs must be >= 0");
  if (cfg.instances_per_flow < 1) throw usage_error("gen.instances_per_flow must be >= 1");
}

/// Which branch one flow instance executed in one trace.
struct BranchChoice {
  std::size_t flow = 0;
  std::size_t instance = 0;
  std::size_t branch = 0;

  bool operator==(const BranchChoice&) const = default;
};

struct GeneratedTraces {
  TraceSet traces;
  std::vector<std::vector<BranchChoice>> choices;  // one list per trace
};

namespace detail {

inline std::vector<std::vector<std::vector<Message>>> branch_table(const FlowSet& fs) {
  std::vector<std::vector<std::vector<Message>>> table;
  for (const auto& f : fs.flows) {
    auto& rows = table.emplace_back();
    for (const auto& b : branches(f)) rows.push_back(branch_messages(f, b));
  }
  return table;
}

}  // namespace detail

/// Runs `instances_per_flow` instances of every flow per trace, each on a
/// uniformly chosen branch, and interleaves them by repeatedly advancing a
/// uniformly chosen unfinished instance.
inline GeneratedTraces generate_traces(const FlowSet& fs, const GenConfig& cfg) {
  check(cfg);
  const auto table = detail::branch_table(fs);
  for (std::size_t f = 0; f < table.size(); ++f)
    if (table[f].empty()) throw data_error("flow '" + fs.flows[f].name + "' has no branches");

  struct Instance {
    const std::vector<Message>* path;
    std::size_t cursor;
  };

  GeneratedTraces out;
  out.traces.reserve(static_cast<std::size_t>(cfg.runs));
  out.choices.reserve(static_cast<std::size_t>(cfg.runs));
  for (std::int64_t run = 0; run < cfg.runs; ++run) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(run)));
    std::vector<Instance> live;
    auto& choices = out.choices.emplace_back();
    for (std::size_t f = 0; f < table.size(); ++f) {
      for (std::int64_t k = 0; k < cfg.instances_per_flow; ++k) {
        const auto b = rng.uniform_below(table[f].size());
        choices.push_back({f, static_cast<std::size_t>(k), static_cast<std::size_t>(b)});
        live.push_back({&table[f][b], 0});
      }
    }
    Trace t;
    while (!live.empty()) {
      const auto pick = rng.uniform_below(live.size());
      auto& inst = live[pick];
      t.steps.push_back({(*inst.path)[inst.cursor++]});
      if (inst.cursor == inst.path->size()) live.erase(live.begin() + static_cast<long>(pick));
    }
    out.traces.push_back(std::move(t));
  }
  return out;
}

namespace detail {

class InterleavingChecker {
 public:
  InterleavingChecker(const Trace& t, const FlowSet& fs, std::size_t k)
      : trace_(t), table_(branch_table(fs)) {
    for (std::size_t f = 0; f < table_.size(); ++f) {
      std::vector<std::uint32_t> all(table_[f].size());
      for (std::uint32_t b = 0; b < all.size(); ++b) all[b] = b;
      for (std::size_t i = 0; i < k; ++i) instances_.push_back({f, 0, all});
    }
  }

  bool run() {
    for (const auto& step : trace_.steps)
      if (step.empty()) return false;
    std::vector<Message> pending;
    return step(0, pending);
  }

 private:
  struct Instance {
    std::size_t flow;
    std::size_t pos;
    std::vector<std::uint32_t> alive;  // branches consistent with what was consumed

    bool operator==(const Instance&) const = default;
  };

  bool complete(const Instance& inst) const {
    for (auto b : inst.alive)
      if (table_[inst.flow][b].size() == inst.pos) return true;
    return false;
  }

  std::string key(std::size_t step_index, const std::vector<Message>& pending) const {
    std::vector<std::string> parts;
    for (const auto& inst : instances_) {
      std::string s = std::to_string(inst.flow) + "/" + std::to_string(inst.pos) + "/";
      for (auto b : inst.alive) s += std::to_string(b) + ",";
      parts.push_back(std::move(s));
    }
    std::sort(parts.begin(), parts.end());
    std::string k = std::to_string(step_index) + "#";
    for (const auto& m : pending) k += m.str() + "|";
    for (const auto& p : parts) k += p + ";";
    return k;
  }

  // `pending` holds the not-yet-assigned messages of step `step_index`.
  bool step(std::size_t step_index, std::vector<Message>& pending) {
    if (pending.empty()) {
      if (step_index == trace_.steps.size()) {
        return std::all_of(instances_.begin(), instances_.end(),
                           [&](const Instance& i) { return complete(i); });
      }
      std::vector<Message> next = trace_.steps[step_index];
      return step(step_index + 1, next);
    }
    const auto memo = key(step_index, pending);
    if (failed_.count(memo)) return false;

    for (std::size_t p = 0; p < pending.size(); ++p) {
      // Identical messages within one step are interchangeable.
      if (std::find(pending.begin(), pending.begin() + static_cast<long>(p), pending[p]) !=
          pending.begin() + static_cast<long>(p))
        continue;
      const Message m = pending[p];
      for (std::size_t i = 0; i < instances_.size(); ++i) {
        // Instances in identical states are interchangeable too.
        bool dup = false;
        for (std::size_t j = 0; j < i && !dup; ++j) dup = instances_[j] == instances_[i];
        if (dup) continue;

        auto& inst = instances_[i];
        std::vector<std::uint32_t> keep;
        for (auto b : inst.alive) {
          const auto& path = table_[inst.flow][b];
          if (inst.pos < path.size() && path[inst.pos] == m) keep.push_back(b);
        }
        if (keep.empty()) continue;

        Instance saved = inst;
        inst.alive = std::move(keep);
        ++inst.pos;
        pending.erase(pending.begin() + static_cast<long>(p));
        const bool ok = step(step_index, pending);
        pending.insert(pending.begin() + static_cast<long>(p), m);
        instances_[i] = std::move(saved);
        if (ok) return true;
      }
    }
    failed_.insert(memo);
    return false;
  }

  const Trace& trace_;
  std::vector<std::vector<std::vector<Message>>> table_;
  std::vector<Instance> instances_;
  std::unordered_set<std::string> failed_;
};

}  // namespace detail

/// True iff the trace splits into k instances of every flow, each instance
/// consuming exactly one branch of its flow in order.
inline bool validate_interleaving(const Trace& t, const FlowSet& fs, std::size_t k) {
  if (k < 1) return false;
  return detail::InterleavingChecker(t, fs, k).run();
}

// ---------------------------------------------------------------------------
// Trace file: one trace per line, steps separated by spaces, co-occurring
// messages within a step joined with '|'.

inline std::string render_traces(const TraceSet& ts) {
  std::string out;
  for (const auto& t : ts) {
    for (std::size_t s = 0; s < t.steps.size(); ++s) {
      if (s) out += ' ';
      for (std::size_t i = 0; i < t.steps[s].size(); ++i) {
        if (i) out += '|';
        out += t.steps[s][i].str();
      }
    }
    out += '\n';
  }
  return out;
}

inline TraceSet parse_traces(const std::string& text) {
  TraceSet ts;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Trace t;
    std::istringstream words(line);
    std::string word;
    while (words >> word) {
      Step step;
      std::size_t begin = 0;
      while (true) {
        const auto bar = word.find('|', begin);
        try {
          step.push_back(parse_message(word.substr(begin, bar - begin)));
        } catch (const Error& e) {
          throw data_error("trace line " + std::to_string(lineno) + ": " + e.what());
        }
        if (bar == std::string::npos) break;
        begin = bar + 1;
      }
      t.steps.push_back(std::move(step));
    }
    ts.push_back(std::move(t));
  }
  return ts;
}

/// Branch-choice log: one line per trace, `flow:instance:branch` entries.
inline std::string render_choices(const FlowSet& fs,
                                  const std::vector<std::vector<BranchChoice>>& choices) {
  std::string out;
  for (const auto& row : choices) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ' ';
      out += fs.flows[row[i].flow].name + ':' + std::to_string(row[i].instance) + ':' +
             std::to_string(row[i].branch);
    }
    out += '\n';
  }
  return out;
}

}  // namespace flowmine
