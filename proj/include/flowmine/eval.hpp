#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowmine/flow_model.hpp"
#include "flowmine/message.hpp"

namespace flowmine {

struct FlowEval {
  std::string gt_name;     // empty when the mined flow matched no ground truth
  std::string mined_name;  // empty when nothing was mined for this ground truth
  std::size_t mined_branches = 0;
  std::size_t gt_branches = 0;
  std::size_t true_positives = 0;
  std::optional<double> precision;  // undefined for an empty mined flow
  double recall = 0.0;
  std::vector<Message> missing;  // ground-truth messages absent from the mined flow
  std::vector<Message> extra;    // mined messages absent from the ground truth
  std::optional<double> message_precision;
  double message_recall = 0.0;
  bool unmatched = false;  // mined flow whose start matched no ground-truth flow
};

struct EvalReport {
  std::vector<FlowEval> flows;
  std::size_t mined_branches = 0;
  std::size_t gt_branches = 0;
  std::size_t true_positives = 0;
  std::optional<double> precision;
  double recall = 0.0;
};

namespace detail {

inline std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

inline std::set<std::vector<Message>> branch_sequences(const FlowSpec& f) {
  std::set<std::vector<Message>> out;
  for (const auto& b : branches(f)) out.insert(branch_messages(f, b));
  return out;
}

inline std::set<Message> message_set(const FlowSpec& f) {
  std::set<Message> out;
  for (const auto& n : f.nodes) out.insert(n.message);
  return out;
}

}  // namespace detail

/// Branch-level comparison: a mined branch counts only if its message
/// sequence equals a ground-truth branch exactly. `pairing` maps mined flow
/// names to ground-truth names; flows it does not mention pair by start message.
inline EvalReport compare(const FlowSet& mined, const FlowSet& gt,
                          const std::map<std::string, std::string>& pairing = {}) {
  std::map<std::size_t, std::vector<const FlowSpec*>> by_gt;
  std::vector<const FlowSpec*> orphans;
  for (const auto& m : mined.flows) {
    std::optional<std::size_t> match;
    if (auto it = pairing.find(m.name); it != pairing.end()) {
      for (std::size_t g = 0; g < gt.flows.size(); ++g)
        if (gt.flows[g].name == it->second) match = g;
    } else if (m.find(m.start)) {
      for (std::size_t g = 0; g < gt.flows.size() && !match; ++g)
        if (gt.flows[g].message(gt.flows[g].start) == m.message(m.start)) match = g;
    }
    if (match) by_gt[*match].push_back(&m);
    else orphans.push_back(&m);
  }

  EvalReport r;
  auto finish = [&](FlowEval& e, const std::set<std::vector<Message>>& mb,
                    const std::set<std::vector<Message>>& gb, const std::set<Message>& mm,
                    const std::set<Message>& gm) {
    e.mined_branches = mb.size();
    e.gt_branches = gb.size();
    for (const auto& b : mb) e.true_positives += gb.count(b);
    e.precision = detail::ratio(e.true_positives, e.mined_branches);
    e.recall = detail::ratio(e.true_positives, e.gt_branches).value_or(0.0);
    std::size_t shared = 0;
    for (const auto& m : gm) {
      if (mm.count(m)) ++shared;
      else e.missing.push_back(m);
    }
    for (const auto& m : mm)
      if (!gm.count(m)) e.extra.push_back(m);
    e.message_precision = detail::ratio(shared, mm.size());
    e.message_recall = detail::ratio(shared, gm.size()).value_or(0.0);
    r.mined_branches += e.mined_branches;
    r.gt_branches += e.gt_branches;
    r.true_positives += e.true_positives;
    r.flows.push_back(std::move(e));
  };

  for (std::size_t g = 0; g < gt.flows.size(); ++g) {
    FlowEval e;
    e.gt_name = gt.flows[g].name;
    std::set<std::vector<Message>> mb;
    std::set<Message> mm;
    for (const auto* m : by_gt[g]) {
      e.mined_name += (e.mined_name.empty() ? "" : "+") + m->name;
      auto b = detail::branch_sequences(*m);
      mb.insert(b.begin(), b.end());
      auto s = detail::message_set(*m);
      mm.insert(s.begin(), s.end());
    }
    finish(e, mb, detail::branch_sequences(gt.flows[g]), mm, detail::message_set(gt.flows[g]));
  }
  for (const auto* m : orphans) {
    FlowEval e;
    e.mined_name = m->name;
    e.unmatched = true;
    finish(e, detail::branch_sequences(*m), {}, detail::message_set(*m), {});
  }
  r.precision = detail::ratio(r.true_positives, r.mined_branches);
  r.recall = detail::ratio(r.true_positives, r.gt_branches).value_or(0.0);
  return r;
}

namespace detail {

inline std::string percent(std::optional<double> v) {
  if (!v) return "—";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", *v * 100.0);
  return buf;
}

}  // namespace detail

/// Table with the columns #branches mined, precision and recall.
inline std::string render_report_table(const EvalReport& r) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-28s %8s %6s %6s %10s %10s\n", "flow", "#mined", "#gt", "TP",
                "precision", "recall");
  out += buf;
  for (const auto& f : r.flows) {
    const auto name = f.gt_name.empty() ? f.mined_name + " (unmatched)" : f.gt_name;
    std::snprintf(buf, sizeof buf, "%-28s %8zu %6zu %6zu %10s %10s\n", name.c_str(),
                  f.mined_branches, f.gt_branches, f.true_positives,
                  detail::percent(f.precision).c_str(), detail::percent(f.recall).c_str());
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%-28s %8zu %6zu %6zu %10s %10s\n", "aggregate", r.mined_branches,
                r.gt_branches, r.true_positives, detail::percent(r.precision).c_str(),
                detail::percent(r.recall).c_str());
  out += buf;
  for (const auto& f : r.flows) {
    if (f.missing.empty() && f.extra.empty()) continue;
    out += (f.gt_name.empty() ? f.mined_name : f.gt_name) + ":";
    for (const auto& m : f.missing) out += " -" + m.str();
    for (const auto& m : f.extra) out += " +" + m.str();
    out += "\n";
  }
  return out;
}

inline std::string render_report_json(const EvalReport& r) {
  using json = nlohmann::ordered_json;
  auto opt = [](std::optional<double> v) { return v ? json(*v) : json(nullptr); };
  auto msgs = [](const std::vector<Message>& v) {
    json a = json::array();
    for (const auto& m : v) a.push_back(m.str());
    return a;
  };
  json j;
  j["aggregate"] = {{"mined_branches", r.mined_branches},
                    {"gt_branches", r.gt_branches},
                    {"true_positives", r.true_positives},
                    {"precision", opt(r.precision)},
                    {"recall", r.recall}};
  j["flows"] = json::array();
  for (const auto& f : r.flows) {
    j["flows"].push_back({{"gt_flow", f.gt_name},
                          {"mined_flow", f.mined_name},
                          {"unmatched", f.unmatched},
                          {"mined_branches", f.mined_branches},
                          {"gt_branches", f.gt_branches},
                          {"true_positives", f.true_positives},
                          {"precision", opt(f.precision)},
                          {"recall", f.recall},
                          {"message_precision", opt(f.message_precision)},
                          {"message_recall", f.message_recall},
                          {"missing_messages", msgs(f.missing)},
                          {"extra_messages", msgs(f.extra)}});
  }
  return j.dump(2) + "\n";
}

}  // namespace flowmine
