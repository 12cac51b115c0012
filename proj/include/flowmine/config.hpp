#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "flowmine/causality.hpp"
#include "flowmine/encoder.hpp"
#include "flowmine/error.hpp"
#include "flowmine/io.hpp"
#include "flowmine/miner.hpp"
#include "flowmine/tokenizer.hpp"
#include "flowmine/trace.hpp"

namespace flowmine {

struct RunPaths {
  std::filesystem::path flows;       // ground-truth flow file
  std::filesystem::path trace_dir;   // traces.txt + branches.txt
  std::filesystem::path graph;       // causality graph dump
  std::filesystem::path vocab;
  std::filesystem::path checkpoint;
  std::filesystem::path loss;        // per-epoch loss history
  std::filesystem::path mined;       // mined flow file
  std::filesystem::path scores;      // per-edge score report
  std::filesystem::path mined_graphs;  // before/after graph dumps per mined pair
  std::filesystem::path report;      // machine-readable evaluation report

  std::filesystem::path traces() const { return trace_dir / "traces.txt"; }
  std::filesystem::path choices() const { return trace_dir / "branches.txt"; }
};

struct WindowConfig {
  std::size_t max_len = 32;
  std::size_t stride = 16;
  bool prefixes = false;
};

struct RunConfig {
  RunPaths paths;
  std::uint64_t seed = 0;
  CausalityDirection direction = CausalityDirection::forward;
  GenConfig gen;
  WindowConfig window;
  MaskConfig mask;
  ModelConfig model;
  TrainConfig train;
  MiningConfig mining;
  std::map<std::string, std::string> pairing;  // mined flow name -> ground-truth name

  /// Per-stage seeds fan out from the global seed.
  std::uint64_t stage_seed(std::string_view stage) const { return derive_seed(seed, stage); }
};

namespace detail {

using cjson = nlohmann::json;

inline void allow_keys(const cjson& obj, std::initializer_list<const char*> keys,
                       const std::string& where) {
  if (!obj.is_object()) throw usage_error("config " + where + ": expected an object");
  for (const auto& [k, _] : obj.items()) {
    bool known = false;
    for (const char* want : keys) known = known || k == want;
    if (!known) throw usage_error("config " + where + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read(const cjson& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw usage_error("config " + where + "." + key + ": wrong type");
  }
}

inline ScoreMode parse_score_mode(const std::string& s) {
  if (s == "renormalized") return ScoreMode::renormalized;
  if (s == "absolute") return ScoreMode::absolute;
  throw usage_error("score mode must be 'renormalized' or 'absolute', got '" + s + "'");
}

inline ContextMode parse_context_mode(const std::string& s) {
  if (s == "prefix") return ContextMode::prefix;
  if (s == "predecessor") return ContextMode::predecessor;
  throw usage_error("context mode must be 'prefix' or 'predecessor', got '" + s + "'");
}

}  // namespace detail

inline ScoreMode parse_score_mode(const std::string& s) { return detail::parse_score_mode(s); }

/// Parses a run configuration. Relative paths resolve against `base_dir`.
inline RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  using detail::allow_keys;
  using detail::read;
  detail::cjson j;
  try {
    j = detail::cjson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw usage_error("config syntax error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  allow_keys(j, {"paths", "seed", "causality_direction", "gen", "window", "mask", "model", "train",
                 "mining", "pairing"},
             "root");
  RunConfig c;
  read(j, "seed", c.seed, "root");

  if (!j.contains("paths")) throw usage_error("config: 'paths' is required");
  const auto& jp = j["paths"];
  allow_keys(jp, {"flows", "trace_dir", "graph", "vocab", "checkpoint", "loss", "mined", "scores",
                  "mined_graphs", "report"},
             "paths");
  auto path = [&](const char* key, const char* fallback) {
    std::string s = fallback;
    read(jp, key, s, "paths");
    std::filesystem::path p(s);
    return p.is_absolute() ? p : (base_dir / p).lexically_normal();
  };
  if (!jp.contains("flows")) throw usage_error("config: 'paths.flows' is required");
  c.paths.flows = path("flows", "");
  c.paths.trace_dir = path("trace_dir", "out/traces");
  c.paths.graph = path("graph", "out/causality_graph.txt");
  c.paths.vocab = path("vocab", "out/vocab.tsv");
  c.paths.checkpoint = path("checkpoint", "out/model.flmn");
  c.paths.loss = path("loss", "out/loss.tsv");
  c.paths.mined = path("mined", "out/mined_flows.json");
  c.paths.scores = path("scores", "out/edge_scores.tsv");
  c.paths.mined_graphs = path("mined_graphs", "out/mined_graphs.txt");
  c.paths.report = path("report", "out/report.json");

  if (j.contains("causality_direction")) {
    std::string d;
    read(j, "causality_direction", d, "root");
    if (d == "forward") c.direction = CausalityDirection::forward;
    else if (d == "literal") c.direction = CausalityDirection::literal;
    else throw usage_error("causality_direction must be 'forward' or 'literal'");
  }

  if (j.contains("gen")) {
    const auto& g = j["gen"];
    allow_keys(g, {"runs", "instances_per_flow"}, "gen");
    read(g, "runs", c.gen.runs, "gen");
    read(g, "instances_per_flow", c.gen.instances_per_flow, "gen");
  }
  if (j.contains("window")) {
    const auto& w = j["window"];
    allow_keys(w, {"max_len", "stride", "prefixes"}, "window");
    read(w, "max_len", c.window.max_len, "window");
    read(w, "stride", c.window.stride, "window");
    read(w, "prefixes", c.window.prefixes, "window");
  }
  if (j.contains("mask")) {
    const auto& m = j["mask"];
    allow_keys(m, {"rate", "split", "last"}, "mask");
    read(m, "rate", c.mask.rate, "mask");
    read(m, "split", c.mask.split, "mask");
    read(m, "last", c.mask.mask_last, "mask");
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    allow_keys(m, {"layers", "heads", "d_model", "d_ff", "max_seq", "dropout", "tie_head"}, "model");
    read(m, "layers", c.model.layers, "model");
    read(m, "heads", c.model.heads, "model");
    read(m, "d_model", c.model.d_model, "model");
    read(m, "d_ff", c.model.d_ff, "model");
    read(m, "max_seq", c.model.max_seq, "model");
    read(m, "dropout", c.model.dropout, "model");
    read(m, "tie_head", c.model.tie_head, "model");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    allow_keys(t, {"epochs", "batch_size", "learning_rate", "linear_decay", "beta1", "beta2", "epsilon"},
               "train");
    read(t, "epochs", c.train.epochs, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "learning_rate", c.train.learning_rate, "train");
    read(t, "linear_decay", c.train.linear_decay, "train");
    read(t, "beta1", c.train.adam.beta1, "train");
    read(t, "beta2", c.train.adam.beta2, "train");
    read(t, "epsilon", c.train.adam.epsilon, "train");
  }
  if (j.contains("mining")) {
    const auto& m = j["mining"];
    allow_keys(m, {"theta", "score_mode", "context", "max_path_len", "pairs"}, "mining");
    read(m, "theta", c.mining.theta, "mining");
    if (m.contains("score_mode")) {
      std::string s;
      read(m, "score_mode", s, "mining");
      c.mining.score_mode = detail::parse_score_mode(s);
    }
    if (m.contains("context")) {
      std::string s;
      read(m, "context", s, "mining");
      c.mining.context = detail::parse_context_mode(s);
    }
    if (m.contains("max_path_len")) {
      std::size_t n = 0;
      read(m, "max_path_len", n, "mining");
      c.mining.max_path_len = n;
    }
    if (m.contains("pairs")) {
      if (!m["pairs"].is_array()) throw usage_error("config mining.pairs: expected an array");
      for (const auto& jp2 : m["pairs"]) {
        allow_keys(jp2, {"name", "start", "end"}, "mining.pairs[]");
        std::string name, start, end;
        read(jp2, "name", name, "mining.pairs[]");
        read(jp2, "start", start, "mining.pairs[]");
        read(jp2, "end", end, "mining.pairs[]");
        try {
          c.mining.pairs.push_back({name, parse_message(start), parse_message(end)});
        } catch (const Error& e) {
          throw usage_error(std::string("config mining.pairs: ") + e.what());
        }
      }
    }
  }
  if (j.contains("pairing")) read(j, "pairing", c.pairing, "root");
  return c;
}

inline void validate(const RunConfig& c) {
  check(c.gen);
  check(c.mask);
  check(c.train);
  if (c.window.max_len < 2 || c.window.stride < 1 || c.window.stride > c.window.max_len)
    throw usage_error("window: need max_len >= 2 and 1 <= stride <= max_len");
  if (c.window.max_len > static_cast<std::size_t>(c.model.max_seq))
    throw usage_error("window.max_len exceeds model.max_seq");
  if (!(c.mining.theta >= 0.0 && c.mining.theta <= 1.0))
    throw usage_error("mining.theta must be in [0, 1]");
  ModelConfig probe = c.model;
  probe.vocab_size = 4;  // real size is known only after the vocabulary is built
  check(probe);
}

inline RunConfig load_run_config(const std::filesystem::path& file) {
  std::string text;
  try {
    text = io::read_file(file);
  } catch (const Error& e) {
    throw usage_error(std::string("config: ") + e.what());
  }
  auto base = std::filesystem::absolute(file).parent_path();
  return parse_run_config(text, base);
}

}  // namespace flowmine
