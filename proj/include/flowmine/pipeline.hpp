#pragma once

// Pipeline stages behind the `flowmine` subcommands. Each stage reads its
// inputs from disk, writes its outputs atomically, and derives its seeds from
// the global seed so it can be rerun in isolation.

#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>

#include "flowmine/causality.hpp"
#include "flowmine/checkpoint.hpp"
#include "flowmine/config.hpp"
#include "flowmine/encoder.hpp"
#include "flowmine/eval.hpp"
#include "flowmine/flow_model.hpp"
#include "flowmine/io.hpp"
#include "flowmine/miner.hpp"
#include "flowmine/tokenizer.hpp"
#include "flowmine/trace.hpp"

namespace flowmine {

inline FlowSet load_flows(const std::filesystem::path& p, CausalityDirection dir) {
  return parse_flow_file(io::read_file(p), dir);
}

inline TraceSet load_traces(const RunConfig& c) { return parse_traces(io::read_file(c.paths.traces())); }

/// Model hyperparameters with the vocabulary size filled in.
inline ModelConfig model_config_for(const RunConfig& c, const MessageVocab& v) {
  ModelConfig m = c.model;
  m.vocab_size = static_cast<int>(v.size());
  return m;
}

/// Training settings with stage seeds filled in.
inline TrainConfig train_config_for(const RunConfig& c) {
  TrainConfig t = c.train;
  t.seed = c.stage_seed("train");
  t.mask = c.mask;
  t.mask.seed = c.stage_seed("mask");
  return t;
}

inline GeneratedTraces cmd_gen(const RunConfig& c, std::ostream& log) {
  validate(c);
  const auto flows = load_flows(c.paths.flows, c.direction);
  GenConfig g = c.gen;
  g.seed = c.stage_seed("gen");
  auto out = generate_traces(flows, g);
  io::write_file_atomic(c.paths.traces(), render_traces(out.traces));
  io::write_file_atomic(c.paths.choices(), render_choices(flows, out.choices));
  log << "gen: " << out.traces.size() << " traces -> " << c.paths.traces().string() << "\n";
  return out;
}

inline CausalityGraph cmd_graph(const RunConfig& c, std::ostream& log) {
  validate(c);
  const auto vocab = build_vocab(load_traces(c));
  auto g = build_causality_graph(vocab.messages(), c.direction);
  io::write_file_atomic(c.paths.graph, render_graph(g));
  log << "graph: " << g.size() << " messages, " << g.edge_count() << " causal edges -> "
      << c.paths.graph.string() << "\n";
  return g;
}

inline std::string render_loss_history(const TrainResult& r) {
  std::string out = "# epoch\tmean_loss\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "0\t%.17g\n", r.initial_loss);
  out += buf;
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\n", e + 1, r.history[e]);
    out += buf;
  }
  return out;
}

inline TrainResult cmd_train(const RunConfig& c, std::ostream& log) {
  validate(c);
  const auto traces = load_traces(c);
  const auto vocab = build_vocab(traces);
  const auto windows = window_traces(traces, vocab, c.window.max_len, c.window.stride, c.window.prefixes);
  auto model = init_model(model_config_for(c, vocab), c.stage_seed("init"));
  const auto tc = train_config_for(c);
  auto result = train(model, windows, vocab, tc, [&](int epoch, double loss) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "epoch %2d  loss %.6f\n", epoch, loss);
    log << buf << std::flush;
  });
  io::write_file_atomic(c.paths.vocab, render_vocab(vocab));
  io::write_file_atomic(c.paths.checkpoint, save_checkpoint(model, vocab_hash(vocab)));
  io::write_file_atomic(c.paths.loss, render_loss_history(result));
  log << "train: " << windows.size() << " windows, V=" << vocab.size() << " -> "
      << c.paths.checkpoint.string() << "\n";
  return result;
}

/// Loads a checkpoint and the vocabulary it was trained with; refuses a mismatch.
inline std::pair<Checkpoint, MessageVocab> load_model(const RunConfig& c) {
  const auto vocab = parse_vocab(io::read_file(c.paths.vocab));
  auto ckpt = load_checkpoint(io::read_file(c.paths.checkpoint));
  if (ckpt.vocab_hash != vocab_hash(vocab) ||
      ckpt.model.config.vocab_size != static_cast<int>(vocab.size()))
    throw data_error("checkpoint " + c.paths.checkpoint.string() +
                     " was trained on a different vocabulary than " + c.paths.vocab.string());
  return {std::move(ckpt), vocab};
}

inline MiningResult cmd_mine(const RunConfig& c, std::ostream& log) {
  validate(c);
  auto [ckpt, vocab] = load_model(c);
  const auto g = build_causality_graph(vocab.messages(), c.direction);
  auto result = mine_all(g, ckpt.model, vocab, c.mining);

  std::string dumps;
  for (const auto& m : result.mined) {
    dumps += "# causal subgraph " + m.start.str() + " => " + m.end.str() + "\n";
    dumps += render_edges(causal_subgraph(g, m.start, m.end));
    dumps += "# mined " + m.start.str() + " => " + m.end.str() + (m.unreached ? " (unreached)" : "") + "\n";
    dumps += render_edges(m.edges);
  }
  io::write_file_atomic(c.paths.mined, render_flow_file(result.flows));
  io::write_file_atomic(c.paths.scores, render_score_report(result));
  io::write_file_atomic(c.paths.mined_graphs, dumps);
  for (const auto& m : result.mined)
    log << "mine: " << m.start.str() << " => " << m.end.str() << ": "
        << (m.unreached ? std::string("unreached")
                        : std::to_string(m.accepted_paths.size()) + " paths, " +
                              std::to_string(m.edges.size()) + " edges")
        << "\n";
  return result;
}

inline EvalReport cmd_eval(const RunConfig& c, std::ostream& log) {
  validate(c);
  const auto gt = load_flows(c.paths.flows, c.direction);
  // Mined flows are reported as-is, even if they break a flow invariant.
  FlowSet mined;
  {
    const auto text = io::read_file(c.paths.mined);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw data_error("mined flow file syntax error at byte " + std::to_string(e.byte));
    }
    detail::require_keys(j, {"flows"}, "mined flow file");
    std::size_t i = 0;
    for (const auto& jf : j["flows"])
      mined.flows.push_back(flow_from_json(jf, "flows[" + std::to_string(i++) + "]"));
  }
  auto report = compare(mined, gt, c.pairing);
  io::write_file_atomic(c.paths.report, render_report_json(report));
  log << render_report_table(report);
  return report;
}

struct AllResult {
  TrainResult training;
  MiningResult mining;
  EvalReport report;
};

inline AllResult cmd_all(const RunConfig& c, std::ostream& log) {
  cmd_gen(c, log);
  cmd_graph(c, log);
  AllResult r;
  r.training = cmd_train(c, log);
  r.mining = cmd_mine(c, log);
  r.report = cmd_eval(c, log);
  return r;
}

}  // namespace flowmine
