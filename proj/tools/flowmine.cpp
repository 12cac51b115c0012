// flowmine: mine message-flow specifications from interleaved traces.
//
//   flowmine gen   --config run.json
//   flowmine graph --config run.json
//   flowmine train --config run.json [--epochs N] [--mask-rate P] [--seed S]
//   flowmine mine  --config run.json [--theta T] [--score-mode renormalized|absolute]
//   flowmine eval  --config run.json
//   flowmine all   --config run.json

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flowmine/flowmine.hpp"

namespace {

struct Overrides {
  std::optional<double> theta;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> mask_rate;
  std::optional<std::string> score_mode;
};

flowmine::RunConfig load(const std::string& path, const Overrides& o) {
  auto c = flowmine::load_run_config(path);
  if (o.theta) c.mining.theta = *o.theta;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.seed) c.seed = *o.seed;
  if (o.mask_rate) c.mask.rate = *o.mask_rate;
  if (o.score_mode) c.mining.score_mode = flowmine::parse_score_mode(*o.score_mode);
  flowmine::validate(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mine message-flow specifications from interleaved execution traces"};
  app.require_subcommand(1);

  std::string config;
  Overrides o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Run configuration (JSON)")->required();
    sub->add_option("--theta", o.theta, "Mining score threshold");
    sub->add_option("--epochs", o.epochs, "Training epochs");
    sub->add_option("--seed", o.seed, "Global seed");
    sub->add_option("--mask-rate", o.mask_rate, "Masking probability");
    sub->add_option("--score-mode", o.score_mode, "renormalized or absolute");
  };
  auto* gen = app.add_subcommand("gen", "Generate interleaved traces from the flow file");
  auto* graph = app.add_subcommand("graph", "Dump the causality graph over trace messages");
  auto* train = app.add_subcommand("train", "Train the encoder on the traces");
  auto* mine = app.add_subcommand("mine", "Mine flows with the trained encoder");
  auto* eval = app.add_subcommand("eval", "Score mined flows against the flow file");
  auto* all = app.add_subcommand("all", "gen, graph, train, mine, eval");
  for (auto* s : {gen, graph, train, mine, eval, all}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const auto c = load(config, o);
    auto& log = std::cout;
    if (gen->parsed()) flowmine::cmd_gen(c, log);
    if (graph->parsed()) flowmine::cmd_graph(c, log);
    if (train->parsed()) flowmine::cmd_train(c, log);
    if (mine->parsed()) flowmine::cmd_mine(c, log);
    if (eval->parsed()) flowmine::cmd_eval(c, log);
    if (all->parsed()) flowmine::cmd_all(c, log);
  } catch (const flowmine::Error& e) {
    std::cerr << "flowmine: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "flowmine: internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
