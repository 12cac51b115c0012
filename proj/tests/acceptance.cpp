// Acceptance suite: one PASS/FAIL line per criterion, printed as each finishes
// and again as a summary. The benchmark pipeline runs once and is shared.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "test_support.hpp"

using namespace fmtest;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::map<int, std::pair<bool, std::string>>& verdicts() {
  static std::map<int, std::pair<bool, std::string>> v;
  return v;
}

std::string verdict_line(int n, bool pass, const std::string& what) {
  return "criterion " + std::to_string(n) + ": " + (pass ? "PASS" : "FAIL") + "  " + what;
}

// The shipped benchmark configuration with every output redirected under `dir`.
RunConfig benchmark_config(const std::filesystem::path& dir) {
  auto c = load_run_config(data_dir() / "benchmark.json");
  c.paths.trace_dir = dir / "traces";
  c.paths.graph = dir / "causality_graph.txt";
  c.paths.vocab = dir / "vocab.tsv";
  c.paths.checkpoint = dir / "model.flmn";
  c.paths.loss = dir / "loss.tsv";
  c.paths.mined = dir / "mined_flows.json";
  c.paths.scores = dir / "edge_scores.tsv";
  c.paths.mined_graphs = dir / "mined_graphs.txt";
  c.paths.report = dir / "report.json";
  return c;
}

std::vector<std::filesystem::path> output_files(const RunConfig& c) {
  return {c.paths.traces(), c.paths.choices(), c.paths.graph,  c.paths.vocab,
          c.paths.checkpoint, c.paths.loss,    c.paths.mined,  c.paths.scores,
          c.paths.mined_graphs, c.paths.report};
}

struct BenchmarkRun {
  RunConfig config;
  AllResult result;
  std::string log;
  double seconds = 0.0;
};

BenchmarkRun* g_run = nullptr;

class BenchmarkEnvironment : public ::testing::Environment {
 public:
  void SetUp() override {
    static BenchmarkRun run;
    run.config = benchmark_config(scratch_dir("acceptance_a"));
    std::ostringstream log;
    const auto t0 = Clock::now();
    run.result = cmd_all(run.config, log);
    run.seconds = seconds_since(t0);
    run.log = log.str();
    std::cout << run.log << "pipeline wall time " << run.seconds << " s\n";
    g_run = &run;
  }

  void TearDown() override {
    std::cout << "\n== acceptance summary ==\n";
    for (const auto& [n, v] : verdicts()) std::cout << verdict_line(n, v.first, v.second) << "\n";
  }
};

class Criterion : public ::testing::Test {
 protected:
  void record(int n, std::string what) {
    number_ = n;
    what_ = std::move(what);
  }

  void TearDown() override {
    if (number_ == 0) return;
    const bool pass = !HasFailure();
    verdicts()[number_] = {pass, what_};
    std::cout << verdict_line(number_, pass, what_) << std::endl;
  }

 private:
  int number_ = 0;
  std::string what_;
};

const FlowSpec& cpu_flow(const FlowSet& fs) {
  for (const auto& f : fs.flows)
    if (f.name == "cpu0_read") return f;
  throw std::runtime_error("benchmark has no cpu0_read flow");
}

std::set<Edge> flow_edges(const FlowSpec& f) {
  std::set<Edge> out;
  for (const auto& [a, b] : f.edges) out.insert({f.message(a), f.message(b)});
  return out;
}

bool subset(const std::vector<Edge>& a, const std::vector<Edge>& b) {
  const std::set<Edge> sb(b.begin(), b.end());
  for (const auto& e : a)
    if (!sb.count(e)) return false;
  return true;
}

}  // namespace

TEST_F(Criterion, C1_EndToEndPrecisionAndRecall) {
  record(1, "benchmark: 600 traces, 10 epochs, theta 0.75, precision = recall = 100%, < 10 min");
  ASSERT_NE(g_run, nullptr);
  const auto& c = g_run->config;
  const auto gt = benchmark_flows();
  EXPECT_EQ(gt.flows.size(), 2u);
  EXPECT_EQ(gt.universe().size(), 14u);
  EXPECT_EQ(c.gen.runs, 600);
  EXPECT_EQ(c.train.epochs, 10);
  EXPECT_EQ(c.mining.theta, 0.75);
  const auto& r = g_run->result.report;
  std::cout << render_report_table(r);
  EXPECT_EQ(r.precision.value_or(-1.0), 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_LT(g_run->seconds, 600.0);
}

TEST_F(Criterion, C2_IllegalCrossFlowEdgeIsPruned) {
  record(2, "cross-flow edge Cache:Bus:rd_req -> Bus:DMA:retry in G, pruned from G_f; all flow edges kept");
  ASSERT_NE(g_run, nullptr);
  const auto& c = g_run->config;
  const auto gt = benchmark_flows();
  const auto& cpu = cpu_flow(gt);
  const auto g = build_causality_graph(parse_vocab(io::read_file(c.paths.vocab)).messages());
  const auto& mined = g_run->result.mining.mined.at(0);
  ASSERT_EQ(mined.start, cpu.message(cpu.start));

  const Edge illegal{msg("Cache:Bus:rd_req"), msg("Bus:DMA:retry")};
  EXPECT_TRUE(g.has_edge(illegal.first, illegal.second));
  const auto sub = causal_subgraph(g, mined.start, mined.end);
  EXPECT_NE(std::find(sub.begin(), sub.end(), illegal), sub.end()) << "edge must lead toward End";
  EXPECT_EQ(std::find(mined.edges.begin(), mined.edges.end(), illegal), mined.edges.end());

  // Every edge of G leaving a CPU-flow node for a non-CPU node is pruned.
  std::set<Message> cpu_nodes;
  for (const auto& n : cpu.nodes) cpu_nodes.insert(n.message);
  for (const auto& e : sub)
    if (cpu_nodes.count(e.first) && !cpu_nodes.count(e.second)) {
      EXPECT_EQ(std::find(mined.edges.begin(), mined.edges.end(), e), mined.edges.end())
          << e.first << " -> " << e.second;
    }
  for (const auto& e : flow_edges(cpu)) {
    EXPECT_NE(std::find(mined.edges.begin(), mined.edges.end(), e), mined.edges.end())
        << "missing " << e.first << " -> " << e.second;
  }

  // The fork query itself: the illegal successor falls below theta, true ones do not.
  auto [ckpt, vocab] = load_model(c);
  const std::vector<TokenId> prefix{*vocab.id_of(msg("CPU0:Cache:rd_req")), *vocab.id_of(msg("Cache:Bus:rd_req"))};
  std::vector<TokenId> cand;
  std::vector<Message> cand_msgs;
  for (auto v : g.successors(*g.index_of(msg("Cache:Bus:rd_req")))) {
    cand.push_back(*vocab.id_of(g.node(v)));
    cand_msgs.push_back(g.node(v));
  }
  const auto scores = score_next(ckpt.model, vocab, prefix, cand);
  const std::set<Message> legal{msg("Bus:Mem:rd_req"), msg("Bus:Dir:lookup"), msg("Bus:Cache:retry")};
  for (std::size_t i = 0; i < cand.size(); ++i) {
    std::cout << "  score " << cand_msgs[i] << " " << scores[i] << "\n";
    if (legal.count(cand_msgs[i])) {
      EXPECT_GE(scores[i], 0.75) << cand_msgs[i];
    }
    if (cand_msgs[i] == illegal.second) {
      EXPECT_LT(scores[i], 0.75);
    }
  }
}

TEST_F(Criterion, C3_CausalityOracle) {
  record(3, "causality graph equals pairwise oracle on 1000 random sets (size <= 30)");
  Rng rng(20221);
  const std::vector<std::string> comps{"A", "B", "C", "D", "E", "F", "G"};
  std::size_t discrepancies = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto dir = trial % 2 ? CausalityDirection::literal : CausalityDirection::forward;
    std::vector<Message> ms;
    const auto n = 1 + rng.uniform_below(30);
    for (std::uint64_t i = 0; i < n; ++i)
      ms.push_back(make_message(comps[rng.uniform_below(comps.size())], comps[rng.uniform_below(comps.size())],
                                "c" + std::to_string(rng.uniform_below(5))));
    const auto g = build_causality_graph(ms, dir);
    std::set<Edge> want;
    for (const auto& a : ms)
      for (const auto& b : ms) {
        const bool link = dir == CausalityDirection::forward ? a.dest == b.src : a.src == b.dest;
        if (!(a == b) && link) want.insert({a, b});
      }
    const auto got = g.edges();
    const std::set<Edge> got_set(got.begin(), got.end());
    discrepancies += got_set != want || got.size() != want.size();
  }
  EXPECT_EQ(discrepancies, 0u);
}

TEST_F(Criterion, C4_InterleavingValidity) {
  record(4, "10000 generated traces over random configs all pass validation, < 2 min");
  Rng rng(4);
  const auto t0 = Clock::now();
  std::size_t total = 0, failed = 0;
  while (total < 10000) {
    const auto fs = random_flow_set(rng, 3, 8);
    GenConfig cfg;
    cfg.runs = 1 + static_cast<std::int64_t>(rng.uniform_below(60));
    cfg.instances_per_flow = 1 + static_cast<std::int64_t>(rng.uniform_below(3));
    cfg.seed = rng.next_u64();
    for (const auto& t : generate_traces(fs, cfg).traces) {
      failed += !validate_interleaving(t, fs, static_cast<std::size_t>(cfg.instances_per_flow));
      ++total;
    }
  }
  const double secs = seconds_since(t0);
  std::cout << "  " << total << " traces in " << secs << " s\n";
  EXPECT_EQ(failed, 0u);
  EXPECT_LT(secs, 120.0);
}

TEST_F(Criterion, C5_GradientCheck) {
  record(5, "micro model analytic vs central-difference gradients, max rel err < 1e-3, < 30 s");
  const auto t0 = Clock::now();
  auto m = micro_model(11, 0.5);
  ASSERT_EQ(m.config.vocab_size, 6);
  ASSERT_EQ(m.config.layers, 1);
  ASSERT_EQ(m.config.d_model, 8);
  std::vector<TrainSequence> batch(2);
  batch[0] = {{3, kMask, 5, 4, 2, kPad}, {1, 1, 1, 1, 1, 0}, {kIgnore, 4, kIgnore, 4, 5, kIgnore}};
  batch[1] = {{5, 3, kMask, kPad, kPad, kPad}, {1, 1, 1, 0, 0, 0}, {5, kIgnore, 3, kIgnore, kIgnore, kIgnore}};
  const auto r = check_gradients(m, batch, 1e-4);
  const double secs = seconds_since(t0);
  std::cout << "  " << r.checked << " scalars, worst " << r.worst << " at " << r.where << ", " << secs << " s\n";
  EXPECT_EQ(r.checked, m.params.scalar_count());
  EXPECT_LT(r.worst, 1e-3);
  EXPECT_LT(secs, 30.0);
}

TEST_F(Criterion, C6_LossSanity) {
  record(6, "pre-update loss within 10% of ln V; epoch 5 < epoch 1; final < 0.5 x epoch 1");
  ASSERT_NE(g_run, nullptr);
  const auto& tr = g_run->result.training;
  const auto v = parse_vocab(io::read_file(g_run->config.paths.vocab));
  const double ln_v = std::log(static_cast<double>(v.size()));
  ASSERT_EQ(tr.history.size(), 10u);
  std::cout << "  ln V " << ln_v << ", pre-update " << tr.initial_loss << ", epoch 1 " << tr.history[0]
            << ", epoch 5 " << tr.history[4] << ", final " << tr.history.back() << "\n";
  EXPECT_LT(std::abs(tr.initial_loss - ln_v), 0.1 * ln_v);
  EXPECT_LT(tr.history[4], tr.history[0]);
  EXPECT_LT(tr.history.back(), 0.5 * tr.history[0]);
}

TEST_F(Criterion, C7_MaskRate) {
  record(7, "empirical masked fraction over >= 1e5 tokens within [0.28, 0.32] at rate 0.30");
  ASSERT_NE(g_run, nullptr);
  const auto& c = g_run->config;
  ASSERT_EQ(c.mask.rate, 0.3);
  const auto traces = load_traces(c);
  const auto v = build_vocab(traces);
  const auto windows = window_traces(traces, v, c.window.max_len, c.window.stride, c.window.prefixes);
  // Positions forced by the always-mask-last option are not sampled, so they
  // are left out; the plain configuration is measured over every position.
  for (bool last : {c.mask.mask_last, false}) {
    MaskConfig mc = c.mask;
    mc.mask_last = last;
    std::size_t selected = 0, eligible = 0;
    for (std::uint64_t round = 0; eligible < 100000; ++round) {
      mc.seed = derive_seed(c.stage_seed("mask"), round);
      for (const auto& ts : mask_batch(windows, v, mc, c.window.max_len)) {
        const auto n = ts.length();
        const auto counted = last ? n - 1 : n;
        for (std::size_t i = 0; i < counted; ++i) selected += ts.labels[i] != kIgnore;
        eligible += counted;
      }
    }
    const double rate = static_cast<double>(selected) / static_cast<double>(eligible);
    std::cout << "  mask_last=" << last << ": " << selected << " / " << eligible << " = " << rate << "\n";
    EXPECT_GE(rate, 0.28);
    EXPECT_LE(rate, 0.32);
  }
}

TEST_F(Criterion, C8_ThetaMonotonicityAndOracle) {
  record(8, "edges at theta 0.9 within 0.75 within 0; theta 0 equals brute-force simple paths");
  ASSERT_NE(g_run, nullptr);
  const auto& c = g_run->config;
  auto [ckpt, vocab] = load_model(c);
  const auto g = build_causality_graph(vocab.messages(), c.direction);
  for (const auto& pair : c.mining.pairs) {
    MiningConfig mc = c.mining;
    std::map<double, MinedFlow> at;
    for (double theta : {0.9, 0.75, 0.0}) {
      mc.theta = theta;
      at.emplace(theta, mine_flow(g, ckpt.model, vocab, pair.start, pair.end, mc));
    }
    EXPECT_TRUE(subset(at.at(0.9).edges, at.at(0.75).edges)) << pair.name;
    EXPECT_TRUE(subset(at.at(0.75).edges, at.at(0.0).edges)) << pair.name;
    const auto want = brute_force_paths(vocab.messages(), pair.start, pair.end);
    ASSERT_TRUE(want.has_value());
    std::cout << "  " << pair.name << ": " << at.at(0.0).accepted_paths.size() << " paths at theta 0, "
              << at.at(0.75).accepted_paths.size() << " at 0.75, " << at.at(0.9).accepted_paths.size()
              << " at 0.9\n";
    EXPECT_EQ(at.at(0.0).accepted_paths, *want) << pair.name;
  }
}

TEST_F(Criterion, C9_DeterminismAndPersistence) {
  record(9, "second full run is byte-identical; checkpoint round trip is bit-exact");
  ASSERT_NE(g_run, nullptr);
  const auto second = benchmark_config(scratch_dir("acceptance_b"));
  std::ostringstream log;
  cmd_all(second, log);
  const auto a = output_files(g_run->config);
  const auto b = output_files(second);
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_TRUE(io::read_file(a[i]) == io::read_file(b[i])) << a[i].filename();

  const auto bytes = io::read_file(g_run->config.paths.checkpoint);
  const auto ck = load_checkpoint(bytes);
  EXPECT_EQ(save_checkpoint(ck.model, ck.vocab_hash), bytes);
  auto [orig, vocab] = load_model(g_run->config);
  const auto again = load_checkpoint(save_checkpoint(orig.model, orig.vocab_hash));
  std::vector<TokenId> prefix{*vocab.id_of(msg("UART:DMA:rd_req")), *vocab.id_of(msg("DMA:Bus:rd_req"))};
  std::vector<TokenId> cand;
  for (std::size_t i = 0; i < vocab.message_count(); ++i) cand.push_back(static_cast<TokenId>(kFirstMessageToken + i));
  for (auto mode : {ScoreMode::absolute, ScoreMode::renormalized}) {
    const auto x = score_next(orig.model, vocab, prefix, cand, mode);
    const auto y = score_next(again.model, vocab, prefix, cand, mode);
    EXPECT_EQ(std::memcmp(x.data(), y.data(), sizeof(double) * x.size()), 0);
  }
}

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::AddGlobalTestEnvironment(new BenchmarkEnvironment);
  return RUN_ALL_TESTS();
}
