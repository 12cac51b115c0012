#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace fmtest;

TEST(Message, ParseAndRender) {
  const auto m = msg("CPU0:Cache:rd_req");
  EXPECT_EQ(m.src, "CPU0");
  EXPECT_EQ(m.dest, "Cache");
  EXPECT_EQ(m.cmd, "rd_req");
  EXPECT_EQ(m.str(), "CPU0:Cache:rd_req");
  EXPECT_EQ(parse_message(m.str()), m);
}

TEST(Message, RejectsMalformed) {
  for (const char* bad : {"a:b", "a:b:c:d", "::", "a::c", "a:b c:d", "a:b:", "a|x:b:c", ""})
    EXPECT_THROW(parse_message(bad), Error) << bad;
  EXPECT_THROW(make_message("a", "b", "c d"), Error);
}

TEST(Causality, ForwardPredicate) {
  EXPECT_TRUE(causal(msg("CPU:Cache:rd_req"), msg("Cache:Mem:rd_req")));
  EXPECT_FALSE(causal(msg("A:B:x"), msg("C:D:y")));
  EXPECT_FALSE(causal(msg("A:A:x"), msg("A:A:x")));
  EXPECT_TRUE(causal(msg("A:A:x"), msg("A:B:y")));
}

TEST(Causality, LiteralDirectionFlips) {
  const auto lit = CausalityDirection::literal;
  EXPECT_FALSE(causal(msg("CPU:Cache:rd_req"), msg("Cache:Mem:rd_req"), lit));
  EXPECT_TRUE(causal(msg("Cache:Mem:rd_req"), msg("CPU:Cache:rd_req"), lit));
}

TEST(CausalityGraph, SingleNodeHasNoSelfEdge) {
  std::vector<Message> m{msg("A:B:x")};
  auto g = build_causality_graph(m);
  EXPECT_EQ(g.size(), 1u);
  EXPECT_EQ(g.edge_count(), 0u);

  std::vector<Message> loop{msg("A:A:x")};
  EXPECT_EQ(build_causality_graph(loop).edge_count(), 0u);
}

TEST(CausalityGraph, TwoMessageChain) {
  std::vector<Message> m{msg("B:C:y"), msg("A:B:x")};
  auto g = build_causality_graph(m);
  ASSERT_EQ(g.edge_count(), 1u);
  EXPECT_TRUE(g.has_edge(msg("A:B:x"), msg("B:C:y")));
  EXPECT_EQ(render_graph(g), "digraph {\n  A:B:x -> B:C:y\n}\n");
}

TEST(CausalityGraph, EmptyInputThrows) {
  std::vector<Message> none;
  EXPECT_THROW(build_causality_graph(none), Error);
}

TEST(CausalityGraph, RenderListsIsolatedNodesAndSortsLines) {
  std::vector<Message> m{msg("Z:Q:z"), msg("B:C:y"), msg("A:B:x")};
  EXPECT_EQ(render_graph(build_causality_graph(m)), "digraph {\n  A:B:x -> B:C:y\n  Z:Q:z\n}\n");
}

TEST(CausalityGraph, BenchmarkMatchesPairwiseOracle) {
  const auto fs = benchmark_flows();
  const auto universe = fs.universe();
  ASSERT_EQ(universe.size(), 14u);
  const auto g = build_causality_graph(universe);
  std::size_t expected = 0;
  for (const auto& a : universe)
    for (const auto& b : universe) {
      const bool want = !(a == b) && a.dest == b.src;
      expected += want;
      EXPECT_EQ(g.has_edge(a, b), want) << a.str() << " -> " << b.str();
    }
  EXPECT_EQ(g.edge_count(), expected);

  // At least one edge of G is in no ground-truth flow.
  std::size_t outside = 0;
  for (const auto& [u, v] : g.edges()) {
    bool in_flow = false;
    for (const auto& f : fs.flows)
      for (const auto& [a, b] : f.edges) in_flow = in_flow || (f.message(a) == u && f.message(b) == v);
    outside += !in_flow;
  }
  EXPECT_GE(outside, 1u);
}

TEST(CausalityGraph, FlowEdgesAreCausalAndInGraph) {
  const auto fs = benchmark_flows();
  for (const auto& f : fs.flows) {
    std::vector<Message> ms;
    for (const auto& n : f.nodes) ms.push_back(n.message);
    const auto g = build_causality_graph(ms);
    for (const auto& b : branches(f)) {
      const auto seq = branch_messages(f, b);
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        EXPECT_TRUE(causal(seq[i], seq[i + 1]));
        EXPECT_TRUE(g.has_edge(seq[i], seq[i + 1]));
      }
    }
  }
}

TEST(CausalityGraph, RandomSetsMatchPairwiseOracle) {
  Rng rng(99);
  const std::vector<std::string> comps{"A", "B", "C", "D", "E", "F"};
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Message> ms;
    const auto n = 1 + rng.uniform_below(30);
    for (std::uint64_t i = 0; i < n; ++i)
      ms.push_back(make_message(comps[rng.uniform_below(comps.size())],
                                comps[rng.uniform_below(comps.size())],
                                "c" + std::to_string(rng.uniform_below(4))));
    const auto g = build_causality_graph(ms);
    std::set<std::pair<Message, Message>> want;
    for (const auto& a : ms)
      for (const auto& b : ms)
        if (!(a == b) && a.dest == b.src) want.insert({a, b});
    const auto got = g.edges();
    const std::set<std::pair<Message, Message>> got_set(got.begin(), got.end());
    ASSERT_EQ(got_set, want);
    ASSERT_EQ(got.size(), want.size());
  }
}
