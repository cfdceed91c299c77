#include "pfn/experiments.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace pfn;

TEST(Observations, Parsing) {
  const auto items = parse_observations("x1:3=S2, h:2:4=0.25,X2:10=off");
  ASSERT_EQ(items.size(), 3u);
  EXPECT_EQ(items[0].var, "x1");
  EXPECT_EQ(items[0].slice, 2);
  EXPECT_EQ(items[0].state, "S2");
  EXPECT_FALSE(items[0].index);
  EXPECT_EQ(*items[1].index, 3);
  EXPECT_EQ(items[1].value, 0.25);
  EXPECT_EQ(items[2].state, "off");
  EXPECT_THROW(parse_observations("x1:0=S1"), ValidationError);
  EXPECT_THROW(parse_observations("x1=S1"), ValidationError);
  EXPECT_THROW(parse_observations("x1:2:1=abc"), ValidationError);
  EXPECT_THROW(parse_observations("x1:2=S1,"), ValidationError);
}

TEST(Observations, Apply) {
  ChainModel m = build_chain_network(transition_basis_matrix(cycle_diagram(4)), 5);
  apply_observation(m.net, parse_observations("x:2=S3").front());
  EXPECT_TRUE(m.net.variable(m.x).slice_observed(1));
  EXPECT_EQ(m.net.variable(m.x).value(2, 1), 1.0);
  apply_observation(m.net, parse_observations("X:3=off").front());
  EXPECT_EQ(m.net.variable(m.x).value.col(2).sum(), 0.0);
  EXPECT_TRUE(m.net.variable(m.x).slice_observed(2));
  apply_observation(m.net, parse_observations("H:1:2=0.5").front());
  EXPECT_TRUE(m.net.variable(m.h).observed(1, 0));
  EXPECT_FALSE(m.net.variable(m.h).observed(0, 0));
  EXPECT_THROW(apply_observation(m.net, parse_observations("X:6=S1").front()), ValidationError);
  EXPECT_THROW(apply_observation(m.net, parse_observations("X:1=S5").front()), ValidationError);
  EXPECT_THROW(apply_observation(m.net, parse_observations("Y:1=S1").front()), ValidationError);
  StateResolver named = [](const std::string&, const std::string& s) -> std::optional<std::size_t> {
    if (s == "two") return 1;
    return std::nullopt;
  };
  apply_observation(m.net, parse_observations("X:4=two").front(), named);
  EXPECT_EQ(m.net.variable(m.x).value(1, 3), 1.0);
}

TEST(Oracle, CycleHasOnePathPerStart) {
  const auto paths = enumerate_paths(cycle_diagram(4), 10, {});
  EXPECT_EQ(paths.size(), 4u);
  const auto pinned = enumerate_paths(cycle_diagram(4), 10, [](Index t, StateRef s) { return t != 3 || s == StateRef{0}; });
  ASSERT_EQ(pinned.size(), 1u);
  EXPECT_EQ(*pinned[0][0], 1u);
}

TEST(Oracle, PathCountMatchesTransitionMatrixPowers) {
  // Walks of length T-1 counted with powers of the adjacency matrix.
  const TransitionDiagram d = branching_diagram();
  Matrix A = Matrix::Zero(4, 4);
  for (const Transition& t : d.transitions) A(static_cast<Index>(*t.from), static_cast<Index>(*t.to)) = 1.0;
  Matrix P = Matrix::Identity(4, 4);
  for (Index T = 1; T <= 9; ++T) {
    EXPECT_EQ(enumerate_paths(d, T, {}).size(), static_cast<std::size_t>(P.sum())) << "T=" << T;
    P = P * A;
  }
}

TEST(Oracle, EveryEnumeratedPathIsValid) {
  const TransitionDiagram d = position_transition_diagram(3);
  const auto paths = enumerate_paths(d, 5, {});
  EXPECT_FALSE(paths.empty());
  for (const auto& p : paths) {
    for (std::size_t t = 0; t + 1 < p.size(); ++t)
      EXPECT_TRUE(d.allows(p[t], p[t + 1]) || (!p[t] && !p[t + 1]));
  }
}

// The two-level coupled assignment read off an enumerated joint path has zero cost.
TEST(Oracle, CoupledPathsGenerateConsistentAssignments) {
  const TransitionDiagram lo = regex_lower_diagram(), up = regex_upper_diagram();
  const CouplingTable table = regex_coupling_table();
  const Index T = 8;
  const auto paths = enumerate_coupled_paths(lo, up, table, T, {}, {});
  ASSERT_FALSE(paths.empty());
  for (const CoupledPath& p : paths) {
    TwoLevelModel m = build_two_level_network(transition_basis_matrix(lo), transition_basis_matrix(up),
                                              coupling_matrix(table, up.transitions.size(), lo.transitions.size()),
                                              T);
    m.net.variable(m.x1).value = encode_states(p.lower, lo.state_count);
    m.net.variable(m.x2).value = encode_states(p.upper, up.state_count);
    m.net.variable(m.h1).value = encode_transitions(lo, p.lower);
    m.net.variable(m.h2).value = encode_transitions(up, p.upper);
    Matrix V = Matrix::Zero(static_cast<Index>(table.pairs.size()), T - 1);
    for (Index t = 0; t + 1 < T; ++t) {
      const auto tu = *up.find_transition(p.upper[static_cast<std::size_t>(t)], p.upper[static_cast<std::size_t>(t) + 1]);
      const auto tl = *lo.find_transition(p.lower[static_cast<std::size_t>(t)], p.lower[static_cast<std::size_t>(t) + 1]);
      for (std::size_t j = 0; j < table.pairs.size(); ++j)
        if (table.pairs[j] == std::make_pair(tu, tl)) V(static_cast<Index>(j), t) = 1.0;
    }
    m.net.variable(m.v).value = V;
    ASSERT_EQ(total_cost(m.net), 0.0);
  }
}

TEST(Metrics, BasisMatchIsScaleAndOrderFree) {
  Matrix R(3, 2);
  R << 1, 0, 1, 1, 0, 1;
  Matrix L(3, 3);
  L << 0, 5, 0.1, 3, 5, 0.1, 3, 0, 0.1;
  EXPECT_NEAR(basis_match_error(R, L), 0.0, 1e-15);
  EXPECT_NEAR(basis_match_error(R, L.leftCols(1)), 1.0, 1e-15);
}

TEST(Metrics, ActiveFractionAndDominance) {
  Matrix M(2, 2);
  M << 1, 0, 1e-4, 0.5;
  EXPECT_DOUBLE_EQ(active_fraction(M), 0.5);
  EXPECT_EQ(active_fraction(Matrix::Zero(2, 2)), 0.0);
  EXPECT_DOUBLE_EQ(min_dominance(M, {0, 1}), 1.0 / 1.0001);
}

TEST(Metrics, SliceComparison) {
  Matrix ref(2, 3), got(2, 3);
  ref << 1, 0, 0, 0, 2, 0;
  got << 0.9, 0.1, 0.05, 0.2, 2.2, 0;
  const SliceComparison c = compare_slices(got, ref);
  EXPECT_EQ(c.argmax_mismatches, 0);
  EXPECT_NEAR(c.worst_relative_sum, 0.15, 1e-12);
  EXPECT_NEAR(c.worst_empty_sum, 0.05, 1e-15);
}

TEST(Config, MergeAndReject) {
  ExperimentConfig c;
  merge_experiment_config(c, Json::parse(R"({"experiment": "chain-deterministic", "seed": 3, "iters": 20,
                                              "noise": [0, 0.1], "sparseness": [[1, 0], [10, 0.2]],
                                              "observe": "x:1=S1"})"));
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(*c.iters, 20);
  EXPECT_EQ(c.noise->second, 0.1);
  EXPECT_EQ(c.sparseness->size(), 2u);
  EXPECT_EQ(c.observe.size(), 1u);
  EXPECT_EQ(resolve_variant(c), "full");
  EXPECT_THROW(merge_experiment_config(c, Json::parse(R"({"iterations": 3})")), ValidationError);
  EXPECT_THROW(merge_experiment_config(c, Json::parse(R"({"seed": "x"})")), ValidationError);
  c.variant = "nope";
  EXPECT_THROW(resolve_variant(c), ValidationError);
  c.experiment = "nope";
  EXPECT_THROW(resolve_variant(c), ValidationError);
}

TEST(Config, CatalogCoversEveryExperiment) {
  std::set<std::string> names;
  for (const auto& [name, variants] : experiment_catalog()) {
    names.insert(name);
    EXPECT_FALSE(variants.empty());
  }
  for (const char* n : {"chain-deterministic", "chain-nondeterministic", "learn-transitions", "regex-hier",
                        "target-tracker", "sparse-hier", "network"})
    EXPECT_TRUE(names.count(n)) << n;
}

TEST(Scenarios, FullChainPasses) {
  ExperimentConfig c;
  c.experiment = "chain-deterministic";
  const ExperimentResult r = run_experiment(c);
  EXPECT_TRUE(r.passed) << r.metrics.dump();
  EXPECT_LE(r.trace.iterations, 500);
  const Json s = summary_json(r);
  EXPECT_EQ(s["variant"], "full");
  EXPECT_TRUE(s.contains("final_rmse"));
}

TEST(Scenarios, PartialAndNoisyChainPass) {
  for (const char* v : {"partial", "noisy"}) {
    ExperimentConfig c;
    c.experiment = "chain-deterministic";
    c.variant = v;
    const ExperimentResult r = run_experiment(c);
    EXPECT_TRUE(r.passed) << v << ' ' << r.metrics.dump();
  }
}

TEST(Scenarios, ExactNondeterministicChainPasses) {
  ExperimentConfig c;
  c.experiment = "chain-nondeterministic";
  c.variant = "exact";
  const ExperimentResult r = run_experiment(c);
  EXPECT_TRUE(r.passed) << r.metrics.dump();
}

TEST(Scenarios, RegexHierarchyPasses) {
  ExperimentConfig c;
  c.experiment = "regex-hier";
  const ExperimentResult r = run_experiment(c);
  EXPECT_TRUE(r.passed) << r.metrics.dump();
}

TEST(Scenarios, UserNetworkWithData) {
  const auto dir = std::filesystem::temp_directory_path() / "pfn_exp_tests";
  std::filesystem::create_directories(dir);
  Matrix X(2, 4);
  X << 1, 0, 1, 0, 0, 1, 0, 1;
  write_matrix_csv(X, (dir / "x.csv").string());
  ExperimentConfig c;
  merge_experiment_config(c, Json::parse(R"({
    "experiment": "network", "iters": 300,
    "network": {
      "variables": [{"name": "X", "dim": 2, "slices": 4}, {"name": "H", "dim": 2, "slices": 3}],
      "blocks": [{"name": "W", "value": [[1, 0], [0, 1], [0, 1], [1, 0]]}],
      "equations": [{"name": "chain", "for": [1, 3], "child": ["X[t]", "X[t+1]"], "parents": ["H[t]"], "blocks": ["W"]}]
    },
    "data": {"X": "x.csv"}})"),
                          dir.string());
  const ExperimentResult r = run_experiment(c);
  EXPECT_TRUE(r.passed) << r.metrics.dump();
  EXPECT_TRUE(r.trace.converged);
}

TEST(Validate, DescribeNetwork) {
  ExperimentConfig c;
  c.experiment = "regex-hier";
  const std::string text = describe_network(build_experiment_network(c));
  EXPECT_NE(text.find("levels: 3"), std::string::npos) << text;
  EXPECT_NE(text.find("coupling level 2"), std::string::npos) << text;
}
