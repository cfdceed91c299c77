#include "pfn/builders.hpp"
#include "pfn/datagen.hpp"
#include "pfn/engine.hpp"

#include <gtest/gtest.h>

#include <limits>
#include <sstream>

using namespace pfn;

namespace {

ChainModel observed_chain(const TransitionDiagram& d, const Matrix& X) {
  ChainModel m = build_chain_network(transition_basis_matrix(d), X.cols());
  m.net.observe(m.x, X);
  compile(m.net);
  return m;
}

// x = W1 a and x = W2 b: one variable, two child copies on level 1.
struct SharedChild {
  FactorNetwork net;
  VarId x, a, b;
};

SharedChild shared_child(double wa, double wb) {
  SharedChild s;
  s.x = s.net.add_variable("x", 1);
  s.a = s.net.add_variable("a", 1);
  s.b = s.net.add_variable("b", 1);
  s.net.add_equation(at(s.x), {at(s.a)}, {s.net.add_block("Wa", Matrix::Constant(1, 1, wa))});
  s.net.add_equation(at(s.x), {at(s.b)}, {s.net.add_block("Wb", Matrix::Constant(1, 1, wb))});
  compile(s.net);
  return s;
}

}  // namespace

TEST(TotalCost, SingleEquation) {
  FactorNetwork net;
  const VarId x = net.add_variable("x", 1), h = net.add_variable("h", 1);
  net.add_equation(at(x), {at(h)}, {net.add_block("W", Matrix::Ones(1, 1))});
  net.variable(x).value(0, 0) = 2.0;
  net.variable(h).value(0, 0) = 1.0;
  EXPECT_DOUBLE_EQ(total_cost(net), 1.0);
}

TEST(TotalCost, ChainAtGeneratingPathIsZero) {
  const TransitionDiagram d = cycle_diagram(4);
  Rng rng(1);
  const auto path = sample_state_path(d, 10, rng);
  ChainModel m = observed_chain(d, encode_states(path, 4));
  m.net.variable(m.h).value = encode_transitions(d, path);
  make_consistent(m.net);
  EXPECT_EQ(total_cost(m.net), 0.0);
  // Knocking one transition out leaves two unit residuals.
  m.net.variable(m.h).value(0, 0) = 0.0;
  m.net.variable(m.h).value.col(0).setZero();
  EXPECT_DOUBLE_EQ(total_cost(m.net), 2.0);
}

TEST(Steps, DownStepWritesProductIntoChildCopy) {
  FactorNetwork net;
  const VarId x = net.add_variable("x", 2), h = net.add_variable("h", 2);
  Matrix W(2, 2);
  W << 1, 2, 3, 4;
  net.add_equation(at(x), {at(h)}, {net.add_block("W", W)});
  net.variable(h).value << 1.0, 0.5;
  compile(net);
  down_step(net, 1);
  const Matrix& child = net.merged().front().child_copy;
  EXPECT_DOUBLE_EQ(child(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(child(1, 0), 5.0);
  // Model values move only when averaged.
  EXPECT_EQ(net.variable(x).value(0, 0), 0.0);
  average_children(net, 1);
  EXPECT_DOUBLE_EQ(net.variable(x).value(1, 0), 5.0);
}

TEST(Steps, AverageChildrenTakesMeanOfCopies) {
  SharedChild s = shared_child(1.0, 3.0);
  s.net.variable(s.a).value(0, 0) = 1.0;
  s.net.variable(s.b).value(0, 0) = 1.0;
  make_consistent(s.net);
  down_step(s.net, 1);
  average_children(s.net, 1);
  EXPECT_DOUBLE_EQ(s.net.variable(s.x).value(0, 0), 2.0);
  for (const MergedEquation& eq : s.net.merged()) EXPECT_DOUBLE_EQ(eq.child_copy(0, 0), 2.0);
}

TEST(Steps, AverageLevelUsesEveryCopy) {
  SharedChild s = shared_child(1.0, 1.0);
  s.net.merged()[0].child_copy(0, 0) = 1.0;
  s.net.merged()[1].child_copy(0, 0) = 3.0;
  average_level(s.net, 1);
  EXPECT_DOUBLE_EQ(s.net.variable(s.x).value(0, 0), 2.0);
  EXPECT_EQ(max_copy_deviation(s.net), 0.0);
}

TEST(Steps, AveragingKeepsObservedEntries) {
  SharedChild s = shared_child(1.0, 1.0);
  s.net.observe(s.x, Matrix::Constant(1, 1, 7.0));
  make_consistent(s.net);
  s.net.merged()[0].child_copy(0, 0) = 1.0;
  s.net.merged()[1].child_copy(0, 0) = 3.0;
  average_level(s.net, 1);
  EXPECT_EQ(s.net.variable(s.x).value(0, 0), 7.0);
  EXPECT_EQ(s.net.merged()[0].child_copy(0, 0), 7.0);
}

TEST(Run, FullChainInfersTransitions) {
  const TransitionDiagram d = cycle_diagram(4);
  Rng rng(2);
  const auto path = sample_state_path(d, 10, rng);
  ChainModel m = observed_chain(d, encode_states(path, 4));
  InferenceConfig config;
  config.max_iters = 500;
  const RunTrace trace = run(m.net, config);
  EXPECT_TRUE(trace.converged);
  EXPECT_LE(trace.iterations, 500);
  const Matrix H = m.net.variable(m.h).value;
  for (Index t = 0; t < H.cols(); ++t) {
    Index k = 0;
    H.col(t).maxCoeff(&k);
    EXPECT_EQ(static_cast<std::size_t>(k), *d.find_transition(path[static_cast<std::size_t>(t)],
                                                              path[static_cast<std::size_t>(t) + 1]));
  }
}

TEST(Run, Scheme2AlsoConverges) {
  const TransitionDiagram d = cycle_diagram(4);
  Rng rng(3);
  ChainModel m = observed_chain(d, encode_states(sample_state_path(d, 10, rng), 4));
  InferenceConfig config;
  config.averaging = AveragingScheme::scheme2;
  config.max_iters = 500;
  EXPECT_TRUE(run(m.net, config).converged);
}

TEST(Run, ObservedValuesNeverChange) {
  const TransitionDiagram d = branching_diagram();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Matrix X = encode_states(sample_state_path(d, 12, rng), 4);
    X = add_uniform_noise(X, 0.0, 0.1, seed);
    ChainModel m = build_chain_network(transition_basis_matrix(d), 12);
    m.net.observe(m.x, X);
    m.net.set_role(m.x, 5, Role::hidden);
    InferenceConfig config;
    config.max_iters = 50;
    config.seed = seed;
    run(m.net, config);
    const Matrix& V = m.net.variable(m.x).value;
    for (Index t = 0; t < 12; ++t)
      if (t != 5) {
        ASSERT_TRUE(V.col(t) == X.col(t)) << "seed " << seed << " slice " << t;
      }
    ASSERT_TRUE(is_non_negative(V));
    ASSERT_TRUE(is_non_negative(m.net.variable(m.h).value));
  }
}

TEST(Run, SameSeedSameTrace) {
  const TransitionDiagram d = branching_diagram();
  Rng rng(4);
  const Matrix X = encode_states(sample_state_path(d, 12, rng), 4);
  auto once = [&] {
    ChainModel m = build_chain_network(transition_basis_matrix(d), 12, true,
                                       NormalizationPolicy::unit_column_sum());
    m.net.observe(m.x, X);
    InferenceConfig config;
    config.max_iters = 40;
    config.seed = 9;
    std::ostringstream out;
    write_trace_csv(run(m.net, config), out);
    return out.str();
  };
  EXPECT_EQ(once(), once());
}

TEST(Run, DisabledLearningLeavesBlocksAlone) {
  const TransitionDiagram d = branching_diagram();
  Rng rng(5);
  const Matrix X = encode_states(sample_state_path(d, 12, rng), 4);
  ChainModel m = build_chain_network(transition_basis_matrix(d), 12, true, NormalizationPolicy::unit_column_sum());
  m.net.observe(m.x, X);
  const Matrix before = m.net.block(m.w).value;
  InferenceConfig config;
  config.max_iters = 30;
  config.learn["W"] = false;
  run(m.net, config);
  EXPECT_TRUE(m.net.block(m.w).value == before);

  config.learn.clear();
  config.learning = false;
  run(m.net, config);
  EXPECT_TRUE(m.net.block(m.w).value == before);
}

TEST(Run, LearnedBlocksKeepUnitColumns) {
  const TransitionDiagram d = branching_diagram();
  Rng rng(6);
  const Matrix X = encode_states(sample_state_path(d, 12, rng), 4);
  ChainModel m = build_chain_network(Matrix::Ones(8, 6), 12, true, NormalizationPolicy::unit_column_sum());
  m.net.observe(m.x, X);
  InferenceConfig config;
  config.max_iters = 30;
  run(m.net, config);
  const Matrix& W = m.net.block(m.w).value;
  for (Index c = 0; c < W.cols(); ++c) EXPECT_NEAR(W.col(c).sum(), 1.0, 1e-12);
}

// Linear combinations of generating assignments generate the same
// combination of observations, so the cost stays zero.
TEST(Property, SuperposedAssignmentsHaveZeroCost) {
  const TransitionDiagram d = branching_diagram();
  Rng rng(7);
  for (int n = 0; n < 1000; ++n) {
    const Index T = 3 + static_cast<Index>(rng.index(10));
    const auto p1 = sample_state_path(d, T, rng), p2 = sample_state_path(d, T, rng);
    const double alpha = rng.uniform_positive(2.0), beta = rng.uniform_positive(2.0);
    ChainModel m = build_chain_network(transition_basis_matrix(d), T);
    m.net.variable(m.x).value = alpha * encode_states(p1, 4) + beta * encode_states(p2, 4);
    m.net.variable(m.h).value = alpha * encode_transitions(d, p1) + beta * encode_transitions(d, p2);
    ASSERT_LT(total_cost(m.net), 1e-24) << "case " << n;
  }
}

TEST(Run, NanRaisesNumericError) {
  const TransitionDiagram d = cycle_diagram(3);
  Rng rng(8);
  ChainModel m = observed_chain(d, encode_states(sample_state_path(d, 6, rng), 3));
  m.net.block(m.w).value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  InferenceConfig config;
  config.max_iters = 5;
  try {
    run(m.net, config);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("chain"), std::string::npos) << e.what();
  }
}

TEST(Run, OverrideHidesVariableMidRun) {
  const TransitionDiagram d = cycle_diagram(4);
  Rng rng(9);
  ChainModel m = observed_chain(d, encode_states(sample_state_path(d, 10, rng), 4));
  InferenceConfig config;
  config.max_iters = 10;
  config.stop_on_convergence = false;
  config.overrides.push_back({4, "X", Role::hidden});
  const RunTrace trace = run(m.net, config);
  EXPECT_EQ(trace.iterations, 10);
  EXPECT_FALSE(m.net.variable(m.x).any_observed());

  config.overrides = {{1, "nope", Role::hidden}};
  EXPECT_THROW(run(m.net, config), ValidationError);
}

TEST(Run, ConfigValidation) {
  FactorNetwork net;
  InferenceConfig config;
  config.rmse_tol = 0.0;
  EXPECT_THROW(run(net, config), ParameterError);
  config = {};
  config.max_iters = 0;
  EXPECT_THROW(run(net, config), ParameterError);
  config = {};
  config.init_scale = -1.0;
  EXPECT_THROW(run(net, config), ParameterError);
}

TEST(Trace, CsvHeaderAndRows) {
  const TransitionDiagram d = cycle_diagram(4);
  Rng rng(10);
  ChainModel m = observed_chain(d, encode_states(sample_state_path(d, 10, rng), 4));
  InferenceConfig config;
  config.max_iters = 3;
  config.stop_on_convergence = false;
  std::ostringstream out;
  write_trace_csv(run(m.net, config), out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "iteration,equation,rmse,total_cost");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}
