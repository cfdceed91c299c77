// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Takes a few minutes; set PFN_THREADS to parallelize the larger equations.

#include "pfn/experiments.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

using namespace pfn;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

ExperimentResult run(const std::string& experiment, const std::string& variant, std::uint64_t seed,
                     const std::function<void(ExperimentConfig&)>& tweak = {}) {
  ExperimentConfig c;
  c.experiment = experiment;
  c.variant = variant;
  c.seed = seed;
  if (tweak) tweak(c);
  return run_experiment(c);
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

std::string seeds_list(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (auto s : seeds) out += (out.empty() ? "" : ",") + std::to_string(s);
  return out.empty() ? "none" : out;
}

// Passing seeds among 0..9, with the experiment's own criterion.
std::vector<std::uint64_t> passing_seeds(const std::string& experiment, const std::string& variant,
                                         const std::function<bool(const ExperimentResult&)>& ok = {},
                                         const std::function<void(ExperimentConfig&)>& tweak = {}) {
  std::vector<std::uint64_t> out;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const ExperimentResult r = run(experiment, variant, s, tweak);
    if (ok ? ok(r) : r.passed) out.push_back(s);
  }
  return out;
}

Outcome c1() {
  const auto t0 = Clock::now();
  const ExperimentResult r = run("chain-deterministic", "full", 0);
  const double secs = seconds_since(t0);
  const bool pass = r.passed && r.trace.iterations <= 500 && secs < 5.0;
  return {pass, std::to_string(r.trace.iterations) + " iterations, max RMSE " + fmt(r.trace.final_max_rmse()) +
                    ", max |H - onehot| " + fmt(r.metrics["max_h_deviation"].get<double>()) + ", " + fmt(secs) + " s"};
}

Outcome c2() {
  double sum = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) sum += run("chain-deterministic", "noisy", s).trace.final_max_rmse();
  const double mean = sum / 10.0;
  return {mean >= 0.02 && mean <= 0.05, "mean final RMSE over 10 seeds " + fmt(mean) + " (want [0.02, 0.05])"};
}

Outcome c3() {
  const ExperimentResult r = run("chain-deterministic", "superposed", 0);
  return {r.passed, "max RMSE " + fmt(r.trace.final_max_rmse()) + " after " + std::to_string(r.trace.iterations) +
                        " iterations, oracle cost " + fmt(r.metrics["oracle_cost"].get<double>())};
}

Outcome c4() {
  const auto only = [](const std::string& obs) {
    return [obs](ExperimentConfig& c) {
      c.observe = {obs};
      c.iters = 500;
    };
  };
  const auto x1 = passing_seeds("chain-deterministic", "partial", {}, only("x:1=S1"));
  const auto x4 = passing_seeds("chain-deterministic", "partial", {}, only("x:4=S1"));
  return {x1.size() == 10 && x4.size() == 10,
          "argmax matches at 500 iterations: x1 observed on seeds " + seeds_list(x1) + "; x4 observed on seeds " +
              seeds_list(x4)};
}

Outcome c5() {
  const auto exact = passing_seeds("chain-nondeterministic", "exact");
  const auto sparse = passing_seeds("chain-nondeterministic", "sparse");
  return {exact.size() == 10 && sparse.size() == 10,
          "exact recovery on seeds " + seeds_list(exact) + "; >90% dominance with x10 hidden on seeds " +
              seeds_list(sparse)};
}

Outcome c6() {
  const auto ok = passing_seeds("chain-nondeterministic", "sample");
  return {ok.size() >= 8, std::to_string(ok.size()) + "/10 valid (seeds " + seeds_list(ok) + "), need 8"};
}

Outcome c7() {
  const auto six = passing_seeds("learn-transitions", "six");
  const auto eight = passing_seeds("learn-transitions", "eight");
  const auto sparse = passing_seeds("learn-transitions", "sparse-eight");
  return {six.size() >= 5 && eight.size() == 10 && sparse.size() == 10,
          "6 columns L1<0.05 on " + std::to_string(six.size()) + "/10 (need 5); 8 columns RMSE<1e-3 on " +
              std::to_string(eight.size()) + "/10 (need 10, seeds " + seeds_list(eight) + "); sparse 8 columns with " +
              ">=2 empty on " + std::to_string(sparse.size()) + "/10 (need 10)"};
}

Outcome c8() {
  const auto clean = passing_seeds("learn-transitions", "mixture");
  const auto noisy = passing_seeds("learn-transitions", "mixture-noisy");
  return {clean.size() >= 5 && noisy.size() >= 5,
          "noiseless RMSE<1e-3 and L1<0.05 on seeds " + seeds_list(clean) + "; noisy L1<0.15 on seeds " +
              seeds_list(noisy) + " (5 of 10 needed for each)"};
}

Outcome c9() {
  const ExperimentResult r = run("regex-hier", "default", 0);
  return {r.passed && r.trace.iterations <= 500,
          std::to_string(r.trace.iterations) + " iterations, max RMSE " + fmt(r.trace.final_max_rmse()) +
              ", prefix matches " + r.metrics["prefix_matches"].dump() + ", last-slice sum gap " +
              fmt(r.metrics["last_slice_sum_gap"].get<double>())};
}

Outcome c10() {
  const auto t0 = Clock::now();
  const ExperimentResult r = run("target-tracker", "clean", 0);
  const double secs = seconds_since(t0);
  return {r.passed && secs < 180.0,
          "max RMSE " + fmt(r.trace.final_max_rmse()) + " at " + std::to_string(r.trace.iterations) +
              " iterations, argmax mismatches " + r.metrics["argmax_mismatches"].dump() + ", worst sum error " +
              fmt(100.0 * r.metrics["worst_relative_sum_error"].get<double>()) + "%, " + fmt(secs) + " s"};
}

Outcome c11() {
  const ExperimentResult p = run("target-tracker", "predict", 0);
  const ExperimentResult t = run("target-tracker", "hide-tail", 0);
  return {p.passed && t.passed,
          "slice 25 hidden: max difference from full run " +
              fmt(p.metrics["max_difference_from_full_run"].get<double>()) + " (want < 1e-3); slices 22-26 hidden: " +
              "sum gap " + fmt(t.metrics["worst_cross_variable_sum_gap"].get<double>()) + ", superposed slices " +
              t.metrics["superposed_slices"].dump()};
}

Outcome c12() {
  const ExperimentResult r = run("sparse-hier", "sparse", 0);
  return {r.passed, "top-down RMSE " + fmt(r.metrics["reconstruction_rmse_from_top"].get<double>()) +
                        ", active fractions " + r.metrics["active_fraction_per_level"].dump()};
}

Matrix random_positive(Rng& rng, Index r, Index c) {
  Matrix M(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) M(i, j) = rng.uniform_positive(1.0);
  return M;
}

Outcome c13() {
  // KL monotonicity of the plain rule.
  double worst_rise = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Matrix X = random_positive(rng, 20, 30);
    Matrix W = random_positive(rng, 20, 5), H = random_positive(rng, 5, 30);
    double prev = kl_divergence(X, W * H, 0.0);
    for (int step = 0; step < 100; ++step) {
      H = nmf_right_update(X, W, H, 0.0);
      W = nmf_left_update(X, W, H, 0.0);
      const double now = kl_divergence(X, W * H, 0.0);
      worst_rise = std::max(worst_rise, now - prev);
      prev = now;
    }
  }
  const bool monotone = worst_rise <= 1e-9;

  Rng rng(100);
  int fixed_fail = 0, zero_fail = 0, sign_fail = 0;
  for (int n = 0; n < 1000; ++n) {
    const Index r = 1 + static_cast<Index>(rng.index(8)), k = 1 + static_cast<Index>(rng.index(6)),
                c = 1 + static_cast<Index>(rng.index(8));
    const double eps = n % 2 ? 0.0 : kDefaultEpsilon;
    // Exact factorizations are fixed points.
    const Matrix W = random_positive(rng, r, k), H = random_positive(rng, k, c);
    const Matrix X = W * H;
    const double tol = 1e-12 * (1.0 + std::max(W.maxCoeff(), H.maxCoeff()));
    if ((nmf_right_update(X, W, H, eps) - H).cwiseAbs().maxCoeff() > tol ||
        (nmf_left_update(X, W, H, eps) - W).cwiseAbs().maxCoeff() > tol)
      ++fixed_fail;
    // Zero entries stay zero. With k = 1 and the plain rule a zeroed entry
    // empties a column of W*H and the ratio is 0/0, so use the regularized rule there.
    const double zeps = (k == 1 && eps == 0.0) ? kDefaultEpsilon : eps;
    Matrix Hz = H, Wz = W;
    const Index zr = static_cast<Index>(rng.index(static_cast<std::size_t>(k)));
    const Index zc = static_cast<Index>(rng.index(static_cast<std::size_t>(c)));
    Hz(zr, zc) = 0.0;
    Wz(static_cast<Index>(rng.index(static_cast<std::size_t>(r))), zr) = 0.0;
    const Matrix Y = random_positive(rng, r, c);
    if (nmf_right_update(Y, W, Hz, zeps)(zr, zc) != 0.0) ++zero_fail;
    const Matrix Wn = nmf_left_update(Y, Wz, H, zeps);
    for (Index i = 0; i < r; ++i)
      if (Wz(i, zr) == 0.0 && Wn(i, zr) != 0.0) ++zero_fail;
    // Non-negative in, non-negative and finite out.
    const auto [W2, H2] = nsnmf_updates(Y, W, H, eps, rng.uniform(), NormalizationPolicy::unit_column_sum());
    if (!is_non_negative(W2) || !is_non_negative(H2) || !is_non_negative(nmf_right_update(Y, W, H, eps)))
      ++sign_fail;
  }
  return {monotone && fixed_fail == 0 && zero_fail == 0 && sign_fail == 0,
          "largest KL rise over 10x100 steps " + fmt(worst_rise) + " (slack 1e-9); 1000-case failures: fixed point " +
              std::to_string(fixed_fail) + ", zero locking " + std::to_string(zero_fail) + ", non-negativity " +
              std::to_string(sign_fail)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria = {
      {"C1 deterministic chain, fully observed", c1},
      {"C2 noisy chain RMSE band", c2},
      {"C3 superposition", c3},
      {"C4 partial observation, deterministic", c4},
      {"C5 nondeterministic partial sequence", c5},
      {"C6 all-hidden sampling", c6},
      {"C7 learning an elementary sequence", c7},
      {"C8 mixture learning", c8},
      {"C9 regex hierarchy", c9},
      {"C10 target tracker, clean scene", c10},
      {"C11 tracker prediction", c11},
      {"C12 sparse hierarchy (synthetic)", c12},
      {"C13 kernel properties", c13},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (13 - failed) << "/13 criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
