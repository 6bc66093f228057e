#include <doctest.h>

#include <Eigen/Dense>
#include <random>

#include "maxent_oracle.hpp"
#include "mgtk/maxent.hpp"

using namespace mgtk;
using namespace mgtk::testutil;

TEST_CASE("empirical_moments: direct means and a second-pass oracle") {
  auto single = empirical_moments({2.0}, {1.0});
  CHECK(single.c_D == 2.0);
  CHECK(single.c_S == 1.0);
  auto pair = empirical_moments({1.0, 3.0}, {0.0, 0.0});
  CHECK(pair.c_D == doctest::Approx(2.0));

  auto rng = seeded_rng(8, 11);
  std::uniform_real_distribution<double> unit(0.0, 5.0);
  std::vector<double> e, s;
  for (int i = 0; i < 57; ++i) {
    e.push_back(unit(rng));
    s.push_back(unit(rng) - 2.5);
  }
  const auto m = empirical_moments(e, s);
  double se = 0, ss = 0;  // independent second pass
  for (double v : e) se += v;
  for (double v : s) ss += v;
  CHECK(m.c_D == doctest::Approx(se / 57.0).epsilon(1e-14));
  CHECK(m.c_S == doctest::Approx(ss / 57.0).epsilon(1e-14));
  CHECK_THROWS_AS(empirical_moments({}, {}), EmptySupportError);
}

TEST_CASE("check_nondegeneracy: collinear fixture rejected, independent rows ok") {
  // S = D = (1,2,3) is the canonical rank-deficiency failure
  const auto bad = check_nondegeneracy(make_feature_matrix({1, 2, 3}, {1, 2, 3}));
  CHECK(bad.status == NondegenStatus::RankDeficient);
  CHECK(bad.rank == 2);

  const auto ok = check_nondegeneracy(make_feature_matrix({1, 0, 0}, {0, 1, 0}));
  CHECK(ok.status == NondegenStatus::Ok);
  CHECK(ok.rank == 3);

  // kappa agrees with an independent gram-eigenvalue route
  const FeatureMatrix f = make_feature_matrix({0.3, 1.4, 2.2, 0.9}, {2.0, 0.4, 1.1, 2.7});
  const auto rep = check_nondegeneracy(f);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(f * f.transpose());
  const double kappa_gram =
      std::sqrt(eig.eigenvalues()(2) / eig.eigenvalues()(0));
  CHECK(rep.kappa == doctest::Approx(kappa_gram).epsilon(1e-9));

  const auto illcond = check_nondegeneracy(
      make_feature_matrix({1.0, 1.0 + 1e-9, 2.0}, {1.0, 1.0, 1.0 + 1e-9}), 1e3);
  CHECK(illcond.status != NondegenStatus::Ok);
}

TEST_CASE("repair_degeneracy: jitter breaks collinearity on every seed") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    RepairContext ctx;
    ctx.candidates = {0, 1, 2};
    ctx.pool = {0, 1, 2};
    ctx.k_min = 3;
    ctx.featurize = [](int t) { return std::make_pair(double(t + 1), double(t + 1)); };
    const FeatureMatrix f = make_feature_matrix({1, 2, 3}, {1, 2, 3});
    const FeatureMatrix g = repair_degeneracy(f, ctx, seed);
    REQUIRE(check_nondegeneracy(g).ok());
  }
}

TEST_CASE("repair_degeneracy: ok matrix unchanged; K below K_min expanded first") {
  const FeatureMatrix ok = make_feature_matrix({1, 0, 0}, {0, 1, 0});
  RepairContext ctx;
  ctx.featurize = [](int) { return std::make_pair(0.0, 0.0); };
  const FeatureMatrix same = repair_degeneracy(ok, ctx, 1);
  CHECK((same - ok).norm() == 0.0);

  RepairContext expand;
  expand.candidates = {0, 1};
  expand.pool = {0, 1, 2, 3, 4, 5};
  expand.k_min = 5;
  expand.featurize = [](int t) {
    return std::make_pair(double(t * t % 7), double((3 * t + 1) % 5));
  };
  const FeatureMatrix small = make_feature_matrix({0.0, 0.0}, {1.0, 1.0});
  const FeatureMatrix repaired = repair_degeneracy(small, expand, 2);
  CHECK(repaired.cols() >= 5);
  CHECK(int(expand.candidates.size()) >= 5);
  CHECK(check_nondegeneracy(repaired).ok());
}

TEST_CASE("solve_maxent: constant features with matching moments give uniform") {
  SolveOptions opts;
  opts.require_nondegenerate = false;
  const auto sol = solve_maxent(make_feature_matrix({2, 2, 2, 2}, {0.7, 0.7, 0.7, 0.7}),
                                {0.7, 2.0}, opts);
  CHECK(sol.converged);
  CHECK(sol.beta == 0.0);
  CHECK(sol.tau == 0.0);
  for (int i = 0; i < 4; ++i) CHECK(sol.probs(i) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("solve_maxent: spec K=3 fixture recovers the uniform maximizer") {
  SolveOptions opts;
  opts.require_nondegenerate = false;
  const std::vector<double> s{0, 1, 2}, d{2, 1, 0};
  const auto sol = solve_maxent(make_feature_matrix(s, d), {1.0, 1.0}, opts);
  CHECK(sol.converged);
  for (int i = 0; i < 3; ++i)
    CHECK(sol.probs(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  // the grid oracle confirms uniform is the feasible entropy maximizer
  const GridBest grid = simplex_grid_best(s, d, 1.0, 1.0, 1e-3, 1e-5);
  REQUIRE(grid.found);
  CHECK(entropy(sol.probs) >= grid.entropy - 1e-4);
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(sol.probs(i) - grid.probs(i)) <= 1e-2);
}

TEST_CASE("solve_maxent: nondegenerate instances recover the planted distribution") {
  auto rng = seeded_rng(31, 12);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int inst = 0; inst < 40; ++inst) {
    const int k = 4 + int(unit(rng) * 4);
    std::vector<double> s(k), d(k);
    Eigen::VectorXd p0(k);
    for (int i = 0; i < k; ++i) {
      s[i] = unit(rng);
      d[i] = 2.0 * unit(rng);
      p0(i) = 0.1 + unit(rng);
    }
    p0 /= p0.sum();
    MomentConstraints c;
    for (int i = 0; i < k; ++i) {
      c.c_S += p0(i) * s[i];
      c.c_D += p0(i) * d[i];
    }
    const FeatureMatrix f = make_feature_matrix(s, d);
    if (!check_nondegeneracy(f, 1e4).ok()) continue;
    const auto sol = solve_maxent(f, c);
    REQUIRE(sol.converged);
    REQUIRE(sol.residual_S <= 1e-8);
    REQUIRE(sol.residual_D <= 1e-8);
    // p0 is feasible, so the entropy maximizer dominates it
    REQUIRE(entropy(sol.probs) >= entropy(p0) - 1e-10);
    // solution probabilities have the stated log-linear form
    for (int i = 0; i < k; ++i) {
      const double form = std::exp(sol.alpha + sol.beta * s[i] - sol.tau * d[i]);
      REQUIRE(std::abs(sol.probs(i) - form) <= 1e-8);
    }
  }
}

TEST_CASE("solve_maxent: unique modulo gauge across initializations") {
  const std::vector<double> s{0.2, 0.9, 0.4, 0.7}, d{1.5, 0.3, 0.8, 1.1};
  MomentConstraints c{0.9, 0.55};
  SolveOptions a;
  const auto sol_a = solve_maxent(make_feature_matrix(s, d), c, a);
  SolveOptions b;
  b.beta0 = 3.0;
  b.tau0 = -2.0;
  const auto sol_b = solve_maxent(make_feature_matrix(s, d), c, b);
  REQUIRE(sol_a.converged);
  REQUIRE(sol_b.converged);
  CHECK(std::abs(sol_a.beta - sol_b.beta) <= 1e-7);
  CHECK(std::abs(sol_a.tau - sol_b.tau) <= 1e-7);
  for (int i = 0; i < 4; ++i)
    CHECK(std::abs(sol_a.probs(i) - sol_b.probs(i)) <= 1e-8);
  CHECK(std::abs(sol_a.alpha - sol_b.alpha) <= 1e-7);  // alpha fixed by normalization
}

TEST_CASE("solve_maxent: continuity in the constraints") {
  const std::vector<double> s{0.1, 0.8, 0.5, 0.25}, d{1.2, 0.2, 0.9, 0.55};
  MomentConstraints c{0.8, 0.45};
  const auto base = solve_maxent(make_feature_matrix(s, d), c);
  MomentConstraints cp{c.c_D + 1e-6, c.c_S - 1e-6};
  const auto moved = solve_maxent(make_feature_matrix(s, d), cp);
  REQUIRE(base.converged);
  REQUIRE(moved.converged);
  CHECK((base.probs - moved.probs).cwiseAbs().maxCoeff() <= 1e-3);
}

TEST_CASE("solve_maxent: refusals and infeasibility") {
  // the nondegeneracy-failure fixture must be refused without repair
  CHECK_THROWS_AS(solve_maxent(make_feature_matrix({1, 2, 3}, {1, 2, 3}), {2.0, 2.0}),
                  DegenerateSystemError);
  // constraints outside the feature hull cannot be matched
  SolveOptions opts;
  opts.max_iter = 500;
  CHECK_THROWS_AS(
      solve_maxent(make_feature_matrix({0.2, 0.9, 0.4}, {1.5, 0.3, 0.8}),
                   {5.0, 0.5}, opts),
      InfeasibleConstraintsError);
  // negative tau is a warning, not an error
  const auto sol = solve_maxent(make_feature_matrix({0.1, 0.9, 0.3, 0.6},
                                                    {0.2, 1.4, 0.5, 0.9}),
                                {1.04, 0.67});
  CHECK(sol.converged);
  CHECK(sol.tau_negative == (sol.tau < 0));
}

TEST_CASE("canonical_score: arithmetic and gauge shift") {
  CHECK(canonical_score(0, 0, 0, 123.0, -7.0) == 0.0);
  CHECK(canonical_score(1, 2, 0.5, 1, 2) == doctest::Approx(2.0));
  const double base = canonical_score(0.4, 1.1, 0.7, 0.3, 0.9);
  CHECK(canonical_score(0.4 + 5.0, 1.1, 0.7, 0.3, 0.9) ==
        doctest::Approx(base + 5.0).epsilon(1e-14));
}
