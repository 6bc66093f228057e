#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mgtk/temporal.hpp"
#include "testutil.hpp"

using namespace mgtk;
using namespace mgtk::testutil;

TEST_CASE("cloglog_prob: half-life, limits, poisson cross-check") {
  // delta * e^f = ln 2 gives probability one half
  const double f = std::log(std::log(2.0));
  CHECK(cloglog_prob(f, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(cloglog_prob(-1000.0, 1.0) == 0.0);
  CHECK(cloglog_prob(1000.0, 1.0) == 1.0);

  // f = 0, delta = 1: 1 - e^{-1}, equal to P(N >= 1) for a unit poisson
  const double p = cloglog_prob(0.0, 1.0);
  CHECK(p == doctest::Approx(0.6321206).epsilon(1e-6));
  double poisson_ge1 = 0.0, term = std::exp(-1.0);
  for (int k = 1; k < 40; ++k) {
    term /= k;  // e^{-1} / k!
    poisson_ge1 += term;
  }
  CHECK(p == doctest::Approx(poisson_ge1).epsilon(1e-12));
  CHECK_THROWS_AS(cloglog_prob(0.0, 0.0), MgtkError);
}

TEST_CASE("cloglog_prob strictly increases in f and delta") {
  auto rng = seeded_rng(4, 21);
  std::uniform_real_distribution<double> fs(-6.0, 4.0), ds(0.05, 8.0);
  for (int it = 0; it < 1000; ++it) {
    std::vector<double> grid;
    for (int i = 0; i < 6; ++i) grid.push_back(fs(rng));
    std::sort(grid.begin(), grid.end());
    const double delta = ds(rng);
    for (size_t i = 1; i < grid.size(); ++i) {
      if (grid[i] - grid[i - 1] < 1e-12) continue;
      const double hi = cloglog_prob(grid[i], delta);
      const double lo = cloglog_prob(grid[i - 1], delta);
      if (hi >= 1.0 - 1e-12 && lo >= 1.0 - 1e-12) continue;  // fp saturation
      REQUIRE(hi > lo);
    }
    if (cloglog_prob(grid[0], delta * 2) < 1.0 - 1e-12)
      REQUIRE(cloglog_prob(grid[0], delta * 2) > cloglog_prob(grid[0], delta));
  }
}

TEST_CASE("cloglog_inverse: closed form, round trip, delta offset") {
  CHECK(cloglog_inverse(1.0 - std::exp(-1.0), 1.0) == doctest::Approx(0.0).epsilon(1e-12));
  auto rng = seeded_rng(5, 22);
  std::uniform_real_distribution<double> fs(-5.0, 5.0), ds(0.1, 10.0);
  for (int it = 0; it < 1000; ++it) {
    const double f = fs(rng), d = ds(rng);
    const double p = cloglog_prob(f, d);
    if (p <= 0.0 || p >= 1.0) continue;
    REQUIRE(std::abs(cloglog_prob(cloglog_inverse(p, d), d) - p) <= 1e-10);
    // doubling delta shifts the inverse by -log 2
    REQUIRE(std::abs(cloglog_inverse(p, 2 * d) - (cloglog_inverse(p, d) - std::log(2.0))) <=
            1e-10);
  }
  CHECK_THROWS_AS(cloglog_inverse(0.0, 1.0), MgtkError);
  CHECK_THROWS_AS(cloglog_inverse(1.0, 1.0), MgtkError);
}

TEST_CASE("partition invariance: exact for cloglog, broken for logistic/probit") {
  // degenerate partition
  CHECK(verify_partition_invariance(Link::Cloglog, 0.7, 2.0, 1, 3) == 0.0);
  auto rng = seeded_rng(6, 23);
  std::uniform_real_distribution<double> fs(-5.0, 5.0), ds(0.01, 10.0);
  std::uniform_int_distribution<int> ks(2, 8);
  for (int it = 0; it < 2000; ++it) {
    const double f = fs(rng), d = ds(rng);
    REQUIRE(verify_partition_invariance(Link::Cloglog, f, d, ks(rng), it) <= 1e-12);
  }
  // the spec's logistic counterexample: f=0, delta=1, two equal halves
  const double survival_whole = 1.0 - link_prob(Link::Logistic, 0.0, 1.0);
  const double survival_half = 1.0 - link_prob(Link::Logistic, 0.0, 0.5);
  CHECK(std::abs(survival_whole - survival_half * survival_half) > 1e-3);
  CHECK(verify_partition_invariance(Link::Logistic, 0.0, 1.0, 2, 9) > 1e-3);

  double worst_logistic = 0, worst_probit = 0;
  for (int it = 0; it < 200; ++it) {
    const double f = fs(rng), d = ds(rng);
    const int k = ks(rng);
    worst_logistic = std::max(worst_logistic,
                              verify_partition_invariance(Link::Logistic, f, d, k, it));
    worst_probit = std::max(worst_probit,
                            verify_partition_invariance(Link::Probit, f, d, k, it));
  }
  CHECK(worst_logistic > 1e-4);
  CHECK(worst_probit > 1e-4);
}

TEST_CASE("simulate_bin_events: degenerate score, frequency, seed determinism") {
  BinSchedule bins{{1.0, 0.5, 2.0}};
  const auto dead = simulate_bin_events({-1000, -1000, -1000}, bins, 3);
  CHECK(dead.indicators == std::vector<int>{0, 0, 0});
  CHECK(dead.times.empty());

  const auto a = simulate_bin_events({0.3, -0.5, 0.1}, bins, 11);
  const auto b = simulate_bin_events({0.3, -0.5, 0.1}, bins, 11);
  CHECK(a.indicators == b.indicators);
  CHECK(a.times == b.times);

  // empirical frequency within 3 sigma of the cloglog probability
  const int n = 100000;
  std::vector<int> counts(3, 0);
  for (int it = 0; it < n; ++it) {
    const auto sim = simulate_bin_events({0.0, -1.0, 0.4}, bins, 1000 + it);
    for (int u = 0; u < 3; ++u) counts[u] += sim.indicators[u];
  }
  const std::vector<double> fvals{0.0, -1.0, 0.4};
  for (int u = 0; u < 3; ++u) {
    const double p = cloglog_prob(fvals[u], bins.widths[u]);
    const double sigma = std::sqrt(p * (1 - p) / n);
    REQUIRE(std::abs(double(counts[u]) / n - p) <= 3 * sigma);
  }
}

TEST_CASE("simulate_bin_events: merged indicators are the OR of fine bins") {
  // at fine resolution, OR-merging the indicator vector is exact by definition
  BinSchedule fine{std::vector<double>(8, 0.25)};
  const auto sim = simulate_bin_events(std::vector<double>(8, 0.2), fine, 17);
  const auto merged = merge_indicators(sim.indicators, 2);
  REQUIRE(merged.size() == 4);
  for (int u = 0; u < 4; ++u)
    CHECK(merged[u] == (sim.indicators[2 * u] | sim.indicators[2 * u + 1]));

  // refinement consistency: fine-then-merge matches the coarse distribution
  const int n = 40000;
  int coarse_hits = 0, fine_hits = 0;
  for (int it = 0; it < n; ++it) {
    BinSchedule coarse{{1.0}};
    coarse_hits +=
        simulate_bin_events({0.1}, coarse, 500000 + it).indicators[0];
    BinSchedule halves{{0.5, 0.5}};
    const auto f2 = simulate_bin_events({0.1, 0.1}, halves, 900000 + it);
    fine_hits += f2.indicators[0] | f2.indicators[1];
  }
  const double p = cloglog_prob(0.1, 1.0);
  const double sigma = std::sqrt(p * (1 - p) / n);
  CHECK(std::abs(double(coarse_hits) / n - p) <= 3.5 * sigma);
  CHECK(std::abs(double(fine_hits) / n - p) <= 3.5 * sigma);
}

TEST_CASE("nll: empty, single positive, and stability") {
  CHECK(nll({}, {}, 1) == 0.0);
  // one positive with p = 1/2 contributes -log(1/2)
  const double f_half = std::log(std::log(2.0));
  const double v = nll({{f_half, 1.0}}, {}, 1);
  CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // adding one negative adds its expected rate
  const double v2 = nll({{f_half, 1.0}}, {{-1.0, 2.0, 1.0, 1.0}}, 1);
  CHECK(v2 == doctest::Approx(std::log(2.0) + 2.0 * std::exp(-1.0)).epsilon(1e-12));
  CHECK_THROWS_AS(nll({}, {{0.0, 1.0, 0.0, 1.0}}, 1), MgtkError);  // q = 0
}

TEST_CASE("nll monte carlo negatives are unbiased on a small fixture") {
  // exhaustive negative mass over 5 tails vs averaged sampled estimate
  const std::vector<double> f{-0.2, 0.4, -1.1, 0.9, 0.0};
  const double delta = 0.7;
  double exact = 0;
  for (double fi : f) exact += delta * std::exp(fi);

  auto rng = seeded_rng(9, 24);
  std::uniform_int_distribution<int> pick(0, 4);
  const int k_neg = 4;
  const int trials = 100000;
  double acc = 0;
  for (int it = 0; it < trials; ++it) {
    std::vector<NegTerm> neg;
    for (int j = 0; j < k_neg; ++j)
      neg.push_back({f[pick(rng)], delta, 1.0 / 5.0, 1.0});
    acc += nll({}, neg, k_neg);
  }
  const double estimate = acc / trials;
  CHECK(std::abs(estimate - exact) / exact <= 0.01);
}

TEST_CASE("nll_gradient: finite differences, sign, saturation") {
  auto rng = seeded_rng(10, 25);
  std::uniform_real_distribution<double> fs(-4.0, 4.0), ds(0.1, 5.0);
  for (int it = 0; it < 500; ++it) {
    const double f = fs(rng), d = ds(rng);
    const PosTerm pos{f, d};
    const NegTerm neg{fs(rng), ds(rng), 0.25, 1.0};
    const auto g = nll_gradient({pos}, {neg}, 2);
    const double h = 1e-6;
    const double fd_pos =
        (nll({{f + h, d}}, {}, 2) - nll({{f - h, d}}, {}, 2)) / (2 * h);
    // fd noise floor ~1e-10; require relative accuracy only where resolvable
    if (std::abs(g.d_pos[0]) > 1e-3)
      REQUIRE(rel_err(g.d_pos[0], fd_pos) <= 1e-6);
    else
      REQUIRE(std::abs(g.d_pos[0] - fd_pos) <= 1e-8);
    const double fd_neg = (nll({}, {{neg.f + h, neg.delta, neg.q, 1.0}}, 2) -
                           nll({}, {{neg.f - h, neg.delta, neg.q, 1.0}}, 2)) /
                          (2 * h);
    if (std::abs(g.d_neg[0]) > 1e-3)
      REQUIRE(rel_err(g.d_neg[0], fd_neg) <= 1e-6);
    else
      REQUIRE(std::abs(g.d_neg[0] - fd_neg) <= 1e-8);
    REQUIRE(g.d_pos[0] < 0.0);  // raising a positive's score lowers the nll
    REQUIRE(g.d_neg[0] > 0.0);
  }
  // saturation: a huge positive score has vanishing gradient
  const auto sat = nll_gradient({{19.0, 1.0}}, {}, 1);
  CHECK(std::abs(sat.d_pos[0]) <= 1e-6);
}

TEST_CASE("sample_negatives: uniform proposal over non-positive tails") {
  TemporalKG kg(6, 1, {1.0});
  kg.add({0, 0, 1, 1});
  kg.add({0, 0, 2, 1});
  const auto neg = sample_negatives(kg, 0, 0, 1, 64, 3);
  REQUIRE(neg.size() == 64);
  for (const auto& s : neg) {
    CHECK(s.q == doctest::Approx(0.25));  // 4 non-positive tails
    CHECK(s.tail != 1);
    CHECK(s.tail != 2);
  }
  const auto again = sample_negatives(kg, 0, 0, 1, 64, 3);
  CHECK(again[0].tail == neg[0].tail);
}
