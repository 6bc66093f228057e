#include <doctest.h>

#include <cmath>
#include <random>

#include "mgtk/mixture.hpp"
#include "testutil.hpp"

using namespace mgtk;

TEST_CASE("composite_energy: one-hot, mean, input validation") {
  CHECK(composite_energy({0, 1, 0}, {5.0, 7.0, 9.0}) == 7.0);
  CHECK(composite_energy({1.0 / 3, 1.0 / 3, 1.0 / 3}, {1, 2, 3}) ==
        doctest::Approx(2.0).epsilon(1e-12));
  CHECK_THROWS_AS(composite_energy({0.5, 0.2}, {1, 1}), MgtkError);  // off simplex
  CHECK_THROWS_AS(composite_energy({0.5, 0.5}, {-1, 1}), MgtkError);
}

TEST_CASE("composite_energy invariant under random gauge isometries") {
  DomainBounds bounds;
  auto rng = seeded_rng(12, 31);
  for (int it = 0; it < 200; ++it) {
    std::vector<ManifoldKind> kinds{{Manifold::Euclidean, 3},
                                    {Manifold::Hyperbolic, 3},
                                    {Manifold::Spherical, 3}};
    std::vector<double> weights{0.2, 0.5, 0.3};
    std::vector<double> before, after;
    for (const auto& kind : kinds) {
      const Transport phi = random_isometry(kind, rng, bounds, 0.3);
      const Point xh = random_point(kind, rng, bounds, 0.3);
      const Point xt = random_point(kind, rng, bounds, 0.3);
      before.push_back(squared_distance(apply_transport(phi, xh), xt));
      // gauge: x -> U x, phi -> U phi U^{-1}
      const Transport gauge = random_isometry(kind, rng, bounds, 0.3);
      const Transport conj =
          compose_transports(gauge, compose_transports(phi, inverse_transport(gauge)));
      after.push_back(squared_distance(
          apply_transport(conj, apply_transport(gauge, xh)),
          apply_transport(gauge, xt)));
    }
    REQUIRE(std::abs(composite_energy(weights, before) -
                     composite_energy(weights, after)) <= 1e-9);
  }
}

TEST_CASE("distortion_energy: exact zero, single pair, brute-force oracle") {
  // two entities at embedded distance equal to graph distance
  TemporalKG kg(2, 1, {1.0});
  kg.add({0, 0, 1, 1});
  ManifoldKind kind{Manifold::Euclidean, 2};
  std::vector<Point> emb(2);
  emb[0] = {kind, Vec::Zero(2)};
  emb[1] = {kind, (Vec(2) << 1.0, 0.0).finished()};
  const Transport id = Transport::identity(kind);
  CHECK(distortion_energy(kg, 0, 1, emb, id) == doctest::Approx(0.0));

  // single pair, embedded distance 3 vs graph distance 1 -> (3-1)^2
  emb[1].coords << 3.0, 0.0;
  CHECK(distortion_energy(kg, 0, 1, emb, id) == doctest::Approx(4.0));

  // random kg against an independent loop over the quadruple multiset
  auto rng = seeded_rng(13, 32);
  TemporalKG big(7, 2, {1.0, 1.0});
  std::uniform_int_distribution<int> ent(0, 6), bin(1, 2);
  for (int i = 0; i < 25; ++i) {
    Quad q{ent(rng), i % 2, ent(rng), bin(rng)};
    if (!big.has(q)) big.add(q);
  }
  std::vector<Point> bemb;
  for (int i = 0; i < 7; ++i) bemb.push_back(random_point(kind, rng));
  for (int r = 0; r < 2; ++r) {
    const double got = distortion_energy(big, r, 2, bemb, id);
    double want = 0;
    int count = 0;
    for (const Quad& q : big.quads()) {
      if (q.r != r) continue;
      ++count;
      const auto dg = graph_distance(big, q.h, q.t, 2);
      const double target = dg ? double(*dg) : 6.0;  // n-1 for unreachable
      const double gap = geodesic_distance(bemb[q.h], bemb[q.t]) - target;
      want += gap * gap;
    }
    REQUIRE(got == doctest::Approx(want / count).epsilon(1e-12));
  }
  CHECK_THROWS_AS(distortion_energy(big, 0, 0, bemb, id), EmptySupportError);
}

TEST_CASE("distortion_energy stays within the uniform bound") {
  DomainBounds bounds;
  auto rng = seeded_rng(14, 33);
  ManifoldKind kind{Manifold::Hyperbolic, 2};
  TemporalKG kg(6, 1, {1.0});
  std::uniform_int_distribution<int> ent(0, 5);
  for (int i = 0; i < 10; ++i) {
    Quad q{ent(rng), 0, ent(rng), 1};
    if (!kg.has(q)) kg.add(q);
  }
  std::vector<Point> emb;
  for (int i = 0; i < 6; ++i) emb.push_back(random_point(kind, rng, bounds));
  const double e =
      distortion_energy(kg, 0, 1, emb, Transport::identity(kind), bounds.R_H);
  const double diameter = hyperbolic_diameter(bounds.R_H);
  CHECK(e <= (diameter + 5.0) * (diameter + 5.0));
}

TEST_CASE("softmax_weights: symmetry, temperature collapse, equivariance") {
  const auto uniform = softmax_weights({3.0, 3.0, 3.0}, 0.7);
  for (double w : uniform) CHECK(w == doctest::Approx(1.0 / 3).epsilon(1e-12));

  // suboptimal weights collapse at the rate exp(-dE/lambda)
  const auto sharp = softmax_weights({1.0, 2.0, 2.0}, 0.05);
  CHECK(sharp[1] <= 2.1e-9);
  CHECK(sharp[2] <= 2.1e-9);
  CHECK(sharp[1] == doctest::Approx(std::exp(-20.0)).epsilon(1e-6));

  const auto base = softmax_weights({0.5, 1.5, 0.9}, 0.3);
  const auto perm = softmax_weights({0.9, 0.5, 1.5}, 0.3);
  CHECK(base[0] == doctest::Approx(perm[1]).epsilon(1e-14));
  CHECK(base[1] == doctest::Approx(perm[2]).epsilon(1e-14));
  CHECK(base[2] == doctest::Approx(perm[0]).epsilon(1e-14));
  CHECK_THROWS_AS(softmax_weights({1.0}, 0.0), MgtkError);
}

TEST_CASE("log_sum_exp_energy: single value, hand check, soft-min bounds") {
  CHECK(log_sum_exp_energy({4.2}, 0.8) == doctest::Approx(4.2).epsilon(1e-12));
  CHECK(log_sum_exp_energy({1, 2, 3}, 1.0) ==
        doctest::Approx(-std::log((std::exp(-1.0) + std::exp(-2.0) + std::exp(-3.0)) / 3.0))
            .epsilon(1e-12));
  CHECK(log_sum_exp_energy({1, 2, 3}, 1.0) == doctest::Approx(1.691).epsilon(1e-3));
  CHECK(log_sum_exp_energy({1, 2, 3}, 1.0) >= 1.0);
  CHECK(log_sum_exp_energy({1, 2, 3}, 1.0) <= 1.0 + std::log(3.0));

  auto rng = seeded_rng(15, 34);
  std::uniform_real_distribution<double> es(-5.0, 15.0), ls(0.01, 3.0);
  std::uniform_int_distribution<int> ks(1, 6);
  for (int it = 0; it < 1000; ++it) {
    const int k = ks(rng);
    std::vector<double> e(k);
    for (double& v : e) v = es(rng);
    const double lambda = ls(rng);
    const double soft = log_sum_exp_energy(e, lambda);
    const double emin = *std::min_element(e.begin(), e.end());
    REQUIRE(emin <= soft + 1e-12);
    REQUIRE(soft <= emin + lambda * std::log(double(k)) + 1e-12);
  }

  // lambda -> 0 recovers the minimum within lambda log M
  const std::vector<double> e{2.0, 0.4, 1.1};
  for (double lambda : {0.1, 0.01, 0.001})
    CHECK(std::abs(log_sum_exp_energy(e, lambda) - 0.4) <=
          lambda * std::log(3.0) + 1e-12);
}

TEST_CASE("mixture convergence toward the minimum-distortion set") {
  // strict minimum: off-minimum weight decays like exp(-dE/lambda)
  const std::vector<double> e{0.7, 1.5, 2.0};
  double prev_off = 1.0;
  for (double lambda : {1.0, 0.5, 0.1, 0.05, 0.01}) {
    const auto w = softmax_weights(e, lambda);
    const double off = w[1] + w[2];
    CHECK(off < prev_off);
    prev_off = off;
    CHECK(w[1] <= 3.0 * std::exp(-(e[1] - e[0]) / lambda));
    CHECK(w[2] <= 3.0 * std::exp(-(e[2] - e[0]) / lambda));
  }
  // tied minimum: weights approach 1/|M*| without explicit tie-breaking
  const auto tied = softmax_weights({0.3, 0.3, 5.0}, 0.01);
  CHECK(tied[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(tied[1] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("temperature: schedule anchors and floor") {
  CHECK(temperature(0, 10, 1.0) == 1.0);
  CHECK(temperature(5, 10, 1.0) == doctest::Approx(0.5));
  CHECK(temperature(99999, 100000, 1.0) == kTemperatureFloor);
  CHECK_THROWS_AS(temperature(10, 10, 1.0), MgtkError);
  CHECK_THROWS_AS(temperature(-1, 10, 1.0), MgtkError);
}

TEST_CASE("mixture weights stay on the simplex and match their logits") {
  MixtureWeights w = MixtureWeights::uniform(3, 3);
  Mat a(3, 3);
  a << 0.2, -1.0, 0.5, 3.0, 3.0, 3.0, -2.0, 0.0, 2.0;
  w.set_from_logits(a);
  for (int r = 0; r < 3; ++r) {
    CHECK(w.weights.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    double zmax = -1e300;
    for (int m = 0; m < 3; ++m) zmax = std::max(zmax, a(r, m));
    double z = 0;
    for (int m = 0; m < 3; ++m) z += std::exp(a(r, m) - zmax);
    for (int m = 0; m < 3; ++m)
      CHECK(w.weights(r, m) ==
            doctest::Approx(std::exp(a(r, m) - zmax) / z).epsilon(1e-10));
  }
}
