#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "mgtk/generate.hpp"
#include "mgtk/trainer.hpp"
#include "testutil.hpp"

using namespace mgtk;
using namespace mgtk::testutil;

namespace {

TemporalKG tiny_kg() {
  TemporalKG kg(4, 1, {1.0, 1.0});
  kg.add({0, 0, 1, 1});
  kg.add({1, 0, 2, 1});
  kg.add({0, 0, 1, 2});
  kg.add({2, 0, 3, 2});
  kg.add({0, 0, 3, 2});
  return kg;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 3;
  cfg.dim = 2;
  cfg.candidate_k = 4;
  cfg.convergence_tol = 1e-12;
  return cfg;
}

TemporalKG planted_kg(std::uint64_t seed) {
  GenerateConfig gc;
  gc.seed = seed;
  gc.n_bins = 8;
  gc.tau = 2.0;
  gc.relations.push_back({Manifold::Hyperbolic, RelationPlan::Tree, 0, 12});
  return generate_planted(gc).kg;
}

}  // namespace

TEST_CASE("regularizers: gate sum, hyperbolic origin, constant-D correlation") {
  TemporalKG kg = tiny_kg();
  TrainConfig cfg = tiny_config();
  ModelParams p = init_params(kg, cfg);

  // uniform weights, M=3, one relation: three terms of ~1/3 each
  const Regularizers reg = regularizers(p, kg, 2, cfg.features, 1e-12);
  CHECK(reg.gate == doctest::Approx(1.0).epsilon(1e-6));

  // hyperbolic point at the origin contributes exactly 1 to its rad term
  for (auto& copy : p.embeddings[1])
    for (Point& x : copy) x.coords.setZero();
  for (auto& copy : p.embeddings[0])
    for (Point& x : copy) x.coords.setZero();
  for (auto& copy : p.embeddings[2])
    for (Point& x : copy) x.coords << 1.0, 0.0, 0.0;
  const Regularizers reg2 = regularizers(p, kg, 2, cfg.features);
  // E terms 0, H terms 1 each, S terms 1 each over 4 entities
  CHECK(reg2.rad == doctest::Approx(8.0).epsilon(1e-12));

  // coincident embeddings make D constant across positives: corr = 0
  CHECK(reg2.corr == 0.0);
}

TEST_CASE("surrogate_J: no events gives the regularizer-only value") {
  TemporalKG empty(4, 1, {1.0});
  TrainConfig cfg = tiny_config();
  ModelParams p = init_params(empty, cfg);
  const Regularizers reg = regularizers(p, empty, 1, cfg.features, cfg.eps_gate);
  const double j = surrogate_J(p, empty, cfg, 0.5);
  // energies are empty for unseen relations, so the soft-min term vanishes
  CHECK(j == doctest::Approx(cfg.lambda_gate * reg.gate + cfg.lambda_rad * reg.rad)
                 .epsilon(1e-12));
}

TEST_CASE("surrogate_J matches an independent sum of its parts") {
  TemporalKG kg = tiny_kg();
  TrainConfig cfg = tiny_config();
  cfg.lambda_corr = 1e-3;
  ModelParams p = init_params(kg, cfg);
  p.beta(0) = 0.4;
  p.tau(0) = 0.8;
  const double lambda = 0.37;

  const double j = surrogate_J(p, kg, cfg, lambda);

  const double nll_part = training_objective(p, kg, cfg) -
                          [&] {
                            const Regularizers reg =
                                regularizers(p, kg, 2, cfg.features, cfg.eps_gate);
                            return cfg.lambda_rad * reg.rad + cfg.lambda_corr * reg.corr;
                          }();
  const Regularizers reg = regularizers(p, kg, 2, cfg.features, cfg.eps_gate);
  double softmin = 0;
  for (int r = 0; r < kg.n_relations(); ++r) {
    std::vector<double> e;
    for (int m = 0; m < p.n_metrics(); ++m)
      e.push_back(distortion_energy(kg, r, 2, p.embeddings[m][0], p.transports[r][m],
                                    p.bounds.R_H));
    softmin += log_sum_exp_energy(e, lambda);
  }
  const double expected = nll_part + cfg.lambda_gate * reg.gate +
                          cfg.lambda_rad * reg.rad + cfg.lambda_corr * reg.corr +
                          softmin;
  CHECK(j == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("embedding_step: zero learning rate is a no-op") {
  TemporalKG kg = tiny_kg();
  TrainConfig cfg = tiny_config();
  ModelParams p = init_params(kg, cfg);
  const auto before = flatten_embeddings(p);
  embedding_step(p, kg, cfg, 0.0);
  const auto after = flatten_embeddings(p);
  REQUIRE(before.size() == after.size());
  for (size_t i = 0; i < before.size(); ++i) REQUIRE(before[i] == after[i]);
}

TEST_CASE("embedding_step decreases the objective on a single-positive fixture") {
  TemporalKG kg(3, 1, {1.0});
  kg.add({0, 0, 1, 1});
  TrainConfig cfg = tiny_config();
  cfg.candidate_k = 3;
  ModelParams p = init_params(kg, cfg);
  p.tau(0) = 1.0;  // geometric term active
  const double before = training_objective(p, kg, cfg);
  const double after = embedding_step(p, kg, cfg, 1e-2);
  CHECK(after < before);
  CHECK(after == doctest::Approx(training_objective(p, kg, cfg)).epsilon(1e-12));
}

TEST_CASE("training gradient matches end-to-end finite differences") {
  TemporalKG kg = tiny_kg();
  TrainConfig cfg = tiny_config();
  cfg.lambda_corr = 2e-3;  // exercise the correlation-regularizer gradient
  cfg.lambda_rad = 1e-3;
  ModelParams p = init_params(kg, cfg);
  p.beta(0) = 0.6;
  p.tau(0) = 0.9;
  p.alpha(0, 0) = -0.4;
  p.alpha(0, 1) = 0.2;

  const auto grad = training_gradient(p, kg, cfg);
  auto flat = flatten_embeddings(p);
  REQUIRE(grad.size() == flat.size());
  auto rng = seeded_rng(21, 41);
  std::uniform_int_distribution<size_t> pick(0, flat.size() - 1);
  const double h = 1e-6;
  int checked = 0;
  for (int it = 0; it < 60; ++it) {
    const size_t i = pick(rng);
    ModelParams plus = p, minus = p;
    auto fplus = flat, fminus = flat;
    fplus[i] += h;
    fminus[i] -= h;
    unflatten_embeddings(plus, fplus);
    unflatten_embeddings(minus, fminus);
    const double fd = (training_objective(plus, kg, cfg) -
                       training_objective(minus, kg, cfg)) /
                      (2 * h);
    if (std::abs(grad[i]) > 1e-4) {
      REQUIRE(rel_err(grad[i], fd) <= 1e-4);
      ++checked;
    } else {
      REQUIRE(std::abs(grad[i] - fd) <= 1e-7);
    }
  }
  CHECK(checked > 10);
}

TEST_CASE("transport translation gradient matches finite differences") {
  TemporalKG kg = tiny_kg();
  TrainConfig cfg = tiny_config();
  cfg.learn_translations = true;
  ModelParams p = init_params(kg, cfg);
  p.tau(0) = 1.1;

  const auto grad = training_gradient(p, kg, cfg);
  auto flat = flatten_embeddings(p, true);
  REQUIRE(grad.size() == flat.size());
  const size_t emb = flatten_embeddings(p, false).size();
  const double h = 1e-6;
  for (size_t i = emb; i < flat.size(); ++i) {
    ModelParams plus = p, minus = p;
    auto fplus = flat, fminus = flat;
    fplus[i] += h;
    fminus[i] -= h;
    unflatten_embeddings(plus, fplus, true);
    unflatten_embeddings(minus, fminus, true);
    const double fd = (training_objective(plus, kg, cfg) -
                       training_objective(minus, kg, cfg)) /
                      (2 * h);
    if (std::abs(grad[i]) > 1e-4)
      REQUIRE(rel_err(grad[i], fd) <= 1e-4);
    else
      REQUIRE(std::abs(grad[i] - fd) <= 1e-6);
  }
}

TEST_CASE("train: infinite tolerance terminates after one iteration") {
  TemporalKG kg = tiny_kg();
  TrainConfig cfg = tiny_config();
  cfg.convergence_tol = std::numeric_limits<double>::infinity();
  cfg.epochs = 50;
  const TrainResult res = train(kg, cfg);
  CHECK(res.trace.converged);
  CHECK(res.trace.rows.size() == 2);  // initial row + one iteration
}

TEST_CASE("train is bitwise deterministic given the seed") {
  const TemporalKG kg = planted_kg(5);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 6;
  cfg.candidate_k = 8;
  const TrainResult a = train(kg, cfg);
  const TrainResult b = train(kg, cfg);
  REQUIRE(a.trace.rows.size() == b.trace.rows.size());
  for (size_t i = 0; i < a.trace.rows.size(); ++i) {
    REQUIRE(a.trace.rows[i].J == b.trace.rows[i].J);
    REQUIRE(a.trace.rows[i].nll == b.trace.rows[i].nll);
    REQUIRE(a.trace.rows[i].weight_change == b.trace.rows[i].weight_change);
    REQUIRE((a.trace.rows[i].energies - b.trace.rows[i].energies).norm() == 0.0);
  }
  const auto fa = flatten_embeddings(a.params), fb = flatten_embeddings(b.params);
  for (size_t i = 0; i < fa.size(); ++i) REQUIRE(fa[i] == fb[i]);
}

TEST_CASE("train: J is non-increasing on a small planted fixture") {
  const TemporalKG kg = planted_kg(7);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 10;
  cfg.anneal = false;
  cfg.lambda0 = 0.5;
  cfg.candidate_k = 8;
  const TrainResult res = train(kg, cfg);
  for (const TraceRow& row : res.trace.rows) CHECK_FALSE(row.j_increased);
  // domain invariants hold after every step
  for (int m = 0; m < res.params.n_metrics(); ++m)
    for (const auto& copy : res.params.embeddings[m])
      for (const Point& x : copy) validate_point(x, res.params.bounds);
}

TEST_CASE("train rejects an empty graph") {
  TemporalKG kg(3, 1, {1.0});
  CHECK_THROWS_AS(train(kg, tiny_config()), MgtkError);
}

TEST_CASE("per-bin embedding mode trains and keeps copies independent") {
  const TemporalKG kg = planted_kg(11);
  TrainConfig cfg = tiny_config();
  cfg.per_bin_embeddings = true;
  cfg.epochs = 2;
  const TrainResult res = train(kg, cfg);
  REQUIRE(int(res.params.embeddings[0].size()) == kg.n_bins());
  // at least one pair of copies must differ after training
  bool differs = false;
  for (size_t c = 1; c < res.params.embeddings[0].size() && !differs; ++c)
    for (size_t i = 0; i < res.params.embeddings[0][c].size() && !differs; ++i)
      if ((res.params.embeddings[0][c][i].coords -
           res.params.embeddings[0][0][i].coords)
              .norm() > 0)
        differs = true;
  CHECK(differs);
}

TEST_CASE("score_rank: single candidate, alpha gauge shift, tie-break") {
  const TemporalKG kg = tiny_kg();
  TrainConfig cfg = tiny_config();
  ModelParams p = init_params(kg, cfg);
  p.tau(0) = 0.5;

  const auto single = score_rank(p, kg, 0, 0, 1, {2}, cfg.features);
  REQUIRE(single.size() == 1);
  CHECK(single[0].tail == 2);

  const auto base = score_rank(p, kg, 0, 0, 1, {0, 1, 2, 3}, cfg.features);
  ModelParams shifted = p;
  shifted.alpha(0, 0) += 11.5;
  const auto moved = score_rank(shifted, kg, 0, 0, 1, {0, 1, 2, 3}, cfg.features);
  for (size_t i = 0; i < base.size(); ++i) {
    CHECK(base[i].tail == moved[i].tail);
    CHECK(moved[i].score == doctest::Approx(base[i].score + 11.5).epsilon(1e-12));
  }

  // exact ties resolve by entity index
  ModelParams flat = p;
  flat.tau(0) = 0.0;
  flat.beta(0) = 0.0;
  const auto tied = score_rank(flat, kg, 0, 0, 1, {3, 1, 2, 0}, cfg.features);
  for (size_t i = 1; i < tied.size(); ++i) REQUIRE(tied[i - 1].tail < tied[i].tail);
}

TEST_CASE("checkpoint round trip preserves every parameter bit") {
  const TemporalKG kg = planted_kg(13);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  const TrainResult res = train(kg, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "mgtk_tests";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.ckpt").string();
  save_checkpoint(res.params, R"({"note":"fixture"})", path);
  std::string header;
  const ModelParams back = load_checkpoint(path, &header);
  CHECK(header.find("fixture") != std::string::npos);

  const auto fa = flatten_embeddings(res.params, true);
  const auto fb = flatten_embeddings(back, true);
  REQUIRE(fa.size() == fb.size());
  for (size_t i = 0; i < fa.size(); ++i) REQUIRE(fa[i] == fb[i]);
  REQUIRE((res.params.alpha - back.alpha).norm() == 0.0);
  REQUIRE((res.params.beta - back.beta).norm() == 0.0);
  REQUIRE((res.params.tau - back.tau).norm() == 0.0);
  REQUIRE((res.params.mixture.weights - back.mixture.weights).norm() == 0.0);
  for (size_t r = 0; r < res.params.transports.size(); ++r)
    for (size_t m = 0; m < res.params.transports[r].size(); ++m)
      REQUIRE((res.params.transports[r][m].rotation -
               back.transports[r][m].rotation)
                  .norm() == 0.0);
}

TEST_CASE("trace csv round trip") {
  const TemporalKG kg = planted_kg(17);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 3;
  const TrainResult res = train(kg, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "mgtk_tests";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "trace.csv").string();
  save_trace_csv(res.trace, path);
  const TrainTrace back = load_trace_csv(path);
  REQUIRE(back.rows.size() == res.trace.rows.size());
  for (size_t i = 0; i < back.rows.size(); ++i) {
    REQUIRE(back.rows[i].iteration == res.trace.rows[i].iteration);
    REQUIRE(back.rows[i].J == res.trace.rows[i].J);
    REQUIRE(back.rows[i].weight_change == res.trace.rows[i].weight_change);
    REQUIRE((back.rows[i].energies - res.trace.rows[i].energies).norm() == 0.0);
  }
}

TEST_CASE("evaluate_ranking: a planted-perfect model ranks every tail first") {
  // directed line of events h -> h+1; the euclidean transport is the exact
  // planted shift, so phi(x_h) coincides with x_{h+1}
  TemporalKG kg(6, 1, std::vector<double>(10, 1.0));
  for (int u = 1; u <= 10; ++u)
    for (int h = 0; h < 5; ++h) kg.add({h, 0, h + 1, u});
  TrainConfig cfg = tiny_config();
  ModelParams p = init_params(kg, cfg);
  for (int i = 0; i < 6; ++i) {
    p.embeddings[0][0][i].coords << double(i) * 0.5, 0.0;
    p.embeddings[1][0][i].coords << double(i) * 0.1, 0.0;
    p.embeddings[2][0][i].coords << std::cos(i * 0.3), std::sin(i * 0.3), 0.0;
  }
  for (int m = 0; m < 3; ++m) p.transports[0][m] = Transport::identity(p.metrics[m]);
  p.transports[0][0].translation << 0.5, 0.0;
  p.mixture.weights.row(0) << 1.0, 0.0, 0.0;
  p.tau(0) = 2.0;
  const EvalMetrics metrics = evaluate_ranking(p, kg, 9, 10, cfg.features);
  CHECK(metrics.n_queries == 10);
  CHECK(metrics.mrr == doctest::Approx(1.0));
  CHECK(metrics.hits1 == doctest::Approx(1.0));
  double harmonic = 0;
  for (int i = 1; i <= 6; ++i) harmonic += 1.0 / i;
  CHECK(metrics.chance_mrr == doctest::Approx(harmonic / 6.0));
}
