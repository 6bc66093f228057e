#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mgtk/diagnostics.hpp"
#include "mgtk/generate.hpp"
#include "mgtk/graphstore.hpp"
#include "mgtk/temporal.hpp"
#include "mgtk/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mgtk;

namespace {

// exit codes per error class
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitOther = 1;

int verbosity() {
  const char* env = std::getenv("MGTK_LOG");
  if (!env) return 1;
  const std::string v = env;
  if (v == "quiet" || v == "0") return 0;
  if (v == "debug" || v == "2") return 2;
  return 1;
}

void log_info(const std::string& msg) {
  if (verbosity() >= 1) std::cerr << "[mgtk] " << msg << "\n";
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  in >> j;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

// the exact effective configuration is echoed next to every output
void echo_config(const fs::path& out_dir, const std::string& command,
                 const json& effective) {
  json echo;
  echo["command"] = command;
  echo["config"] = effective;
  write_text(out_dir / "effective_config.json", echo.dump(2) + "\n");
}

double jget(const json& j, const char* key, double def) {
  return j.contains(key) ? j.at(key).get<double>() : def;
}
int jgeti(const json& j, const char* key, int def) {
  return j.contains(key) ? j.at(key).get<int>() : def;
}
bool jgetb(const json& j, const char* key, bool def) {
  return j.contains(key) ? j.at(key).get<bool>() : def;
}
std::string jgets(const json& j, const char* key, const std::string& def) {
  return j.contains(key) ? j.at(key).get<std::string>() : def;
}

DomainBounds bounds_from_json(const json& j) {
  DomainBounds b;
  b.R_E = jget(j, "R_E", b.R_E);
  b.R_H = jget(j, "R_H", b.R_H);
  b.delta_S = jget(j, "delta_S", b.delta_S);
  b.B_phi = jget(j, "B_phi", b.B_phi);
  b.S_max = jget(j, "S_max", b.S_max);
  return b;
}

json bounds_to_json(const DomainBounds& b) {
  return {{"R_E", b.R_E}, {"R_H", b.R_H}, {"delta_S", b.delta_S},
          {"B_phi", b.B_phi}, {"S_max", b.S_max}};
}

FeatureConfig features_from_json(const json& j) {
  FeatureConfig f;
  f.window = jgeti(j, "window", f.window);
  f.max_path_len = jgeti(j, "max_path_len", f.max_path_len);
  f.S_max = jget(j, "S_max", f.S_max);
  return f;
}

json features_to_json(const FeatureConfig& f) {
  return {{"window", f.window}, {"max_path_len", f.max_path_len}, {"S_max", f.S_max}};
}

TrainConfig train_config_from_json(const json& j, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.epochs = jgeti(j, "epochs", cfg.epochs);
  cfg.learning_rate = jget(j, "learning_rate", cfg.learning_rate);
  cfg.lambda0 = jget(j, "lambda0", cfg.lambda0);
  cfg.anneal = jgetb(j, "anneal", cfg.anneal);
  cfg.lambda_gate = jget(j, "lambda_gate", cfg.lambda_gate);
  cfg.lambda_rad = jget(j, "lambda_rad", cfg.lambda_rad);
  cfg.lambda_corr = jget(j, "lambda_corr", cfg.lambda_corr);
  cfg.eps_gate = jget(j, "eps_gate", cfg.eps_gate);
  cfg.convergence_tol = jget(j, "convergence_tol", cfg.convergence_tol);
  cfg.dim = jgeti(j, "dim", cfg.dim);
  cfg.candidate_k = jgeti(j, "candidate_k", cfg.candidate_k);
  cfg.k_min = jgeti(j, "k_min", cfg.k_min);
  cfg.k_neg = jgeti(j, "k_neg", cfg.k_neg);
  cfg.exhaustive_negatives = jgetb(j, "exhaustive_negatives", cfg.exhaustive_negatives);
  cfg.learn_translations = jgetb(j, "learn_translations", cfg.learn_translations);
  cfg.per_bin_embeddings = jgetb(j, "per_bin_embeddings", cfg.per_bin_embeddings);
  cfg.monotone_safeguard = jgetb(j, "monotone_safeguard", cfg.monotone_safeguard);
  cfg.line_search = jgetb(j, "line_search", cfg.line_search);
  cfg.inner_steps = jgeti(j, "inner_steps", cfg.inner_steps);
  cfg.init_scale = jget(j, "init_scale", cfg.init_scale);
  cfg.c_cond = jget(j, "c_cond", cfg.c_cond);
  cfg.multiplier_cap = jget(j, "multiplier_cap", cfg.multiplier_cap);
  if (j.contains("bounds")) cfg.bounds = bounds_from_json(j.at("bounds"));
  if (j.contains("features")) cfg.features = features_from_json(j.at("features"));
  if (j.contains("metrics")) {
    cfg.metric_tags.clear();
    for (const auto& m : j.at("metrics")) {
      const std::string name = m.get<std::string>();
      if (name == "euclidean") cfg.metric_tags.push_back(Manifold::Euclidean);
      else if (name == "hyperbolic") cfg.metric_tags.push_back(Manifold::Hyperbolic);
      else if (name == "spherical") cfg.metric_tags.push_back(Manifold::Spherical);
      else throw MgtkError("unknown metric: " + name);
    }
  }
  return cfg;
}

json train_config_to_json(const TrainConfig& cfg, double holdout_fraction) {
  json j;
  j["epochs"] = cfg.epochs;
  j["learning_rate"] = cfg.learning_rate;
  j["lambda0"] = cfg.lambda0;
  j["anneal"] = cfg.anneal;
  j["lambda_gate"] = cfg.lambda_gate;
  j["lambda_rad"] = cfg.lambda_rad;
  j["lambda_corr"] = cfg.lambda_corr;
  j["eps_gate"] = cfg.eps_gate;
  j["convergence_tol"] = cfg.convergence_tol;
  j["dim"] = cfg.dim;
  j["candidate_k"] = cfg.candidate_k;
  j["k_min"] = cfg.k_min;
  j["k_neg"] = cfg.k_neg;
  j["exhaustive_negatives"] = cfg.exhaustive_negatives;
  j["learn_translations"] = cfg.learn_translations;
  j["per_bin_embeddings"] = cfg.per_bin_embeddings;
  j["monotone_safeguard"] = cfg.monotone_safeguard;
  j["line_search"] = cfg.line_search;
  j["inner_steps"] = cfg.inner_steps;
  j["init_scale"] = cfg.init_scale;
  j["c_cond"] = cfg.c_cond;
  j["multiplier_cap"] = cfg.multiplier_cap;
  j["bounds"] = bounds_to_json(cfg.bounds);
  j["features"] = features_to_json(cfg.features);
  json metrics = json::array();
  for (Manifold m : cfg.metric_tags) metrics.push_back(manifold_name(m));
  j["metrics"] = metrics;
  j["holdout_fraction"] = holdout_fraction;
  return j;
}

int cmd_generate(const json& cfg, std::uint64_t seed, const fs::path& out_dir) {
  GenerateConfig gc;
  gc.seed = seed;
  gc.n_bins = jgeti(cfg, "n_bins", gc.n_bins);
  gc.bin_width = jget(cfg, "bin_width", gc.bin_width);
  gc.dim = jgeti(cfg, "dim", gc.dim);
  gc.tau = jget(cfg, "tau", gc.tau);
  gc.adjacent_prob = jget(cfg, "adjacent_prob", gc.adjacent_prob);
  gc.edge_length = jget(cfg, "edge_length", gc.edge_length);
  gc.grid_spacing = jget(cfg, "grid_spacing", gc.grid_spacing);
  if (cfg.contains("bounds")) gc.bounds = bounds_from_json(cfg.at("bounds"));
  if (!cfg.contains("relations")) throw MgtkError("generate config needs relations");
  for (const auto& jr : cfg.at("relations")) {
    RelationPlan plan;
    const std::string g = jr.at("geometry").get<std::string>();
    if (g == "euclidean") plan.geometry = Manifold::Euclidean;
    else if (g == "hyperbolic") plan.geometry = Manifold::Hyperbolic;
    else if (g == "spherical") plan.geometry = Manifold::Spherical;
    else throw MgtkError("unknown geometry: " + g);
    const std::string s = jr.at("structure").get<std::string>();
    if (s == "tree") plan.structure = RelationPlan::Tree;
    else if (s == "grid") plan.structure = RelationPlan::Grid;
    else if (s == "ring") plan.structure = RelationPlan::Ring;
    else throw MgtkError("unknown structure: " + s);
    plan.lo = jr.at("entities").at(0).get<int>();
    plan.hi = jr.at("entities").at(1).get<int>();
    gc.relations.push_back(plan);
  }

  const GeneratedData data = generate_planted(gc);
  fs::create_directories(out_dir);
  save_tsv(data.kg, (out_dir / "data.tsv").string());
  save_bins_json(data.kg, (out_dir / "data.bins.json").string());
  write_text(out_dir / "truth.json", data.truth_json + "\n");

  json echo = cfg;
  echo["n_bins"] = gc.n_bins;
  echo["bin_width"] = gc.bin_width;
  echo["dim"] = gc.dim;
  echo["tau"] = gc.tau;
  echo["adjacent_prob"] = gc.adjacent_prob;
  echo["edge_length"] = gc.edge_length;
  echo["grid_spacing"] = gc.grid_spacing;
  echo["bounds"] = bounds_to_json(gc.bounds);
  echo["seed"] = seed;
  echo_config(out_dir, "generate", echo);
  log_info("generated " + std::to_string(data.kg.quads().size()) + " events -> " +
           out_dir.string());
  return 0;
}

int cmd_train(const json& cfg, std::uint64_t seed, const fs::path& out_dir,
              const std::string& data_override) {
  const std::string data = data_override.empty() ? jgets(cfg, "data", "") : data_override;
  if (data.empty()) throw MgtkError("train needs a data path");
  std::string bins = jgets(cfg, "bins", "");
  if (bins.empty()) {
    const std::string guess = data.substr(0, data.rfind(".tsv")) + ".bins.json";
    if (fs::exists(guess)) bins = guess;
  }
  const TemporalKG kg = load_tsv(data, bins);
  TrainConfig tc = train_config_from_json(cfg, seed);
  const double holdout = jget(cfg, "holdout_fraction", 0.2);
  tc.train_bin_limit = std::max(1, int(std::floor(kg.n_bins() * (1.0 - holdout))));

  const TrainResult result = train(kg, tc);
  fs::create_directories(out_dir);
  json extra = train_config_to_json(tc, holdout);
  extra["seed"] = seed;
  extra["data"] = data;
  extra["train_bin_limit"] = tc.train_bin_limit;
  save_checkpoint(result.params, extra.dump(), (out_dir / "checkpoint.ckpt").string());
  save_trace_csv(result.trace, (out_dir / "trace.csv").string());

  json echo = cfg;
  echo.update(train_config_to_json(tc, holdout));
  echo["seed"] = seed;
  echo["data"] = data;
  echo["bins"] = bins;
  echo_config(out_dir, "train", echo);

  const auto& last = result.trace.rows.back();
  log_info("trained " + std::to_string(result.trace.rows.size() - 1) +
           " iterations, J = " + std::to_string(last.J) +
           (result.trace.converged ? " (converged)" : " (max epochs)"));
  json summary;
  summary["converged"] = result.trace.converged;
  summary["iterations"] = result.trace.rows.size() - 1;
  summary["final_J"] = last.J;
  summary["final_nll"] = last.nll;
  json weights = json::array();
  for (int r = 0; r < result.params.mixture.weights.rows(); ++r) {
    json row = json::array();
    for (int m = 0; m < result.params.mixture.weights.cols(); ++m)
      row.push_back(result.params.mixture.weights(r, m));
    weights.push_back(row);
  }
  summary["mixture_weights"] = weights;
  write_text(out_dir / "train_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_eval(const json& cfg, const fs::path& out_dir,
             const std::string& data_override, const std::string& ckpt_override) {
  const std::string data = data_override.empty() ? jgets(cfg, "data", "") : data_override;
  const std::string ckpt =
      ckpt_override.empty() ? jgets(cfg, "checkpoint", "") : ckpt_override;
  if (data.empty() || ckpt.empty()) throw MgtkError("eval needs data and checkpoint");
  std::string bins = jgets(cfg, "bins", "");
  if (bins.empty()) {
    const std::string guess = data.substr(0, data.rfind(".tsv")) + ".bins.json";
    if (fs::exists(guess)) bins = guess;
  }
  const TemporalKG kg = load_tsv(data, bins);
  std::string header;
  const ModelParams params = load_checkpoint(ckpt, &header);
  const json h = json::parse(header);
  int limit = kg.n_bins();
  FeatureConfig features;
  if (h.contains("extra")) {
    limit = h.at("extra").value("train_bin_limit", limit);
    if (h.at("extra").contains("features"))
      features = features_from_json(h.at("extra").at("features"));
  }
  const double holdout = jget(cfg, "holdout_fraction", -1.0);
  if (holdout >= 0) limit = std::max(1, int(std::floor(kg.n_bins() * (1.0 - holdout))));

  const EvalMetrics m = evaluate_ranking(params, kg, limit + 1, kg.n_bins(), features);
  json out;
  out["mrr"] = m.mrr;
  out["hits1"] = m.hits1;
  out["hits3"] = m.hits3;
  out["hits10"] = m.hits10;
  out["n_queries"] = m.n_queries;
  out["chance_mrr"] = m.chance_mrr;
  out["eval_bins"] = {limit + 1, kg.n_bins()};
  fs::create_directories(out_dir);
  write_text(out_dir / "metrics.json", out.dump(2) + "\n");
  json echo = cfg;
  echo["data"] = data;
  echo["checkpoint"] = ckpt;
  echo_config(out_dir, "eval", echo);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_diagnose(const json& cfg, const fs::path& out_dir,
                 const std::string& data_override, const std::string& ckpt_override) {
  const std::string data = data_override.empty() ? jgets(cfg, "data", "") : data_override;
  const std::string ckpt =
      ckpt_override.empty() ? jgets(cfg, "checkpoint", "") : ckpt_override;
  if (data.empty() || ckpt.empty())
    throw MgtkError("diagnose needs data and checkpoint");
  std::string trace_path = jgets(cfg, "trace", "");
  if (trace_path.empty())
    trace_path = (fs::path(ckpt).parent_path() / "trace.csv").string();
  std::string bins = jgets(cfg, "bins", "");
  if (bins.empty()) {
    const std::string guess = data.substr(0, data.rfind(".tsv")) + ".bins.json";
    if (fs::exists(guess)) bins = guess;
  }

  const TemporalKG kg = load_tsv(data, bins);
  std::string header;
  const ModelParams params = load_checkpoint(ckpt, &header);
  const TrainTrace trace = load_trace_csv(trace_path);
  const json h = json::parse(header);
  FeatureConfig features;
  if (h.contains("extra") && h.at("extra").contains("features"))
    features = features_from_json(h.at("extra").at("features"));

  double tau_max = 0, beta_max = 0, alpha_max = 0;
  for (int r = 0; r < params.tau.size(); ++r) {
    tau_max = std::max(tau_max, std::abs(params.tau(r)));
    beta_max = std::max(beta_max, std::abs(params.beta(r)));
  }
  for (int r = 0; r < params.alpha.rows(); ++r)
    for (int u = 0; u < params.alpha.cols(); ++u)
      alpha_max = std::max(alpha_max, std::abs(params.alpha(r, u)));

  LipschitzOptions lo;
  lo.seed = jgeti(cfg, "seed", 7);
  BoundConstants consts = lipschitz_constants(params.bounds, tau_max, beta_max, lo);

  // realized score range and maximal composite energy over observed events
  double f_min = 0, f_max = 0, d_max_sq = 0;
  bool first = true;
  for (const Quad& q : kg.quads()) {
    const double f = model_score(params, kg, q.h, q.r, q.t, q.u, features);
    const double d = model_energy(params, q.r, q.h, q.t, q.u);
    if (first) {
      f_min = f_max = f;
      first = false;
    }
    f_min = std::min(f_min, f);
    f_max = std::max(f_max, f);
    d_max_sq = std::max(d_max_sq, d);
  }
  consts.F_min = std::max(f_min, -kScoreClamp);
  consts.F_max = std::min(std::max(f_max, f_min + 1e-9), kScoreClamp);
  consts.delta_min = *std::min_element(kg.bin_widths().begin(), kg.bin_widths().end());
  consts.delta_max = *std::max_element(kg.bin_widths().begin(), kg.bin_widths().end());
  consts.L_ell = cloglog_loss_lipschitz(consts.delta_min, consts.delta_max,
                                        consts.F_min, consts.F_max);
  consts.N = long(kg.quads().size());
  const EffectiveSample es = effective_sample_size(std::max(consts.N, 8L));
  consts.N_eff = es.n_eff;
  consts.m_block = es.m;
  consts.g_gap = es.g;

  const double gen_bound = generalization_bound(consts, jget(cfg, "delta", 0.05));
  const double cov_bound =
      covering_bound(alpha_max + 1.0, beta_max + 1.0, tau_max + 1.0,
                     params.bounds.S_max, std::max(d_max_sq, 1.0),
                     jget(cfg, "covering_eps", 0.1));

  const InstabilityFlags flags = monitor(trace, params);

  // per-bin standardized residual series for the mixing diagnostic
  MixingReport mixing;
  bool have_mixing = false;
  if (kg.n_bins() >= 64) {
    std::vector<double> residuals(kg.n_bins(), 0.0);
    std::map<std::pair<int, std::pair<int, int>>, bool> seen;
    std::vector<std::tuple<int, int, int>> triples;
    for (const Quad& q : kg.quads()) {
      auto key = std::make_pair(q.r, std::make_pair(q.h, q.t));
      if (!seen[key]) {
        seen[key] = true;
        triples.push_back({q.h, q.r, q.t});
      }
    }
    for (int u = 1; u <= kg.n_bins(); ++u) {
      double expected = 0;
      for (const auto& [hh, rr, tt] : triples)
        expected += cloglog_prob(model_score(params, kg, hh, rr, tt, u, features),
                                 kg.bin_width(u));
      double observed = 0;
      for (const Quad& q : kg.quads())
        if (q.u == u) observed += 1;
      residuals[u - 1] = observed - expected;
    }
    mixing = mixing_estimate(residuals, {}, jgeti(cfg, "n_boot", 200),
                             jgeti(cfg, "seed", 7));
    have_mixing = true;
  }

  const std::string report = diagnostics_report_json(
      consts, flags, have_mixing ? &mixing : nullptr, gen_bound, cov_bound);
  fs::create_directories(out_dir);
  write_text(out_dir / "diagnostics.json", report + "\n");
  json echo = cfg;
  echo["data"] = data;
  echo["checkpoint"] = ckpt;
  echo["trace"] = trace_path;
  echo_config(out_dir, "diagnose", echo);
  std::cout << report << "\n";
  return 0;
}

int cmd_bench_geometry(const json& cfg, std::uint64_t seed, const fs::path& out_dir) {
  const int k_min = jgeti(cfg, "depth_min", 3);
  const int k_max = jgeti(cfg, "depth_max", 7);
  const int dim = jgeti(cfg, "dim", 2);
  if (k_min < 1 || k_max < k_min) throw MgtkError("bad depth range");
  fs::create_directories(out_dir);
  std::ofstream csv(out_dir / "tree_bench.csv");
  if (!csv) throw IoError("cannot open bench csv for writing");
  csv << "depth,dim,hyperbolic_worst,hyperbolic_avg,euclidean_worst,euclidean_avg\n";
  csv.precision(17);
  for (int k = k_min; k <= k_max; ++k) {
    const TreeBenchResult r = tree_distortion_bench(k, dim, seed);
    csv << r.depth << ',' << r.dim << ',' << r.hyperbolic_worst << ','
        << r.hyperbolic_avg << ',' << r.euclidean_worst << ',' << r.euclidean_avg
        << '\n';
    log_info("depth " + std::to_string(k) +
             ": hyperbolic " + std::to_string(r.hyperbolic_worst) +
             " vs euclidean " + std::to_string(r.euclidean_worst));
  }
  json echo = cfg;
  echo["depth_min"] = k_min;
  echo["depth_max"] = k_max;
  echo["dim"] = dim;
  echo["seed"] = seed;
  echo_config(out_dir, "bench-geometry", echo);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixture-geometry temporal knowledge graph toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", data_path, ckpt_path;
  std::uint64_t seed = 1;
  bool seed_set = false;
  app.add_option("--config", config_path, "json config file")->capture_default_str();
  app.add_option_function<std::uint64_t>(
         "--seed", [&](std::uint64_t s) { seed = s; seed_set = true; },
         "master random seed");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--data", data_path, "dataset tsv (overrides config)");
  app.add_option("--checkpoint", ckpt_path, "checkpoint path (overrides config)");

  auto* generate = app.add_subcommand("generate", "sample a planted-model dataset");
  auto* train_cmd = app.add_subcommand("train", "run decoupled training");
  auto* eval_cmd = app.add_subcommand("eval", "ranking metrics on held-out bins");
  auto* diagnose = app.add_subcommand("diagnose", "constants, bounds and stability");
  auto* bench = app.add_subcommand("bench-geometry", "tree distortion benchmark");
  for (auto* sub : {generate, train_cmd, eval_cmd, diagnose, bench})
    sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    json root = load_config(config_path);
    if (root.contains("out") && out_dir == "out")
      out_dir = root.at("out").get<std::string>();
    if (root.contains("seed") && !seed_set) seed = root.at("seed").get<std::uint64_t>();

    auto section = [&](const char* name) {
      return root.contains(name) ? root.at(name) : json::object();
    };
    if (generate->parsed())
      return cmd_generate(section("generate"), seed, out_dir);
    if (train_cmd->parsed())
      return cmd_train(section("train"), seed, out_dir, data_path);
    if (eval_cmd->parsed())
      return cmd_eval(section("eval"), out_dir, data_path, ckpt_path);
    if (diagnose->parsed())
      return cmd_diagnose(section("diagnose"), out_dir, data_path, ckpt_path);
    if (bench->parsed())
      return cmd_bench_geometry(section("bench"), seed, out_dir);
    std::cerr << "no subcommand\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DegenerateSystemError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const InfeasibleConstraintsError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IrreparableDegeneracyError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const MgtkError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
}
