#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mgtk/diagnostics.hpp"
#include "mgtk/generate.hpp"
#include "mgtk/geometry.hpp"
#include "mgtk/graphstore.hpp"
#include "mgtk/maxent.hpp"
#include "mgtk/mixture.hpp"
#include "mgtk/temporal.hpp"
#include "mgtk/trainer.hpp"

namespace py = pybind11;
using namespace mgtk;

namespace {

Point make_point(const std::string& kind, int dim, const Vec& coords) {
  Point p;
  if (kind == "euclidean") p.kind = {Manifold::Euclidean, dim};
  else if (kind == "hyperbolic") p.kind = {Manifold::Hyperbolic, dim};
  else if (kind == "spherical") p.kind = {Manifold::Spherical, dim};
  else throw MgtkError("unknown manifold: " + kind);
  p.coords = coords;
  if (p.coords.size() != p.kind.ambient_dim())
    throw MgtkError("coordinate length does not match manifold dimension");
  return p;
}

TrainConfig config_from_dict(const py::dict& d) {
  TrainConfig cfg;
  for (auto item : d) {
    const std::string key = py::cast<std::string>(item.first);
    if (key == "epochs") cfg.epochs = py::cast<int>(item.second);
    else if (key == "learning_rate") cfg.learning_rate = py::cast<double>(item.second);
    else if (key == "lambda0") cfg.lambda0 = py::cast<double>(item.second);
    else if (key == "anneal") cfg.anneal = py::cast<bool>(item.second);
    else if (key == "lambda_gate") cfg.lambda_gate = py::cast<double>(item.second);
    else if (key == "lambda_rad") cfg.lambda_rad = py::cast<double>(item.second);
    else if (key == "lambda_corr") cfg.lambda_corr = py::cast<double>(item.second);
    else if (key == "convergence_tol") cfg.convergence_tol = py::cast<double>(item.second);
    else if (key == "seed") cfg.seed = py::cast<std::uint64_t>(item.second);
    else if (key == "dim") cfg.dim = py::cast<int>(item.second);
    else if (key == "candidate_k") cfg.candidate_k = py::cast<int>(item.second);
    else if (key == "k_neg") cfg.k_neg = py::cast<int>(item.second);
    else if (key == "exhaustive_negatives") cfg.exhaustive_negatives = py::cast<bool>(item.second);
    else if (key == "train_bin_limit") cfg.train_bin_limit = py::cast<int>(item.second);
    else if (key == "epochs") cfg.epochs = py::cast<int>(item.second);
    else throw MgtkError("unknown train config key: " + key);
  }
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "mixture-geometry temporal knowledge graph toolkit";

  py::register_exception<MgtkError>(m, "MgtkError");

  py::class_<Point>(m, "Point")
      .def(py::init(&make_point), py::arg("kind"), py::arg("dim"), py::arg("coords"))
      .def_property_readonly("coords", [](const Point& p) { return p.coords; })
      .def_property_readonly("kind", [](const Point& p) {
        return std::string(manifold_name(p.kind.tag));
      });

  m.def("geodesic_distance", &geodesic_distance);
  m.def("squared_distance", &squared_distance);
  m.def(
      "grad_sq_distance",
      [](const Point& x, const Point& y) { return grad_sq_distance(x, y); });
  m.def("hyperbolic_diameter", &hyperbolic_diameter);
  m.def("mobius_add", &mobius_add);

  m.def("cloglog_prob", &cloglog_prob, py::arg("f"), py::arg("delta"));
  m.def("cloglog_inverse", &cloglog_inverse, py::arg("p"), py::arg("delta"));
  m.def(
      "verify_partition_invariance",
      [](const std::string& link, double f, double delta, int k, std::uint64_t seed) {
        Link l = link == "cloglog" ? Link::Cloglog
                 : link == "logistic" ? Link::Logistic
                                      : Link::Probit;
        return verify_partition_invariance(l, f, delta, k, seed);
      },
      py::arg("link"), py::arg("f"), py::arg("delta"), py::arg("k_parts"),
      py::arg("seed") = 0);
  m.def(
      "simulate_bin_events",
      [](const std::vector<double>& f, const std::vector<double>& widths,
         std::uint64_t seed) {
        return simulate_bin_events(f, BinSchedule{widths}, seed).indicators;
      },
      py::arg("f_schedule"), py::arg("widths"), py::arg("seed"));

  m.def(
      "solve_maxent",
      [](const std::vector<double>& s_hat, const std::vector<double>& d_sq,
         double c_s, double c_d, bool require_nondegenerate) {
        SolveOptions opts;
        opts.require_nondegenerate = require_nondegenerate;
        MomentConstraints c{c_d, c_s};
        const auto sol = solve_maxent(make_feature_matrix(s_hat, d_sq), c, opts);
        py::dict out;
        out["alpha"] = sol.alpha;
        out["beta"] = sol.beta;
        out["tau"] = sol.tau;
        out["probs"] = sol.probs;
        out["converged"] = sol.converged;
        out["iterations"] = sol.iterations;
        return out;
      },
      py::arg("s_hat"), py::arg("d_sq"), py::arg("c_s"), py::arg("c_d"),
      py::arg("require_nondegenerate") = true);
  m.def("canonical_score", &canonical_score);
  m.def("check_rank_ok", [](const std::vector<double>& s_hat,
                            const std::vector<double>& d_sq, double c_cond) {
    return check_nondegeneracy(make_feature_matrix(s_hat, d_sq), c_cond).ok();
  });

  m.def("composite_energy", &composite_energy);
  m.def("softmax_weights", &softmax_weights);
  m.def("log_sum_exp_energy", &log_sum_exp_energy);
  m.def("temperature", &temperature);

  m.def("effective_sample_size", [](long n) {
    const auto es = effective_sample_size(n);
    return py::make_tuple(es.m, es.g, es.n_eff);
  });
  m.def("covering_bound", &covering_bound);
  m.def("tree_distortion_bench", [](int depth, int dim, std::uint64_t seed) {
    const auto r = tree_distortion_bench(depth, dim, seed);
    py::dict out;
    out["hyperbolic_worst"] = r.hyperbolic_worst;
    out["hyperbolic_avg"] = r.hyperbolic_avg;
    out["euclidean_worst"] = r.euclidean_worst;
    out["euclidean_avg"] = r.euclidean_avg;
    return out;
  });

  py::class_<TemporalKG>(m, "TemporalKG")
      .def(py::init<int, int, std::vector<double>>(), py::arg("n_entities"),
           py::arg("n_relations"), py::arg("bin_widths"))
      .def("add",
           [](TemporalKG& kg, int h, int r, int t, int u) {
             kg.add({h, r, t, u});
           })
      .def_property_readonly("n_entities", &TemporalKG::n_entities)
      .def_property_readonly("n_relations", &TemporalKG::n_relations)
      .def_property_readonly("n_bins", &TemporalKG::n_bins)
      .def("n_events", [](const TemporalKG& kg) { return kg.quads().size(); })
      .def("graph_distance",
           [](const TemporalKG& kg, int h, int t, int u) -> py::object {
             const auto d = graph_distance(kg, h, t, u);
             if (!d) return py::none();
             return py::int_(*d);
           })
      .def("structural_feature",
           [](const TemporalKG& kg, int h, int r, int t, int u, int window,
              int max_path_len, double s_max) {
             return structural_feature(kg, h, r, t, u,
                                       {window, max_path_len, s_max});
           },
           py::arg("h"), py::arg("r"), py::arg("t"), py::arg("u"),
           py::arg("window") = 2, py::arg("max_path_len") = 3,
           py::arg("s_max") = 10.0);

  m.def("load_tsv", &load_tsv, py::arg("path"), py::arg("bins_json_path") = "");
  m.def("save_tsv", &save_tsv);

  m.def(
      "generate_planted",
      [](const py::dict& d) {
        GenerateConfig cfg;
        if (d.contains("n_bins")) cfg.n_bins = py::cast<int>(d["n_bins"]);
        if (d.contains("seed")) cfg.seed = py::cast<std::uint64_t>(d["seed"]);
        if (d.contains("tau")) cfg.tau = py::cast<double>(d["tau"]);
        if (d.contains("adjacent_prob"))
          cfg.adjacent_prob = py::cast<double>(d["adjacent_prob"]);
        for (auto rel : py::cast<py::list>(d["relations"])) {
          const py::dict rd = py::cast<py::dict>(rel);
          RelationPlan plan;
          const std::string g = py::cast<std::string>(rd["geometry"]);
          plan.geometry = g == "euclidean" ? Manifold::Euclidean
                          : g == "hyperbolic" ? Manifold::Hyperbolic
                                              : Manifold::Spherical;
          const std::string s = py::cast<std::string>(rd["structure"]);
          plan.structure = s == "tree" ? RelationPlan::Tree
                           : s == "grid" ? RelationPlan::Grid
                                         : RelationPlan::Ring;
          const auto range = py::cast<std::pair<int, int>>(rd["entities"]);
          plan.lo = range.first;
          plan.hi = range.second;
          cfg.relations.push_back(plan);
        }
        return generate_planted(cfg).kg;
      },
      py::arg("config"));

  py::class_<TrainResult>(m, "TrainResult")
      .def_property_readonly("converged",
                             [](const TrainResult& r) { return r.trace.converged; })
      .def_property_readonly("iterations",
                             [](const TrainResult& r) { return r.trace.rows.size(); })
      .def("j_values",
           [](const TrainResult& r) {
             std::vector<double> out;
             for (const auto& row : r.trace.rows) out.push_back(row.J);
             return out;
           })
      .def("mixture_weights",
           [](const TrainResult& r) { return r.params.mixture.weights; })
      .def("rank",
           [](const TrainResult& r, const TemporalKG& kg, int h, int rel, int u,
              const std::vector<int>& candidates) {
             std::vector<int> tails;
             for (const auto& rt :
                  score_rank(r.params, kg, h, rel, u, candidates, FeatureConfig{}))
               tails.push_back(rt.tail);
             return tails;
           })
      .def("evaluate",
           [](const TrainResult& r, const TemporalKG& kg, int u_from, int u_to) {
             const auto m = evaluate_ranking(r.params, kg, u_from, u_to,
                                             FeatureConfig{});
             py::dict out;
             out["mrr"] = m.mrr;
             out["hits1"] = m.hits1;
             out["hits3"] = m.hits3;
             out["hits10"] = m.hits10;
             out["chance_mrr"] = m.chance_mrr;
             out["n_queries"] = m.n_queries;
             return out;
           });

  m.def(
      "train",
      [](const TemporalKG& kg, const py::dict& d) {
        return train(kg, config_from_dict(d));
      },
      py::arg("kg"), py::arg("config"));
}
