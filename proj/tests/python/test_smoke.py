"""Smoke tests for the python bindings."""

import math

import pytest

mgtk = pytest.importorskip("mgtk")


def test_distances():
    x = mgtk.Point("euclidean", 2, [0.0, 0.0])
    y = mgtk.Point("euclidean", 2, [3.0, 4.0])
    assert mgtk.geodesic_distance(x, y) == pytest.approx(5.0)

    o = mgtk.Point("hyperbolic", 2, [0.0, 0.0])
    h = mgtk.Point("hyperbolic", 2, [0.5, 0.0])
    assert mgtk.geodesic_distance(o, h) == pytest.approx(2 * math.atanh(0.5))

    a = mgtk.Point("spherical", 2, [1.0, 0.0, 0.0])
    b = mgtk.Point("spherical", 2, [0.0, 1.0, 0.0])
    assert mgtk.geodesic_distance(a, b) == pytest.approx(math.pi / 2)

    g = mgtk.grad_sq_distance(mgtk.Point("euclidean", 2, [1.0, 0.0]),
                              mgtk.Point("euclidean", 2, [0.0, 0.0]))
    assert list(g) == pytest.approx([2.0, 0.0])


def test_cloglog_and_partition_invariance():
    assert mgtk.cloglog_prob(0.0, 1.0) == pytest.approx(1 - math.exp(-1))
    f = mgtk.cloglog_inverse(0.5, 2.0)
    assert mgtk.cloglog_prob(f, 2.0) == pytest.approx(0.5)
    assert mgtk.verify_partition_invariance("cloglog", 0.3, 1.5, 4, seed=1) <= 1e-12
    assert mgtk.verify_partition_invariance("logistic", 0.0, 1.0, 2, seed=1) > 1e-3


def test_maxent_solver():
    sol = mgtk.solve_maxent([0.0, 1.0, 2.0], [2.0, 1.0, 0.0], 1.0, 1.0,
                            require_nondegenerate=False)
    assert sol["converged"]
    assert list(sol["probs"]) == pytest.approx([1 / 3] * 3, abs=1e-8)
    assert not mgtk.check_rank_ok([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 1e6)


def test_mixture_ops():
    w = mgtk.softmax_weights([1.0, 2.0, 2.0], 0.05)
    assert w[0] == pytest.approx(1.0, abs=1e-8)
    assert mgtk.composite_energy([0.5, 0.5], [1.0, 3.0]) == pytest.approx(2.0)
    e = mgtk.log_sum_exp_energy([1.0, 2.0, 3.0], 1.0)
    assert 1.0 <= e <= 1.0 + math.log(3.0)
    assert mgtk.temperature(0, 10, 1.0) == pytest.approx(1.0)


def test_constants_calculators():
    m, g, n_eff = mgtk.effective_sample_size(1000)
    assert (m, g, n_eff) == (10, 10, 25)
    assert mgtk.covering_bound(0.0, 0.0, 0.0, 1.0, 1.0, 0.3) == pytest.approx(0.0)


def test_tree_bench():
    r = mgtk.tree_distortion_bench(4, 2, 1)
    assert r["hyperbolic_worst"] < r["euclidean_worst"]


def test_kg_and_training_end_to_end():
    kg = mgtk.generate_planted({
        "seed": 3,
        "n_bins": 6,
        "relations": [{"geometry": "hyperbolic", "structure": "tree",
                       "entities": (0, 10)}],
    })
    assert kg.n_entities == 10
    assert kg.n_events() > 0
    assert kg.graph_distance(0, 0, 1) == 0

    result = mgtk.train(kg, {"epochs": 3, "seed": 3, "candidate_k": 6,
                             "convergence_tol": 1e-9})
    js = result.j_values()
    assert len(js) == 4
    assert js[-1] <= js[0]
    weights = result.mixture_weights()
    assert weights.shape == (1, 3)
    assert weights.sum() == pytest.approx(1.0)

    ranked = result.rank(kg, 0, 0, 1, [0, 1, 2, 3])
    assert sorted(ranked) == [0, 1, 2, 3]

    metrics = result.evaluate(kg, kg.n_bins, kg.n_bins)
    assert 0.0 <= metrics["mrr"] <= 1.0
