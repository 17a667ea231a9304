import itertools

import numpy as np
import pytest

from couplingflow import metrics


def brute_force_w(a, b, squared):
    """Exhaustive minimum over all assignments (the independent oracle)."""
    n = a.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(n)):
        d = np.linalg.norm(a - b[list(perm)], axis=1)
        cost = np.mean(d**2) if squared else np.mean(d)
        best = min(best, cost)
    return np.sqrt(best) if squared else best


def test_identical_clouds_cost_zero():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((10, 3))
    for metric in (metrics.W1, metrics.W2):
        assert metrics.empirical_wasserstein(a, a.copy(), metric).cost == 0.0


def test_two_points_distance():
    a = np.array([[0.0, 0.0]])
    b = np.array([[3.0, 4.0]])
    assert metrics.empirical_wasserstein(a, b, metrics.W1).cost == 5.0
    assert metrics.empirical_wasserstein(a, b, metrics.W2).cost == 5.0


def test_matches_brute_force_n6():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((6, 2))
    b = rng.standard_normal((6, 2))
    w1 = metrics.empirical_wasserstein(a, b, metrics.W1)
    w2 = metrics.empirical_wasserstein(a, b, metrics.W2)
    assert abs(w1.cost - brute_force_w(a, b, squared=False)) <= 1e-12
    assert abs(w2.cost - brute_force_w(a, b, squared=True)) <= 1e-12


def test_assignment_is_bijection_and_beats_identity():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((30, 4))
    b = rng.standard_normal((30, 4))
    plan = metrics.empirical_wasserstein(a, b, metrics.W1)
    assert sorted(plan.assignment) == list(range(30))
    identity_cost = float(np.mean(np.linalg.norm(a - b, axis=1)))
    assert plan.cost <= identity_cost + 1e-12


def test_symmetry():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((25, 3))
    b = rng.standard_normal((25, 3))
    for metric in (metrics.W1, metrics.W2):
        ab = metrics.empirical_wasserstein(a, b, metric).cost
        ba = metrics.empirical_wasserstein(b, a, metric).cost
        assert abs(ab - ba) <= 1e-12


def test_triangle_inequality_w1():
    rng = np.random.default_rng(4)
    a, b, c = (rng.standard_normal((20, 2)) for _ in range(3))
    ab = metrics.empirical_wasserstein(a, b, metrics.W1).cost
    bc = metrics.empirical_wasserstein(b, c, metrics.W1).cost
    ac = metrics.empirical_wasserstein(a, c, metrics.W1).cost
    assert ac <= ab + bc + 1e-9


def test_size_mismatch_rejected():
    with pytest.raises(ValueError):
        metrics.empirical_wasserstein(np.zeros((3, 2)), np.zeros((4, 2)))


def test_relative_frobenius():
    assert metrics.relative_frobenius(np.eye(3), np.eye(3)) == 0.0
    assert metrics.relative_frobenius(np.zeros((3, 3)), np.eye(3)) == 1.0
    rng = np.random.default_rng(5)
    b = rng.standard_normal((4, 4))
    e = rng.standard_normal((4, 4))
    val = metrics.relative_frobenius(b + e, b)
    assert abs(val - np.linalg.norm(e) / np.linalg.norm(b)) <= 1e-12
    # zero denominator falls back to the absolute norm
    assert metrics.relative_frobenius(np.eye(2), np.zeros((2, 2))) == np.sqrt(2.0)
