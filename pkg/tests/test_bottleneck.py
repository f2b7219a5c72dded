"""Bottleneck distance: worked examples, brute-force oracle, metric axioms."""

import math

import numpy as np
import pytest

from kleinvae.tda import PersistenceDiagram, bottleneck, bottleneck_l2, bottleneck_matching, rips_ph_points

from oracles import brute_bottleneck


def random_diagram(rng, k, lattice=False):
    if lattice:  # coarse grid values create many exact ties
        b = rng.integers(0, 5, k) / 4.0
        return np.c_[b, b + rng.integers(1, 5, k) / 4.0]
    b = rng.uniform(0, 1, k)
    return np.c_[b, b + rng.exponential(0.5, k)]


class TestExamples:
    def test_identity(self):
        P = np.array([[0.0, 1.0], [0.2, 0.9]])
        assert bottleneck(P, P) == 0.0

    def test_single_match(self):
        assert bottleneck([[0.0, 1.0]], [[0.0, 1.2]]) == pytest.approx(0.2, abs=1e-15)

    def test_to_empty(self):
        assert bottleneck([[0.0, 1.0]], np.empty((0, 2))) == 0.5

    def test_both_empty(self):
        assert bottleneck(np.empty((0, 2)), np.empty((0, 2))) == 0.0

    def test_diagonal_cheaper_than_match(self):
        # matching costs 2.0; sending both to the diagonal costs 0.05
        assert bottleneck([[0.0, 0.1]], [[2.0, 2.1]]) == pytest.approx(0.05)

    def test_matching_object(self):
        eps, m = bottleneck_matching([[0.0, 1.0], [0.0, 0.02]], [[0.0, 1.1]])
        assert eps == pytest.approx(0.1)
        assert m.pairs == [(0, 0)]
        assert m.unmatched_p == [1]
        assert m.unmatched_q == []


class TestEssentialBars:
    def test_equal_counts_contribute_nothing(self):
        assert bottleneck([[0.0, math.inf], [0.0, 1.0]], [[0.3, math.inf], [0.0, 1.0]]) == 0.0

    def test_unequal_counts_infinite(self):
        assert bottleneck([[0.0, math.inf]], [[0.0, 1.0]]) == math.inf


class TestBruteForce:
    @pytest.mark.parametrize("seed", range(40))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        P = random_diagram(rng, int(rng.integers(0, 6)), lattice=seed % 2 == 0)
        Q = random_diagram(rng, int(rng.integers(0, 6)), lattice=seed % 2 == 0)
        assert bottleneck(P, Q) == brute_bottleneck(P, Q)


class TestMetricAxioms:
    @pytest.mark.parametrize("seed", range(20))
    def test_axioms(self, seed):
        rng = np.random.default_rng(1000 + seed)
        A, B, C = (random_diagram(rng, int(rng.integers(1, 7))) for _ in range(3))
        ab, ba = bottleneck(A, B), bottleneck(B, A)
        assert ab == ba
        assert bottleneck(A, C) <= ab + bottleneck(B, C) + 1e-12
        assert bottleneck(A, A) == 0.0
        assert ab > 0.0

    def test_zero_persistence_points_irrelevant(self, rng):
        A, B = random_diagram(rng, 5), random_diagram(rng, 4)
        A0 = np.r_[A, [[0.3, 0.3], [0.7, 0.7]]]
        assert bottleneck(A0, B) == bottleneck(A, B)


class TestStability:
    @pytest.mark.parametrize("seed", range(3))
    def test_perturbation_bound(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((40, 2))
        delta = 0.01
        Y = X + rng.uniform(-1, 1, X.shape) * delta / np.sqrt(2)
        thr = 100.0
        a = rips_ph_points(X, max_dim=1, threshold=thr)
        b = rips_ph_points(Y, max_dim=1, threshold=thr)
        # every pairwise distance moves by at most 2 * delta / sqrt(2) * sqrt(2) = 2 delta;
        # Rips stability then bounds d_B by the maximal distance change
        for d in (0, 1):
            assert bottleneck(a, b, d) <= 2 * delta + 1e-9


class TestL2:
    def test_three_four_five(self):
        p = {0: np.array([[0.0, 0.6]]), 1: np.array([[0.0, 0.8]]), 2: np.empty((0, 2))}
        q = {0: np.empty((0, 2)), 1: np.empty((0, 2)), 2: np.empty((0, 2))}
        assert bottleneck_l2(p, q, [0, 1, 2]) == pytest.approx(0.5, abs=1e-15)

    def test_identical_families(self, rng):
        dgm = rips_ph_points(rng.standard_normal((20, 2)), max_dim=2)
        assert bottleneck_l2(dgm, dgm, [0, 1, 2]) == 0.0

    def test_componentwise(self, rng):
        a = rips_ph_points(rng.standard_normal((20, 2)), max_dim=2)
        b = rips_ph_points(rng.standard_normal((20, 2)), max_dim=2)
        per = [bottleneck(a, b, d) for d in (0, 1, 2)]
        assert abs(bottleneck_l2(a, b, [0, 1, 2]) - math.sqrt(sum(x * x for x in per))) <= 1e-12

    def test_diagram_requires_dim(self):
        dgm = PersistenceDiagram(np.array([[0.0, 1.0, 0]]), 2)
        with pytest.raises(ValueError):
            bottleneck(dgm, dgm)
