import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rclub import detector
from rclub.bandits import Policy, PolicyConfig
from rclub.detector import NonRobustStats, RobustStats
from rclub.errors import InvalidArgument, NumericFailure, UndefinedResult
from rclub.graph import UserGraph

from oracles import auc_pairs, occud_threshold_formula, ridge_direct

# frozen from oracles.occud_threshold_formula
OCCUD_EXAMPLE = 2.1323036726159965


class TestNonRobustUpdate:
    def test_first_sample(self):
        s = detector.nonrobust_update(detector.UserNonRobustState.new(2, 1.0), [1.0, 0.0], 1.0)
        assert s.theta_tilde == pytest.approx([0.5, 0.0], abs=1e-15)

    def test_zero_rewards(self):
        s = detector.UserNonRobustState.new(3, 1.0)
        for x in np.eye(3):
            detector.nonrobust_update(s, x, 0.0)
        assert np.array_equal(s.b, np.zeros(3))
        assert np.array_equal(s.theta_tilde, np.zeros(3))

    def test_batch_equivalence(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((500, 5))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        r = rng.standard_normal(500)
        s = detector.UserNonRobustState.new(5, 1.0)
        for x, ri in zip(X, r):
            detector.nonrobust_update(s, x, ri)
        ref, _ = ridge_direct(X, r, np.ones(500), 1.0)
        assert np.max(np.abs(s.theta_tilde - ref)) <= 1e-8
        assert s.count == 500

    def test_policy_side_statistics_are_unweighted(self):
        rng = np.random.default_rng(1)
        p = Policy("RCLUB_WCU", PolicyConfig(alpha=0.2, C=1.0), 3, 4, 100)
        X = rng.standard_normal((300, 4))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        r = rng.standard_normal(300)
        users = rng.integers(0, 3, 300)
        for i, x, ri in zip(users, X, r):
            p.update(int(i), x, ri)
        for i in range(3):
            ref, _ = ridge_direct(X[users == i], r[users == i], np.ones((users == i).sum()), 1.0)
            assert np.max(np.abs(p.ntheta[i] - ref)) <= 1e-8
            # the robust side is down-weighted, so the two differ
            assert np.max(np.abs(p.theta[i] - ref)) > 1e-6


class TestThreshold:
    def test_empty_history_first_term(self):
        lam, delta = 2.0, 0.05
        first = (math.sqrt(2 * math.log(1 / delta)) + math.sqrt(lam)) / math.sqrt(lam)
        second = (math.sqrt(2 * math.log(1 / delta)) + math.sqrt(lam)) / math.sqrt(lam)
        got = detector.occud_threshold(0, 0, 0.0, lam, lam, 3, delta, 0.0)
        assert got == pytest.approx(first + second, rel=1e-14)

    def test_symmetric_terms(self):
        v = detector.occud_threshold(40, 40, 5.0, 6.0, 1.0, 3, 0.1, 0.0)
        first = (math.sqrt(3 * math.log(1 + 40 / 3) + 2 * math.log(10)) + 1) / math.sqrt(6.0)
        assert v == pytest.approx(2 * first, rel=1e-14)

    def test_example(self):
        got = detector.occud_threshold(50, 200, 10.0, 40.0, 1.0, 2, 0.1, 0.5)
        assert got == pytest.approx(OCCUD_EXAMPLE, rel=1e-14)
        assert got == pytest.approx(occud_threshold_formula(50, 200, 10, 40, 1, 2, 0.1, 0.5),
                                    rel=1e-14)

    def test_cluster_matrix_below_regulariser(self):
        with pytest.raises(NumericFailure):
            detector.occud_threshold(1, 1, 0.0, 0.5, 1.0, 2, 0.1, 0.0)

    def test_negative_counts(self):
        with pytest.raises(InvalidArgument):
            detector.occud_threshold(-1, 1, 0.0, 1.0, 1.0, 2, 0.1, 0.0)


def zero_stats(u, d):
    robust = RobustStats(np.zeros((u, d, d)), np.zeros((u, d)), np.zeros(u, dtype=np.int64),
                         np.zeros((u, d)))
    return robust, NonRobustStats(np.zeros((u, d, d)), np.zeros((u, d)), np.zeros((u, d)))


class TestOccudScan:
    def test_cold_start(self):
        robust, nonrobust = zero_stats(4, 3)
        rep = detector.occud_scan(robust, nonrobust, UserGraph.complete(4), 1,
                                  lam=1.0, delta=0.1, alpha_c=0.0)
        assert np.array_equal(rep.lhs, np.zeros(4))
        assert not rep.flagged.any()
        assert rep.detected_set == []

    def test_flag_definition_on_a_run(self):
        rng = np.random.default_rng(3)
        p = Policy("RCLUB_WCU", PolicyConfig(alpha=0.3, C=1.0, alpha1=0.3), 6, 3, 1000)
        theta = np.array([0.6, 0.0, 0.8])
        for t in range(1, 801):
            i = int(rng.integers(0, 6))
            x = rng.standard_normal(3)
            x /= np.linalg.norm(x)
            r = x @ theta * (-1 if (i == 0 and t < 300) else 1) + 0.1 * rng.standard_normal()
            p.update(i, x, r, t)
        rep = detector.occud_scan(p.robust_stats(), p.nonrobust_stats(), p.graph, 800,
                                  lam=1.0, delta=0.01, alpha_c=p.params.alpha_c)
        assert np.array_equal(rep.flagged, rep.lhs > rep.thresholds)
        assert np.array_equal(rep.scores, rep.lhs - rep.thresholds)
        assert rep.detected_set == np.flatnonzero(rep.scores > 0).tolist()
        # the lhs is the distance to the robust estimate of the user's component
        labels, grams, thetas, _ = detector.cluster_estimates(p.robust_stats(), p.graph, 1.0)
        for i in range(6):
            members = np.flatnonzero(labels == labels[i])
            G = np.eye(3) + p.gram[members].sum(0)
            ref = np.linalg.solve(G, p.bvec[members].sum(0))
            assert rep.lhs[i] == pytest.approx(np.linalg.norm(p.ntheta[i] - ref), abs=1e-9)


class TestGcud:
    def graph_of(self, u):
        return UserGraph.complete(u)

    def scan(self, scores, rho, graph=None):
        scores = np.asarray(scores, dtype=float)
        u = scores.size
        user = np.zeros((u, 1))
        user[:, 0] = scores
        return detector.gcud_scan(user, np.zeros((u, 1)), graph or self.graph_of(u), rho)

    def test_zero_fraction(self):
        assert not self.scan([0.9, 0.1, 0.5], 0.0).flagged.any()

    def test_everyone(self):
        assert self.scan([0.9, 0.1, 0.5], 0.9).flagged.all()

    def test_example(self):
        assert self.scan([0.9, 0.1, 0.5, 0.2], 0.25).detected_set == [0]

    def test_ties_prefer_lower_ids(self):
        assert self.scan([0.3, 0.5, 0.5, 0.5], 0.5).detected_set == [1, 2]

    def test_per_component_counts(self):
        g = UserGraph.complete(6)
        for i in range(3):
            for j in range(3, 6):
                g.delete_edge(i, j)
        rep = self.scan([0.1, 0.2, 0.3, 0.9, 0.8, 0.7], 0.3, g)
        assert rep.detected_set == [2, 3]

    def test_rho_range(self):
        with pytest.raises(InvalidArgument):
            self.scan([0.1], 1.0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=1, max_size=30), st.floats(0, 0.99),
           st.integers(0, 2**32 - 1))
    def test_flag_count(self, scores, rho, seed):
        u = len(scores)
        rng = np.random.default_rng(seed)
        g = UserGraph.complete(u)
        for _ in range(u):
            i, j = rng.integers(0, u, 2)
            if i != j:
                g.delete_edge(int(i), int(j))
        rep = self.scan(scores, rho, g)
        for comp in g.components():
            assert rep.flagged[comp].sum() == math.ceil(rho * len(comp) - 1e-12)
            # flagged users outscore the unflagged ones
            if rep.flagged[comp].any() and (~rep.flagged[comp]).any():
                assert rep.scores[comp][rep.flagged[comp]].min() >= \
                    rep.scores[comp][~rep.flagged[comp]].max()


class TestAuc:
    def test_separated(self):
        assert detector.auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0

    def test_all_ties(self):
        assert detector.auc([0.3] * 6, [1, 0, 1, 0, 0, 0]) == 0.5

    def test_example(self):
        assert detector.auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == 0.75

    def test_single_class(self):
        with pytest.raises(UndefinedResult):
            detector.auc([0.1, 0.2], [1, 1])

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            detector.auc([0.1, 0.2], [1])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 8), st.booleans()), min_size=2, max_size=80)
           .filter(lambda v: 0 < sum(l for _, l in v) < len(v)))
    def test_matches_pair_enumeration_with_ties(self, data):
        scores = [s / 4 for s, _ in data]
        labels = [l for _, l in data]
        got = detector.auc(scores, labels)
        assert got == auc_pairs(scores, labels)
        assert 0.0 <= got <= 1.0
