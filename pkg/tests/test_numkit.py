import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rclub import numkit
from rclub.errors import InvalidArgument

from oracles import min_eig_bisect, ridge_direct


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class TestSpdNew:
    @pytest.mark.parametrize("d,lam,g,inv", [(2, 1.0, 1.0, 1.0), (3, 2.0, 2.0, 0.5),
                                             (1, 0.25, 0.25, 4.0)])
    def test_scaled_identity(self, d, lam, g, inv):
        s = numkit.spd_new(d, lam)
        assert np.array_equal(s.gram, g * np.eye(d))
        assert np.array_equal(s.inv, inv * np.eye(d))
        assert s.update_count == 0

    @pytest.mark.parametrize("d,lam", [(0, 1.0), (2, 0.0), (2, -1.0), (1.5, 1.0)])
    def test_rejects_bad_arguments(self, d, lam):
        with pytest.raises(InvalidArgument):
            numkit.spd_new(d, lam)


class TestRankOneUpdate:
    def test_axis_update(self):
        s = numkit.rank1_update(numkit.spd_new(2, 1.0), [1.0, 0.0], 1.0)
        assert np.allclose(s.gram, np.diag([2.0, 1.0]), atol=0)
        assert np.allclose(s.inv, np.diag([0.5, 1.0]), atol=1e-15)

    def test_zero_weight_is_noop(self):
        rng = np.random.default_rng(1)
        s = numkit.spd_new(3, 1.0)
        for x in unit_rows(rng, 5, 3):
            numkit.rank1_update(s, x, 0.7)
        before = s.copy()
        numkit.rank1_update(s, unit_rows(rng, 1, 3)[0], 0.0)
        assert np.array_equal(s.gram, before.gram)
        assert np.array_equal(s.inv, before.inv)
        assert s.update_count == before.update_count

    def test_thousand_updates_match_dense_inverse(self):
        rng = np.random.default_rng(2)
        s = numkit.spd_new(3, 1.0)
        for x in unit_rows(rng, 1000, 3):
            numkit.rank1_update(s, x, rng.uniform(1e-3, 1.0))
        assert np.max(np.abs(s.inv - np.linalg.inv(s.gram))) <= 1e-8

    @pytest.mark.parametrize("w", [-0.1, 1.5])
    def test_weight_outside_unit_interval(self, w):
        with pytest.raises(InvalidArgument):
            numkit.rank1_update(numkit.spd_new(2, 1.0), [1.0, 0.0], w)

    def test_norm_above_one_rejected(self):
        with pytest.raises(InvalidArgument):
            numkit.rank1_update(numkit.spd_new(2, 1.0), [1.0, 0.1], 1.0)

    def test_refresh_cadence(self):
        rng = np.random.default_rng(3)
        s = numkit.spd_new(4, 1.0, refresh_every=10)
        for n, x in enumerate(unit_rows(rng, 25, 4), start=1):
            numkit.rank1_update(s, x, 1.0)
            assert s.update_count == n % 10


class TestMahalanobis:
    def test_identity_metric(self):
        x = np.array([0.3, -0.4])
        assert numkit.mahalanobis(numkit.spd_new(2, 1.0), x) == pytest.approx(0.5, abs=1e-15)

    def test_diagonal(self):
        s = numkit.SpdState(1.0, np.diag([4.0, 1.0]), np.diag([0.25, 1.0]))
        assert numkit.mahalanobis(s, [1.0, 0.0]) == 0.5

    def test_scaled_identity(self):
        s = numkit.spd_new(2, 2.0)
        assert numkit.mahalanobis(s, [1.0, 1.0]) == pytest.approx(1.0, abs=1e-15)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidArgument):
            numkit.mahalanobis(numkit.spd_new(2, 1.0), [np.nan, 0.0])


class TestSolve:
    def test_scaled_identity(self):
        s = numkit.spd_new(3, 4.0)
        assert np.allclose(numkit.solve(s, [4.0, 8.0, -2.0]), [1.0, 2.0, -0.5], atol=1e-15)

    def test_diagonal(self):
        s = numkit.SpdState(1.0, np.diag([2.0, 4.0]), np.diag([0.5, 0.25]))
        assert np.array_equal(numkit.solve(s, [2.0, 4.0]), [1.0, 1.0])

    def test_random_spd_matches_factorisation(self):
        rng = np.random.default_rng(4)
        X = unit_rows(rng, 30, 5)
        w = rng.uniform(0.1, 1.0, 30)
        r = rng.standard_normal(30)
        s = numkit.spd_new(5, 1.0)
        for x, wi in zip(X, w):
            numkit.rank1_update(s, x, wi)
        ref, _ = ridge_direct(X, r, w, 1.0)
        got = numkit.solve(s, X.T @ (w * r))
        assert np.max(np.abs(got - ref)) <= 1e-8

    def test_stale_inverse_is_repaired(self):
        s = numkit.spd_new(2, 1.0)
        s.gram = np.diag([3.0, 2.0])  # inverse now wrong
        out = numkit.solve(s, [3.0, 2.0])
        assert np.allclose(out, [1.0, 1.0], atol=1e-12)


class TestMinEigenvalue:
    def test_identity(self):
        assert numkit.min_eigenvalue(np.eye(3)) == 1.0

    def test_diagonal(self):
        assert numkit.min_eigenvalue(np.diag([3.0, 1.0, 2.0])) == 1.0

    def test_random_spd_against_bisection(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            B = rng.standard_normal((3, 3))
            A = B @ B.T + 0.1 * np.eye(3)
            ref = min_eig_bisect(A)
            assert abs(numkit.min_eigenvalue(A) - ref) <= 1e-8 * ref

    def test_asymmetric_rejected(self):
        with pytest.raises(InvalidArgument):
            numkit.min_eigenvalue(np.array([[1.0, 0.1], [0.0, 1.0]]))

    def test_full_decomposition_reconstructs(self):
        rng = np.random.default_rng(6)
        B = rng.standard_normal((8, 8))
        A = B + B.T
        w, V = numkit.jacobi_eigh(A)
        assert np.all(np.diff(w) >= 0)
        assert np.max(np.abs(V @ np.diag(w) @ V.T - A)) <= 1e-12
        assert np.max(np.abs(V.T @ V - np.eye(8))) <= 1e-12


class TestAggregate:
    def test_single_state_substitutes_regulariser(self):
        s = numkit.spd_new(2, 3.0)
        numkit.rank1_update(s, [0.6, 0.8], 1.0)
        agg = numkit.aggregate([s], 1.0)
        assert np.allclose(agg.gram, np.eye(2) + np.outer([0.6, 0.8], [0.6, 0.8]), atol=1e-15)

    def test_empty_histories(self):
        agg = numkit.aggregate([numkit.spd_new(3, 1.0), numkit.spd_new(3, 1.0)], 2.0)
        assert np.array_equal(agg.gram, 2.0 * np.eye(3))

    def test_three_states_match_sum(self):
        rng = np.random.default_rng(7)
        states, parts = [], []
        for _ in range(3):
            s = numkit.spd_new(4, 1.0)
            P = np.zeros((4, 4))
            for x in unit_rows(rng, 20, 4):
                w = rng.uniform(0.1, 1)
                numkit.rank1_update(s, x, w)
                P += w * np.outer(x, x)
            states.append(s)
            parts.append(P)
        agg = numkit.aggregate(states, 1.0)
        ref = np.eye(4) + sum(parts)
        assert np.max(np.abs(agg.gram - ref)) <= 1e-12
        assert np.max(np.abs(agg.inv - np.linalg.inv(ref))) <= 1e-8

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            numkit.aggregate([np.zeros((2, 2)), np.zeros((3, 3))], 1.0)

    def test_solve_of_aggregate_matches_summed_normal_equations(self):
        rng = np.random.default_rng(8)
        Xs, ws, rs, states = [], [], [], []
        for _ in range(4):
            X = unit_rows(rng, 15, 3)
            w = rng.uniform(0.2, 1.0, 15)
            r = rng.standard_normal(15)
            s = numkit.spd_new(3, 1.0)
            for x, wi in zip(X, w):
                numkit.rank1_update(s, x, wi)
            Xs.append(X), ws.append(w), rs.append(r), states.append(s)
        X, w, r = np.vstack(Xs), np.concatenate(ws), np.concatenate(rs)
        ref, _ = ridge_direct(X, r, w, 1.0)
        got = numkit.solve(numkit.aggregate(states, 1.0), X.T @ (w * r))
        assert np.max(np.abs(got - ref)) <= 1e-8


unit_vec = st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: 1e-3 < np.linalg.norm(v)).map(lambda v: np.array(v) / max(1.0, np.linalg.norm(v)))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(unit_vec, st.floats(0.0, 1.0)), min_size=1, max_size=40), unit_vec)
def test_radius_never_grows_and_gram_stays_above_lambda(updates, probe):
    s = numkit.spd_new(3, 1.0)
    last = numkit.mahalanobis(s, probe)
    for x, w in updates:
        numkit.rank1_update(s, x, w)
        now = numkit.mahalanobis(s, probe)
        assert now <= last + 1e-12
        last = now
    assert numkit.min_eigenvalue(s.gram) >= 1.0 - 1e-8
    assert np.max(np.abs(s.gram - s.gram.T)) <= 1e-10
    assert np.max(np.abs(s.gram @ s.inv - np.eye(3))) <= 1e-6
