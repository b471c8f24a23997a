import re

import numpy as np
import pytest

from mvmc.completion import (McParams, auto_tau, fpc_solve, mu_schedule, nuclear_norm, shrink,
                             smooth_gradient, smooth_objective)
from mvmc.core import FeatureMatrix, LabelMatrix, StackedMatrix, build_stacked
from mvmc.errors import ConfigError, DataError, SolverError


def random_instance(rng, m=3, d=4, n=6, gamma=1.0, lam=1.0):
    """Random stacked matrix, masks and an iterate with non-trivial label margins."""
    Y = rng.choice([-1.0, 1.0, np.nan], size=(m, n), p=[0.35, 0.35, 0.3])
    Xv = rng.standard_normal((d, n))
    obs = rng.random((d, n)) < 0.7
    S, ox, oy = build_stacked(FeatureMatrix(Xv, obs), LabelMatrix.from_array(Y))
    Z = S.Z + 0.5 * rng.standard_normal(S.Z.shape)
    Z[-1] = 1.0
    return S, ox, oy, Z, McParams(lam=lam, gamma=gamma)


def test_objective_at_observed_labels():
    Z0 = np.array([[1.0, -1.0], [0.5, 0.2], [1.0, 1.0]])
    ox = np.zeros_like(Z0, bool)
    ox[1] = True
    oy = np.zeros_like(Z0, bool)
    oy[0] = True
    f = smooth_objective(Z0, Z0, ox, oy, McParams(lam=1, gamma=1))
    assert f == pytest.approx(np.log1p(np.exp(-1.0)), abs=1e-12)
    assert f == pytest.approx(0.3132617, abs=1e-7)


def test_objective_without_labels_is_least_squares(rng):
    S, ox, _, Z, p = random_instance(rng)
    oy = np.zeros_like(ox)
    r = (Z - S.Z)[ox]
    assert smooth_objective(Z, S.Z, ox, oy, p) == pytest.approx(0.5 * r @ r / ox.sum(), rel=1e-14)


def test_objective_single_feature_entry():
    Z0 = np.array([[0.0], [1.0]])
    Z = np.array([[1.0], [1.0]])
    ox = np.array([[True], [False]])
    assert smooth_objective(Z, Z0, ox, np.zeros_like(ox), McParams(lam=0)) == 0.5


def test_objective_needs_observations():
    Z = np.zeros((2, 2))
    with pytest.raises(DataError):
        smooth_objective(Z, Z, np.zeros_like(Z, bool), np.zeros_like(Z, bool), McParams())


def test_gradient_examples(rng):
    S, ox, oy, Z, p = random_instance(rng)
    G = smooth_gradient(Z, S.Z, ox, oy, p)
    assert (G[~(ox | oy)] == 0).all()
    assert (G[-1] == 0).all()
    Z0 = np.array([[1.0], [1.0], [1.0], [1.0], [1.0]])
    Z = Z0.copy()
    Z[0, 0] = 2.0
    ox = np.zeros_like(Z0, bool)
    ox[:4] = True
    assert smooth_gradient(Z, Z0, ox, np.zeros_like(ox), McParams())[0, 0] == 0.25


@pytest.mark.parametrize("gamma", [1.0, 3.0, 30.0])
def test_gradient_matches_finite_differences_6x5(rng, gamma):
    for _ in range(5):
        S, ox, oy, Z, p = random_instance(rng, m=2, d=3, n=5, gamma=gamma)
        G = smooth_gradient(Z, S.Z, ox, oy, p)
        h = 1e-6
        for i, j in zip(*np.nonzero(ox | oy)):
            E = np.zeros_like(Z)
            E[i, j] = h
            fd = (smooth_objective(Z + E, S.Z, ox, oy, p)
                  - smooth_objective(Z - E, S.Z, ox, oy, p)) / (2 * h)
            assert abs(fd - G[i, j]) <= 1e-5 * max(abs(G[i, j]), 1e-3)


def test_shrink_examples(rng):
    A = rng.standard_normal((5, 4))
    np.testing.assert_allclose(shrink(A, 0.0), A, atol=1e-10)
    np.testing.assert_allclose(shrink(np.diag([3.0, 1.0]), 2.0), np.diag([1.0, 0.0]), atol=1e-12)
    with pytest.raises(ValueError):
        shrink(A, -1.0)


def test_shrink_is_the_proximal_point(rng):
    A = rng.standard_normal((5, 4))
    nu = np.linalg.norm(A, 2) / 2
    X = shrink(A, nu)

    def obj(M):
        return 0.5 * np.sum((M - A) ** 2) + nu * nuclear_norm(M)
    # subgradient condition: (A - X)/nu = U_k V_k^T + W, W orthogonal to X's spaces, ||W|| <= 1
    U, s, Vt = np.linalg.svd(X)
    k = int(np.sum(s > 1e-10))
    G = (A - X) / nu
    Uk, Vk = U[:, :k], Vt[:k].T
    np.testing.assert_allclose(Uk.T @ G @ Vk, np.eye(k), atol=1e-10)
    W = G - Uk @ Vk.T
    np.testing.assert_allclose(Uk.T @ W, 0, atol=1e-10)
    np.testing.assert_allclose(W @ Vk, 0, atol=1e-10)
    assert np.linalg.norm(W, 2) <= 1 + 1e-10
    base = obj(X)
    for _ in range(200):
        assert obj(X + 1e-3 * rng.standard_normal(X.shape)) >= base - 1e-12


def test_shrink_singular_values_and_norm(rng):
    for _ in range(20):
        A = rng.standard_normal((6, 5))
        nu = rng.uniform(0, 3)
        s_out = np.linalg.svd(shrink(A, nu), compute_uv=False)
        s_in = np.linalg.svd(A, compute_uv=False)
        np.testing.assert_allclose(s_out, np.maximum(s_in - nu, 0), atol=1e-8)
        assert nuclear_norm(shrink(A, nu)) <= nuclear_norm(A) + 1e-12


def test_auto_tau_examples():
    ox = np.zeros((3, 10), bool)
    ox[1] = True
    oy = np.zeros((3, 10), bool)
    oy[0] = True
    assert auto_tau(McParams(lam=1, gamma=1), ox, oy) == pytest.approx(10.0)
    assert auto_tau(McParams(), ox, np.zeros_like(oy)) == pytest.approx(10.0)
    assert auto_tau(McParams(lam=0), ox, oy) == pytest.approx(10.0)
    assert auto_tau(McParams(lam=8, gamma=5), ox, oy) == pytest.approx(1.0)
    with pytest.raises(DataError):
        auto_tau(McParams(), np.zeros_like(ox), np.zeros_like(oy))


def test_params_validation():
    for bad in (dict(lam=-1), dict(gamma=0), dict(mu_decay=1.0), dict(mu_min=0),
                dict(tau=-1.0), dict(max_inner_iters=0), dict(inner_tol=0)):
        with pytest.raises(ConfigError):
            McParams(**bad)


def test_mu_schedule_ends_at_minimum():
    mus = mu_schedule(1.0, 0.25, 1e-3)
    assert mus[:5] == [1.0, 0.25, 0.0625, 0.015625, 0.00390625]
    assert mus[-1] == 1e-3 and len(mus) == 6


def _stack_features(F, m=1):
    """Stacked matrix for features F with m all-unknown label rows."""
    return build_stacked(FeatureMatrix(F), LabelMatrix(np.zeros((m, F.shape[1]), np.int8)))


def test_fully_observed_rank2_is_reproduced(rng):
    F = rng.standard_normal((8, 2)) @ rng.standard_normal((2, 10))
    S, ox, oy = _stack_features(F)
    sol = fpc_solve(S, ox, oy, McParams(lam=0))
    err = np.linalg.norm(sol.Z.features - F) / np.linalg.norm(F)
    assert err < 1e-4
    np.testing.assert_array_equal(sol.Z.ones, 1.0)


def test_rank3_block_recovered_from_40_percent(rng):
    F = rng.standard_normal((60, 3)) @ rng.standard_normal((3, 80))
    obs = rng.random(F.shape) < 0.4
    S, ox, oy = build_stacked(FeatureMatrix(F, obs), LabelMatrix(np.zeros((0, 80), np.int8)))
    sol = fpc_solve(S, ox, oy, McParams(lam=0))
    err = np.linalg.norm(sol.Z.features - F) / np.linalg.norm(F)
    assert err < 1e-2


def test_one_labeled_one_unlabeled_rank1_sign():
    X = FeatureMatrix(np.array([[2.0, -2.0]]))
    Y = LabelMatrix.from_array(np.array([[1.0, np.nan]]))
    S, ox, oy = build_stacked(X, Y)
    sol = fpc_solve(S, ox, oy, McParams())
    assert sol.soft_labels[0, 0] > 0
    assert sol.soft_labels[0, 1] < 0


def test_inner_descent_is_monotone_and_ones_row_kept(rng):
    for seed in range(3):
        r = np.random.default_rng(seed)
        Y = np.where(r.random((3, 30)) < 0.5, 1.0, -1.0)
        Y[:, 20:] = np.nan
        F = r.standard_normal((6, 2)) @ r.standard_normal((2, 30))
        S, ox, oy = build_stacked(FeatureMatrix(F), LabelMatrix.from_array(Y))
        params = McParams(lam=1.0, gamma=3.0, max_inner_iters=30)
        trace = {}

        def cb(stage, it, mu, Z):
            assert (Z[-1] == 1.0).all()
            f = smooth_objective(Z, S.Z, ox, oy, params) + mu * nuclear_norm(Z)
            trace.setdefault(stage, []).append(f)
        fpc_solve(S, ox, oy, params, callback=cb)
        for values in trace.values():
            assert all(b <= a + 1e-9 for a, b in zip(values, values[1:]))


def test_solution_is_deterministic(rng):
    S, ox, oy, _, p = random_instance(rng, m=2, d=5, n=12)
    a = fpc_solve(S, ox, oy, p)
    b = fpc_solve(S, ox, oy, p)
    np.testing.assert_array_equal(a.Z.Z, b.Z.Z)
    assert a.iterations == b.iterations and a.final_objective == b.final_objective


def test_non_finite_iterate_reports_stage(rng):
    S, ox, oy, _, _ = random_instance(rng)
    with pytest.raises(SolverError) as exc:
        fpc_solve(S, ox, oy, McParams(tau=1e308))
    assert re.search(r"mu index \d+ .*iteration \d+", str(exc.value))
    assert exc.value.stage == "fpc"


def test_mask_shape_and_ones_row_checks(rng):
    S, ox, oy, _, p = random_instance(rng)
    with pytest.raises(DataError):
        fpc_solve(S, ox[:-1], oy, p)
    bad = ox.copy()
    bad[-1, 0] = True
    with pytest.raises(DataError):
        fpc_solve(S, bad, oy, p)
