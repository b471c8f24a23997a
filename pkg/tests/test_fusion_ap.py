import itertools

import numpy as np
import pytest

from conftest import random_tensor
from mvmc.core import PredictionTensor
from mvmc.errors import DataError
from mvmc.fusion_ap import (PairwiseOrdering, Violation, WorkingSet, ap_loss, corpus,
                            dual_objective, find_most_violated, fit_ap, joint_hessian,
                            primal_objective, psi, solve_alpha, solve_ap, solve_zeta)
from mvmc.metrics import average_precision


def brute_psi(p, y, ordering):
    pos = ordering.positions
    P_idx, N_idx = np.flatnonzero(y > 0), np.flatnonzero(y <= 0)
    total = np.zeros(p.shape[0])
    for i in P_idx:
        for j in N_idx:
            o = 1.0 if pos[i] < pos[j] else -1.0
            total += o * (p[:, i] - p[:, j])
    return total / (P_idx.size * N_idx.size)


def all_orderings(y):
    """Every distinct interleaving pattern, as permutations of the corpus."""
    n = y.size
    return [PairwiseOrdering(np.array(perm)) for perm in itertools.permutations(range(n))]


def test_psi_examples(rng):
    p = rng.random((3, 2))
    y = np.array([1, -1])
    np.testing.assert_allclose(psi(p, y, PairwiseOrdering(np.array([0, 1]))), p[:, 0] - p[:, 1])
    p = rng.random((2, 4))
    y = np.array([1, -1, 1, -1])
    o = PairwiseOrdering(np.array([1, 0, 3, 2]))
    np.testing.assert_allclose(psi(p, y, o), brute_psi(p, y, o), atol=1e-15)
    np.testing.assert_allclose(psi(p, y, o.reversed()), -psi(p, y, o), atol=1e-15)
    with pytest.raises(DataError):
        psi(p, np.ones(4), o)


def test_pairwise_signs_complete_and_consistent(rng):
    y = np.array([1, -1, -1, 1, -1])
    o = PairwiseOrdering.from_scores(rng.standard_normal(5))
    S = o.signs(y)
    assert S.shape == (2, 3) and set(np.unique(S)) <= {-1.0, 1.0}
    with pytest.raises(DataError):
        PairwiseOrdering(np.array([0, 0, 1]))


def test_most_violated_separable_case():
    p = np.array([[0.9, 0.8, 0.1, 0.2, 0.15]])
    y = np.array([1, 1, -1, -1, -1])
    v = find_most_violated(p, y, np.array([100.0]))
    assert v.loss == 0.0 and v.violation <= 0
    assert ap_loss(y, v.ordering) == 0.0


def test_most_violated_single_pair_zero_scores():
    p = np.zeros((1, 2))
    y = np.array([1, -1])
    v = find_most_violated(p, y, np.zeros(1))
    np.testing.assert_array_equal(v.ordering.order, [1, 0])
    assert v.loss == 0.5 and v.violation == 0.5


@pytest.mark.parametrize("seed", range(10))
def test_most_violated_matches_enumeration_2pos_4neg(seed):
    rng = np.random.default_rng(seed)
    y = np.array([1, 1, -1, -1, -1, -1])
    rng.shuffle(y)
    p = rng.random((3, 6))
    theta = rng.standard_normal(3) * rng.choice([0.1, 1, 10])
    v = find_most_violated(p, y, theta)
    truth_psi = psi(p, y, PairwiseOrdering.truth(y))
    best = max(ap_loss(y, o) + theta @ (psi(p, y, o) - truth_psi) for o in all_orderings(y))
    assert v.violation == pytest.approx(best, abs=1e-12)
    assert v.loss == pytest.approx(ap_loss(y, v.ordering), abs=1e-14)
    np.testing.assert_allclose(v.dpsi, truth_psi - psi(p, y, v.ordering), atol=1e-14)


def _single(delta, dpsi):
    ws = WorkingSet(len(dpsi))
    ws.add(0, Violation(PairwiseOrdering(np.array([1, 0])), delta, np.asarray(dpsi, float), 0.0))
    return ws


def test_solve_alpha_examples():
    ws = _single(0.5, [0.0, 0.0])
    assert solve_alpha(ws, np.zeros(2), C=0.7)[0] == pytest.approx(0.7)
    ws = _single(0.5, [2.0, 0.0])       # K = 4
    assert solve_alpha(ws, np.zeros(2), C=1.0)[0] == pytest.approx(0.125, abs=1e-12)
    assert solve_alpha(ws, np.zeros(2), C=0.1)[0] == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(DataError):
        solve_alpha(WorkingSet(2), np.zeros(2), C=1.0)


def test_solve_alpha_matches_grid_oracle(rng):
    for _ in range(3):
        ws = WorkingSet(2)
        for _ in range(3):
            ws.add(0, Violation(PairwiseOrdering(np.array([1, 0])), rng.uniform(0, 1),
                                rng.standard_normal(2) * 0.5, 0.0))
        zeta = np.abs(rng.standard_normal(2)) * 0.2
        C = 1.0
        a = solve_alpha(ws, zeta, C)
        K, b = ws.gram, ws.delta - ws.dpsi.T @ zeta

        def q(x):
            return b @ x - 0.5 * x @ K @ x
        g = np.linspace(0, C, 101)
        A = np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T
        A = A[A.sum(1) <= C + 1e-12]
        grid_best = (A @ b - 0.5 * np.einsum("ij,jk,ik->i", A, K, A)).max()
        assert q(a) >= grid_best - 1e-4
        assert (a >= 0).all() and a.sum() <= C + 1e-12


def test_solve_zeta_examples(rng):
    ws = WorkingSet(3)
    ws.add(0, Violation(PairwiseOrdering(np.array([1, 0])), 0.5, np.array([1.0, -2.0, 0.0]), 0))
    np.testing.assert_array_equal(solve_zeta(np.array([1.0]), ws), [0.0, 2.0, 0.0])
    np.testing.assert_array_equal(solve_zeta(np.array([0.0]), ws), [0.0, 0.0, 0.0])


def test_dual_at_origin_is_zero(rng):
    ws = _single(0.3, [0.5, -0.2])
    assert dual_objective(np.zeros(1), np.zeros(2), ws) == 0.0


def test_duality_gap_tiny_instance(rng):
    P = random_tensor(rng, V=2, m=2, n_l=6, informative=0)
    res = fit_ap(P, eta=0.5, cp_tol=1e-9, dual_tol=1e-13, max_outer=500)
    primal = primal_objective(res.theta_raw, P, res.C)
    assert primal - res.dual_trace[-1] < 1e-5
    assert primal >= res.dual_trace[-1] - 1e-9


def test_working_set_caches_match_psi(rng):
    P = random_tensor(rng, V=3, m=3, n_l=10)
    res = fit_ap(P, eta=0.1)
    for t, o, d, loss in zip(res.working_set.labels, res.working_set.orderings,
                             res.working_set.dpsis, res.working_set.losses):
        p, y = corpus(P, t)
        np.testing.assert_allclose(d, psi(p, y, PairwiseOrdering.truth(y)) - psi(p, y, o),
                                   atol=1e-10)
        assert loss == ap_loss(y, o)
    for blk in res.working_set.blocks():
        assert res.alpha[blk].sum() <= res.C * (1 + 1e-12)
    assert (res.alpha >= 0).all() and (res.zeta >= 0).all()
    assert (res.theta_raw >= -1e-9).all()
    assert res.outer_iterations < 100


def test_perfect_view_gets_majority(rng):
    y = np.where(rng.random((2, 20)) < 0.4, 1, -1)
    y[:, :2] = [[1, -1], [1, -1]]
    P = PredictionTensor(np.vstack([(y.ravel() + 1) / 2, rng.random(40)]), y.ravel(), 2, 20)
    theta = solve_ap(P, eta=1.0).theta
    assert theta[0] > 0.5
    fused = theta @ P.P
    maps = [average_precision(fused[P.label_slice(t)], y[t]) for t in range(2)]
    assert np.mean(maps) == 1.0


def test_single_view_and_view_permutation(rng):
    P = random_tensor(rng, V=1)
    np.testing.assert_array_equal(solve_ap(P).theta, [1.0])
    P = random_tensor(rng, V=3, informative=1)
    perm = np.array([2, 0, 1])
    Pp = PredictionTensor(P.P[perm], P.y0, P.m, P.n_l)
    np.testing.assert_allclose(solve_ap(Pp, 0.1).theta, solve_ap(P, 0.1).theta[perm], atol=1e-9)


def test_single_class_labels_excluded(rng):
    y = np.array([[1, -1, 1, -1], [1, 1, 1, 1]])
    P = PredictionTensor(rng.random((2, 8)), y.ravel(), 2, 4)
    res = fit_ap(P)
    assert res.excluded_labels == [1]
    with pytest.raises(DataError):
        fit_ap(PredictionTensor(rng.random((2, 4)), np.ones(4), 1, 4))


def test_normalization_keeps_fused_ranking(rng):
    P = random_tensor(rng, V=3, informative=2)
    res = fit_ap(P, eta=0.1)
    raw = res.theta_raw @ P.P
    fused = res.weights.theta @ P.P
    for t in range(P.m):
        sl = P.label_slice(t)
        y = P.y0[sl]
        assert average_precision(raw[sl], y) == average_precision(fused[sl], y)


def test_dual_trace_monotone(rng):
    for _ in range(5):
        res = fit_ap(random_tensor(rng, V=3, m=3), eta=float(rng.choice([0.01, 1.0, 100.0])))
        tr = np.array(res.dual_trace)
        assert (np.diff(tr) >= -1e-9).all()


def test_joint_hessian_negative_semidefinite(rng):
    P = random_tensor(rng, V=3)
    res = fit_ap(P, eta=0.1)
    assert np.linalg.eigvalsh(joint_hessian(res.working_set)).max() <= 1e-8
