r"""Average-precision view weighting via a structural SVM.

For each label ``t`` the labeled entries form a corpus whose samples carry a
V-vector ``p`` of per-view probabilities. A ranking ``o`` of the corpus is
scored by ``theta^T Psi(t, o)`` with

.. math::

    \Psi(t, o) = \frac{1}{|S^+||S^-|} \sum_{i \in S^+} \sum_{j \in S^-} o_{ij} (p_i - p_j),

and the weights solve the margin-rescaled problem

.. math::

    \min_{\theta \ge 0} \tfrac12 \|\theta\|^2 + C \sum_t \xi_t
    \quad\text{s.t.}\quad \theta^T \delta\Psi_t(o) \ge \Delta_{ap}(o_t, o) - \xi_t,

with ``C = 1 / (2 N eta)``. It is solved in the dual by alternating between
the constraint multipliers ``alpha`` (cutting plane plus an SMO-style QP
solver) and the nonnegativity multipliers ``zeta`` (closed form). The
returned weights are the primal ``theta = dPsi alpha + zeta`` rescaled onto
the simplex.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import PredictionTensor, SimplexWeights
from .errors import DataError, SolverError
from .metrics import ranking

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairwiseOrdering:
    """A complete ranking of one label's corpus, stored as a permutation (best first).

    The pairwise form ``o_ij`` over (positive, negative) pairs is derived
    from it on demand, so it is always complete and transitive.
    """

    order: np.ndarray

    def __post_init__(self):
        order = np.asarray(self.order, dtype=int)
        if not np.array_equal(np.sort(order), np.arange(order.size)):
            raise DataError("ordering must be a permutation of the corpus")
        order.setflags(write=False)
        object.__setattr__(self, "order", order)

    @classmethod
    def from_scores(cls, scores):
        return cls(ranking(scores))

    @classmethod
    def truth(cls, y):
        """All positives ahead of all negatives (the ground-truth ordering)."""
        y = np.asarray(y)
        return cls(np.concatenate([np.flatnonzero(y > 0), np.flatnonzero(y <= 0)]))

    @property
    def positions(self):
        pos = np.empty_like(self.order)
        pos[self.order] = np.arange(self.order.size)
        return pos

    def reversed(self):
        return PairwiseOrdering(self.order[::-1].copy())

    def signs(self, y):
        """|S+| x |S-| matrix of o_ij: +1 where positive i is ranked ahead of negative j."""
        y = np.asarray(y)
        pos = self.positions
        pi, nj = pos[y > 0], pos[y <= 0]
        return np.where(pi[:, None] < nj[None, :], 1.0, -1.0)


def _corpus_checks(y):
    y = np.asarray(y)
    if not (y > 0).any():
        raise DataError("corpus has no positive sample")
    if (y > 0).all():
        raise DataError("corpus has no negative sample")
    return y


def _ap_of_hits(hits):
    n_pos = int(hits.sum())
    ranks = np.flatnonzero(hits) + 1
    return float(np.sum(np.arange(1, n_pos + 1) / ranks) / n_pos)


def ap_loss(truth, candidate: PairwiseOrdering) -> float:
    """One minus the average precision of ``candidate`` w.r.t. the +-1 ``truth``."""
    truth = np.asarray(truth)
    if not (truth > 0).any():
        raise DataError("AP loss undefined without positives")
    return 1.0 - _ap_of_hits(truth[candidate.order] > 0)


def psi(p, y, ordering: PairwiseOrdering):
    """Joint feature map of one label's corpus; ``p`` is V x n_corpus, ``y`` is +-1."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    y = _corpus_checks(y)
    o = ordering.signs(y)
    pos, neg = p[:, y > 0], p[:, y <= 0]
    npos, nneg = o.shape
    return (pos @ o.sum(1) - neg @ o.sum(0)) / (npos * nneg)


def corpus(P: PredictionTensor, t: int):
    """Per-view probabilities (V x n_l) and +-1 truth of label t."""
    sl = P.label_slice(t)
    return P.P[:, sl], P.y0[sl]


@dataclass(frozen=True)
class Violation:
    """Result of loss-augmented inference for one label."""

    ordering: PairwiseOrdering
    loss: float          # Delta_ap(o_t, o)
    dpsi: np.ndarray     # Psi(t, o_t) - Psi(t, o)
    violation: float     # loss - theta^T dpsi


def find_most_violated(p, y, theta) -> Violation:
    """argmax over rankings of ``Delta_ap(o_t, o) + theta^T Psi(t, o)``.

    Positives and negatives are each sorted by descending score
    ``theta^T p``; the optimum interleaves the two lists, and each negative's
    insertion point can be chosen independently. The per-negative optima are
    nondecreasing in the negative's rank, which is enforced explicitly to
    absorb rounding.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    y = _corpus_checks(y)
    theta = np.asarray(theta, dtype=float)
    s = theta @ p
    pos_idx = np.flatnonzero(y > 0)
    neg_idx = np.flatnonzero(y <= 0)
    pos_idx = pos_idx[ranking(s[pos_idx])]
    neg_idx = neg_idx[ranking(s[neg_idx])]
    sp, sn = s[pos_idx], s[neg_idx]
    P_, N_ = sp.size, sn.size

    k = np.arange(1, P_ + 1)[None, :]       # rank among positives
    j = np.arange(1, N_ + 1)[:, None]       # rank among negatives
    # gain of keeping negative j above positive k: AP drop plus score change
    g = (k / (k + j - 1) - k / (k + j)) / P_ - 2.0 * (sp[None, :] - sn[:, None]) / (P_ * N_)
    # f[j, a] = sum_{k > a} g[j, k] for a = 0..P (negative j sits below a positives)
    f = np.zeros((N_, P_ + 1))
    f[:, :P_] = np.cumsum(g[:, ::-1], axis=1)[:, ::-1]
    above = np.maximum.accumulate(np.argmax(f, axis=1))

    # negatives above each positive, and the resulting permutation
    neg_above = np.searchsorted(above, np.arange(P_), side="right")
    order = np.empty(P_ + N_, dtype=int)
    slot_pos = k.ravel() - 1 + neg_above
    slot_neg = np.arange(N_) + above
    order[slot_pos] = pos_idx
    order[slot_neg] = neg_idx
    ordering = PairwiseOrdering(order)

    loss = 1.0 - float(np.mean(k.ravel() / (k.ravel() + neg_above)))
    dpsi = 2.0 * (p[:, pos_idx] @ neg_above - p[:, neg_idx] @ (P_ - above)) / (P_ * N_)
    return Violation(ordering, loss, dpsi, loss - float(theta @ dpsi))


@dataclass
class WorkingSet:
    """Cutting-plane constraints across labels with their cached losses and dPsi."""

    V: int
    labels: list = field(default_factory=list)
    orderings: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    dpsis: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    def add(self, t, v: Violation):
        self.labels.append(t)
        self.orderings.append(v.ordering)
        self.losses.append(v.loss)
        self.dpsis.append(np.asarray(v.dpsi, dtype=float))

    @property
    def delta(self):
        return np.asarray(self.losses, dtype=float)

    @property
    def dpsi(self):
        """V x M matrix whose columns are the constraint dPsi vectors."""
        if not self.dpsis:
            return np.zeros((self.V, 0))
        return np.column_stack(self.dpsis)

    @property
    def gram(self):
        D = self.dpsi
        return D.T @ D

    def blocks(self):
        lab = np.asarray(self.labels)
        return [np.flatnonzero(lab == t) for t in dict.fromkeys(self.labels)]

    def slack(self, t, theta):
        """Current slack xi_t = max(0, max_o in set [Delta - theta^T dPsi])."""
        xi = 0.0
        for lt, loss, d in zip(self.labels, self.losses, self.dpsis):
            if lt == t:
                xi = max(xi, loss - float(theta @ d))
        return xi


def dual_objective(alpha, zeta, ws: WorkingSet) -> float:
    alpha = np.asarray(alpha, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    D = ws.dpsi
    Da = D @ alpha
    return float(ws.delta @ alpha - 0.5 * Da @ Da - zeta @ Da - 0.5 * zeta @ zeta)


def joint_hessian(ws: WorkingSet):
    """Hessian of the dual in (alpha, zeta): -[[K, dPsi^T], [dPsi, I]]."""
    D = ws.dpsi
    top = np.hstack([D.T @ D, D.T])
    bottom = np.hstack([D, np.eye(ws.V)])
    return -np.vstack([top, bottom])


def solve_zeta(alpha, ws: WorkingSet):
    """Closed-form maximizer of ``-zeta^T dPsi alpha - zeta^T zeta / 2`` over zeta >= 0."""
    return np.maximum(0.0, -(ws.dpsi @ np.asarray(alpha, dtype=float)))


def solve_alpha(ws: WorkingSet, zeta, C, alpha0=None, tol=1e-10, max_iter=200_000):
    """Maximize ``(Delta - dPsi^T zeta)^T alpha - alpha^T K alpha / 2``.

    Feasible set: ``alpha >= 0`` and, per label, ``sum alpha <= C``. Each
    label block gets an implicit slack variable so the block sum is exactly
    C; the solver then repeatedly moves mass along the most violating pair
    inside a block (SMO), which never decreases the objective.
    """
    M = len(ws)
    if M == 0:
        raise DataError("empty working set")
    K = ws.gram
    if M <= 400:
        lo = float(np.linalg.eigvalsh(K)[0]) if M else 0.0
        if lo < -1e-8 * max(1.0, float(np.abs(K).max())):
            raise SolverError(f"constraint Gram matrix is not PSD (min eigenvalue {lo:.3g})",
                              stage="solve_alpha")
    b = ws.delta - ws.dpsi.T @ np.asarray(zeta, dtype=float)
    alpha = np.zeros(M) if alpha0 is None else np.array(alpha0, dtype=float)
    if alpha.size < M:
        alpha = np.concatenate([alpha, np.zeros(M - alpha.size)])
    blocks = ws.blocks()
    slack = np.array([C - alpha[blk].sum() for blk in blocks])
    if (alpha < -1e-15).any() or (slack < -1e-12).any():
        raise DataError("initial alpha is infeasible")
    slack = np.maximum(slack, 0.0)
    g = b - K @ alpha
    diagK = np.diag(K)

    for _ in range(max_iter):
        best = None
        for bi, blk in enumerate(blocks):
            gb = g[blk]
            # candidates to grow: any constraint or the slack (gradient 0)
            iu = int(np.argmax(gb))
            up, g_up = (blk[iu], gb[iu]) if gb[iu] > 0.0 else (None, 0.0)
            # candidates to shrink: positive alphas or the slack if positive
            live = alpha[blk] > 0.0
            if live.any():
                iw = int(np.argmin(np.where(live, gb, np.inf)))
                down, g_down = blk[iw], gb[iw]
            else:
                down, g_down = None, np.inf
            if slack[bi] > 0.0 and 0.0 < g_down:
                down, g_down = None, 0.0
            gap = g_up - g_down
            if up is None and down is None:
                continue
            if best is None or gap > best[0]:
                best = (gap, bi, up, down)
        if best is None or best[0] <= tol:
            break
        gap, bi, u, w = best
        cap = slack[bi] if w is None else alpha[w]
        q = (diagK[u] if u is not None else 0.0) + (diagK[w] if w is not None else 0.0)
        if u is not None and w is not None:
            q -= 2.0 * K[u, w]
        step = cap if q <= 1e-15 else min(cap, gap / q)
        if step <= 0.0:
            break
        if u is not None:
            alpha[u] += step
            g -= step * K[:, u]
        if w is not None:
            alpha[w] -= step
            g += step * K[:, w]
            if alpha[w] < 1e-300:
                alpha[w] = 0.0
        else:
            slack[bi] -= step
            if slack[bi] < 1e-300:
                slack[bi] = 0.0
        if u is None:
            slack[bi] += step
    else:
        log.warning("solve_alpha: iteration limit reached")
    return alpha


@dataclass
class ApResult:
    weights: SimplexWeights
    theta_raw: np.ndarray
    alpha: np.ndarray
    zeta: np.ndarray
    working_set: WorkingSet
    dual_trace: list
    outer_iterations: int
    excluded_labels: list
    C: float


def fit_ap(P: PredictionTensor, eta: float = 1.0, cp_tol: float = 1e-3, max_outer: int = 100,
           dual_tol: float = 1e-6) -> ApResult:
    """Run the alternating cutting-plane solver and keep the full state."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    V = P.V
    C = 1.0 / (2.0 * P.N * eta)
    labels, excluded = [], []
    for t in range(P.m):
        y = corpus(P, t)[1]
        (labels if (y > 0).any() and (y < 0).any() else excluded).append(t)
    if not labels:
        raise DataError("every label is single-class on the labeled set; nothing to learn")
    if excluded:
        log.info("fit_ap: labels %s are single-class and excluded", excluded)

    ws = WorkingSet(V)
    alpha = np.zeros(0)
    zeta = np.zeros(V)
    trace = [0.0]
    outer = 0
    for outer in range(1, max_outer + 1):
        theta = ws.dpsi @ alpha + zeta
        added = 0
        for t in labels:
            p, y = corpus(P, t)
            v = find_most_violated(p, y, theta)
            if v.violation - ws.slack(t, theta) > cp_tol:
                ws.add(t, v)
                added += 1
        if len(ws) == 0:
            break
        alpha = solve_alpha(ws, zeta, C, alpha)
        trace.append(dual_objective(alpha, zeta, ws))
        zeta = solve_zeta(alpha, ws)
        trace.append(dual_objective(alpha, zeta, ws))
        if added == 0 and trace[-1] - trace[-3] < dual_tol:
            break
    theta_raw = ws.dpsi @ alpha + zeta
    if (theta_raw < -1e-9).any():
        raise SolverError(f"primal weights negative after zeta step: {theta_raw}", stage="fit_ap")
    return ApResult(SimplexWeights.normalized(theta_raw), theta_raw, alpha, zeta, ws, trace,
                    outer, excluded, C)


def solve_ap(P: PredictionTensor, eta: float = 1.0, cp_tol: float = 1e-3,
             max_outer: int = 100) -> SimplexWeights:
    if P.V == 1:
        return SimplexWeights(np.ones(1))
    return fit_ap(P, eta, cp_tol, max_outer).weights


def primal_objective(theta, P: PredictionTensor, C, labels=None):
    """Primal value with slacks from exact loss-augmented inference."""
    theta = np.asarray(theta, dtype=float)
    labels = range(P.m) if labels is None else labels
    total = 0.5 * float(theta @ theta)
    for t in labels:
        p, y = corpus(P, t)
        total += C * max(0.0, find_most_violated(p, y, theta).violation)
    return total
