"""Least-squares view weighting on the probability simplex.

Minimizes ``1/2 (theta^T H theta - 2 theta^T h) + eta/2 ||theta||^2`` with
``H = P P^T / N`` and ``h = P y / N`` by two-coordinate descent: each step
moves mass between one pair of weights, keeping their sum fixed, using the
closed-form minimizer along that line and clipping at zero.

Targets are mapped from {-1, +1} to {0, 1} since P holds probabilities.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import PredictionTensor, SimplexWeights
from .errors import DataError

DEGENERATE = 1e-14


@dataclass(frozen=True)
class LsProblem:
    H: np.ndarray
    h: np.ndarray
    eta: float
    N: int
    const: float = 0.0  # y^T y / N, dropped from the objective

    @property
    def V(self):
        return self.h.size


def ls_targets(y0):
    return (np.asarray(y0, dtype=float) + 1.0) / 2.0


def build_ls(P: PredictionTensor, eta: float) -> LsProblem:
    if P.N < 1:
        raise DataError("empty prediction tensor")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    y = ls_targets(P.y0)
    H = P.P @ P.P.T / P.N
    H = 0.5 * (H + H.T)
    h = P.P @ y / P.N
    return LsProblem(H, h, float(eta), P.N, float(y @ y) / P.N)


def ls_objective(theta, prob: LsProblem) -> float:
    theta = np.asarray(getattr(theta, "theta", theta), dtype=float)
    return float(0.5 * (theta @ prob.H @ theta - 2.0 * theta @ prob.h)
                 + 0.5 * prob.eta * theta @ theta)


def _pair_terms(theta, i, j, prob):
    H, h, eta = prob.H, prob.h, prob.eta
    D = H[i, i] - H[i, j] - H[j, i] + H[j, j]
    total = theta[i] + theta[j]
    cross = (H[i] - H[j]) @ theta
    num_i = eta * total + (h[i] - h[j]) + (D * theta[i] - cross)
    num_j = eta * total + (h[j] - h[i]) + (D * theta[j] + cross)
    return D + 2.0 * eta, num_i, num_j, total


def update_pair(theta, i, j, prob: LsProblem):
    """Optimal reallocation of ``theta[i] + theta[j]`` between views i and j."""
    if i == j:
        raise ValueError("update_pair needs two distinct views")
    theta = np.array(getattr(theta, "theta", theta), dtype=float)
    denom, num_i, num_j, total = _pair_terms(theta, i, j, prob)
    if denom <= DEGENERATE:
        return theta
    if num_i <= 0 and num_j <= 0:
        # only possible when total == 0; clip the more negative side
        if num_i <= num_j:
            theta[i], theta[j] = 0.0, total
        else:
            theta[i], theta[j] = total, 0.0
    elif num_i <= 0:
        theta[i], theta[j] = 0.0, total
    elif num_j <= 0:
        theta[i], theta[j] = total, 0.0
    else:
        ti = min(num_i / denom, total)
        theta[i], theta[j] = ti, total - ti
    return theta


def solve_ls(P: PredictionTensor, eta: float = 1.0, tol: float = 1e-9, max_sweeps: int = 200,
             callback=None) -> SimplexWeights:
    """Cyclic pairwise coordinate descent from uniform weights.

    Stops once a full sweep over ordered pairs lowers the objective by less
    than ``tol``. ``callback(theta)`` sees every intermediate iterate.
    """
    prob = build_ls(P, eta)
    return solve_ls_problem(prob, tol, max_sweeps, callback)


def solve_ls_problem(prob: LsProblem, tol=1e-9, max_sweeps=200, callback=None):
    V = prob.V
    theta = np.full(V, 1.0 / V)
    if V == 1:
        return SimplexWeights(theta)
    pairs = list(itertools.permutations(range(V), 2))
    obj = ls_objective(theta, prob)
    for _ in range(max_sweeps):
        for i, j in pairs:
            theta = update_pair(theta, i, j, prob)
            if callback is not None:
                callback(theta)
        new = ls_objective(theta, prob)
        done = obj - new < tol
        obj = new
        if done:
            break
    return SimplexWeights.normalized(theta, floor=0.0)
