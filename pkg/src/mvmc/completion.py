"""Transductive matrix completion on the stacked matrix [Y; X; 1^T].

Minimizes

    mu * ||Z||_* + 1/|Ox| sum_Ox (z - z0)^2 / 2
                 + lam/|Oy| sum_Oy log(1 + exp(-gamma z0 z)) / gamma

subject to the last row of Z being all ones, by fixed point continuation:
a gradient step on the smooth part, singular value shrinkage, re-projection of
the ones row, and a geometrically decreasing mu.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import StackedMatrix
from .errors import ConfigError, DataError, SolverError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class McParams:
    lam: float = 1.0
    gamma: float = 1.0
    mu0_factor: float = 0.25
    mu_decay: float = 0.25
    mu_min: float = 1e-12
    tau: float | None = None
    inner_tol: float = 1e-5
    max_inner_iters: int = 100

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigError(f"lam must be nonnegative, got {self.lam}")
        for name in ("gamma", "mu0_factor", "mu_min", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.mu_decay < 1:
            raise ConfigError(f"mu_decay must lie in (0, 1), got {self.mu_decay}")
        if self.tau is not None and not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.max_inner_iters < 1:
            raise ConfigError("max_inner_iters must be at least 1")


@dataclass(frozen=True)
class McSolution:
    Z: StackedMatrix
    iterations: int
    stages: int
    final_objective: float

    @property
    def soft_labels(self):
        return self.Z.labels


def _counts(omega_x, omega_y):
    nx = int(np.count_nonzero(omega_x))
    ny = int(np.count_nonzero(omega_y))
    if nx == 0 and ny == 0:
        raise DataError("no observed entries: nothing to fit")
    return nx, ny


def smooth_objective(Z, Z0, omega_x, omega_y, params: McParams) -> float:
    """Feature least squares plus weighted generalized log loss (no nuclear term)."""
    nx, ny = _counts(omega_x, omega_y)
    total = 0.0
    if nx:
        r = Z[omega_x] - Z0[omega_x]
        total += 0.5 * float(r @ r) / nx
    if ny and params.lam:
        margin = params.gamma * Z0[omega_y] * Z[omega_y]
        total += params.lam / ny * float(np.logaddexp(0.0, -margin).sum()) / params.gamma
    return total


def smooth_gradient(Z, Z0, omega_x, omega_y, params: McParams):
    """Entrywise gradient of :func:`smooth_objective`; zero off the observed sets.

    On label entries this is ``-lam/|Oy| * z0 / (1 + exp(gamma z0 z))``, which at
    gamma = 1 is the plain log-loss gradient.
    """
    nx, ny = _counts(omega_x, omega_y)
    G = np.zeros_like(Z, dtype=float)
    if nx:
        G[omega_x] = (Z[omega_x] - Z0[omega_x]) / nx
    if ny and params.lam:
        z0 = Z0[omega_y]
        margin = params.gamma * z0 * Z[omega_y]
        # 1 / (1 + exp(m)) written as exp(-logaddexp(0, m)) to stay finite
        G[omega_y] = -params.lam / ny * z0 * np.exp(-np.logaddexp(0.0, margin))
    G[-1] = 0.0
    return G


def nuclear_norm(A):
    return float(np.linalg.svd(A, compute_uv=False).sum())


def shrink(A, nu, svd=None):
    """Singular value soft-thresholding: U max(S - nu, 0) V^T."""
    if nu < 0:
        raise ValueError("shrinkage threshold must be nonnegative")
    svd = svd or (lambda M: np.linalg.svd(M, full_matrices=False))
    U, s, Vt = svd(A)
    s = np.maximum(s - nu, 0.0)
    k = int(np.count_nonzero(s))
    return (U[:, :k] * s[:k]) @ Vt[:k]


def auto_tau(params: McParams, omega_x, omega_y) -> float:
    """Step size 1/L, L the Lipschitz constant of the smooth gradient."""
    nx, ny = _counts(omega_x, omega_y)
    L = max(1.0 / nx if nx else 0.0,
            params.lam * params.gamma / (4.0 * ny) if ny else 0.0)
    if L <= 0:
        raise DataError("smooth part is identically zero (no features and lam = 0)")
    return 1.0 / L


def _objective(Z, Z0, omega_x, omega_y, params, mu):
    s = np.linalg.svd(Z, compute_uv=False)
    return smooth_objective(Z, Z0, omega_x, omega_y, params) + mu * float(s.sum())


def _safeguard(Z, F, Zn, Z0, omega_x, omega_y, params, mu, halvings=4):
    """Keep the inner loop a descent method.

    Re-projecting the ones row after shrinkage can raise the objective
    slightly; the segment from Z to Zn stays feasible, so backtrack along it.
    Returns ``(None, F)`` when no step decreases the objective.
    """
    slack = 1e-12 * max(1.0, abs(F))
    Fn = _objective(Zn, Z0, omega_x, omega_y, params, mu)
    if not np.isfinite(Fn):
        raise FloatingPointError("objective overflow")
    if Fn <= F + slack:
        return Zn, Fn
    step = Zn - Z
    t = 1.0
    for _ in range(halvings):
        t *= 0.5
        Zt = Z + t * step
        Ft = _objective(Zt, Z0, omega_x, omega_y, params, mu)
        if Ft <= F + slack:
            return Zt, Ft
    return None, F


def mu_schedule(mu0, decay, mu_min):
    """mu0, mu0*decay, ... while above mu_min, then mu_min itself."""
    mus = []
    mu = mu0
    while mu > mu_min:
        mus.append(mu)
        mu *= decay
    mus.append(mu_min)
    return mus


def fpc_solve(Z0: StackedMatrix, omega_x, omega_y, params: McParams | None = None,
              callback=None, svd=None) -> McSolution:
    """Complete ``Z0`` by fixed point continuation.

    ``callback(stage, iteration, mu, Z)`` is invoked after every inner
    iteration, mainly for diagnostics. ``svd`` may replace the dense SVD
    (it must return ``U, s, Vt`` with ``s`` descending).
    """
    params = params or McParams()
    omega_x = np.asarray(omega_x, dtype=bool)
    omega_y = np.asarray(omega_y, dtype=bool)
    Z0a = np.asarray(Z0.Z, dtype=float)
    if omega_x.shape != Z0a.shape or omega_y.shape != Z0a.shape:
        raise DataError("masks must have the shape of the stacked matrix")
    if (omega_x[-1].any() or omega_y[-1].any()):
        raise DataError("the ones row cannot be part of an observation mask")
    tau = params.tau if params.tau is not None else auto_tau(params, omega_x, omega_y)
    sigma1 = float(np.linalg.norm(Z0a, 2))
    mus = mu_schedule(params.mu0_factor * sigma1, params.mu_decay, params.mu_min)

    Z = Z0a.copy()
    total_iters = 0
    for stage, mu in enumerate(mus):
        F = _objective(Z, Z0a, omega_x, omega_y, params, mu)
        for it in range(params.max_inner_iters):
            A = Z - tau * smooth_gradient(Z, Z0a, omega_x, omega_y, params)
            Zn = shrink(A, tau * mu, svd)
            Zn[-1] = 1.0
            try:
                if not np.isfinite(Zn).all():
                    raise FloatingPointError("non-finite iterate")
                with np.errstate(over="ignore", invalid="ignore"):
                    Zn, Fn = _safeguard(Z, F, Zn, Z0a, omega_x, omega_y, params, mu)
            except FloatingPointError as exc:
                raise SolverError(f"{exc} at mu index {stage} (mu={mu:.3g}), iteration {it}",
                                  stage="fpc") from None
            total_iters += 1
            if Zn is None:
                break
            change = np.linalg.norm(Zn - Z) / max(np.linalg.norm(Z), 1e-300)
            Z, F = Zn, Fn
            if callback is not None:
                callback(stage, it, mu, Z)
            if change < params.inner_tol:
                break
    final = _objective(Z, Z0a, omega_x, omega_y, params, mus[-1])
    log.debug("fpc: %d stages, %d iterations, objective %.6g", len(mus), total_iters, final)
    return McSolution(StackedMatrix(Z, Z0.m, Z0.d), total_iters, len(mus), final)
