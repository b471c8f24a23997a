"""Kernel PCA preprocessing of view features and sigmoid score conversion."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import FeatureMatrix
from .errors import DataError, DimensionError

log = logging.getLogger(__name__)

EIG_CUTOFF = 1e-12


@dataclass(frozen=True)
class Kernel:
    name: str = "rbf"
    bandwidth: float | None = None  # rbf only; None -> median pairwise distance

    def __post_init__(self):
        if self.name not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.name!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("rbf bandwidth must be positive")

    def __call__(self, A, B):
        """Kernel matrix between the columns of A (d x p) and B (d x q)."""
        if self.name == "linear":
            return A.T @ B
        sq = _sq_dists(A, B)
        return np.exp(-sq / (2.0 * self.bandwidth ** 2))


def _sq_dists(A, B):
    sq = (A * A).sum(0)[:, None] + (B * B).sum(0)[None, :] - 2.0 * A.T @ B
    return np.maximum(sq, 0.0)


def median_bandwidth(X):
    """Median of the pairwise Euclidean distances between distinct columns."""
    n = X.shape[1]
    if n < 2:
        return 1.0
    iu = np.triu_indices(n, 1)
    dist = np.sqrt(_sq_dists(X, X)[iu])
    med = float(np.median(dist))
    return med if med > 0 else 1.0


@dataclass(frozen=True)
class KpcaModel:
    kernel: Kernel
    training_features: np.ndarray   # d x n
    coefficients: np.ndarray        # n x r, eigenvectors scaled by 1/sqrt(eigval)
    eigvals: np.ndarray             # r, descending
    train_kernel_colmeans: np.ndarray
    train_kernel_mean: float

    @property
    def r(self):
        return self.eigvals.size

    @property
    def d(self):
        return self.training_features.shape[0]


def _center_cross(model, K_new):
    # K_new: n_train x n_new, uncentered
    return (K_new - model.train_kernel_colmeans[:, None] - K_new.mean(0)[None, :]
            + model.train_kernel_mean)


def kpca_fit(X: FeatureMatrix, kernel: Kernel | None = None, r: int = 50) -> KpcaModel:
    """Fit kernel PCA on all columns of ``X``.

    The output dimension is reduced (with a warning) when fewer than ``r``
    eigenvalues of the centered kernel exceed ``1e-12`` times the largest.
    """
    if not X.complete:
        raise DataError("kpca_fit needs fully observed features")
    if r < 1:
        raise ValueError("output dimension must be positive")
    A = X.values
    n = A.shape[1]
    if r > n:
        raise DimensionError(f"output dimension r={r} exceeds sample count n={n}")
    kernel = kernel or Kernel()
    if kernel.name == "rbf" and kernel.bandwidth is None:
        kernel = Kernel("rbf", median_bandwidth(A))
    K = kernel(A, A)
    colmeans = K.mean(0)
    total = float(K.mean())
    Kc = K - colmeans[:, None] - colmeans[None, :] + total
    Kc = 0.5 * (Kc + Kc.T)
    w, U = np.linalg.eigh(Kc)
    w, U = w[::-1], U[:, ::-1]
    positive = int(np.count_nonzero(w > EIG_CUTOFF * max(w[0], 0.0))) if w[0] > 0 else 0
    if positive == 0:
        raise DataError("kernel matrix has no positive eigenvalues (constant features?)")
    if positive < r:
        log.warning("kpca: reducing output dimension from %d to %d positive eigenvalues",
                    r, positive)
        r = positive
    w, U = w[:r], U[:, :r]
    # deterministic eigenvector signs: largest-magnitude entry positive
    flip = np.sign(U[np.argmax(np.abs(U), axis=0), np.arange(r)])
    U = U * flip
    coef = U / np.sqrt(w)
    return KpcaModel(kernel, A.copy(), coef, w, colmeans, total)


def kpca_transform(model: KpcaModel, X_new: FeatureMatrix) -> FeatureMatrix:
    """Project new samples onto the fitted components (r x n_new)."""
    if X_new.d != model.d:
        raise DimensionError(f"expected d={model.d} features, got {X_new.d}")
    if not X_new.complete:
        raise DataError("kpca_transform needs fully observed features")
    K_new = model.kernel(model.training_features, X_new.values)
    return FeatureMatrix(model.coefficients.T @ _center_cross(model, K_new))


def kpca_fit_transform(X: FeatureMatrix, kernel: Kernel | None = None, r: int = 50):
    model = kpca_fit(X, kernel, r)
    return model, kpca_transform(model, X)


def sigmoid_scores(raw):
    """Elementwise logistic function 1 / (1 + exp(-x)), overflow-safe."""
    x = np.asarray(raw, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
