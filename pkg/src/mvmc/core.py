"""Shared data model: label/feature matrices, the stacked completion matrix,
multi-view datasets, fusion weights and the vectorized prediction tensor.

All containers are immutable after construction: their arrays are copied and
flagged read-only so they can be shared between concurrent solver runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, DimensionError

UNKNOWN = 0
ROLES = ("labeled", "unlabeled", "test")


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabelMatrix:
    """m x n tri-state label matrix: -1, +1 or unknown.

    Unknown entries are stored as ``UNKNOWN`` in an int8 array, but the raw
    array is never handed out as numbers: use :meth:`signs` (which refuses to
    read unknowns) or :attr:`known`.
    """

    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 2:
            raise DimensionError(f"label matrix must be 2-D, got shape {codes.shape}")
        if not np.isin(codes, (-1, UNKNOWN, 1)).all():
            raise DataError("label entries must be -1, +1 or unknown")
        object.__setattr__(self, "codes", _frozen(codes, np.int8))

    @classmethod
    def from_array(cls, values, known=None):
        """Build from a numeric array; NaN (or ``known == False``) marks unknowns."""
        values = np.asarray(values, dtype=float)
        if known is None:
            known = ~np.isnan(values)
        known = np.asarray(known, dtype=bool)
        vals = np.where(known, values, 0.0)
        if not np.isin(vals[known], (-1.0, 1.0)).all():
            raise DataError("known label entries must be exactly -1 or +1")
        codes = np.where(known, vals, UNKNOWN).astype(np.int8)
        return cls(codes)

    @property
    def m(self):
        return self.codes.shape[0]

    @property
    def n(self):
        return self.codes.shape[1]

    @property
    def shape(self):
        return self.codes.shape

    @property
    def known(self):
        return self.codes != UNKNOWN

    def signs(self, columns=None):
        """Return the +-1 values of the given columns as floats.

        Raises DataError if any requested entry is unknown.
        """
        sub = self.codes if columns is None else self.codes[:, columns]
        if (sub == UNKNOWN).any():
            raise DataError("attempted to read unknown label entries")
        return sub.astype(float)

    def columns(self, columns):
        return LabelMatrix(self.codes[:, columns])

    def hide(self, columns):
        """Copy with the given columns set to unknown."""
        codes = self.codes.copy()
        codes[:, columns] = UNKNOWN
        return LabelMatrix(codes)


@dataclass(frozen=True)
class FeatureMatrix:
    """d x n real feature matrix with an optional per-entry observed flag."""

    values: np.ndarray
    observed: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionError(f"feature matrix must be 2-D, got shape {values.shape}")
        observed = self.observed
        if observed is None:
            observed = ~np.isnan(values)
        observed = np.asarray(observed, dtype=bool)
        if observed.shape != values.shape:
            raise DimensionError("observed flags must match feature shape")
        if not np.isfinite(values[observed]).all():
            raise DataError("observed feature entries must be finite")
        # missing entries are zeroed so that no stale number can leak out
        object.__setattr__(self, "values", _frozen(np.where(observed, values, 0.0)))
        object.__setattr__(self, "observed", _frozen(observed))

    @property
    def d(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]

    @property
    def complete(self):
        return bool(self.observed.all())

    def columns(self, columns):
        return FeatureMatrix(self.values[:, columns], self.observed[:, columns])

    def with_nan(self):
        """Values with missing entries as NaN (for serialization)."""
        return np.where(self.observed, self.values, np.nan)


@dataclass(frozen=True)
class StackedMatrix:
    """The (m + d + 1) x n matrix [Y; X; 1^T]."""

    Z: np.ndarray
    m: int
    d: int

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim != 2 or Z.shape[0] != self.m + self.d + 1:
            raise DimensionError(
                f"stacked matrix must have m + d + 1 = {self.m + self.d + 1} rows, got {Z.shape}")
        object.__setattr__(self, "Z", _frozen(Z))

    @property
    def n(self):
        return self.Z.shape[1]

    @property
    def labels(self):
        return self.Z[: self.m]

    @property
    def features(self):
        return self.Z[self.m: self.m + self.d]

    @property
    def ones(self):
        return self.Z[-1]

    def split(self, omega_x, omega_y):
        """Inverse of :func:`build_stacked` on the known entries."""
        y_known = omega_y[: self.m]
        x_known = omega_x[self.m: self.m + self.d]
        labels = LabelMatrix.from_array(np.where(y_known, self.labels, np.nan), y_known)
        features = FeatureMatrix(self.features, x_known)
        return features, labels


def build_stacked(X: FeatureMatrix, Y: LabelMatrix):
    """Stack labels, features and a ones row; return ``(Z0, omega_x, omega_y)``.

    Unknown labels and missing features start at 0. The masks are boolean
    arrays with the shape of Z0.
    """
    if X.n != Y.n:
        raise DimensionError(f"features have n={X.n} samples, labels have n={Y.n}")
    if X.n == 0:
        raise DimensionError("cannot stack an empty sample set (n = 0)")
    m, d, n = Y.m, X.d, X.n
    Z = np.zeros((m + d + 1, n))
    y_known = Y.known
    Z[:m][y_known] = Y.codes[y_known]
    Z[m: m + d] = X.values
    Z[-1] = 1.0
    omega_y = np.zeros(Z.shape, dtype=bool)
    omega_y[:m] = y_known
    omega_x = np.zeros(Z.shape, dtype=bool)
    omega_x[m: m + d] = X.observed
    return StackedMatrix(Z, m, d), _frozen(omega_x), _frozen(omega_y)


@dataclass(frozen=True)
class MultiViewDataset:
    """V feature views over the same n samples plus one partially observed label matrix.

    ``labels`` is what learning may see: fully known on labeled samples and
    unknown everywhere else. ``truth`` optionally carries the ground truth used
    for validation and evaluation only.
    """

    views: Sequence[FeatureMatrix]
    labels: LabelMatrix
    partition: np.ndarray
    seed: int = 0
    truth: Optional[LabelMatrix] = None

    def __post_init__(self):
        views = tuple(self.views)
        if not views:
            raise DataError("dataset needs at least one view")
        n = self.labels.n
        for v, X in enumerate(views):
            if X.n != n:
                raise DimensionError(f"view {v} has n={X.n}, labels have n={n}")
        partition = np.asarray(self.partition, dtype=str)
        if partition.shape != (n,):
            raise DimensionError("partition must tag every sample exactly once")
        bad = set(partition.tolist()) - set(ROLES)
        if bad:
            raise DataError(f"unknown partition roles: {sorted(bad)}")
        known = self.labels.known
        lab = partition == "labeled"
        if not known[:, lab].all():
            raise DataError("every labeled sample must have all label entries known")
        if known[:, ~lab].any():
            raise DataError("unlabeled/test samples must have all label entries unknown")
        if self.truth is not None:
            if self.truth.shape != self.labels.shape:
                raise DimensionError("truth must have the shape of labels")
            if not np.array_equal(self.truth.codes[:, lab], self.labels.codes[:, lab]):
                raise DataError("truth disagrees with observed labels")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "partition", _frozen(partition))

    @property
    def V(self):
        return len(self.views)

    @property
    def n(self):
        return self.labels.n

    @property
    def m(self):
        return self.labels.m

    def indices(self, role):
        return np.flatnonzero(self.partition == role)

    @property
    def labeled(self):
        return self.indices("labeled")

    @property
    def unlabeled(self):
        return self.indices("unlabeled")

    @property
    def test(self):
        return self.indices("test")

    @classmethod
    def from_truth(cls, views, truth: LabelMatrix, partition, seed=0):
        """Hide the truth of every non-labeled sample and build the dataset."""
        partition = np.asarray(partition, dtype=str)
        labels = truth.hide(np.flatnonzero(partition != "labeled"))
        return cls(views, labels, partition, seed, truth)

    def with_views(self, views):
        return MultiViewDataset(views, self.labels, self.partition, self.seed, self.truth)


@dataclass(frozen=True)
class SimplexWeights:
    """Nonnegative view weights summing to one."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).ravel()
        if theta.size == 0:
            raise DataError("weights need at least one view")
        if (theta < -1e-12).any():
            raise DataError(f"simplex weights must be nonnegative: {theta}")
        if abs(theta.sum() - 1.0) > 1e-10:
            raise DataError(f"simplex weights must sum to one, sum={theta.sum()!r}")
        object.__setattr__(self, "theta", _frozen(theta))

    @property
    def V(self):
        return self.theta.size

    @classmethod
    def uniform(cls, V):
        return cls(np.full(V, 1.0 / V))

    @classmethod
    def one_hot(cls, V, v):
        theta = np.zeros(V)
        theta[v] = 1.0
        return cls(theta)

    @classmethod
    def normalized(cls, raw, floor=1e-9):
        """Clip tiny negatives and rescale to sum one; falls back to uniform if nothing is left."""
        raw = np.asarray(raw, dtype=float).copy()
        raw[raw < floor] = 0.0
        total = raw.sum()
        if total <= 0:
            return cls.uniform(raw.size)
        theta = raw / total
        # absorb rounding so the sum is one to the last bit
        theta[np.argmax(theta)] += 1.0 - theta.sum()
        return cls(theta)


@dataclass(frozen=True)
class PredictionTensor:
    """Per-view predictions on the labeled entries, vectorized row-major over (label, sample).

    Entry ``k`` corresponds to label ``k // n_l`` and labeled sample ``k % n_l``.
    """

    P: np.ndarray
    y0: np.ndarray
    m: int
    n_l: int
    samples: np.ndarray = field(default=None)

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        y0 = np.asarray(self.y0, dtype=float).ravel()
        N = self.m * self.n_l
        if P.shape[1] != N or y0.size != N:
            raise DimensionError(f"expected N = m * n_l = {N} entries, got P {P.shape}, y0 {y0.shape}")
        if not np.isin(y0, (-1.0, 1.0)).all():
            raise DataError("vectorized truth must be +-1")
        samples = np.arange(self.n_l) if self.samples is None else np.asarray(self.samples)
        object.__setattr__(self, "P", _frozen(P))
        object.__setattr__(self, "y0", _frozen(y0))
        object.__setattr__(self, "samples", _frozen(samples))

    @property
    def V(self):
        return self.P.shape[0]

    @property
    def N(self):
        return self.P.shape[1]

    def index(self, t, j):
        return t * self.n_l + j

    def entry(self, k):
        return divmod(k, self.n_l)

    def label_slice(self, t):
        return slice(t * self.n_l, (t + 1) * self.n_l)

    def to_matrix(self, vec):
        """Inverse vectorization: length-N vector -> m x n_l matrix."""
        return np.asarray(vec).reshape(self.m, self.n_l)

    def view_matrix(self, v):
        return self.to_matrix(self.P[v])

    def map_views(self, fn):
        """New tensor with ``fn`` applied to each view row (labels unchanged)."""
        return PredictionTensor(np.vstack([fn(row) for row in self.P]), self.y0, self.m,
                                self.n_l, self.samples)


def vectorize_labeled(predictions, truth: LabelMatrix, samples=None) -> PredictionTensor:
    """Stack V per-view m x n_l prediction matrices into a V x N tensor."""
    predictions = [np.asarray(p, dtype=float) for p in predictions]
    if not predictions:
        raise DataError("need at least one view of predictions")
    shape = predictions[0].shape
    for v, p in enumerate(predictions):
        if p.ndim != 2 or p.shape != shape:
            raise DimensionError(f"view {v} predictions have shape {p.shape}, expected {shape}")
    if truth.shape != shape:
        raise DimensionError(f"truth shape {truth.shape} does not match predictions {shape}")
    y0 = truth.signs().ravel()
    P = np.vstack([p.ravel() for p in predictions])
    return PredictionTensor(P, y0, shape[0], shape[1], samples)
