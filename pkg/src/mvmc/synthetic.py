"""Low-rank synthetic multi-view, multi-label datasets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FeatureMatrix, LabelMatrix, MultiViewDataset
from .errors import ConfigError


@dataclass(frozen=True)
class SyntheticSpec:
    V: int = 4
    n: int = 400
    m: int = 5
    rank: int = 5
    noise_sigma: float = 0.0
    view_informativeness: tuple = (0.9, 0.3, 0.3, 0.3)
    missing_feature_rate: float = 0.0
    seed: int = 0
    view_dims: tuple | None = None      # default 20 per view
    positive_rate: float = 0.3
    test_fraction: float = 0.5
    n_l_per_class: int = 20

    def __post_init__(self):
        info = tuple(float(x) for x in self.view_informativeness)
        object.__setattr__(self, "view_informativeness", info)
        dims = tuple(int(x) for x in (self.view_dims or (20,) * self.V))
        object.__setattr__(self, "view_dims", dims)
        if self.V < 1 or self.n < 2 or self.m < 1:
            raise ConfigError("need V >= 1, n >= 2, m >= 1")
        if len(info) != self.V or len(dims) != self.V:
            raise ConfigError("view_informativeness and view_dims need one entry per view")
        if any(not 0 <= x <= 1 for x in info):
            raise ConfigError("informativeness values must lie in [0, 1]")
        if any(d < 1 for d in dims):
            raise ConfigError("view dimensions must be positive")
        if not 1 <= self.rank <= min(self.m + min(dims), self.n):
            raise ConfigError(f"infeasible rank {self.rank}: need 1 <= rank <= "
                              f"min(m + min(view_dims), n) = {min(self.m + min(dims), self.n)}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if not 0 <= self.missing_feature_rate <= 1:
            raise ConfigError("missing_feature_rate must lie in [0, 1]")
        if not 0 < self.positive_rate < 1:
            raise ConfigError("positive_rate must lie in (0, 1)")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.n_l_per_class < 1:
            raise ConfigError("n_l_per_class must be positive")


@dataclass(frozen=True)
class SyntheticData:
    dataset: MultiViewDataset
    latents: np.ndarray = field(repr=False)
    readout: np.ndarray = field(repr=False)   # m x n, labels are its sign


def generate_synthetic(spec: SyntheticSpec) -> MultiViewDataset:
    return generate_synthetic_full(spec).dataset


def generate_synthetic_full(spec: SyntheticSpec) -> SyntheticData:
    """Draw latents, threshold a linear readout into labels, build noisy views.

    View v is ``info_v * A_v U + (1 - info_v) * E_v + noise_sigma * G_v`` with
    latents U (rank x n) and independent standard normal E_v, G_v.
    """
    rng = np.random.default_rng(spec.seed)
    U = rng.standard_normal((spec.rank, spec.n))
    W = rng.standard_normal((spec.m, spec.rank)) / np.sqrt(spec.rank)
    score = W @ U
    bias = -np.quantile(score, 1.0 - spec.positive_rate, axis=1)
    readout = score + bias[:, None]
    truth = LabelMatrix(np.where(readout > 0, 1, -1).astype(np.int8))

    views = []
    for info, d in zip(spec.view_informativeness, spec.view_dims):
        A = rng.standard_normal((d, spec.rank)) / np.sqrt(spec.rank)
        X = info * (A @ U) + (1.0 - info) * rng.standard_normal((d, spec.n))
        if spec.noise_sigma:
            X = X + spec.noise_sigma * rng.standard_normal((d, spec.n))
        observed = rng.random((d, spec.n)) >= spec.missing_feature_rate
        views.append(FeatureMatrix(X, observed))

    partition = np.full(spec.n, "unlabeled", dtype=object)
    n_test = int(round(spec.test_fraction * spec.n))
    partition[rng.permutation(spec.n)[:n_test]] = "test"
    partition = draw_labeled(truth, partition.astype(str), spec.n_l_per_class, rng)
    dataset = MultiViewDataset.from_truth(views, truth, partition, spec.seed)
    return SyntheticData(dataset, U, readout)


def draw_labeled(truth: LabelMatrix, partition, n_l_per_class, rng):
    """Pick up to ``n_l_per_class`` positives per label from the non-test pool.

    Previously labeled samples are returned to the pool first, so the draw
    depends only on the pool and ``rng``.
    """
    partition = np.where(np.asarray(partition) == "test", "test", "unlabeled")
    pool = np.flatnonzero(partition != "test")
    Y = truth.codes
    chosen = np.zeros(partition.size, dtype=bool)
    for t in range(truth.m):
        cand = pool[(Y[t, pool] > 0) & ~chosen[pool]]
        have = int(np.count_nonzero(Y[t, chosen] > 0))
        need = max(0, n_l_per_class - have)
        if need and cand.size:
            chosen[rng.choice(cand, size=min(need, cand.size), replace=False)] = True
    partition = partition.astype(object)
    partition[chosen] = "labeled"
    return partition.astype(str)
