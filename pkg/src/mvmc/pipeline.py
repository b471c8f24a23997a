"""End-to-end orchestration: preprocessing, per-view completion, fusion, evaluation.

Training runs in two steps. Cross-validated completions on the labeled set
give per-view predictions from which a fusion solver learns simplex weights.
Every view is then completed once on the full stacked matrix with all labeled
entries observed, and the sigmoid probabilities are combined with the weights.

A :class:`Workspace` caches the expensive pieces (KPCA projections,
completions, cross-validated tensors) for one dataset and seed so that methods
and hyperparameter grids can share them.
"""
from __future__ import annotations

import itertools
import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .completion import McParams, fpc_solve
from .core import FeatureMatrix, MultiViewDataset, SimplexWeights, build_stacked
from .cv import FoldSplit, generate_view_predictions, make_split, assemble_tensor
from .errors import ConfigError, DataError, MvmcError, SolverError
from .fusion_ap import solve_ap
from .fusion_ls import solve_ls
from .metrics import hamming_loss, hard_labels, mean_auc, mean_average_precision
from .preprocess import Kernel, kpca_fit, kpca_transform, sigmoid_scores

log = logging.getLogger(__name__)

METHODS = ("ls", "ap", "bmc", "cmc", "amc")
FUSED = ("ls", "ap", "amc")     # methods that combine per-view completions with weights
LEARNED = ("ls", "ap")          # methods whose weights depend on eta
CMC = "cmc"                     # cache key of the concatenated view


@dataclass(frozen=True)
class KpcaConfig:
    enabled: bool = True
    kernel: str = "rbf"
    bandwidth: Optional[float] = None
    dim: int = 50

    def __post_init__(self):
        if self.kernel not in ("rbf", "linear"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError("kernel bandwidth must be positive")
        if self.dim < 1:
            raise ConfigError("KPCA dimension must be positive")


@dataclass(frozen=True)
class FusionConfig:
    eta: float = 1.0
    cp_tol: float = 1e-3
    max_outer: int = 100
    ls_tol: float = 1e-9
    ls_max_sweeps: int = 200

    def __post_init__(self):
        for name in ("eta", "cp_tol", "ls_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_outer < 1 or self.ls_max_sweeps < 1:
            raise ConfigError("iteration limits must be at least 1")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "ap"
    mc: McParams = field(default_factory=McParams)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")


@dataclass(frozen=True)
class MvmcModel:
    """A trained fusion model.

    ``theta`` is uniform for amc, one-hot for bmc, learned for ls/ap and
    ``None`` for cmc, which completes a single concatenated view.
    """

    method: str
    theta: Optional[SimplexWeights]
    mc: McParams
    kpca: KpcaConfig
    kpca_models: tuple
    seed: int
    eta: Optional[float] = None

    def __post_init__(self):
        if self.method == CMC:
            if self.theta is not None:
                raise ConfigError("cmc has no view weights")
        elif self.theta is None:
            raise ConfigError(f"method {self.method} needs view weights")


def validation_split(dataset: MultiViewDataset, seed: int, fraction: float = 0.2):
    """Split the test samples into (validation, evaluation) index arrays."""
    if not 0 < fraction < 1:
        raise ConfigError("validation fraction must lie in (0, 1)")
    test = dataset.test
    n_val = int(round(fraction * test.size))
    if test.size and n_val == 0:
        n_val = 1
    perm = np.random.default_rng([seed, 0x5EED]).permutation(test)
    return np.sort(perm[:n_val]), np.sort(perm[n_val:])


def _impute(X: FeatureMatrix):
    """Replace missing entries by their row mean over observed samples."""
    if X.complete:
        return X
    counts = X.observed.sum(1)
    means = np.divide(X.values.sum(1), counts, out=np.zeros(X.d), where=counts > 0)
    return FeatureMatrix(np.where(X.observed, X.values, means[:, None]))


class Workspace:
    """Per-(dataset, seed) cache of projections, completions and CV tensors.

    All cached results are deterministic functions of their keys, so sharing
    a workspace between methods or grid points never changes a result.
    """

    def __init__(self, dataset: MultiViewDataset, kpca: KpcaConfig = KpcaConfig(), seed: int = 0,
                 validation_fraction: float = 0.2, workers: int = 1):
        self.dataset = dataset
        self.kpca = kpca
        self.seed = seed
        self.workers = max(1, int(workers))
        self.split: FoldSplit = make_split(dataset, seed)
        self.validation, self.evaluation = validation_split(dataset, seed, validation_fraction)
        self._lock = threading.RLock()
        self._models = None
        self._features = None
        self._cmc = None
        self._completions = {}
        self._tensors = {}

    # --- features -------------------------------------------------------
    def _project(self):
        with self._lock:
            if self._features is not None:
                return
            feats, models = [], []
            for v, X in enumerate(self.dataset.views):
                if not self.kpca.enabled:
                    feats.append(X)
                    continue
                kernel = Kernel(self.kpca.kernel, self.kpca.bandwidth)
                Xi = _impute(X)
                try:
                    model = kpca_fit(Xi, kernel, min(self.kpca.dim, Xi.n))
                except MvmcError as exc:
                    raise type(exc)(f"view {v}: {exc}") from exc
                models.append(model)
                feats.append(kpca_transform(model, Xi))
            self._features = tuple(feats)
            self._models = tuple(models)

    @property
    def kpca_models(self):
        self._project()
        return self._models

    def features(self, view):
        """Projected features of a view index, or of the concatenated view ``"cmc"``."""
        self._project()
        if view != CMC:
            return self._features[view]
        with self._lock:
            if self._cmc is None:
                blocks, masks = [], []
                for F in self._features:
                    obs = F.values[F.observed]
                    norm = float(np.sqrt(np.sum(obs * obs)))
                    blocks.append(F.values / (norm if norm > 0 else 1.0))
                    masks.append(F.observed)
                self._cmc = FeatureMatrix(np.vstack(blocks), np.vstack(masks))
            return self._cmc

    # --- completions ----------------------------------------------------
    def completion(self, view, mc: McParams):
        """Sigmoid probabilities (m x n) from completing the full stacked matrix."""
        key = (view, mc)
        with self._lock:
            hit = self._completions.get(key)
        if hit is not None:
            return hit
        Z0, omega_x, omega_y = build_stacked(self.features(view), self.dataset.labels)
        try:
            sol = fpc_solve(Z0, omega_x, omega_y, mc)
        except SolverError as exc:
            raise SolverError(f"view {view}: {exc}", stage="predict") from exc
        probs = sigmoid_scores(sol.soft_labels)
        probs.setflags(write=False)
        with self._lock:
            self._completions[key] = probs
        return probs

    def completions(self, views, mc: McParams):
        views = list(views)
        if self.workers > 1 and len(views) > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(lambda v: self.completion(v, mc), views))
        return [self.completion(v, mc) for v in views]

    def cv_tensor(self, mc: McParams):
        """Cross-validated prediction tensor over all views."""
        with self._lock:
            hit = self._tensors.get(mc)
        if hit is not None:
            return hit
        ds = self.dataset.with_views(tuple(self.features(v) for v in range(self.dataset.V)))

        def one(v):
            return generate_view_predictions(v, ds, self.split, mc)
        if self.workers > 1 and ds.V > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(self.workers) as pool:
                preds = list(pool.map(one, range(ds.V)))
        else:
            preds = [one(v) for v in range(ds.V)]
        tensor = assemble_tensor(ds, preds)
        with self._lock:
            self._tensors[mc] = tensor
        return tensor

    # --- ground truth on the validation part ----------------------------
    def validation_truth(self):
        truth = self.dataset.truth
        if truth is None:
            raise DataError("validation needs ground truth for the test samples")
        if self.validation.size == 0:
            raise DataError("validation set is empty")
        return truth.signs(self.validation)


def _workspace(dataset, workspace, kpca, seed):
    if workspace is None:
        return Workspace(dataset, kpca, seed)
    if workspace.dataset is not dataset:
        raise ConfigError("workspace belongs to a different dataset")
    return workspace


def _validation_map(probs, ws: Workspace):
    return mean_average_precision(probs[:, ws.validation], ws.validation_truth()).value


def train(dataset: MultiViewDataset, config: TrainConfig, workspace: Workspace | None = None,
          kpca: KpcaConfig = KpcaConfig(), seed: int = 0) -> MvmcModel:
    """Learn view weights (or select a view) for ``config.method``.

    Learning reads labels only through ``dataset.labels``, which hides every
    non-labeled sample. The bmc view choice additionally reads ground truth on
    the validation part of the test samples, as hyperparameter search does.
    """
    ws = _workspace(dataset, workspace, kpca, seed)
    method, mc, fusion = config.method, config.mc, config.fusion
    V = dataset.V
    eta = None
    if method == "amc":
        theta = SimplexWeights.uniform(V)
    elif method == CMC:
        theta = None
    elif method == "bmc":
        probs = ws.completions(range(V), mc)
        scores = [_validation_map(p, ws) for p in probs]
        theta = SimplexWeights.one_hot(V, int(np.argmax(scores)))
    else:
        eta = fusion.eta
        P = ws.cv_tensor(mc)
        try:
            if method == "ls":
                theta = solve_ls(P, eta, fusion.ls_tol, fusion.ls_max_sweeps)
            else:
                theta = solve_ap(P, eta, fusion.cp_tol, fusion.max_outer)
        except SolverError as exc:
            raise SolverError(str(exc), stage=f"train/{method}") from exc
    return MvmcModel(method, theta, mc, ws.kpca, ws.kpca_models, ws.seed, eta)


def predict(model: MvmcModel, dataset: MultiViewDataset, workspace: Workspace | None = None):
    """Fused probabilities (m x n) for every sample.

    Entries of labeled samples are returned too; evaluation uses only the
    test columns. Views with zero weight are not completed.
    """
    ws = _workspace(dataset, workspace, model.kpca, model.seed)
    if model.method == CMC:
        return ws.completion(CMC, model.mc).copy()
    theta = model.theta.theta
    if theta.size != dataset.V:
        raise DataError(f"model has {theta.size} view weights, dataset has {dataset.V} views")
    active = np.flatnonzero(theta > 0)
    probs = ws.completions(active, model.mc)
    fused = np.zeros((dataset.m, dataset.n))
    for v, p in zip(active, probs):
        fused += theta[v] * p
    return fused


@dataclass(frozen=True)
class SplitMetrics:
    mAP: float
    mAUC: float
    HL: float
    skipped_ap: int = 0
    skipped_auc: int = 0

    def as_dict(self):
        return {"mAP": self.mAP, "mAUC": self.mAUC, "HL": self.HL,
                "skipped_ap": self.skipped_ap, "skipped_auc": self.skipped_auc}


def evaluate(predictions, truth, indices=None, threshold: float = 0.5) -> SplitMetrics:
    """mAP, mAUC and Hamming loss of probability scores against +-1 truth.

    ``truth`` is a LabelMatrix or a +-1 array; ``indices`` selects columns.
    """
    scores = np.asarray(predictions, dtype=float)
    y = truth.signs(indices) if hasattr(truth, "signs") else np.asarray(truth)
    if indices is not None:
        scores = scores[:, indices]
        if not hasattr(truth, "signs"):
            y = y[:, indices]
    mp = mean_average_precision(scores, y)
    ma = mean_auc(scores, y)
    hl = hamming_loss(hard_labels(scores, threshold), y)
    return SplitMetrics(mp.value, ma.value, hl, mp.skipped, ma.skipped)


@dataclass(frozen=True)
class GridPoint:
    lam: float
    gamma: float
    eta: Optional[float]
    score: float


def _positive_grid(name, values):
    values = sorted({float(v) for v in values})
    if not values:
        raise ConfigError(f"empty {name} grid")
    if any(not v > 0 for v in values):
        raise ConfigError(f"{name} grid values must be positive")
    return values


def hyperparam_search(dataset: MultiViewDataset, base: TrainConfig, grids: dict,
                      workspace: Workspace | None = None, kpca: KpcaConfig = KpcaConfig(),
                      seed: int = 0):
    """Exhaustive grid search on validation mAP.

    ``grids`` maps ``lam``, ``gamma`` and ``eta`` to value lists; a missing key
    keeps the base value. Ties go to the smaller lam, then eta, then gamma.
    Returns the winning :class:`TrainConfig` and every evaluated point.
    """
    ws = _workspace(dataset, workspace, kpca, seed)
    lams = _positive_grid("lam", grids.get("lam", [base.mc.lam]))
    gammas = _positive_grid("gamma", grids.get("gamma", [base.mc.gamma]))
    etas = _positive_grid("eta", grids.get("eta", [base.fusion.eta]))
    if base.method not in LEARNED:
        etas = [None]
    points = []
    for lam, gamma, eta in itertools.product(lams, gammas, etas):
        cfg = replace(base, mc=replace(base.mc, lam=lam, gamma=gamma),
                      fusion=base.fusion if eta is None else replace(base.fusion, eta=eta))
        model = train(dataset, cfg, ws)
        score = _validation_map(predict(model, dataset, ws), ws)
        points.append((cfg, GridPoint(lam, gamma, eta, score)))

    def key(item):
        p = item[1]
        return (-p.score, p.lam, p.eta if p.eta is not None else 0.0, p.gamma)
    best = min(points, key=key)[0]
    return best, [p for _, p in points]
