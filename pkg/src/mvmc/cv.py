"""Two-fold cross-validated per-view predictions on the labeled set.

Each view's completion is run twice on the labeled columns only, hiding one
fold's labels at a time; the hidden folds' completed soft labels become that
view's out-of-fold predictions, which the fusion solvers learn from.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .completion import McParams, fpc_solve
from .core import MultiViewDataset, PredictionTensor, build_stacked, vectorize_labeled
from .errors import DataError, SolverError
from .preprocess import sigmoid_scores


@dataclass(frozen=True)
class FoldSplit:
    fold_a: np.ndarray
    fold_b: np.ndarray
    seed: int

    def folds(self):
        return (self.fold_a, self.fold_b)


def make_split(dataset: MultiViewDataset, seed: int) -> FoldSplit:
    """Shuffle the labeled samples under ``seed`` and halve them.

    Samples are placed rarest-label first, each into the fold holding fewer
    positives of its rarest label (while that fold has room), so rare labels
    keep positives on both sides. Fold sizes are ceil(n_l/2) and floor(n_l/2).
    """
    labeled = dataset.labeled
    n_l = labeled.size
    if n_l < 2:
        raise DataError(f"two-fold split needs at least 2 labeled samples, got {n_l}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(labeled)
    Y = dataset.labels.signs(order) > 0          # m x n_l, in shuffled order
    freq = Y.sum(1)
    # rarest label each sample is positive for (samples with none go last)
    rank_of_label = np.argsort(np.argsort(freq, kind="stable"), kind="stable")
    key = np.where(Y, rank_of_label[:, None], Y.shape[0]).min(0)
    placement = np.argsort(key, kind="stable")

    cap = [(n_l + 1) // 2, n_l // 2]
    folds = ([], [])
    pos_count = np.zeros((2, Y.shape[0]), dtype=int)
    for i in placement:
        if key[i] < Y.shape[0]:
            t = int(np.flatnonzero(rank_of_label == key[i])[0])
            pick = 0 if pos_count[0, t] <= pos_count[1, t] else 1
        else:
            pick = 0 if len(folds[0]) - cap[0] <= len(folds[1]) - cap[1] else 1
        if len(folds[pick]) >= cap[pick]:
            pick = 1 - pick
        folds[pick].append(order[i])
        pos_count[pick] += Y[:, i]
    return FoldSplit(np.sort(folds[0]), np.sort(folds[1]), seed)


def generate_view_predictions(view_index, dataset: MultiViewDataset, split: FoldSplit,
                              mc_params: McParams | None = None, solver=fpc_solve):
    """Out-of-fold soft labels (m x n_l, columns in ``dataset.labeled`` order)."""
    labeled = dataset.labeled
    X = dataset.views[view_index].columns(labeled)
    Y = dataset.labels.columns(labeled)
    out = np.full((dataset.m, labeled.size), np.nan)
    for fold_no, hidden in enumerate(split.folds()):
        cols = np.searchsorted(labeled, hidden)
        Z0, omega_x, omega_y = build_stacked(X, Y.hide(cols))
        # no leakage: a hidden entry must never be observed
        assert not omega_y[:, cols].any()
        try:
            sol = solver(Z0, omega_x, omega_y, mc_params)
        except SolverError as exc:
            raise SolverError(f"view {view_index}, fold {fold_no}: {exc}", stage="cv") from exc
        out[:, cols] = sol.soft_labels[:, cols]
    return out


def assemble_tensor(dataset: MultiViewDataset, per_view_predictions) -> PredictionTensor:
    """Sigmoid-convert each view's out-of-fold predictions and vectorize them."""
    labeled = dataset.labeled
    probs = [sigmoid_scores(p) for p in per_view_predictions]
    return vectorize_labeled(probs, dataset.labels.columns(labeled), samples=labeled)


def cv_tensor(dataset: MultiViewDataset, split: FoldSplit, mc_params=None, workers=1):
    """All views' cross-validated predictions as one PredictionTensor."""
    def one(v):
        return generate_view_predictions(v, dataset, split, mc_params)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            preds = list(pool.map(one, range(dataset.V)))
    else:
        preds = [one(v) for v in range(dataset.V)]
    return assemble_tensor(dataset, preds)
