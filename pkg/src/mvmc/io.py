"""Plain-text dataset interchange.

A dataset directory holds

``view_{v}.txt``
    one d_v x n feature matrix per view, ``nan`` marking missing entries;
``labels.txt``
    the m x n observed label matrix with entries -1, +1 and 0 for unknown;
``truth.txt`` (optional)
    the full m x n ground truth, used only for validation and evaluation;
``partition.txt``
    n lines, each one of ``labeled``, ``unlabeled`` or ``test``.

Matrix files start with a ``rows cols`` header line followed by one
comma-separated line per row. Reals are written with 17 significant digits
(``%.17g``, ``.`` as decimal point), which round-trips every double exactly.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .core import ROLES, FeatureMatrix, LabelMatrix, MultiViewDataset
from .errors import DataError, DimensionError


def write_matrix(path, A, integer=False):
    A = np.atleast_2d(np.asarray(A))
    fmt = "%d" if integer else "%.17g"
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{A.shape[0]} {A.shape[1]}\n")
        for row in A:
            fh.write(",".join(fmt % x if np.isfinite(x) else "nan" for x in row) + "\n")


def read_matrix(path):
    path = Path(path)
    try:
        lines = path.read_text(encoding="ascii").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not an ASCII matrix file") from exc
    if not lines:
        raise DataError(f"{path}: empty file")
    try:
        rows, cols = (int(x) for x in lines[0].split())
    except ValueError:
        raise DataError(f"{path}: header must be 'rows cols', got {lines[0]!r}") from None
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != rows:
        raise DimensionError(f"{path}: header says {rows} rows, found {len(body)}")
    A = np.empty((rows, cols))
    for i, ln in enumerate(body):
        fields = ln.split(",")
        if len(fields) != cols:
            raise DimensionError(f"{path}: row {i} has {len(fields)} fields, expected {cols}")
        try:
            A[i] = [float(f) for f in fields]
        except ValueError as exc:
            raise DataError(f"{path}: row {i}: {exc}") from None
    return A


def _labels_from_codes(A, path):
    if np.isnan(A).any() or not np.isin(A, (-1, 0, 1)).all():
        raise DataError(f"{path}: label entries must be -1, 0 or 1")
    return LabelMatrix(A.astype(np.int8))


def write_dataset(dataset: MultiViewDataset, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for v, X in enumerate(dataset.views):
        write_matrix(directory / f"view_{v}.txt", X.with_nan())
    write_matrix(directory / "labels.txt", dataset.labels.codes, integer=True)
    if dataset.truth is not None:
        write_matrix(directory / "truth.txt", dataset.truth.codes, integer=True)
    (directory / "partition.txt").write_text("\n".join(dataset.partition.tolist()) + "\n",
                                             encoding="ascii")


def read_dataset(directory, seed=0) -> MultiViewDataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory {directory} does not exist")
    views = []
    while (directory / f"view_{len(views)}.txt").exists():
        A = read_matrix(directory / f"view_{len(views)}.txt")
        views.append(FeatureMatrix(A, ~np.isnan(A)))
    if not views:
        raise DataError(f"{directory}: no view_0.txt found")
    labels = _labels_from_codes(read_matrix(directory / "labels.txt"), "labels.txt")
    truth = None
    if (directory / "truth.txt").exists():
        truth = _labels_from_codes(read_matrix(directory / "truth.txt"), "truth.txt")
    try:
        partition = (directory / "partition.txt").read_text(encoding="ascii").split()
    except OSError as exc:
        raise DataError(f"cannot read partition: {exc}") from exc
    bad = sorted(set(partition) - set(ROLES))
    if bad:
        raise DataError(f"partition.txt: unknown roles {bad}")
    return MultiViewDataset(views, labels, np.array(partition), seed, truth)


def atomic_write_text(path, text):
    """Write through a temporary file so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)
