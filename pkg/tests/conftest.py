import numpy as np
import pytest

from mvmc.core import FeatureMatrix, LabelMatrix, MultiViewDataset, PredictionTensor


def random_tensor(rng, V=4, m=3, n_l=12, informative=None):
    """Random PredictionTensor with both classes present for every label."""
    y = np.where(rng.random((m, n_l)) < 0.4, 1, -1)
    y[:, 0], y[:, 1] = 1, -1
    P = rng.random((V, m * n_l))
    if informative is not None:
        P[informative] = np.clip(0.5 + 0.3 * y.ravel() + 0.2 * rng.standard_normal(m * n_l),
                                 0.01, 0.99)
    return PredictionTensor(P, y.ravel(), m, n_l)


def small_dataset(rng, V=2, n=30, m=2, d=4, n_lab=10, perfect_view=None):
    """Tiny dataset: the first ``n_lab`` samples labeled, the rest split unlabeled/test."""
    truth = np.where(rng.random((m, n)) < 0.4, 1, -1)
    truth[:, :2] = [[1], [-1]] if m else truth[:, :2]
    views = []
    for v in range(V):
        X = rng.standard_normal((d, n))
        if v == perfect_view:
            X[:m] = truth
        views.append(FeatureMatrix(X))
    partition = np.array(["labeled"] * n_lab + ["unlabeled", "test"] * ((n - n_lab) // 2)
                         + ["test"] * ((n - n_lab) % 2))
    return MultiViewDataset.from_truth(views, LabelMatrix(truth.astype(np.int8)), partition)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
