"""Experiment configuration, the multi-seed runner and report files.

A run writes four files into the output directory:

``report.json``
    per-method, per-seed metrics on the validation and evaluation parts of
    the test set, learned weights, selected hyperparameters and mean/std
    summaries; deterministic given the config;
``predictions.json``
    fused test-sample scores per method and seed plus the truth they are
    scored against, enough to recompute every metric in the report;
``report.txt``
    the summary as a plain table;
``timing.json``
    wall-clock seconds per job, kept apart so the report stays reproducible.
"""
from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .completion import McParams
from .core import MultiViewDataset
from .errors import ConfigError, DataError
from .io import atomic_write_text, read_dataset
from .pipeline import (METHODS, FusionConfig, KpcaConfig, TrainConfig, Workspace, evaluate,
                       hyperparam_search, predict, train)
from .synthetic import SyntheticSpec, draw_labeled, generate_synthetic

log = logging.getLogger(__name__)

REPORT_FORMAT = 1
METRICS = ("mAP", "mAUC", "HL")


def _build(cls, section, name):
    if section is None:
        return cls()
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {unknown}")
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    methods: tuple = ("ap", "ls", "amc", "bmc", "cmc")
    n_l_per_class: Optional[int] = None
    seeds: tuple = (0, 1, 2, 3, 4)
    grids: dict = field(default_factory=dict)
    mc: McParams = field(default_factory=McParams)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    kpca: KpcaConfig = field(default_factory=KpcaConfig)
    validation_fraction: float = 0.2
    threshold: float = 0.5
    output: str = "mvmc-output"
    workers: int = 1

    def __post_init__(self):
        if (self.dataset is None) == (self.synthetic is None):
            raise ConfigError("give exactly one of 'dataset' and 'synthetic'")
        methods = tuple(self.methods)
        bad = [m for m in methods if m not in METHODS]
        if bad or not methods:
            raise ConfigError(f"unknown or missing methods {bad}; choose from {METHODS}")
        if len(set(methods)) != len(methods):
            raise ConfigError("methods must not repeat")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds or len(set(seeds)) != len(seeds):
            raise ConfigError("seeds must be a non-empty list of distinct integers")
        grids = {}
        for key, values in (self.grids or {}).items():
            if key not in ("lam", "gamma", "eta"):
                raise ConfigError(f"unknown grid {key!r}; expected lam, gamma or eta")
            values = [float(v) for v in (values if isinstance(values, (list, tuple)) else [values])]
            if not values or any(not v > 0 for v in values):
                raise ConfigError(f"grid {key} must be a non-empty list of positive values")
            grids[key] = values
        if self.n_l_per_class is not None and int(self.n_l_per_class) < 1:
            raise ConfigError("n_l_per_class must be positive")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if int(self.workers) < 1:
            raise ConfigError("workers must be at least 1")
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "workers", int(self.workers))

    @classmethod
    def from_dict(cls, raw: dict, base_dir=None, environ=None):
        """Build from a parsed config mapping; MVMC_OUTPUT / MVMC_WORKERS override."""
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        raw = dict(raw)
        environ = os.environ if environ is None else environ
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if raw.get("synthetic") is not None:
            raw["synthetic"] = _build(SyntheticSpec, raw["synthetic"], "synthetic")
        raw["mc"] = _build(McParams, raw.get("mc"), "mc")
        raw["fusion"] = _build(FusionConfig, raw.get("fusion"), "fusion")
        raw["kpca"] = _build(KpcaConfig, raw.get("kpca"), "kpca")
        if raw.get("dataset") is not None and base_dir is not None:
            raw["dataset"] = str(Path(base_dir, raw["dataset"]))
        if environ.get("MVMC_OUTPUT"):
            raw["output"] = environ["MVMC_OUTPUT"]
        if environ.get("MVMC_WORKERS"):
            try:
                raw["workers"] = int(environ["MVMC_WORKERS"])
            except ValueError:
                raise ConfigError("MVMC_WORKERS must be an integer") from None
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path, environ=None):
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        return cls.from_dict(raw or {}, base_dir=path.parent, environ=environ)

    def describe(self):
        """Config echo for the report; output path and worker count are left out."""
        out = {"dataset": self.dataset,
               "synthetic": None if self.synthetic is None else asdict(self.synthetic),
               "methods": list(self.methods), "n_l_per_class": self.n_l_per_class,
               "seeds": list(self.seeds), "grids": self.grids, "mc": asdict(self.mc),
               "fusion": asdict(self.fusion), "kpca": asdict(self.kpca),
               "validation_fraction": self.validation_fraction, "threshold": self.threshold}
        return json.loads(json.dumps(out))


def base_dataset(config: ExperimentConfig) -> MultiViewDataset:
    if config.synthetic is not None:
        return generate_synthetic(config.synthetic)
    return read_dataset(config.dataset)


def seed_dataset(base: MultiViewDataset, seed: int, n_l_per_class=None) -> MultiViewDataset:
    """The dataset used for one seed: the labeled set is redrawn when requested."""
    if n_l_per_class is None:
        return base
    if base.truth is None:
        raise DataError("redrawing the labeled set needs ground truth")
    part = draw_labeled(base.truth, base.partition, int(n_l_per_class),
                        np.random.default_rng([seed, 0x1AB]))
    return MultiViewDataset.from_truth(base.views, base.truth, part, seed)


def _seed_job(config: ExperimentConfig, base: MultiViewDataset, seed: int):
    ds = seed_dataset(base, seed, config.n_l_per_class)
    if ds.truth is None:
        raise DataError("evaluation needs ground truth (truth.txt)")
    ws = Workspace(ds, config.kpca, seed, config.validation_fraction)
    results, timing = {}, {}
    for method in config.methods:
        start = time.perf_counter()
        base_cfg = TrainConfig(method, config.mc, config.fusion)
        cfg, points = hyperparam_search(ds, base_cfg, config.grids, ws)
        model = train(ds, cfg, ws)
        scores = predict(model, ds, ws)
        val = evaluate(scores, ds.truth, ws.validation, config.threshold)
        ev = evaluate(scores, ds.truth, ws.evaluation, config.threshold)
        results[method] = {
            "validation": val.as_dict(), "test": ev.as_dict(),
            "theta": None if model.theta is None else model.theta.theta.tolist(),
            "hyperparameters": {"lam": cfg.mc.lam, "gamma": cfg.mc.gamma,
                                "eta": model.eta},
            "grid": [asdict(p) for p in points],
            "scores": scores[:, ds.test].tolist(),
        }
        timing[method] = time.perf_counter() - start
    split = {"samples": ds.test.tolist(), "validation": ws.validation.tolist(),
             "evaluation": ws.evaluation.tolist(), "truth": ds.truth.codes[:, ds.test].tolist(),
             "n_labeled": int(ds.labeled.size)}
    return results, split, timing


def summarize(values):
    values = [float(v) for v in values]
    return {"mean": float(np.mean(values)), "std": float(np.std(values))}


def run_experiment(config: ExperimentConfig):
    """Run every (method, seed) job; returns (report, predictions, timing) dicts."""
    base = base_dataset(config)
    if config.workers > 1 and len(config.seeds) > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            outs = list(pool.map(lambda s: _seed_job(config, base, s), config.seeds))
    else:
        outs = [_seed_job(config, base, s) for s in config.seeds]

    report = {"format": REPORT_FORMAT, "config": config.describe(), "methods": {}}
    predictions = {"format": REPORT_FORMAT, "threshold": config.threshold, "seeds": {},
                   "methods": {}}
    timing = {"seeds": {}}
    for seed, (results, split, tm) in zip(config.seeds, outs):
        predictions["seeds"][str(seed)] = split
        timing["seeds"][str(seed)] = tm
    for method in config.methods:
        per_seed = {}
        for seed, (results, _, _) in zip(config.seeds, outs):
            r = dict(results[method])
            predictions["methods"].setdefault(method, {})[str(seed)] = r.pop("scores")
            per_seed[str(seed)] = r
        summary = {split: {k: summarize(per_seed[str(s)][split][k] for s in config.seeds)
                           for k in METRICS}
                   for split in ("validation", "test")}
        report["methods"][method] = {"seeds": per_seed, "summary": summary}
    return report, predictions, timing


def format_table(report) -> str:
    lines = [f"{'method':<8}{'split':<12}" + "".join(f"{k:>22}" for k in METRICS)]
    for method, body in report["methods"].items():
        for split in ("test", "validation"):
            cells = "".join(f"{body['summary'][split][k]['mean']:>13.4f} +- "
                            f"{body['summary'][split][k]['std']:.4f}" for k in METRICS)
            lines.append(f"{method:<8}{split:<12}{cells}")
    return "\n".join(lines) + "\n"


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def write_outputs(outdir, report, predictions, timing):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(outdir / "report.json", dumps(report))
    atomic_write_text(outdir / "predictions.json", dumps(predictions))
    atomic_write_text(outdir / "report.txt", format_table(report))
    atomic_write_text(outdir / "timing.json", dumps(timing))


def run(config: ExperimentConfig, outdir=None):
    report, predictions, timing = run_experiment(config)
    outdir = Path(outdir or config.output)
    write_outputs(outdir, report, predictions, timing)
    return report


def evaluate_predictions(predictions, truth=None):
    """Recompute per-method, per-seed metrics from a predictions mapping.

    ``truth`` optionally replaces the stored truth: an m x n array of +-1
    codes indexed by absolute sample number.
    """
    thr = predictions.get("threshold", 0.5)
    out = {}
    for method, per_seed in predictions["methods"].items():
        out[method] = {}
        for seed, scores in per_seed.items():
            split = predictions["seeds"][seed]
            samples = np.asarray(split["samples"])
            y = (np.asarray(split["truth"]) if truth is None
                 else np.asarray(truth)[:, samples])
            S = np.asarray(scores, dtype=float)
            pos = {s: i for i, s in enumerate(samples.tolist())}
            res = {}
            for name in ("validation", "evaluation"):
                cols = np.array([pos[s] for s in split[name]], dtype=int)
                res["test" if name == "evaluation" else name] = evaluate(
                    S[:, cols], y[:, cols], None, thr).as_dict()
            out[method][seed] = res
    return out


def check_report(report, recomputed):
    """Names of (method, seed, split, metric) entries that disagree; empty if consistent."""
    bad = []
    for method, per_seed in recomputed.items():
        for seed, splits in per_seed.items():
            for split, metrics in splits.items():
                for k, v in metrics.items():
                    if report["methods"][method]["seeds"][seed][split][k] != v:
                        bad.append((method, seed, split, k))
    return bad


__all__ = ["ExperimentConfig", "run", "run_experiment", "write_outputs", "evaluate_predictions",
           "check_report", "format_table", "summarize", "seed_dataset", "base_dataset"]
