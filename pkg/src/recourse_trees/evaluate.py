"""Metrics, cross-validation and hyper-parameter sweeps."""
from __future__ import annotations

import csv
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .cost import CostModel, build_reach_table
from .data import Dataset
from .forest import ForestConfig, train_forest
from .recourse import ActionExtractor
from .relabel import relabel
from .splitter import GrowConfig, TreeBuilder


class UndefinedMetricError(ValueError):
    pass


def auc(scores, labels) -> float:
    """Mann-Whitney estimate of the ROC AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def accuracy(pred, labels) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(labels)))


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignment: np.ndarray

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        test = np.nonzero(self.assignment == fold)[0]
        train = np.nonzero(self.assignment != fold)[0]
        return train, test


def make_folds(y, k: int = 10, seed: int = 0) -> FoldPlan:
    """Stratified folds: each class is shuffled then dealt round-robin."""
    y = np.asarray(y)
    if not 2 <= k <= y.size:
        raise ValueError(f"need 2 <= k <= N, got k={k}, N={y.size}")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.nonzero(y == c)[0]) for c in (1, -1)])
    assignment = np.empty(y.size, dtype=np.int64)
    assignment[order] = np.arange(y.size) % k
    return FoldPlan(k, seed, assignment)


@dataclass(frozen=True)
class MethodConfig:
    label: str = "RACT"
    model: str = "tree"                 # "tree" or "forest"
    lam: float = 0.0
    delta: float | None = None          # None disables relabeling
    eps: float = 0.3
    alpha: float | None = None
    cost: str = "mps"
    max_depth: int = 64
    min_samples_leaf: int = 1
    n_trees: int = 200
    max_features: int | None = None
    bootstrap: bool = True
    oaf: bool = False                   # drop immutable features before training
    seed: int = 0
    negatives_only: bool = False

    def grow_config(self) -> GrowConfig:
        return GrowConfig(lam=self.lam, eps=self.eps, max_depth=self.max_depth,
                          min_samples_leaf=self.min_samples_leaf, rng_seed=self.seed)

    def forest_config(self) -> ForestConfig:
        return ForestConfig(n_trees=self.n_trees, max_features=self.max_features,
                            bootstrap=self.bootstrap, base=self.grow_config(), rng_seed=self.seed)


def vanilla(**kw) -> MethodConfig:
    return MethodConfig(label="Vanilla", lam=0.0, delta=None, **kw)


def only_actionable(**kw) -> MethodConfig:
    return MethodConfig(label="OAF", lam=0.0, delta=None, oaf=True, **kw)


COLUMNS = ("method", "fold", "lambda", "delta", "epsilon", "accuracy", "auc",
           "recourse_ratio", "avg_cost", "train_time", "preprocess_time")


@dataclass
class MetricsRow:
    method: str
    fold: str
    lam: float
    delta: float | None
    eps: float
    accuracy: float
    auc: float | None
    recourse_ratio: float
    avg_cost: float | None
    train_time: float
    preprocess_time: float = 0.0

    def as_csv(self) -> list:
        def fmt(v):
            if v is None or (isinstance(v, float) and math.isnan(v)):
                return "N/A"
            return repr(v) if isinstance(v, float) else v
        return [fmt(v) for v in (self.method, self.fold, self.lam, self.delta, self.eps, self.accuracy,
                                 self.auc, self.recourse_ratio, self.avg_cost, self.train_time,
                                 self.preprocess_time)]


def fit(ds: Dataset, method: MethodConfig, n_jobs: int = 1):
    """Train a model per ``method``; returns (model, cost model, kept columns, timings)."""
    cols = [d for d, f in enumerate(ds.features) if not (method.oaf and f.direction == "fixed")]
    if not cols:
        raise ValueError("no actionable features left for the OAF baseline")
    train = ds.select_features(cols) if len(cols) < ds.n_features else ds
    t0 = time.perf_counter()
    cm = CostModel.mps(train) if method.cost == "mps" else CostModel.weighted_linf(train.features)
    reach = build_reach_table(cm, train, method.eps)
    t1 = time.perf_counter()
    if method.model == "forest":
        model = train_forest(train, cm, method.forest_config(), n_jobs=n_jobs, reach=reach)
    elif method.model == "tree":
        model = TreeBuilder(train.X, train.y, reach, method.grow_config()).grow()
        if method.delta is not None:
            model, _ = relabel(model, train, cm, method.eps, method.delta, alpha=method.alpha, reach=reach)
    else:
        raise ValueError(f"unknown model kind {method.model!r}")
    t2 = time.perf_counter()
    return model, cm, cols, {"train": t2 - t1, "preprocess": t1 - t0}


def evaluate_model(model, cm: CostModel, X, y, eps: float, negatives_only: bool = False) -> dict:
    pred = model.predict(X)
    try:
        a = auc(model.predict_score(X), y)
    except UndefinedMetricError:
        a = None
    ex = ActionExtractor(model, cm)
    costs, ok = [], 0
    for x, p in zip(X, pred):
        if p == 1:
            ok += not negatives_only
            continue
        act = ex.extract(x)
        if act is not None:
            costs.append(act.cost)
            ok += act.cost <= eps
    denom = int(np.sum(pred == -1)) if negatives_only else len(y)
    return {
        "accuracy": accuracy(pred, y),
        "auc": a,
        "recourse_ratio": ok / denom if denom else 1.0,
        "avg_cost": float(np.mean(costs)) if costs else None,
    }


def _run_fold(ds: Dataset, method: MethodConfig, folds: FoldPlan, k: int, n_jobs: int) -> MetricsRow:
    tr, te = folds.split(k)
    model, cm, cols, times = fit(ds.subset(tr), method, n_jobs=n_jobs)
    Xte = ds.X[te][:, cols]
    m = evaluate_model(model, cm, Xte, ds.y[te], method.eps, method.negatives_only)
    return MetricsRow(method.label, str(k), method.lam, method.delta, method.eps, m["accuracy"], m["auc"],
                      m["recourse_ratio"], m["avg_cost"], times["train"], times["preprocess"])


def aggregate(rows: Sequence[MetricsRow]) -> tuple[MetricsRow, MetricsRow]:
    """Mean and sample standard deviation rows across folds."""
    def stats(attr):
        vals = [getattr(r, attr) for r in rows if getattr(r, attr) is not None]
        if not vals:
            return None, None
        arr = np.asarray(vals, dtype=float)
        return float(arr.mean()), (float(arr.std(ddof=1)) if arr.size > 1 else 0.0)

    r0 = rows[0]
    keys = ("accuracy", "auc", "recourse_ratio", "avg_cost", "train_time", "preprocess_time")
    s = {k: stats(k) for k in keys}
    mean = MetricsRow(r0.method, "mean", r0.lam, r0.delta, r0.eps, *(s[k][0] for k in keys))
    std = MetricsRow(r0.method, "std", r0.lam, r0.delta, r0.eps, *(s[k][1] for k in keys))
    return mean, std


def run_cv(ds: Dataset, method: MethodConfig, folds: FoldPlan, n_jobs: int = 1) -> list[MetricsRow]:
    """Per-fold rows followed by the mean and std aggregate rows."""
    if n_jobs == 1:
        rows = [_run_fold(ds, method, folds, k, 1) for k in range(folds.k)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            rows = list(ex.map(lambda k: _run_fold(ds, method, folds, k, 1), range(folds.k)))
    return rows + list(aggregate(rows))


def grid_points(grid: dict[str, Iterable[float]]) -> list[dict[str, float]]:
    keys = [k for k in ("lam", "delta", "eps") if k in grid]
    if not keys or any(len(list(grid[k])) == 0 for k in keys):
        raise ValueError("sweep grid must contain at least one non-empty axis of lam/delta/eps")
    return [dict(zip(keys, vals)) for vals in itertools.product(*(list(grid[k]) for k in keys))]


def sweep(ds: Dataset, method: MethodConfig, grid: dict[str, Iterable[float]], folds: FoldPlan,
          n_jobs: int = 1, keep_folds: bool = False) -> list[MetricsRow]:
    """One mean row (and std row) per grid point, retraining at every point."""
    out = []
    for point in grid_points(grid):
        rows = run_cv(ds, replace(method, **point), folds, n_jobs=n_jobs)
        out.extend(rows if keep_folds else rows[-2:])
    return out


def write_csv(rows: Sequence[MetricsRow], path_or_fh) -> None:
    own = isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow(r.as_csv())
    finally:
        if own:
            fh.close()


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != COLUMNS:
        raise ValueError("unexpected results CSV header")
    return rows
