"""Action costs and the per-feature reachability box of the budgeted action set.

Both supported costs are max-decomposable, ``c(a | x) = max_d c_d(a_d | x_d)``,
so the set of actions within a budget is a box. ``build_reach_table`` stores
that box per instance as ``lo``/``hi`` bounds on the reachable feature values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, FeatureMeta, QuantileTable, build_quantiles

VARIANTS = ("mps", "weighted_linf")


class InfeasibleActionError(ValueError):
    pass


@dataclass(frozen=True)
class CostModel:
    """Max percentile shift (``mps``) or weighted l-infinity (``weighted_linf``)."""

    variant: str
    features: tuple[FeatureMeta, ...]
    weights: np.ndarray | None = None
    quantiles: QuantileTable | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown cost variant {self.variant!r}")
        object.__setattr__(self, "features", tuple(self.features))
        if self.variant == "mps":
            if self.quantiles is None:
                raise ValueError("mps cost needs a quantile table")
            if self.quantiles.sorted_values.shape[0] != len(self.features):
                raise ValueError("quantile table does not match the feature list")
        else:
            w = np.ones(len(self.features)) if self.weights is None else np.asarray(self.weights, dtype=float)
            if w.shape != (len(self.features),) or np.any(w <= 0):
                raise ValueError("weights must be positive, one per feature")
            object.__setattr__(self, "weights", w)

    @classmethod
    def mps(cls, ds: Dataset) -> "CostModel":
        return cls("mps", ds.features, quantiles=build_quantiles(ds))

    @classmethod
    def weighted_linf(cls, features: Sequence[FeatureMeta], weights=None) -> "CostModel":
        return cls("weighted_linf", features, weights=weights)

    @property
    def n_features(self) -> int:
        return len(self.features)

    def feature_cost(self, d: int, x_d, target):
        """Per-feature cost of moving feature ``d`` from ``x_d`` to ``target`` (vectorized)."""
        if self.variant == "mps":
            q = self.quantiles
            return np.abs(q.rank(d, target) - q.rank(d, x_d)) / q.n_samples
        return self.weights[d] * np.abs(np.asarray(target, dtype=float) - x_d)

    def budget_steps(self, eps: float) -> int:
        """Largest rank shift ``j`` with ``j / N <= eps`` (mps only)."""
        n = self.quantiles.n_samples
        j = min(int(math.floor(eps * n)), n)
        while j < n and (j + 1) / n <= eps:
            j += 1
        while j > 0 and j / n > eps:
            j -= 1
        return j


def action_cost(cm: CostModel, x, a) -> float:
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    if x.shape != (cm.n_features,) or a.shape != x.shape:
        raise ValueError(f"expected vectors of length {cm.n_features}")
    t = x + a
    cost = 0.0
    for d, f in enumerate(cm.features):
        if a[d] == 0:
            continue
        if t[d] < f.min or t[d] > f.max:
            raise InfeasibleActionError(f"feature {f.name!r}: target {t[d]} outside [{f.min}, {f.max}]")
        if f.direction == "fixed":
            raise InfeasibleActionError(f"feature {f.name!r} is immutable")
        if f.direction == "increasing_only" and a[d] < 0:
            raise InfeasibleActionError(f"feature {f.name!r} may only increase")
        cost = max(cost, float(cm.feature_cost(d, x[d], t[d])))
    return cost


def _reach_column(cm: CostModel, d: int, x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    f = cm.features[d]
    if f.direction == "fixed":
        return x.copy(), x.copy()
    if cm.variant == "weighted_linf":
        r = eps / cm.weights[d]
        lo, hi = x - r, x + r
    else:
        vals, cum = cm.quantiles.distinct(d)
        steps = cm.budget_steps(eps)
        r = cm.quantiles.rank(d, x)
        # upper end: last distinct value whose rank stays within budget; everything
        # strictly below the next distinct value shares that rank
        k = np.searchsorted(cum, r + steps, side="right") - 1
        has_next = k + 1 < vals.size
        nxt = vals[np.minimum(k + 1, vals.size - 1)]
        hi = np.where(has_next, np.nextafter(nxt, -np.inf), f.max)
        # lower end: first distinct value whose rank is within budget below x
        need = r - steps
        k = np.searchsorted(cum, need, side="left")
        lo = np.where(need <= 0, f.min, vals[np.minimum(k, vals.size - 1)])
    if f.is_integral:
        lo, hi = np.ceil(lo), np.floor(hi)
    if f.direction == "increasing_only":
        lo = x
    lo = np.minimum(np.maximum(lo, f.min), x)
    hi = np.maximum(np.minimum(hi, f.max), x)
    return lo.astype(float), hi.astype(float)


def reach_interval(cm: CostModel, d: int, x_d: float, eps: float) -> tuple[float, float]:
    """Interval of values feature ``d`` can take from ``x_d`` within cost ``eps``."""
    if eps < 0:
        raise ValueError("budget must be non-negative")
    lo, hi = _reach_column(cm, d, np.array([float(x_d)]), eps)
    return float(lo[0]), float(hi[0])


@dataclass(frozen=True)
class ReachTable:
    """``lo[n, d] <= x[n, d] <= hi[n, d]``: reachable values per instance and feature."""

    lo: np.ndarray
    hi: np.ndarray
    eps: float

    def subset(self, rows) -> "ReachTable":
        rows = np.asarray(rows)
        return ReachTable(np.ascontiguousarray(self.lo[rows]), np.ascontiguousarray(self.hi[rows]), self.eps)

    def select_features(self, cols) -> "ReachTable":
        cols = list(cols)
        return ReachTable(np.ascontiguousarray(self.lo[:, cols]), np.ascontiguousarray(self.hi[:, cols]), self.eps)


def build_reach_table(cm: CostModel, ds: Dataset | np.ndarray, eps: float) -> ReachTable:
    if eps < 0:
        raise ValueError("budget must be non-negative")
    X = ds.X if isinstance(ds, Dataset) else np.asarray(ds, dtype=float)
    if X.shape[1] != cm.n_features:
        raise ValueError("dataset and cost model disagree on the number of features")
    lo = np.empty_like(X)
    hi = np.empty_like(X)
    for d in range(X.shape[1]):
        lo[:, d], hi[:, d] = _reach_column(cm, d, X[:, d], eps)
    return ReachTable(lo, hi, eps)


def indicator_g(rt: ReachTable, n: int, d: int, b: float) -> int:
    """1 iff instance ``n`` can move feature ``d`` to a value ``<= b``."""
    return int(rt.lo[n, d] <= b)


def indicator_gbar(rt: ReachTable, n: int, d: int, b: float) -> int:
    """1 iff instance ``n`` can move feature ``d`` to a value ``> b``."""
    return int(rt.hi[n, d] > b)


def reachable(lo: np.ndarray, hi: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Whether each reach box ``[lo, hi]`` meets the region ``(lower, upper]``.

    ``lo``/``hi`` are (N, D); ``lower``/``upper`` are (D,) for one region.
    """
    return np.all((lo <= upper) & (hi > lower), axis=1)
