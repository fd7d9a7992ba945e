"""Action extraction by actionable feature tweaking.

Every positive leaf of every tree is a candidate target: the instance is
projected onto the leaf's box feature by feature (the median of ``x_d``,
``l_d`` and ``u_d``), and the cheapest projection that the whole model
classifies as +1 is returned.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .cost import CostModel
from .data import FeatureMeta
from .forest import Forest
from .tree import ClassificationTree

Model = Union[ClassificationTree, Forest]


@dataclass
class Action:
    a: np.ndarray
    cost: float
    valid: bool
    source: tuple[int, int] | None = None  # (tree index, leaf index)

    def changes(self, x, features: Sequence[FeatureMeta]) -> list[dict]:
        return [{"feature": features[d].name, "from": float(x[d]), "to": float(x[d] + self.a[d])}
                for d in np.nonzero(self.a)[0]]


def model_trees(model: Model) -> list[ClassificationTree]:
    return model.trees if isinstance(model, Forest) else [model]


def _successor(values: np.ndarray, integral: bool) -> np.ndarray:
    """Smallest admissible value strictly above each entry."""
    if integral:
        return np.floor(values) + 1.0
    return np.nextafter(values, np.inf)


def project_many(x: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                 features: Sequence[FeatureMeta]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project ``x`` onto each box ``(lower[k], upper[k]]``.

    Returns the (K, D) targets, the matching actions and a mask of boxes the instance can actually
    reach given bounds, integrality and direction constraints. Targets are
    exactly representable as ``x + a``: when the open lower face binds, the
    target is the first value above it that ``x + a`` can land on.
    """
    K, D = lower.shape
    target = np.empty((K, D))
    action = np.empty((K, D))
    ok = np.ones(K, dtype=bool)
    with np.errstate(invalid="ignore"):
        for d, f in enumerate(features):
            xd, l, u = x[d], lower[:, d], upper[:, d]
            t = np.full(K, xd)
            below = xd <= l
            above = xd > u
            t[below] = _successor(l[below], f.is_integral)
            t[above] = np.floor(u[above]) if f.is_integral else u[above]
            # the point actually reached is x + (t - x); keep it inside the box
            a = t - xd
            t = xd + a
            for _ in range(8):
                lo_miss = below & (t <= l)
                hi_miss = above & (t > u)
                if not (lo_miss.any() or hi_miss.any()):
                    break
                a[lo_miss] = np.nextafter(a[lo_miss], np.inf)
                a[hi_miss] = np.nextafter(a[hi_miss], -np.inf)
                t = xd + a
            good = (t > l) & (t <= u) & (t >= f.min) & (t <= f.max)
            if f.direction == "fixed":
                good &= t == xd
            elif f.direction == "increasing_only":
                good &= t >= xd
            target[:, d] = t
            action[:, d] = a
            ok &= good
    return target, action, ok


def project_to_region(x, lower, upper, features: Sequence[FeatureMeta]) -> np.ndarray | None:
    """Action moving ``x`` into the box, or None when the box is unreachable."""
    x = np.asarray(x, dtype=float)
    _, a, ok = project_many(x, np.atleast_2d(lower), np.atleast_2d(upper), features)
    return a[0] if ok[0] else None


def candidate_costs(cm: CostModel, x: np.ndarray, targets: np.ndarray) -> np.ndarray:
    cost = np.zeros(targets.shape[0])
    for d in range(targets.shape[1]):
        moved = targets[:, d] != x[d]
        if np.any(moved):
            cost[moved] = np.maximum(cost[moved], cm.feature_cost(d, x[d], targets[moved, d]))
    return cost


class ActionExtractor:
    """Precomputes the positive leaf boxes of a model for repeated extraction."""

    def __init__(self, model: Model, cm: CostModel):
        self.model = model
        self.cm = cm
        lows, ups, src = [], [], []
        for t, tree in enumerate(model_trees(model)):
            if tree.n_features != cm.n_features:
                raise ValueError("model and cost model disagree on the number of features")
            for lf in tree.leaves():
                if lf.label == 1:
                    lows.append(lf.lower)
                    ups.append(lf.upper)
                    src.append((t, lf.index))
        D = cm.n_features
        self.lower = np.array(lows).reshape(-1, D)
        self.upper = np.array(ups).reshape(-1, D)
        self.source = src

    def candidates(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(targets, actions, costs, candidate ids) of reachable positive leaves, in enumeration order."""
        x = np.asarray(x, dtype=float)
        if self.lower.shape[0] == 0:
            empty = np.empty((0, x.size))
            return empty, empty, np.empty(0), np.empty(0, dtype=np.int64)
        targets, actions, ok = project_many(x, self.lower, self.upper, self.cm.features)
        idx = np.nonzero(ok)[0]
        targets = targets[idx]
        return targets, actions[idx], candidate_costs(self.cm, x, targets), idx

    def extract(self, x) -> Action | None:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.cm.n_features,):
            raise ValueError(f"expected {self.cm.n_features} features, got shape {x.shape}")
        if self.model.predict(x)[0] == 1:
            return Action(np.zeros_like(x), 0.0, True, None)
        targets, actions, costs, idx = self.candidates(x)
        if idx.size == 0:
            return None
        order = np.lexsort((idx, costs))  # cost first, enumeration order on ties
        single = isinstance(self.model, ClassificationTree)
        start, chunk = 0, 16
        while start < order.size:
            sel = order[start:start + chunk]
            if single:
                first = 0  # a projection into a positive leaf of a lone tree is always valid
            else:
                hits = np.nonzero(self.model.predict(targets[sel]) == 1)[0]
                first = hits[0] if hits.size else -1
            if first >= 0:
                k = sel[first]
                a = actions[k]
                # re-verify validity on the exact point returned
                if self.model.predict(x + a)[0] != 1:
                    raise AssertionError("extracted action does not flip the prediction")
                return Action(a, float(costs[k]), True, self.source[idx[k]])
            start += chunk
            chunk *= 4
        return None


def extract_action(model: Model, x, cm: CostModel) -> Action | None:
    return ActionExtractor(model, cm).extract(x)


def recourse_ratio(model: Model, X, cm: CostModel, eps: float, negatives_only: bool = False) -> float:
    """Fraction of rows predicted +1 or having a valid action of cost at most ``eps``.

    With ``negatives_only`` the denominator is restricted to rows predicted -1.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ex = ActionExtractor(model, cm)
    pred = model.predict(X)
    ok = 0
    n_neg = 0
    for x, p in zip(X, pred):
        if p == 1:
            if not negatives_only:
                ok += 1
            continue
        n_neg += 1
        act = ex.extract(x)
        if act is not None and act.cost <= eps:
            ok += 1
    denom = n_neg if negatives_only else X.shape[0]
    return ok / denom if denom else 1.0


def action_record(instance_id: int, x, act: Action | None, features: Sequence[FeatureMeta]) -> dict:
    rec = {"instance_id": int(instance_id), "valid": act is not None and act.valid}
    if act is not None and act.valid:
        rec["cost"] = act.cost
        rec["changes"] = act.changes(x, features)
    else:
        rec["changes"] = []
    return rec


def write_actions(fh, records) -> None:
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
