"""Post-hoc relabeling that enforces an empirical recourse-risk budget.

Leaves start at their majority label. Negative leaves are then flipped to +1
by a greedy weighted partial cover until at least ``1 - delta`` of the
training instances can reach some positive leaf within the cost budget.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cost import CostModel, ReachTable, build_reach_table, reachable
from .data import Dataset
from .tree import ClassificationTree


class InfeasibleBudgetError(ValueError):
    pass


@dataclass
class CoverInstance:
    negative: list[int]            # leaf indices labelled -1 (flippable)
    positive: list[int]            # leaf indices labelled +1
    sets: dict[int, np.ndarray]    # flippable leaf -> instances reaching it, not yet covered
    weights: dict[int, int]        # flippable leaf -> N^-_i - N^+_i
    n_samples: int
    base_covered: np.ndarray       # instances covered by the positive leaves
    max_uncovered: int             # largest uncovered count with count / N <= delta

    @property
    def n_base(self) -> int:
        return int(self.base_covered.sum())

    @property
    def required(self) -> int:
        """Additional instances the flipped leaves must cover."""
        return max(0, self.n_samples - self.max_uncovered - self.n_base)

    @property
    def target(self) -> float:
        """Coverage fraction still needed, ``1 - delta - N~/N``."""
        return self.required / self.n_samples


@dataclass
class RelabelReport:
    flipped: list[int] = field(default_factory=list)
    coverage: float = 0.0
    risk_increase: float = 0.0
    iterations: int = 0
    delta: float = 0.0
    reset: list[int] = field(default_factory=list)


def max_uncovered(delta: float, n: int) -> int:
    """Largest ``k`` with ``k / n <= delta`` evaluated in floating point."""
    k = max(0, min(n, int(math.floor(delta * n))))
    while k < n and (k + 1) / n <= delta:
        k += 1
    while k > 0 and k / n > delta:
        k -= 1
    return k


def pac_delta(delta: float, n_negative: int, n_samples: int, alpha: float) -> float:
    """Budget tightened so the population recourse risk stays below ``delta`` w.p. ``1 - alpha``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return delta - math.sqrt((n_negative * math.log(2) - math.log(alpha)) / (2 * n_samples))


def majority_labels(tree: ClassificationTree) -> ClassificationTree:
    """Leaf labels set to ``+1`` unless negatives strictly outnumber positives."""
    labels = {lf.node: (-1 if lf.n_pos < lf.n_neg else 1) for lf in tree.leaves()}
    return tree.with_labels(labels)


def leaf_reach_sets(tree: ClassificationTree, reach: ReachTable) -> list[np.ndarray]:
    """Boolean mask of instances able to reach each leaf, in leaf order."""
    return [reachable(reach.lo, reach.hi, lf.lower, lf.upper) for lf in tree.leaves()]


def empirical_recourse_risk(tree: ClassificationTree, reach: ReachTable) -> float:
    """Fraction of instances that cannot reach any positive leaf."""
    covered = np.zeros(reach.lo.shape[0], dtype=bool)
    for lf, mask in zip(tree.leaves(), leaf_reach_sets(tree, reach)):
        if lf.label == 1:
            covered |= mask
    return float(1.0 - covered.mean())


def build_cover_instance(tree: ClassificationTree, reach: ReachTable, delta: float) -> CoverInstance:
    """Cover instance for ``tree`` as labelled (callers apply majority labels first)."""
    leaves = tree.leaves()
    masks = leaf_reach_sets(tree, reach)
    n = reach.lo.shape[0]
    pos = [lf.index for lf in leaves if lf.label == 1]
    neg = [lf.index for lf in leaves if lf.label == -1]
    covered = np.zeros(n, dtype=bool)
    for i in pos:
        covered |= masks[i]
    sets = {i: np.nonzero(masks[i] & ~covered)[0] for i in neg}
    weights = {i: leaves[i].n_neg - leaves[i].n_pos for i in neg}
    return CoverInstance(neg, pos, sets, weights, n, covered, max_uncovered(delta, n))


def greedy_cover(ci: CoverInstance) -> tuple[list[int], int]:
    """Greedy weighted partial cover; returns (chosen leaves, iterations).

    Marginal gains are capped at the coverage still required, which keeps the
    ratio rule from overpaying for a large set when only a few instances are
    missing. Leaves with non-positive weight are taken first.
    """
    need = ci.required
    covered = np.zeros(ci.n_samples, dtype=bool)
    remaining = sorted(ci.negative)
    chosen: list[int] = []
    iterations = 0

    def gain(i):
        s = ci.sets[i]
        return int(np.count_nonzero(~covered[s])) if s.size else 0

    for i in list(remaining):
        if need <= 0:
            break
        if ci.weights[i] <= 0:
            if gain(i) > 0:
                covered[ci.sets[i]] = True
                need = ci.required - int(covered.sum())
                chosen.append(i)
                remaining.remove(i)
                iterations += 1

    while need > 0:
        best, best_ratio = -1, -1.0
        for i in remaining:
            g = min(gain(i), need)
            if g == 0:
                continue
            ratio = g / ci.weights[i] if ci.weights[i] > 0 else math.inf
            if ratio > best_ratio:
                best, best_ratio = i, ratio
        if best < 0:
            raise RuntimeError("cover target unreachable; reach table inconsistent with tree")
        covered[ci.sets[best]] = True
        need = ci.required - int(covered.sum())
        chosen.append(best)
        remaining.remove(best)
        iterations += 1
    return chosen, iterations


def relabel(tree: ClassificationTree, ds: Dataset, cm: CostModel, eps: float, delta: float,
            alpha: float | None = None, reach: ReachTable | None = None) -> tuple[ClassificationTree, RelabelReport]:
    """Flip negative leaves so training recourse risk is at most ``delta``.

    With ``alpha`` set, ``delta`` is first tightened by the PAC correction
    computed from the number of negative leaves after majority labelling.
    """
    if not 0 <= delta <= 1:
        raise ValueError("delta must lie in [0, 1]")
    if reach is None:
        reach = build_reach_table(cm, ds, eps)
    # counts must describe the relabelling sample
    base = majority_labels(tree.with_counts(ds.X, ds.y))
    leaves = base.leaves()
    reset = [lf.index for lf, orig in zip(leaves, tree.leaves()) if lf.label != orig.label]
    n_neg_leaves = sum(1 for lf in leaves if lf.label == -1)
    budget = delta
    if alpha is not None:
        budget = pac_delta(delta, n_neg_leaves, ds.n_samples, alpha)
        if budget <= 0:
            raise InfeasibleBudgetError(f"PAC-adjusted budget delta' = {budget:.6g} is not positive")
    ci = build_cover_instance(base, reach, budget)
    chosen, iters = greedy_cover(ci)
    out = base.with_labels({leaves[i].node: 1 for i in chosen})
    covered = ci.base_covered.copy()
    for i in chosen:
        covered[ci.sets[i]] = True
    report = RelabelReport(
        flipped=sorted(chosen),
        coverage=float(covered.mean()),
        risk_increase=sum(ci.weights[i] for i in chosen) / ds.n_samples,
        iterations=iters,
        delta=budget,
        reset=reset,
    )
    return out, report
