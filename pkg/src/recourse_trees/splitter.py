"""Recourse-aware greedy tree growth.

Each split minimizes ``Phi = R + lam * Omega`` where ``R`` is the training 0-1
risk of the tree after the split and ``Omega`` the fraction of training
instances with no positive leaf reachable within the cost budget. Global
bookkeeping makes both terms available in amortized constant time per
candidate threshold:

* ``leaf_of[n]``: the leaf containing instance ``n``;
* ``v[i][n]``: whether instance ``n`` can reach leaf ``i``;
* ``V[n]``: number of positive leaves reachable from ``n``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numba
import numpy as np

from .cost import CostModel, ReachTable, build_reach_table
from .data import Dataset, ThresholdSet, build_thresholds, sort_permutations
from .tree import LEAF, ClassificationTree

# label pairs in tie-break order: (-,-), (+,-), (-,+), (+,+)
_PAIRS = ((-1, -1), (1, -1), (-1, 1), (1, 1))


@dataclass(frozen=True)
class GrowConfig:
    lam: float = 0.0
    eps: float = 0.3
    max_depth: int = 64
    min_samples_leaf: int = 1
    min_impurity_decrease: float = 0.0
    max_features: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")


class SplitDecision(NamedTuple):
    feature: int
    threshold: float
    label_left: int
    label_right: int
    objective: float
    risk: float
    recourse_risk: float
    risk_count: int
    recourse_count: int


def _lam_ratio(lam: float, n: int) -> tuple[int, int] | None:
    """``(q, p)`` with ``lam == p / q`` when a small-denominator ratio reproduces it.

    Candidate splits are then ranked by the integer ``q * risk + p * recourse``,
    so equal objectives compare equal regardless of floating-point rounding.
    """
    frac = Fraction(lam).limit_denominator(10**6)
    if float(frac) != lam or (frac.numerator + frac.denominator) * n >= 2**53:
        return None
    return frac.denominator, frac.numerator


@numba.njit(cache=True, nogil=True)
def _split_search(X, y, member, w, feats, thr, thr_off, ord_x, ord_lo, ord_hi, lo, hi,
                  n_pos, n_neg, nbar, M, Mbar, lam, msl, exact, wr, wo):
    N = X.shape[0]
    best_key = np.inf
    best_d, best_j, best_pair, best_r, best_o = -1, -1, -1, 0, 0
    for fi in range(feats.shape[0]):
        d = feats[fi]
        nl_p = 0
        nl_n = 0
        ML = 0
        MR = Mbar
        m = 0
        mL = 0
        mR = 0
        for j in range(thr_off[d], thr_off[d + 1]):
            b = thr[j]
            while m < N and X[ord_x[d, m], d] <= b:
                n = ord_x[d, m]
                if member[n]:
                    if y[n] == 1:
                        nl_p += 1
                    else:
                        nl_n += 1
                m += 1
            while mL < N and lo[ord_lo[d, mL], d] <= b:
                ML += w[ord_lo[d, mL]]
                mL += 1
            while mR < N and hi[ord_hi[d, mR], d] <= b:
                MR -= w[ord_hi[d, mR]]
                mR += 1
            nr_p = n_pos - nl_p
            nr_n = n_neg - nl_n
            if nl_p + nl_n < msl or nr_p + nr_n < msl:
                continue
            for pair in range(4):
                if pair == 0:
                    r = n_pos
                    o = M
                elif pair == 1:
                    r = nl_n + nr_p
                    o = M - ML
                elif pair == 2:
                    r = nl_p + nr_n
                    o = M - MR
                else:
                    r = n_neg
                    o = M - Mbar
                r += nbar
                if exact:
                    key = float(wr * r + wo * o)  # integral and below 2**53
                else:
                    key = r + lam * o
                if key < best_key:
                    best_key = key
                    best_d, best_j, best_pair, best_r, best_o = d, j, pair, r, o
    return best_d, best_j, best_pair, best_r, best_o


class TreeBuilder:
    """Grows one tree while maintaining the recourse bookkeeping in place.

    ``X``/``y`` are the training rows (a bootstrap sample may repeat rows) and
    ``reach`` their reach table at the configured budget.
    """

    def __init__(self, X, y, reach: ReachTable, cfg: GrowConfig, thresholds: ThresholdSet | None = None,
                 rng: np.random.Generator | None = None):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.y = np.ascontiguousarray(y, dtype=np.int64)
        self.N, self.D = self.X.shape
        self.cfg = cfg
        self.reach = reach
        self.lo = np.ascontiguousarray(reach.lo)
        self.hi = np.ascontiguousarray(reach.hi)
        self.thresholds = thresholds if thresholds is not None else build_thresholds(self.X)
        self.ord_x = sort_permutations(self.X)
        # g is monotone along the lo-ordering and gbar along the hi-ordering,
        # which differ from the x-ordering whenever budgets vary per instance
        self.ord_lo = sort_permutations(self.lo)
        self.ord_hi = sort_permutations(self.hi)
        self.rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
        self._ratio = _lam_ratio(float(cfg.lam), self.N)

        n_pos = int(np.sum(self.y == 1))
        n_neg = self.N - n_pos
        root_label = 1 if n_pos > n_neg else -1
        self.feature = [LEAF]
        self.threshold = [0.0]
        self.left = [-1]
        self.right = [-1]
        self.label = [root_label]
        self.n_pos = [n_pos]
        self.n_neg = [n_neg]
        self.depth = [0]

        self.leaf_of = np.zeros(self.N, dtype=np.int64)
        self.v = {0: np.ones(self.N, dtype=bool)}
        self.V = np.full(self.N, 1 if root_label == 1 else 0, dtype=np.int64)
        self.wrong = self.y != root_label
        self.n_wrong = int(self.wrong.sum())

    # -- bookkeeping views -------------------------------------------------
    def is_leaf(self, k: int) -> bool:
        return self.feature[k] == LEAF

    def leaf_ids(self) -> list[int]:
        return [k for k in range(len(self.feature)) if self.feature[k] == LEAF]

    def members(self, k: int) -> np.ndarray:
        return self.leaf_of == k

    def omega(self, k: int) -> np.ndarray:
        """1 where no positive leaf other than ``k`` is reachable."""
        own = self.v[k].astype(np.int64) if self.label[k] == 1 else 0
        return (self.V - own) == 0

    def objective(self) -> tuple[int, int]:
        """(misclassified count, no-recourse count) of the current tree."""
        return self.n_wrong, int(np.sum(self.V == 0))

    def current_phi(self) -> float:
        r, o = self.objective()
        return (r + self.cfg.lam * o) / self.N

    # -- split search --------------------------------------------------------
    def candidate_features(self) -> np.ndarray:
        mf = self.cfg.max_features
        if mf is None or mf >= self.D:
            return np.arange(self.D, dtype=np.int64)
        return np.sort(self.rng.choice(self.D, size=mf, replace=False)).astype(np.int64)

    def best_split(self, k: int, feats: np.ndarray | None = None) -> SplitDecision | None:
        if not self.is_leaf(k):
            raise ValueError(f"node {k} is not a leaf")
        if feats is None:
            feats = self.candidate_features()
        feats = np.sort(np.asarray(feats, dtype=np.int64))
        member = self.members(k)
        yk = self.y[member]
        n_pos = int(np.sum(yk == 1))
        n_neg = int(yk.size - n_pos)
        nbar = self.n_wrong - int(self.wrong[member].sum())
        om = self.omega(k)
        w = (om & self.v[k]).astype(np.int64)
        M = int(om.sum())
        Mbar = int(w.sum())
        ratio = self._ratio
        wr, wo = ratio if ratio is not None else (1, 0)
        d, j, pair, r, o = _split_search(
            self.X, self.y, member, w, feats, self.thresholds.values, self.thresholds.offsets,
            self.ord_x, self.ord_lo, self.ord_hi, self.lo, self.hi,
            n_pos, n_neg, nbar, M, Mbar, float(self.cfg.lam), int(self.cfg.min_samples_leaf),
            ratio is not None, wr, wo)
        if d < 0:
            return None
        lam = self.cfg.lam
        phi = (r + lam * o) / self.N
        r0, o0 = self.objective()
        if ratio is not None:
            gain = ((wr * r0 + wo * o0) - (wr * r + wo * o)) / (wr * self.N)
        else:
            gain = self.current_phi() - phi
        if gain < self.cfg.min_impurity_decrease:
            return None
        yl, yr = _PAIRS[pair]
        return SplitDecision(int(d), float(self.thresholds.values[j]), yl, yr, float(phi),
                             r / self.N, o / self.N, int(r), int(o))

    def apply_split(self, k: int, dec: SplitDecision) -> tuple[int, int]:
        d, b = dec.feature, dec.threshold
        member = self.members(k)
        go_left = self.X[:, d] <= b
        left_rows = member & go_left
        right_rows = member & ~go_left
        L, R = len(self.feature), len(self.feature) + 1
        for lab, rows in ((dec.label_left, left_rows), (dec.label_right, right_rows)):
            self.feature.append(LEAF)
            self.threshold.append(0.0)
            self.left.append(-1)
            self.right.append(-1)
            self.label.append(lab)
            self.n_pos.append(int(np.sum(self.y[rows] == 1)))
            self.n_neg.append(int(np.sum(self.y[rows] == -1)))
            self.depth.append(self.depth[k] + 1)
        self.feature[k] = d
        self.threshold[k] = b
        self.left[k] = L
        self.right[k] = R

        vi = self.v.pop(k)
        vl = vi & (self.lo[:, d] <= b)
        vr = vi & (self.hi[:, d] > b)
        self.v[L] = vl
        self.v[R] = vr
        if self.label[k] == 1:
            self.V -= vi
        if dec.label_left == 1:
            self.V += vl
        if dec.label_right == 1:
            self.V += vr
        self.label[k] = -1  # internal nodes carry no label

        self.leaf_of[left_rows] = L
        self.leaf_of[right_rows] = R
        self.wrong[left_rows] = self.y[left_rows] != dec.label_left
        self.wrong[right_rows] = self.y[right_rows] != dec.label_right
        self.n_wrong = int(self.wrong.sum())
        return L, R

    # -- growth --------------------------------------------------------------
    def splittable(self, k: int) -> bool:
        if self.depth[k] >= self.cfg.max_depth:
            return False
        n = self.n_pos[k] + self.n_neg[k]
        if n < 2 * self.cfg.min_samples_leaf or self.n_pos[k] == 0 or self.n_neg[k] == 0:
            return False
        return True

    def grow(self) -> ClassificationTree:
        stack = [0]
        while stack:
            k = stack.pop()
            if not self.splittable(k):
                continue
            dec = self.best_split(k)
            if dec is None:
                continue
            L, R = self.apply_split(k, dec)
            stack.append(R)
            stack.append(L)
        return self.tree()

    def tree(self) -> ClassificationTree:
        return ClassificationTree(self.feature, self.threshold, self.left, self.right, self.label,
                                  self.n_pos, self.n_neg, self.D)


def grow_tree(ds: Dataset, cm: CostModel, cfg: GrowConfig, reach: ReachTable | None = None) -> ClassificationTree:
    """Grow a recourse-aware tree depth first until a stopping rule fires."""
    if reach is None:
        reach = build_reach_table(cm, ds, cfg.eps)
    return TreeBuilder(ds.X, ds.y, reach, cfg).grow()


def best_split(builder: TreeBuilder, node_id: int, feats=None) -> SplitDecision | None:
    return builder.best_split(node_id, feats)


def apply_split(builder: TreeBuilder, node_id: int, decision: SplitDecision) -> tuple[int, int]:
    return builder.apply_split(node_id, decision)
