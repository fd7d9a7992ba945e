"""Independent reference implementations used by the test-suite.

Nothing here reuses the incremental bookkeeping of the package: every quantity
is recomputed from leaf regions, reach boxes and raw counts.
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from recourse_trees.data import Dataset, FeatureMeta

PAIRS = ((-1, -1), (1, -1), (-1, 1), (1, 1))

# acceptance results collected for the terminal summary
ACCEPTANCE: list[tuple[int, bool, str]] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"[criterion {criterion:2d}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    ACCEPTANCE.append((criterion, ok, line))


# -- data generation -----------------------------------------------------------
def random_features(rng, D: int) -> list[FeatureMeta]:
    feats = []
    for d in range(D):
        kind = rng.choice(["continuous", "integer", "binary"], p=[0.6, 0.25, 0.15])
        direction = rng.choice(["free", "fixed", "increasing_only"], p=[0.55, 0.3, 0.15])
        lo, hi = {"continuous": (0.0, 1.0), "integer": (0.0, 9.0), "binary": (0.0, 1.0)}[kind]
        feats.append(FeatureMeta(f"f{d}", kind, lo, hi, direction == "fixed", direction))
    return feats


def random_dataset(rng, N: int | None = None, D: int | None = None, decimals: int = 2) -> Dataset:
    """Mixed mutable/immutable dataset with coarse values so that ties occur."""
    N = int(rng.integers(8, 201)) if N is None else N
    D = int(rng.integers(1, 6)) if D is None else D
    feats = random_features(rng, D)
    X = np.empty((N, D))
    for d, f in enumerate(feats):
        if f.kind == "continuous":
            X[:, d] = np.round(rng.random(N), decimals)
        elif f.kind == "integer":
            X[:, d] = rng.integers(0, 10, N)
        else:
            X[:, d] = rng.integers(0, 2, N)
    w = rng.standard_normal(D)
    score = (X - X.mean(axis=0)) @ w + 0.5 * rng.standard_normal(N)
    y = np.where(score > 0, 1, -1)
    return Dataset(X, y, feats)


# -- geometry ------------------------------------------------------------------
def reaches(lo, hi, lower, upper) -> np.ndarray:
    """Instance reach box [lo, hi] meets the region (lower, upper] on every feature."""
    return np.all((lo <= upper) & (hi > lower), axis=1)


def inside(X, lower, upper) -> np.ndarray:
    return np.all((X > lower) & (X <= upper), axis=1)


def leaf_boxes(tree):
    """(node id, lower, upper, label) per leaf, recomputed by walking the node arrays."""
    out = []
    D = tree.n_features
    stack = [(0, np.full(D, -np.inf), np.full(D, np.inf))]
    while stack:
        k, lo, up = stack.pop()
        if tree.left[k] < 0:
            out.append((k, lo, up, int(tree.label[k])))
            continue
        d, b = tree.feature[k], tree.threshold[k]
        ul = up.copy()
        ul[d] = min(ul[d], b)
        lr = lo.copy()
        lr[d] = max(lr[d], b)
        stack.append((tree.right[k], lr, up))
        stack.append((tree.left[k], lo, ul))
    return out


def recourse_risk(tree, lo, hi) -> Fraction:
    """Fraction of instances with no reachable +1 leaf, from scratch."""
    covered = np.zeros(lo.shape[0], dtype=bool)
    for _, l, u, lab in leaf_boxes(tree):
        if lab == 1:
            covered |= reaches(lo, hi, l, u)
    return Fraction(int((~covered).sum()), lo.shape[0])


# -- split search --------------------------------------------------------------
def brute_force_split(X, y, lo, hi, leaves, k, thresholds, lam, msl=1):
    """Minimum of the split objective at leaf ``k`` by rebuilding every candidate tree.

    ``leaves`` is a list of (node id, lower, upper, label). Returns
    (best rational objective, list of (d, b, yl, yr, risk count, recourse count)
    attaining it in tie-break order).
    """
    N = y.size
    lam_q = Fraction(repr(lam))  # the decimal the caller wrote
    others = [(l, u, lab) for (node, l, u, lab) in leaves if node != k]
    _, lk, uk, _ = next(t for t in leaves if t[0] == k)
    in_k = inside(X, lk, uk)
    # predictions and coverage of the untouched leaves
    pred_other = np.zeros(N, dtype=np.int64)
    cov_other = np.zeros(N, dtype=bool)
    for l, u, lab in others:
        pred_other[inside(X, l, u)] = lab
        if lab == 1:
            cov_other |= reaches(lo, hi, l, u)
    best, arg = None, []
    for d in range(X.shape[1]):
        for b in thresholds[d]:
            left = in_k & (X[:, d] <= b)
            right = in_k & (X[:, d] > b)
            if left.sum() < msl or right.sum() < msl:
                continue
            ul = uk.copy()
            ul[d] = min(ul[d], b)
            lr = lk.copy()
            lr[d] = max(lr[d], b)
            reach_l = reaches(lo, hi, lk, ul)
            reach_r = reaches(lo, hi, lr, uk)
            for yl, yr in PAIRS:
                pred = pred_other.copy()
                pred[left] = yl
                pred[right] = yr
                r = int(np.sum(pred != y))
                cov = cov_other.copy()
                if yl == 1:
                    cov |= reach_l
                if yr == 1:
                    cov |= reach_r
                o = int(np.sum(~cov))
                phi = (Fraction(r) + lam_q * o) / N
                if best is None or phi < best:
                    best, arg = phi, [(d, float(b), yl, yr, r, o)]
                elif phi == best:
                    arg.append((d, float(b), yl, yr, r, o))
    return best, arg


# -- reference learner for the lambda = 0 case --------------------------------
def midpoints(col) -> list[float]:
    v = np.unique(col)
    return [float(m) for m in (v[:-1] + (v[1:] - v[:-1]) / 2)]


def reference_cart(X, y, max_depth=64, msl=1):
    """0-1 loss greedy learner; returns nested tuples for structural comparison.

    Leaves are ("leaf", label); splits are ("split", d, b, left, right).
    Thresholds come from the full sample; ties go to the smallest feature,
    then threshold, then label pair in PAIRS order.
    """
    thr = [midpoints(X[:, d]) for d in range(X.shape[1])]
    n_pos = int(np.sum(y == 1))
    root_label = 1 if n_pos > y.size - n_pos else -1

    def errors(rows, lab):
        return int(np.sum(y[rows] != lab))

    def grow(rows, label, depth):
        n = rows.size
        pos = int(np.sum(y[rows] == 1))
        if depth >= max_depth or n < 2 * msl or pos == 0 or pos == n:
            return ("leaf", label)
        current = errors(rows, label)
        best = None
        for d in range(X.shape[1]):
            for b in thr[d]:
                lrows = rows[X[rows, d] <= b]
                rrows = rows[X[rows, d] > b]
                if lrows.size < msl or rrows.size < msl:
                    continue
                for yl, yr in PAIRS:
                    e = errors(lrows, yl) + errors(rrows, yr)
                    if best is None or e < best[0]:
                        best = (e, d, b, yl, yr, lrows, rrows)
        if best is None or best[0] > current:
            return ("leaf", label)
        _, d, b, yl, yr, lrows, rrows = best
        return ("split", d, b, grow(lrows, yl, depth + 1), grow(rrows, yr, depth + 1))

    return grow(np.arange(y.size), root_label, 0)


def tree_structure(tree, k=0):
    if tree.left[k] < 0:
        return ("leaf", int(tree.label[k]))
    return ("split", int(tree.feature[k]), float(tree.threshold[k]),
            tree_structure(tree, tree.left[k]), tree_structure(tree, tree.right[k]))


# -- cover ---------------------------------------------------------------------
def exhaustive_cover(sets: list[int], weights: list[int], base: int, required: int) -> int | None:
    """Optimal weight of a subset whose union with ``base`` has >= ``required`` bits.

    ``sets`` and ``base`` are bitmasks over at most 32 instances. Enumerates
    all 2^m subsets by dynamic programming over the lowest set bit.
    """
    m = len(sets)
    union = np.zeros(1 << m, dtype=np.uint32)
    weight = np.zeros(1 << m, dtype=np.int64)
    union[0] = base
    for i in range(m):
        half = 1 << i
        union[half:2 * half] = union[:half] | np.uint32(sets[i])
        weight[half:2 * half] = weight[:half] + weights[i]
    ok = np.bitwise_count(union) >= required
    if not ok.any():
        return None
    return int(weight[ok].min())


def harmonic(n: int) -> float:
    return math.fsum(1.0 / i for i in range(1, n + 1))


# -- recourse ------------------------------------------------------------------
def rank(sorted_col, v) -> int:
    return int(np.searchsorted(sorted_col, v, side="right"))


def cheapest_box_cost_mps(x, lower, upper, features, sorted_cols) -> float | None:
    """Lowest MPS cost of any point of the box reachable from ``x``, or None.

    Per feature the cost is monotone in the distance from ``x`` on each side,
    so the nearest admissible point of (l, u] is optimal.
    """
    N = sorted_cols.shape[1]
    worst = 0
    for d, f in enumerate(features):
        xd, l, u = x[d], lower[d], upper[d]
        if l < xd <= u:
            continue
        if f.direction == "fixed":
            return None
        if xd > u:
            if f.direction == "increasing_only":
                return None
            t = math.floor(u) if f.is_integral else u
        else:
            t = math.floor(l) + 1.0 if f.is_integral else float(np.nextafter(l, np.inf))
        if not (l < t <= u and f.min <= t <= f.max):
            return None
        worst = max(worst, abs(rank(sorted_cols[d], t) - rank(sorted_cols[d], xd)))
    return worst / N


def random_tree(rng, D: int, depth: int, p_split: float = 0.85):
    """Random tree over [0, 1]^D with counts, built breadth first."""
    from recourse_trees.tree import ClassificationTree, LEAF

    feature, threshold, left, right, label, n_pos, n_neg = [], [], [], [], [], [], []
    queue = [0]
    depth_of = {0: 0}
    feature.append(LEAF), threshold.append(0.0), left.append(-1), right.append(-1)
    label.append(1), n_pos.append(0), n_neg.append(0)
    while queue:
        k = queue.pop(0)
        if depth_of[k] < depth and (k == 0 or rng.random() < p_split):
            feature[k] = int(rng.integers(D))
            threshold[k] = float(np.round(rng.random(), 2))
            for side in (left, right):
                c = len(feature)
                side[k] = c
                feature.append(LEAF), threshold.append(0.0), left.append(-1), right.append(-1)
                label.append(-1), n_pos.append(0), n_neg.append(0)
                depth_of[c] = depth_of[k] + 1
                queue.append(c)
        else:
            label[k] = int(rng.choice([-1, 1]))
            n_pos[k] = int(rng.integers(0, 6))
            n_neg[k] = int(rng.integers(0, 6))
    return ClassificationTree(feature, threshold, left, right, label, n_pos, n_neg, D)


def check_split_against_oracle(builder, k, lam) -> tuple[bool, str]:
    """Compare ``builder.best_split(k)`` with exhaustive enumeration."""
    from recourse_trees.tree import LEAF  # noqa: F401  (documents the node convention)

    leaves = leaf_boxes(builder.tree())
    thr = [builder.thresholds[d] for d in range(builder.D)]
    best, args = brute_force_split(builder.X, builder.y, builder.lo, builder.hi, leaves, k, thr, lam,
                                   builder.cfg.min_samples_leaf)
    dec = builder.best_split(k)
    if best is None:
        return dec is None, f"oracle found no candidate, splitter returned {dec}"
    if dec is None:
        return False, f"splitter returned none, oracle optimum {best}"
    got = (Fraction(dec.risk_count) + Fraction(repr(lam)) * dec.recourse_count) / builder.N
    key = (dec.feature, dec.threshold, dec.label_left, dec.label_right, dec.risk_count, dec.recourse_count)
    if got != best:
        return False, f"objective {got} != oracle {best}"
    if key not in args:
        return False, f"decision {key} is not an oracle minimiser {args[:3]}"
    return True, ""


def check_bookkeeping(builder) -> tuple[bool, str]:
    """Incremental f, v, V, omega and error flags against recomputation from regions."""
    tree = builder.tree()
    leaves = leaf_boxes(tree)
    X, y, lo, hi = builder.X, builder.y, builder.lo, builder.hi
    V = np.zeros(y.size, dtype=np.int64)
    reach = {}
    for node, l, u, lab in leaves:
        f = inside(X, l, u)
        if not np.array_equal(f, builder.leaf_of == node):
            return False, f"f differs at leaf {node}"
        reach[node] = reaches(lo, hi, l, u)
        if not np.array_equal(reach[node], builder.v[node]):
            return False, f"v differs at leaf {node}"
        if lab == 1:
            V += reach[node]
        if not np.array_equal(builder.wrong[f], y[f] != lab):
            return False, f"error flags differ at leaf {node}"
    if set(builder.v) != {node for node, *_ in leaves}:
        return False, "v kept for non-leaf nodes"
    if not np.array_equal(V, builder.V):
        return False, "V differs"
    for node, *_ in leaves:
        # omega: no other reachable leaf predicts +1
        other = np.zeros(y.size, dtype=bool)
        for n2, _, _, lab in leaves:
            if n2 != node and lab == 1:
                other |= reach[n2]
        if not np.array_equal(builder.omega(node), ~other):
            return False, f"omega differs at leaf {node}"
    return True, ""
