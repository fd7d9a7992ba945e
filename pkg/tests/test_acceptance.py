"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""
import math
import time

import mpmath
import numpy as np
import pytest

from recourse_trees.cli import main
from recourse_trees.cost import CostModel, build_reach_table
from recourse_trees.evaluate import MethodConfig, evaluate_model, fit, make_folds
from recourse_trees.recourse import ActionExtractor
from recourse_trees.relabel import CoverInstance, greedy_cover, pac_delta, relabel
from recourse_trees.splitter import GrowConfig, TreeBuilder
from recourse_trees.synthetic import make_synthetic

from oracles import (check_bookkeeping, check_split_against_oracle, cheapest_box_cost_mps, exhaustive_cover,
                     harmonic, random_dataset, recourse_risk, record, reference_cart, tree_structure)


def cost_model(ds, variant):
    return CostModel.mps(ds) if variant == "mps" else CostModel.weighted_linf(ds.features)


def test_criterion_01_split_oracle_equivalence():
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    checks, failures = 0, []
    for i in range(120):
        variant = ("mps", "weighted_linf")[i % 2]
        lam = (0.0, 0.1, 1.0)[(i // 2) % 3]
        ds = random_dataset(rng)
        rt = build_reach_table(cost_model(ds, variant), ds, float(rng.choice([0.1, 0.3, 0.6])))
        b = TreeBuilder(ds.X, ds.y, rt, GrowConfig(lam=lam, max_depth=3))
        stack = [0]
        while stack:
            k = stack.pop()
            if not b.splittable(k):
                continue
            ok, msg = check_split_against_oracle(b, k, lam)
            checks += 1
            if not ok:
                failures.append((i, k, msg))
            dec = b.best_split(k)
            if dec is not None:
                stack.extend(reversed(b.apply_split(k, dec)))
    elapsed = time.perf_counter() - t0
    passed = not failures and elapsed < 60
    record(1, passed, f"120 datasets, {checks} nodes checked, {len(failures)} mismatches, {elapsed:.1f}s (< 60s)")
    assert passed, failures[:3]


def test_criterion_02_lambda_zero_reduces_to_reference():
    rng = np.random.default_rng(1002)
    same = 0
    for _ in range(20):
        ds = random_dataset(rng, N=int(rng.integers(20, 120)))
        rt = build_reach_table(CostModel.mps(ds), ds, 0.3)
        t = TreeBuilder(ds.X, ds.y, rt, GrowConfig(lam=0.0)).grow()
        same += tree_structure(t) == reference_cart(ds.X, ds.y)
    record(2, same == 20, f"{same}/20 trees identical to the reference 0-1 loss learner")
    assert same == 20


def test_criterion_03_bookkeeping_consistency():
    rng = np.random.default_rng(1003)
    splits, failures = 0, []
    for i in range(10):
        ds = random_dataset(rng, N=int(rng.integers(100, 201)))
        rt = build_reach_table(cost_model(ds, ("mps", "weighted_linf")[i % 2]), ds, 0.3)
        b = TreeBuilder(ds.X, ds.y, rt, GrowConfig(lam=0.2, max_depth=6))
        stack = [0]
        while stack:
            k = stack.pop()
            if not b.splittable(k):
                continue
            dec = b.best_split(k)
            if dec is None:
                continue
            stack.extend(reversed(b.apply_split(k, dec)))
            splits += 1
            ok, msg = check_bookkeeping(b)
            if not ok:
                failures.append((i, k, msg))
    record(3, not failures, f"{splits} splits on 10 datasets, {len(failures)} inconsistencies")
    assert not failures


def _timing_builder(n, seed=0):
    from recourse_trees.data import Dataset, FeatureMeta

    rng = np.random.default_rng(seed)
    X = np.round(rng.random((n, 10)), 4)
    y = np.where(X[:, 0] + 0.3 * rng.standard_normal(n) > 0.5, 1, -1)
    feats = [FeatureMeta(f"f{d}", "continuous", 0.0, 1.0, d < 3, "fixed" if d < 3 else "free") for d in range(10)]
    ds = Dataset(X, y, feats)
    rt = build_reach_table(CostModel.mps(ds), ds, 0.3)
    return TreeBuilder(X, y, rt, GrowConfig(lam=0.1))


def test_criterion_04_linear_time_split_search():
    small, large = _timing_builder(50_000), _timing_builder(100_000)
    small.best_split(0)  # compile and warm caches
    large.best_split(0)
    ratios = []
    for _ in range(10):
        t = time.perf_counter()
        small.best_split(0)
        t_small = time.perf_counter() - t
        t = time.perf_counter()
        large.best_split(0)
        ratios.append((time.perf_counter() - t) / t_small)
    med = float(np.median(ratios))
    ok = 1.3 <= med <= 3.0
    record(4, ok, f"median time ratio N=100k/50k = {med:.2f} (required in [1.3, 3.0])")
    assert ok


def test_criterion_05_relabel_constraint():
    rng = np.random.default_rng(1005)
    cases, failures = 0, []
    for i in range(12):
        ds = random_dataset(rng, N=int(rng.integers(40, 201)))
        variant = ("mps", "weighted_linf")[i % 2]
        cm = cost_model(ds, variant)
        for lam in (0.0, 0.1, 1.0):
            rt = build_reach_table(cm, ds, 0.3)
            t = TreeBuilder(ds.X, ds.y, rt, GrowConfig(lam=lam, max_depth=int(rng.integers(2, 10)))).grow()
            for delta in (0.0, 0.1, 0.3):
                new, _ = relabel(t, ds, cm, 0.3, delta, reach=rt)
                risk = recourse_risk(new, rt.lo, rt.hi)
                cases += 1
                if float(risk) > delta or (delta == 0 and risk != 0):
                    failures.append((i, lam, delta, risk))
    record(5, not failures, f"{cases} (tree, delta) cases, {len(failures)} with recomputed risk above delta")
    assert not failures


def test_criterion_06_greedy_cover_approximation():
    rng = np.random.default_rng(1006)
    worst, infeasible, violations = 0.0, 0, 0
    for _ in range(200):
        n, m = int(rng.integers(3, 31)), int(rng.integers(1, 16))
        sets = [np.nonzero(rng.random(n) < rng.uniform(0.05, 0.6))[0] for _ in range(m)]
        base = rng.random(n) < rng.uniform(0, 0.4)
        # flipping every leaf covers everything, as with real trees
        missing = np.setdiff1d(np.nonzero(~base)[0], np.concatenate(sets))
        j = int(rng.integers(m))
        sets[j] = np.union1d(sets[j], missing)
        sets = [np.setdiff1d(s, np.nonzero(base)[0]).astype(np.int64) for s in sets]
        weights = [int(w) for w in rng.integers(1, 25, m)]
        ci = CoverInstance(list(range(m)), [], dict(enumerate(sets)), dict(enumerate(weights)), n, base,
                           int(rng.integers(0, n // 2 + 1)))
        chosen, _ = greedy_cover(ci)
        covered = base.copy()
        for i in chosen:
            covered[ci.sets[i]] = True
        if n - covered.sum() > ci.max_uncovered:
            infeasible += 1
        opt = exhaustive_cover([sum(1 << int(j) for j in s) for s in sets], weights, 0, ci.required)
        cost = sum(weights[i] for i in chosen)
        bound = (2 * harmonic(n) + 3) * opt
        violations += cost > bound
        if opt:
            worst = max(worst, cost / opt)
    ok = infeasible == 0 and violations == 0
    record(6, ok, f"200 instances, {violations} bound violations, {infeasible} infeasible, "
                  f"worst greedy/optimum = {worst:.3f}")
    assert ok


def test_criterion_07_pac_formula():
    mpmath.mp.dps = 60
    worst = 0.0
    for n_neg in (0, 1, 3, 10, 50, 200):
        for n in (100, 1000, 9871, 10**6):
            for alpha in (0.001, 0.01, 0.05, 0.1, 0.5):
                for delta in (0.1, 0.3, 0.9):
                    exact = mpmath.mpf(delta) - mpmath.sqrt(
                        (n_neg * mpmath.log(2) - mpmath.log(mpmath.mpf(alpha))) / (2 * n))
                    got = pac_delta(delta, n_neg, n, alpha)
                    worst = max(worst, float(abs(got - exact) / abs(exact)))
    ok = worst <= 1e-12
    record(7, ok, f"360 grid points, worst relative error {worst:.2e} (<= 1e-12)")
    assert ok


def test_criterion_08_single_tree_extraction_optimality():
    rng = np.random.default_rng(1008)
    checked, failures = 0, []
    for i in range(50):
        ds = random_dataset(rng, N=int(rng.integers(30, 150)))
        cm = CostModel.mps(ds)
        rt = build_reach_table(cm, ds, 0.3)
        t = TreeBuilder(ds.X, ds.y, rt, GrowConfig(lam=float(rng.choice([0.0, 0.1, 1.0])),
                                                   max_depth=int(rng.integers(2, 8)))).grow()
        ex = ActionExtractor(t, cm)
        cols = np.sort(ds.X, axis=0).T
        pos = [lf for lf in t.leaves() if lf.label == 1]
        for x in ds.X[t.predict(ds.X) == -1]:
            act = ex.extract(x)
            costs = [c for lf in pos if (c := cheapest_box_cost_mps(x, lf.lower, lf.upper, ds.features, cols))
                     is not None]
            checked += 1
            if not costs:
                if act is not None:
                    failures.append((i, "action without reachable leaf"))
            elif act is None or act.cost != min(costs) or t.predict(x + act.a)[0] != 1:
                failures.append((i, None if act is None else act.cost, min(costs)))
    record(8, not failures, f"50 trees, {checked} negative instances, {len(failures)} non-optimal or invalid")
    assert not failures


def test_criterion_09_tradeoff_trend():
    t0 = time.perf_counter()
    ds = make_synthetic(2000, seed=0)
    tr, te = make_folds(ds.y, 2, 0).split(0)
    train = ds.subset(tr)
    out = {}
    for lam in (0.0, 0.02, 0.05, 0.1, 0.2):
        model, cm, _, _ = fit(train, MethodConfig(model="forest", lam=lam, n_trees=50, delta=None))
        out[lam] = evaluate_model(model, cm, ds.X[te], ds.y[te], 0.3)
    gain = out[0.2]["recourse_ratio"] - out[0.0]["recourse_ratio"]
    drop = out[0.0]["auc"] - out[0.2]["auc"]
    elapsed = time.perf_counter() - t0
    ok = gain >= 0.15 and drop <= 0.10 and elapsed < 300
    trend = ", ".join(f"{lam}: {m['recourse_ratio']:.3f}/{m['auc']:.3f}" for lam, m in out.items())
    record(9, ok, f"recourse gain {gain:+.3f} (>= 0.15), AUC drop {drop:.3f} (<= 0.10), {elapsed:.0f}s; "
                  f"lambda: ratio/AUC {trend}")
    assert ok


def test_criterion_10_relabel_cost_ract_vs_vanilla():
    wins, compliant = 0, 0
    for seed in range(10):
        ds = make_synthetic(2000, seed=seed)
        cm = CostModel.mps(ds)
        rt = build_reach_table(cm, ds, 0.3)
        inc = {}
        for lam in (0.0, 0.05):
            t = TreeBuilder(ds.X, ds.y, rt, GrowConfig(lam=lam)).grow()
            new, rep = relabel(t, ds, cm, 0.3, 0.2, reach=rt)
            compliant += float(recourse_risk(new, rt.lo, rt.hi)) <= 0.2
            inc[lam] = rep.risk_increase
        wins += inc[0.05] < inc[0.0]
    ok = compliant == 20 and wins >= 8
    record(10, ok, f"compliance {compliant}/20 trees; lambda=0.05 lower risk increase in {wins}/10 seeds (>= 8)")
    assert ok


def test_criterion_11_mps_cost_properties():
    rng = np.random.default_rng(1011)
    violations, cases = 0, 0
    while cases < 10_000:
        ds = random_dataset(rng, N=int(rng.integers(5, 100)))
        cm = CostModel.mps(ds)
        for _ in range(100):
            x = ds.X[int(rng.integers(ds.n_samples))]
            a = rng.normal(0, rng.choice([0.05, 0.3, 2.0]), ds.n_features)
            beta = rng.exponential(0.5)
            per = np.array([cm.feature_cost(d, x[d], x[d] + a[d]) for d in range(ds.n_features)], dtype=float)
            scaled = np.array([cm.feature_cost(d, x[d], x[d] + (1 + beta) * a[d]) for d in range(ds.n_features)],
                              dtype=float)
            zero = max(cm.feature_cost(d, x[d], x[d]) for d in range(ds.n_features))
            # total cost over free features equals the largest per-feature cost
            free = [d for d, f in enumerate(ds.features) if f.direction == "free"]
            af = np.zeros(ds.n_features)
            af[free] = np.clip(x[free] + a[free], [ds.features[d].min for d in free],
                               [ds.features[d].max for d in free]) - x[free]
            from recourse_trees.cost import action_cost
            total = action_cost(cm, x, af)
            per_free = max((float(cm.feature_cost(d, x[d], x[d] + af[d])) for d in free), default=0.0)
            violations += (zero != 0) + (total != per_free) + int(np.any(scaled < per))
            cases += 1
    record(11, violations == 0, f"{cases} random cases, {violations} property violations")
    assert violations == 0


@pytest.mark.parametrize("kind", ["tree", "forest"])
def test_criterion_12_cli_determinism(tmp_path, kind):
    data, meta = tmp_path / "d.csv", tmp_path / "m.json"
    assert main(["synth", "--n", "500", "--seed", "4", "--data", str(data), "--meta", str(meta)]) == 0
    extra = ["--forest", "--n-trees", "20", "--no-relabel", "--threads", "2"] if kind == "forest" else []
    outputs = []
    for run in range(2):
        out = tmp_path / f"{kind}{run}.json"
        assert main(["train", "--data", str(data), "--meta", str(meta), "--lambda", "0.05", "--seed", "7",
                     "--report", str(tmp_path / f"r{run}.json"), "--output", str(out), *extra]) == 0
        outputs.append(out.read_bytes())
    ok = outputs[0] == outputs[1] and b"time" not in outputs[0]
    record(12, ok, f"{kind}: two seeded train runs byte-identical ({len(outputs[0])} bytes)")
    assert ok
