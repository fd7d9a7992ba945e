"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 infeasible recourse constraint.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .cost import CostModel, build_reach_table
from .data import DataError, Dataset, load_dataset, save_dataset
from .evaluate import MethodConfig, make_folds, run_cv, sweep, write_csv
from .forest import Forest, train_forest
from .recourse import ActionExtractor, action_record
from .relabel import InfeasibleBudgetError, empirical_recourse_risk, relabel
from .splitter import TreeBuilder
from .synthetic import make_synthetic
from .tree import ClassificationTree, SchemaError

log = logging.getLogger("recourse_trees")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INFEASIBLE = 0, 1, 2, 3

FOREST_FLAGS = ("n_trees", "max_features", "bootstrap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _add_data(p, required=True):
    p.add_argument("--data", required=required, help="dataset CSV")
    p.add_argument("--meta", required=required, help="feature metadata JSON")
    p.add_argument("--label", default="label", help="label column name")
    p.add_argument("--positive", default="1", help="raw label value of the desired class")


def _add_method(p):
    p.add_argument("--cost", choices=("mps", "weighted_linf"), default="mps")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--epsilon", dest="eps", type=float, default=0.3)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--relabel", dest="relabel", action="store_true", default=True)
    p.add_argument("--no-relabel", dest="relabel", action="store_false")
    p.add_argument("--pac", action="store_true", help="tighten delta by the PAC correction")
    p.add_argument("--max-depth", type=int, default=64)
    p.add_argument("--min-samples-leaf", type=int, default=1)
    p.add_argument("--forest", action="store_true", help="train a random forest")
    p.add_argument("--n-trees", type=int, default=200)
    p.add_argument("--max-features", type=int, default=None)
    p.add_argument("--no-bootstrap", dest="bootstrap", action="store_false", default=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--oaf", action="store_true", help="train on actionable features only")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="recourse-trees", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML file with default option values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="grow a tree or forest")
    _add_data(p)
    _add_method(p)
    p.add_argument("--output", required=True, help="model JSON path")
    p.add_argument("--report", help="training report JSON path")

    p = sub.add_parser("predict", help="predict labels and scores")
    _add_data(p)
    p.add_argument("--model", required=True)
    p.add_argument("--output", help="CSV path (default stdout)")

    p = sub.add_parser("relabel", help="relabel a trained tree to meet the recourse budget")
    _add_data(p)
    p.add_argument("--model", required=True)
    p.add_argument("--cost", choices=("mps", "weighted_linf"), default="mps")
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--epsilon", dest="eps", type=float, default=0.3)
    p.add_argument("--pac", action="store_true")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--output", required=True)

    p = sub.add_parser("recourse", help="extract actions as JSON lines")
    _add_data(p)
    p.add_argument("--model", required=True)
    p.add_argument("--train-data", help="CSV defining the cost quantiles (default: --data)")
    p.add_argument("--cost", choices=("mps", "weighted_linf"), default="mps")
    p.add_argument("--epsilon", dest="eps", type=float, default=0.3)
    p.add_argument("--negatives-only", action="store_true")
    p.add_argument("--output", help="JSON-lines path (default stdout)")

    for name, helptext in (("eval", "cross-validate one method"), ("sweep", "cross-validate over a grid")):
        p = sub.add_parser(name, help=helptext)
        _add_data(p)
        _add_method(p)
        p.add_argument("--method", choices=("ract", "vanilla", "oaf"), default="ract")
        p.add_argument("--folds", type=int, default=10)
        p.add_argument("--negatives-only", action="store_true")
        p.add_argument("--output", help="results CSV path (default stdout)")
        if name == "sweep":
            p.add_argument("--lambda-grid", type=_floats)
            p.add_argument("--delta-grid", type=_floats)
            p.add_argument("--epsilon-grid", type=_floats)
            p.add_argument("--keep-folds", action="store_true")

    p = sub.add_parser("synth", help="write the synthetic benchmark dataset")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", required=True)
    p.add_argument("--meta", required=True)
    return parser


def _load_config(path) -> dict:
    try:
        import tomllib as tomli
    except ModuleNotFoundError:  # Python < 3.11
        import tomli

    with open(path, "rb") as fh:
        doc = tomli.load(fh)
    return {k.replace("-", "_"): v for k, v in doc.items()}


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = _load_config(args.config)
        except (OSError, ValueError) as exc:
            parser.exit(EXIT_USAGE, f"cannot read config {args.config}: {exc}\n")
        # config values act as defaults; explicit flags still win
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known - {"lambda", "epsilon"}
        if unknown:
            parser.exit(EXIT_USAGE, f"unknown config keys: {sorted(unknown)}\n")
        if "lambda" in cfg:
            cfg["lam"] = cfg.pop("lambda")
        if "epsilon" in cfg:
            cfg["eps"] = cfg.pop("epsilon")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _dataset(args) -> Dataset:
    return load_dataset(args.data, args.meta, label=args.label, positive=args.positive)


def _cost_model(kind: str, ds: Dataset) -> CostModel:
    return CostModel.mps(ds) if kind == "mps" else CostModel.weighted_linf(ds.features)


def load_model(path) -> ClassificationTree | Forest:
    with open(path) as fh:
        doc = json.load(fh)
    if "trees" in doc:
        return Forest.from_dict(doc)
    return ClassificationTree.from_dict(doc)


def _write_model(model, path) -> None:
    with open(path, "w") as fh:
        fh.write(model.dumps())
        fh.write("\n")


def _method(args, label="RACT") -> MethodConfig:
    return MethodConfig(
        label=label, model="forest" if args.forest else "tree", lam=args.lam,
        delta=args.delta if args.relabel else None, eps=args.eps,
        alpha=args.alpha if args.pac else None, cost=args.cost, max_depth=args.max_depth,
        min_samples_leaf=args.min_samples_leaf, n_trees=args.n_trees, max_features=args.max_features,
        bootstrap=args.bootstrap, oaf=args.oaf, seed=args.seed,
        negatives_only=getattr(args, "negatives_only", False),
    )


def _check_consistency(args) -> None:
    if getattr(args, "pac", False) and not getattr(args, "relabel", True):
        raise UsageError("--pac requires relabeling")
    if args.command in ("train", "eval", "sweep") and not args.forest:
        defaults = build_parser()._subparsers._group_actions[0].choices[args.command]
        for flag in FOREST_FLAGS:
            if getattr(args, flag) != defaults.get_default(flag):
                log.warning("--%s is ignored for single-tree models", flag.replace("_", "-"))
    if args.command in ("train", "eval", "sweep") and args.forest and args.relabel:
        log.warning("relabeling applies to single trees only; the forest is trained with lambda alone")


def cmd_train(args) -> int:
    ds = _dataset(args)
    method = _method(args)
    t0 = time.perf_counter()
    cm = _cost_model(args.cost, ds)
    reach = build_reach_table(cm, ds, args.eps)
    t1 = time.perf_counter()
    report = {"n_samples": ds.n_samples, "n_features": ds.n_features}
    if args.forest:
        model = train_forest(ds, cm, method.forest_config(), n_jobs=args.threads, reach=reach)
        t2 = time.perf_counter()
        ex = ActionExtractor(model, cm)
        pred = model.predict(ds.X)
        has = [p == 1 or ((a := ex.extract(x)) is not None and a.cost <= args.eps) for x, p in zip(ds.X, pred)]
        report.update(recourse_risk=1.0 - float(np.mean(has)), n_trees=len(model.trees),
                      n_leaves=int(sum(t.n_leaves for t in model.trees)))
    else:
        model = TreeBuilder(ds.X, ds.y, reach, method.grow_config()).grow()
        if args.relabel:
            model, rep = relabel(model, ds, cm, args.eps, args.delta,
                                 alpha=args.alpha if args.pac else None, reach=reach)
            report["relabel"] = {"flipped": rep.flipped, "coverage": rep.coverage, "delta": rep.delta,
                                 "risk_increase": rep.risk_increase, "iterations": rep.iterations}
        t2 = time.perf_counter()
        pred = model.predict(ds.X)
        report.update(recourse_risk=empirical_recourse_risk(model, reach), n_leaves=model.n_leaves)
    report["empirical_risk"] = float(np.mean(pred != ds.y))
    report["timing"] = {"preprocess_seconds": t1 - t0, "train_seconds": t2 - t1}
    _write_model(model, args.output)
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    ds = _dataset(args)
    model = load_model(args.model)
    pred, score = model.predict(ds.X), model.predict_score(ds.X)
    out = open(args.output, "w") if args.output else sys.stdout
    try:
        out.write("instance_id,prediction,score\n")
        for n, (p, s) in enumerate(zip(pred, score)):
            out.write(f"{n},{int(p)},{float(s)!r}\n")
    finally:
        if args.output:
            out.close()
    return EXIT_OK


def cmd_relabel(args) -> int:
    ds = _dataset(args)
    model = load_model(args.model)
    if isinstance(model, Forest):
        raise UsageError("relabel applies to single trees only")
    cm = _cost_model(args.cost, ds)
    new, rep = relabel(model, ds, cm, args.eps, args.delta, alpha=args.alpha if args.pac else None)
    _write_model(new, args.output)
    print(json.dumps({"flipped": rep.flipped, "coverage": rep.coverage, "delta": rep.delta,
                      "risk_increase": rep.risk_increase}, sort_keys=True))
    return EXIT_OK


def cmd_recourse(args) -> int:
    ds = _dataset(args)
    ref = load_dataset(args.train_data, args.meta, label=args.label, positive=args.positive) \
        if args.train_data else ds
    model = load_model(args.model)
    if model_features(model) != ds.n_features:
        raise DataError(f"model expects {model_features(model)} features, data has {ds.n_features}")
    cm = _cost_model(args.cost, ref)
    ex = ActionExtractor(model, cm)
    pred = model.predict(ds.X)
    out = open(args.output, "w") if args.output else sys.stdout
    ok = n_neg = 0
    try:
        for n, (x, p) in enumerate(zip(ds.X, pred)):
            act = ex.extract(x)
            if p == -1:
                n_neg += 1
            within = act is not None and act.cost <= args.eps
            ok += within and (p == -1 or not args.negatives_only)
            out.write(json.dumps(action_record(n, x, act, ds.features), sort_keys=True) + "\n")
        denom = n_neg if args.negatives_only else ds.n_samples
        summary = {"summary": {"epsilon": args.eps, "n_instances": ds.n_samples,
                               "recourse_ratio": ok / denom if denom else 1.0,
                               "negatives_only": args.negatives_only}}
        out.write(json.dumps(summary, sort_keys=True) + "\n")
    finally:
        if args.output:
            out.close()
    return EXIT_OK


def model_features(model) -> int:
    return model.n_features


def _eval_method(args) -> MethodConfig:
    m = _method(args)
    if args.method == "vanilla":
        from dataclasses import replace
        m = replace(m, label="Vanilla", lam=0.0, delta=None, alpha=None)
    elif args.method == "oaf":
        from dataclasses import replace
        m = replace(m, label="OAF", lam=0.0, delta=None, alpha=None, oaf=True)
    return m


def _write_rows(rows, path) -> None:
    if path:
        write_csv(rows, path)
    else:
        write_csv(rows, sys.stdout)


def cmd_eval(args) -> int:
    ds = _dataset(args)
    folds = make_folds(ds.y, args.folds, args.seed)
    rows = run_cv(ds, _eval_method(args), folds, n_jobs=args.threads)
    _write_rows(rows, args.output)
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid = {}
    if args.lambda_grid:
        grid["lam"] = args.lambda_grid
    if args.delta_grid:
        grid["delta"] = args.delta_grid
    if args.epsilon_grid:
        grid["eps"] = args.epsilon_grid
    if not grid:
        raise UsageError("sweep needs at least one of --lambda-grid, --delta-grid, --epsilon-grid")
    ds = _dataset(args)
    folds = make_folds(ds.y, args.folds, args.seed)
    rows = sweep(ds, _eval_method(args), grid, folds, n_jobs=args.threads, keep_folds=args.keep_folds)
    _write_rows(rows, args.output)
    return EXIT_OK


def cmd_synth(args) -> int:
    save_dataset(make_synthetic(args.n, args.seed), args.data, args.meta)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "relabel": cmd_relabel, "recourse": cmd_recourse,
            "eval": cmd_eval, "sweep": cmd_sweep, "synth": cmd_synth}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        _check_consistency(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleBudgetError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DataError, SchemaError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
