"""Random forests of recourse-aware trees."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .cost import CostModel, ReachTable, build_reach_table
from .data import Dataset
from .splitter import GrowConfig, TreeBuilder
from .tree import FORMAT_VERSION, ClassificationTree, SchemaError


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_features: int | None = None  # None -> ceil(sqrt(D))
    bootstrap: bool = True
    base: GrowConfig = field(default_factory=GrowConfig)
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be at least 1")

    def resolved_max_features(self, n_features: int) -> int:
        mf = self.max_features if self.max_features is not None else math.ceil(math.sqrt(n_features))
        if mf > n_features:
            raise ValueError(f"max_features={mf} exceeds the {n_features} available features")
        return mf

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        d = dict(d)
        d["base"] = GrowConfig(**d.get("base", {}))
        return cls(**d)


@dataclass
class Forest:
    trees: list[ClassificationTree]
    config: ForestConfig | None = None

    def __post_init__(self):
        if not self.trees:
            raise ValueError("a forest needs at least one tree")
        if len({t.n_features for t in self.trees}) != 1:
            raise ValueError("all trees must share the number of features")

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def votes(self, X) -> np.ndarray:
        """Number of trees voting +1 per row."""
        return np.sum([t.predict(X) == 1 for t in self.trees], axis=0)

    def predict(self, X) -> np.ndarray:
        # ties go to the undesired class
        return np.where(2 * self.votes(X) > len(self.trees), 1, -1)

    def predict_score(self, X) -> np.ndarray:
        return self.votes(X) / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "config": self.config.to_dict() if self.config is not None else None,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Forest":
        try:
            if doc["version"] != FORMAT_VERSION:
                raise SchemaError(f"unsupported model version {doc['version']!r}")
            cfg = ForestConfig.from_dict(doc["config"]) if doc.get("config") else None
            return cls([ClassificationTree.from_dict(t) for t in doc["trees"]], cfg)
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed forest document: {exc!r}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def tree_seed(rng_seed: int, t: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([rng_seed, t])


def bootstrap_indices(n: int, rng_seed: int, t: int) -> np.ndarray:
    rng = np.random.default_rng(tree_seed(rng_seed, t))
    return np.sort(rng.integers(0, n, size=n))


def _grow_member(ds: Dataset, reach: ReachTable, cfg: ForestConfig, t: int) -> ClassificationTree:
    mf = cfg.resolved_max_features(ds.n_features)
    base = GrowConfig(**{**asdict(cfg.base), "max_features": mf})
    ss = tree_seed(cfg.rng_seed, t)
    if cfg.bootstrap:
        rows = bootstrap_indices(ds.n_samples, cfg.rng_seed, t)
        X, y, rt = ds.X[rows], ds.y[rows], reach.subset(rows)
    else:
        X, y, rt = ds.X, ds.y, reach
    # spawn a separate stream for feature subsampling
    rng = np.random.default_rng(ss.spawn(1)[0])
    return TreeBuilder(X, y, rt, base, rng=rng).grow()


def train_forest(ds: Dataset, cm: CostModel, cfg: ForestConfig, n_jobs: int = 1,
                 reach: ReachTable | None = None) -> Forest:
    """Each tree gets its own bootstrap, bookkeeping and thresholds."""
    if reach is None:
        reach = build_reach_table(cm, ds, cfg.base.eps)
    if n_jobs == 1:
        trees = [_grow_member(ds, reach, cfg, t) for t in range(cfg.n_trees)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            trees = list(ex.map(lambda t: _grow_member(ds, reach, cfg, t), range(cfg.n_trees)))
    return Forest(trees, cfg)


def predict_forest(f: Forest, x) -> int:
    return int(f.predict(x)[0])


def forest_score(f: Forest, x) -> float:
    return float(f.predict_score(x)[0])
