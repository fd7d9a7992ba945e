"""Binary classification trees stored as flat node arrays.

Node 0 is the root. Internal nodes send ``x[feature] <= threshold`` to
``left``; leaves have ``feature == -1``. Leaf regions are ``(lower, upper]``
boxes, unbounded at the root.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

FORMAT_VERSION = 1
LEAF = -1


class SchemaError(ValueError):
    pass


class Leaf(NamedTuple):
    index: int
    node: int
    lower: np.ndarray
    upper: np.ndarray
    label: int
    n_pos: int
    n_neg: int


@numba.njit(cache=True, nogil=True)
def _apply(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], dtype=np.int64)
    for n in range(X.shape[0]):
        k = 0
        while feature[k] >= 0:
            if X[n, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[n] = k
    return out


@dataclass
class ClassificationTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    label: np.ndarray
    n_pos: np.ndarray
    n_neg: np.ndarray
    n_features: int

    def __post_init__(self):
        self.feature = np.ascontiguousarray(self.feature, dtype=np.int64)
        self.threshold = np.ascontiguousarray(self.threshold, dtype=np.float64)
        self.left = np.ascontiguousarray(self.left, dtype=np.int64)
        self.right = np.ascontiguousarray(self.right, dtype=np.int64)
        self.label = np.ascontiguousarray(self.label, dtype=np.int64)
        self.n_pos = np.ascontiguousarray(self.n_pos, dtype=np.int64)
        self.n_neg = np.ascontiguousarray(self.n_neg, dtype=np.int64)
        self._leaves = None

    @classmethod
    def constant(cls, label: int, n_features: int, n_pos: int = 0, n_neg: int = 0) -> "ClassificationTree":
        return cls([LEAF], [0.0], [-1], [-1], [label], [n_pos], [n_neg], n_features)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return np.ascontiguousarray(X)

    def apply(self, X) -> np.ndarray:
        """Node id of the leaf reached by each row."""
        return _apply(self.feature, self.threshold, self.left, self.right, self._check(X))

    def predict(self, X) -> np.ndarray:
        return self.label[self.apply(X)]

    def predict_score(self, X) -> np.ndarray:
        k = self.apply(X)
        tot = self.n_pos[k] + self.n_neg[k]
        return np.where(tot > 0, self.n_pos[k] / np.maximum(tot, 1), 0.5)

    def leaves(self) -> list[Leaf]:
        """Leaves in depth-first, left-to-right order with their regions."""
        if self._leaves is None:
            D = self.n_features
            out = []
            stack = [(0, np.full(D, -np.inf), np.full(D, np.inf))]
            while stack:
                k, lower, upper = stack.pop()
                if self.feature[k] == LEAF:
                    out.append(Leaf(len(out), k, lower, upper, int(self.label[k]),
                                    int(self.n_pos[k]), int(self.n_neg[k])))
                    continue
                d, b = self.feature[k], self.threshold[k]
                lu, rl = upper.copy(), lower.copy()
                lu[d] = min(lu[d], b)
                rl[d] = max(rl[d], b)
                stack.append((self.right[k], rl, upper))
                stack.append((self.left[k], lower, lu))
            self._leaves = out
        return self._leaves

    def leaf_index_of_node(self) -> dict[int, int]:
        return {lf.node: lf.index for lf in self.leaves()}

    def region_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(lower, upper, label) stacked over leaves in enumeration order."""
        lv = self.leaves()
        return (np.array([lf.lower for lf in lv]), np.array([lf.upper for lf in lv]),
                np.array([lf.label for lf in lv], dtype=np.int64))

    def with_labels(self, node_labels: dict[int, int]) -> "ClassificationTree":
        label = self.label.copy()
        for k, v in node_labels.items():
            if self.feature[k] != LEAF:
                raise ValueError(f"node {k} is not a leaf")
            label[k] = v
        return ClassificationTree(self.feature.copy(), self.threshold.copy(), self.left.copy(),
                                  self.right.copy(), label, self.n_pos.copy(), self.n_neg.copy(),
                                  self.n_features)

    def with_counts(self, X, y) -> "ClassificationTree":
        """Copy with leaf counts recomputed from a labelled sample."""
        k = self.apply(X)
        y = np.asarray(y)
        n_pos = np.bincount(k[y == 1], minlength=self.n_nodes)
        n_neg = np.bincount(k[y == -1], minlength=self.n_nodes)
        return ClassificationTree(self.feature.copy(), self.threshold.copy(), self.left.copy(),
                                  self.right.copy(), self.label.copy(), n_pos, n_neg, self.n_features)

    def to_dict(self) -> dict:
        nodes = []
        for k in range(self.n_nodes):
            if self.feature[k] == LEAF:
                nodes.append({"kind": "leaf", "label": int(self.label[k]),
                              "n_pos": int(self.n_pos[k]), "n_neg": int(self.n_neg[k])})
            else:
                nodes.append({"kind": "split", "feature": int(self.feature[k]),
                              "threshold": float(self.threshold[k]),
                              "left": int(self.left[k]), "right": int(self.right[k])})
        return {"version": FORMAT_VERSION, "n_features": int(self.n_features), "nodes": nodes}

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassificationTree":
        try:
            if doc["version"] != FORMAT_VERSION:
                raise SchemaError(f"unsupported model version {doc['version']!r}")
            D = doc["n_features"]
            if not isinstance(D, int) or D < 1:
                raise SchemaError("n_features must be a positive integer")
            nodes = doc["nodes"]
            if not isinstance(nodes, list) or not nodes:
                raise SchemaError("nodes must be a non-empty list")
            K = len(nodes)
            arr = {k: [] for k in ("feature", "threshold", "left", "right", "label", "n_pos", "n_neg")}
            for i, nd in enumerate(nodes):
                kind = nd["kind"]
                if kind == "leaf":
                    if nd["label"] not in (1, -1):
                        raise SchemaError(f"node {i}: label must be +1 or -1")
                    vals = (LEAF, 0.0, -1, -1, nd["label"], nd.get("n_pos", 0), nd.get("n_neg", 0))
                elif kind == "split":
                    f, l, r = nd["feature"], nd["left"], nd["right"]
                    if not (0 <= f < D):
                        raise SchemaError(f"node {i}: feature {f} out of range")
                    if not (i < l < K and i < r < K and l != r):
                        raise SchemaError(f"node {i}: invalid child indices")
                    vals = (f, float(nd["threshold"]), l, r, -1, 0, 0)
                else:
                    raise SchemaError(f"node {i}: unknown kind {kind!r}")
                for key, v in zip(arr, vals):
                    arr[key].append(v)
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed tree document: {exc!r}") from None
        # every node but the root must have exactly one parent
        children = arr["left"] + arr["right"]
        children = [c for c in children if c >= 0]
        if sorted(children) != list(range(1, K)):
            raise SchemaError("node references do not form a tree")
        return cls(**arr, n_features=D)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "ClassificationTree":
        return cls.from_dict(json.loads(text))


def predict(t: ClassificationTree, x) -> int:
    return int(t.predict(x)[0])


def predict_score(t: ClassificationTree, x) -> float:
    return float(t.predict_score(x)[0])


def enumerate_leaves(t: ClassificationTree) -> list[Leaf]:
    return t.leaves()


def serialize(t: ClassificationTree) -> dict:
    return t.to_dict()


def deserialize(doc: dict) -> ClassificationTree:
    return ClassificationTree.from_dict(doc)


def region_contains(lower: np.ndarray, upper: np.ndarray, X) -> np.ndarray:
    X = np.atleast_2d(X)
    return np.all((X > lower) & (X <= upper), axis=1)
