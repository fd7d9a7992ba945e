"""Tabular datasets with per-feature action metadata.

Besides loading, this module derives the per-feature structures the split
search consumes: candidate thresholds, sort permutations and empirical CDFs.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KINDS = ("integer", "continuous", "binary")
DIRECTIONS = ("free", "increasing_only", "fixed")

_KIND_ALIASES = {"integer": "integer", "continuous": "continuous", "binary": "binary", "real": "continuous"}
_DIRECTION_ALIASES = {
    "free": "free",
    "nothing": "free",
    "increasing_only": "increasing_only",
    "increasing only": "increasing_only",
    "fixed": "fixed",
    "fix": "fixed",
}
_META_KEYS = {"name", "kind", "min", "max", "immutable", "direction"}


class DataError(ValueError):
    """Raised for malformed datasets or metadata."""


@dataclass(frozen=True)
class FeatureMeta:
    name: str
    kind: str = "continuous"
    min: float = -math.inf
    max: float = math.inf
    immutable: bool = False
    direction: str = "free"

    def __post_init__(self):
        kind = _KIND_ALIASES.get(str(self.kind).strip().lower())
        if kind is None:
            raise DataError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        direction = _DIRECTION_ALIASES.get(str(self.direction).strip().lower())
        if direction is None:
            raise DataError(f"feature {self.name!r}: unknown direction {self.direction!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "min", float(self.min))
        object.__setattr__(self, "max", float(self.max))
        if not self.min <= self.max:
            raise DataError(f"feature {self.name!r}: min {self.min} > max {self.max}")
        if kind == "binary" and not (self.min in (0.0, 1.0) and self.max in (0.0, 1.0)):
            raise DataError(f"feature {self.name!r}: binary bounds must lie in {{0, 1}}")
        if bool(self.immutable) != (direction == "fixed"):
            raise DataError(f"feature {self.name!r}: immutable must coincide with direction 'fixed'")

    @property
    def is_integral(self) -> bool:
        return self.kind in ("integer", "binary")

    @property
    def actionable(self) -> bool:
        return self.direction != "fixed"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "min": self.min,
            "max": self.max,
            "immutable": self.immutable,
            "direction": self.direction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMeta":
        unknown = set(d) - _META_KEYS
        if unknown:
            raise DataError(f"unknown metadata keys {sorted(unknown)}")
        if "name" not in d:
            raise DataError("metadata entry without 'name'")
        d = dict(d)
        immutable = bool(d.get("immutable", False))
        d.setdefault("direction", "fixed" if immutable else "free")
        d["immutable"] = immutable
        return cls(**d)


@dataclass
class Dataset:
    """Feature matrix ``X`` (N x D), labels ``y`` in {+1, -1} and feature metadata."""

    X: np.ndarray
    y: np.ndarray
    features: list[FeatureMeta]
    groups: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise DataError("X must be two-dimensional")
        n, d = self.X.shape
        if n < 1 or d < 1:
            raise DataError("dataset needs at least one row and one feature")
        if self.y.shape != (n,):
            raise DataError(f"y has shape {self.y.shape}, expected ({n},)")
        if len(self.features) != d:
            raise DataError(f"{len(self.features)} feature entries for {d} columns")
        if not np.all((self.y == 1) | (self.y == -1)):
            raise DataError("labels must be +1 or -1")
        if not np.all(np.isfinite(self.X)):
            raise DataError("missing or non-finite values are not supported")
        lo = np.array([f.min for f in self.features])
        hi = np.array([f.max for f in self.features])
        bad = np.nonzero(np.any((self.X < lo) | (self.X > hi), axis=1))[0]
        if bad.size:
            row = int(bad[0])
            col = int(np.nonzero((self.X[row] < lo) | (self.X[row] > hi))[0][0])
            raise DataError(
                f"row {row}: value {self.X[row, col]} of feature {self.features[col].name!r} "
                f"outside [{lo[col]}, {hi[col]}]"
            )
        if not self.groups:
            self.groups = one_hot_groups(self.features)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows], list(self.features))

    def select_features(self, cols: Sequence[int]) -> "Dataset":
        cols = list(cols)
        return Dataset(self.X[:, cols], self.y.copy(), [self.features[c] for c in cols])


def one_hot_groups(features: Sequence[FeatureMeta]) -> dict[str, list[int]]:
    """Group binary columns named ``prefix:value``; recorded only, never enforced."""
    groups: dict[str, list[int]] = {}
    for d, f in enumerate(features):
        if f.kind == "binary" and ":" in f.name:
            groups.setdefault(f.name.split(":", 1)[0], []).append(d)
    return {k: v for k, v in groups.items() if len(v) > 1}


def load_metadata(meta_path) -> list[FeatureMeta]:
    with open(meta_path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise DataError("metadata document must be a JSON array of feature records")
    return [FeatureMeta.from_dict(entry) for entry in doc]


def load_dataset(data_path, meta_path, label: str = "label", positive: str = "1",
                 negative: Sequence[str] = ("0", "-1")) -> Dataset:
    """Read a CSV file with a header row and a JSON metadata array.

    Raw label values equal to ``positive`` map to +1, values in ``negative`` to -1;
    anything else is an error.
    """
    features = load_metadata(meta_path)
    with open(data_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{data_path}: empty file") from None
        header = [h.strip() for h in header]
        if label not in header:
            raise DataError(f"missing label column {label!r}")
        cols = []
        for f in features:
            if f.name not in header:
                raise DataError(f"missing column {f.name!r}")
            cols.append(header.index(f.name))
        label_col = header.index(label)
        rows, labels = [], []
        for r, raw in enumerate(reader):
            if not raw:
                continue
            if len(raw) != len(header):
                raise DataError(f"row {r}: expected {len(header)} cells, got {len(raw)}")
            values = []
            for f, c in zip(features, cols):
                cell = raw[c].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"row {r}: unparsable value {cell!r} in column {f.name!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"row {r}: missing value in column {f.name!r}")
                if v < f.min or v > f.max:
                    raise DataError(f"row {r}: value {v} of feature {f.name!r} outside [{f.min}, {f.max}]")
                if f.is_integral and v != math.floor(v):
                    raise DataError(f"row {r}: non-integral value {v} in {f.kind} column {f.name!r}")
                values.append(v)
            lab = raw[label_col].strip()
            if lab == str(positive):
                labels.append(1)
            elif lab in negative:
                labels.append(-1)
            else:
                raise DataError(f"row {r}: label {lab!r} is not in {{+1, -1}} under the configured mapping")
            rows.append(values)
    if not rows:
        raise DataError(f"{data_path}: no data rows")
    return Dataset(np.array(rows, dtype=np.float64), np.array(labels), features)


def save_dataset(ds: Dataset, data_path, meta_path, label: str = "label") -> None:
    with open(data_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in ds.features] + [label])
        for row, yy in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in row] + [int(yy)])
    with open(meta_path, "w") as fh:
        json.dump([f.to_dict() for f in ds.features], fh, indent=1)


@dataclass(frozen=True)
class ThresholdSet:
    """Per-feature strictly increasing candidate thresholds, stored flat.

    Thresholds of feature ``d`` are ``values[offsets[d]:offsets[d + 1]]``.
    """

    values: np.ndarray
    offsets: np.ndarray

    def __getitem__(self, d: int) -> np.ndarray:
        return self.values[self.offsets[d]:self.offsets[d + 1]]

    def __len__(self) -> int:
        return len(self.offsets) - 1


def midpoints(column: np.ndarray) -> np.ndarray:
    u = np.unique(column)
    if u.size < 2:
        return np.empty(0)
    mid = u[:-1] + (u[1:] - u[:-1]) / 2.0
    # adjacent floats: the midpoint may round onto the upper value
    return np.where(mid < u[1:], mid, u[:-1])


def build_thresholds(ds: Dataset | np.ndarray) -> ThresholdSet:
    X = ds.X if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    per = [midpoints(X[:, d]) for d in range(X.shape[1])]
    offsets = np.zeros(len(per) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([p.size for p in per])
    values = np.concatenate(per) if per else np.empty(0)
    return ThresholdSet(values.astype(np.float64), offsets)


def sort_permutations(ds: Dataset | np.ndarray) -> np.ndarray:
    """Row ``d`` is the stable argsort of column ``d`` (0-based indices)."""
    X = ds.X if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


@dataclass(frozen=True)
class QuantileTable:
    """Empirical CDFs: ``Q_d(v) = #{n : x_nd <= v} / N``.

    ``sorted_values[d]`` is column ``d`` sorted ascending (duplicates kept), so
    the CDF numerator is a right-sided binary search.
    """

    sorted_values: np.ndarray  # D x N

    @property
    def n_samples(self) -> int:
        return self.sorted_values.shape[1]

    def rank(self, d: int, v) -> np.ndarray | int:
        return np.searchsorted(self.sorted_values[d], v, side="right")

    def cdf(self, d: int, v):
        return self.rank(d, v) / self.n_samples

    def distinct(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        """Distinct values of feature ``d`` with their CDF numerators."""
        vals, counts = np.unique(self.sorted_values[d], return_counts=True)
        return vals, np.cumsum(counts)


def build_quantiles(ds: Dataset | np.ndarray) -> QuantileTable:
    X = ds.X if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    return QuantileTable(np.ascontiguousarray(np.sort(X, axis=0).T))
