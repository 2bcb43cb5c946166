"""Tabular datasets: schema, CSV ingestion, encoding, distances and marginals.

All downstream modules work on *encoded* rows: numeric features are
z-scored with statistics from a designated fitting set and categorical
features are one-hot expanded. The :class:`EncodingState` carries the
statistics so that any other dataset can be encoded against them.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    DataError,
    DimensionMismatch,
    EmptyDataset,
    EmptyFile,
    MissingColumn,
    NonNumericValue,
    SchemaMismatch,
    UnknownCategory,
)

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = NUMERIC
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise DataError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.categories:
                raise DataError(f"categorical feature {self.name!r} declares no categories")
            object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
            if len(set(self.categories)) != len(self.categories):
                raise DataError(f"feature {self.name!r} has duplicate categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureSpec, ...]
    label_column: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")
        if not names:
            raise DataError("schema has no features")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def d(self) -> int:
        return len(self.features)

    def __len__(self):
        return len(self.features)

    def to_dict(self) -> dict:
        feats = []
        for f in self.features:
            entry = {"name": f.name, "kind": f.kind}
            if f.is_categorical:
                entry["categories"] = list(f.categories)
            feats.append(entry)
        out = {"features": feats}
        if self.label_column is not None:
            out["label_column"] = self.label_column
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "FeatureSchema":
        try:
            feats = [
                FeatureSpec(f["name"], f.get("kind", NUMERIC), tuple(f.get("categories", ())))
                for f in obj["features"]
            ]
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed schema document: {exc}") from exc
        return cls(tuple(feats), obj.get("label_column"))

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


class Dataset:
    """Instances as an ``(n, d)`` object array plus optional binary labels.

    Numeric cells hold floats, categorical cells hold category strings.
    """

    def __init__(self, schema: FeatureSchema, rows, labels=None):
        self.schema = schema
        rows = np.asarray(rows, dtype=object)
        if rows.ndim == 1 and rows.size == 0:
            rows = rows.reshape(0, schema.d)
        if rows.ndim != 2 or rows.shape[1] != schema.d:
            raise DimensionMismatch(f"rows must have exactly {schema.d} values")
        self.rows = rows
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (rows.shape[0],):
                raise DataError("labels length must equal number of rows")
            if not np.isin(labels, (0, 1)).all():
                raise DataError("labels must be 0 or 1")
        self.labels = labels

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.schema.d

    def __len__(self):
        return self.n

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[indices]
        return Dataset(self.schema, self.rows[indices], labels)

    def numeric_column(self, j: int) -> np.ndarray:
        return self.rows[:, j].astype(np.float64)

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        schema = parts[0].schema
        rows = np.concatenate([p.rows for p in parts], axis=0)
        if all(p.labels is not None for p in parts):
            labels = np.concatenate([p.labels for p in parts])
        else:
            labels = None
        return cls(schema, rows, labels)

    def to_csv(self, path, label_column: str | None = "label") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            header = self.schema.names
            with_labels = self.labels is not None and label_column is not None
            w.writerow(header + [label_column] if with_labels else header)
            for i in range(self.n):
                vals = [_fmt(v) for v in self.rows[i]]
                if with_labels:
                    vals.append(int(self.labels[i]))
                w.writerow(vals)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _parse_cell(value: str, spec: FeatureSpec, row: int):
    if spec.is_categorical:
        value = value.strip()
        if value not in spec.categories:
            raise UnknownCategory(spec.name, value)
        return value
    try:
        out = float(value)
    except ValueError:
        raise NonNumericValue(row, spec.name, value) from None
    if not np.isfinite(out):
        raise NonNumericValue(row, spec.name, value)
    return out


def load_csv(path, schema: FeatureSchema, label_column: str | None = None) -> Dataset:
    """Read a CSV whose header names the schema features (any order)."""
    label_column = label_column if label_column is not None else schema.label_column
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(f"{path}: no header row")
        header = [h.strip() for h in header]
        needed = schema.names + ([label_column] if label_column else [])
        missing = [c for c in needed if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {missing}")
        pos = [header.index(name) for name in schema.names]
        lpos = header.index(label_column) if label_column else None
        rows, labels = [], []
        for r, line in enumerate(reader):
            if not line or all(not c.strip() for c in line):
                continue
            rows.append([_parse_cell(line[p], spec, r) for p, spec in zip(pos, schema.features)])
            if lpos is not None:
                try:
                    labels.append(int(float(line[lpos])))
                except ValueError:
                    raise NonNumericValue(r, label_column, line[lpos]) from None
    if not rows:
        raise EmptyFile(f"{path}: header only")
    return Dataset(schema, np.array(rows, dtype=object), labels if lpos is not None else None)


@dataclass(frozen=True)
class ColumnGroup:
    """Encoded columns ``[start, stop)`` that belong to one schema feature."""

    feature: int
    name: str
    kind: str
    start: int
    stop: int
    categories: tuple[str, ...] = ()

    @property
    def width(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class EncodingState:
    schema: FeatureSchema
    means: np.ndarray  # per schema feature; NaN for categoricals
    stds: np.ndarray
    groups: tuple[ColumnGroup, ...]

    @property
    def p(self) -> int:
        return self.groups[-1].stop

    @property
    def column_names(self) -> list[str]:
        out = []
        for g in self.groups:
            if g.kind == NUMERIC:
                out.append(g.name)
            else:
                out.extend(f"{g.name}={c}" for c in g.categories)
        return out

    @property
    def column_map(self) -> np.ndarray:
        """Schema feature index for every encoded column."""
        out = np.empty(self.p, dtype=np.int64)
        for g in self.groups:
            out[g.start:g.stop] = g.feature
        return out

    @property
    def numeric_columns(self) -> np.ndarray:
        return np.array([g.start for g in self.groups if g.kind == NUMERIC], dtype=np.int64)

    def encode_value(self, j: int, values) -> np.ndarray:
        """Encode raw values of feature ``j`` into an ``(len, width)`` block."""
        g = self.groups[j]
        if g.kind == NUMERIC:
            v = np.asarray(values, dtype=np.float64)
            if self.stds[j] == 0.0:
                return np.zeros((v.shape[0], 1))
            return ((v - self.means[j]) / self.stds[j]).reshape(-1, 1)
        lookup = {c: i for i, c in enumerate(g.categories)}
        block = np.zeros((len(values), g.width))
        for r, v in enumerate(values):
            try:
                block[r, lookup[v]] = 1.0
            except KeyError:
                raise SchemaMismatch(f"unseen category {v!r} for feature {g.name!r}") from None
        return block

    def encode_rows(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=object)
        if rows.ndim == 1:
            rows = rows.reshape(1, -1)
        if rows.shape[1] != self.schema.d:
            raise SchemaMismatch(f"expected {self.schema.d} values per row, got {rows.shape[1]}")
        out = np.empty((rows.shape[0], self.p))
        for g in self.groups:
            out[:, g.start:g.stop] = self.encode_value(g.feature, rows[:, g.feature])
        return out

    def decode_rows(self, values: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`encode_rows` (categoricals by argmax)."""
        values = np.atleast_2d(values)
        out = np.empty((values.shape[0], self.schema.d), dtype=object)
        for g in self.groups:
            if g.kind == NUMERIC:
                out[:, g.feature] = values[:, g.start] * self.stds[g.feature] + self.means[g.feature]
            else:
                idx = np.argmax(values[:, g.start:g.stop], axis=1)
                out[:, g.feature] = [g.categories[k] for k in idx]
        return out

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "means": [None if np.isnan(m) else float(m) for m in self.means],
            "stds": [None if np.isnan(s) else float(s) for s in self.stds],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EncodingState":
        schema = FeatureSchema.from_dict(obj["schema"])
        means = np.array([np.nan if m is None else m for m in obj["means"]], dtype=np.float64)
        stds = np.array([np.nan if s is None else s for s in obj["stds"]], dtype=np.float64)
        return cls(schema, means, stds, _layout(schema))


@dataclass(frozen=True)
class EncodedMatrix:
    values: np.ndarray
    state: EncodingState = field(repr=False)

    @property
    def column_map(self) -> np.ndarray:
        return self.state.column_map

    @property
    def means(self) -> np.ndarray:
        return self.state.means

    @property
    def stds(self) -> np.ndarray:
        return self.state.stds

    @property
    def shape(self):
        return self.values.shape


def _layout(schema: FeatureSchema) -> tuple[ColumnGroup, ...]:
    groups, col = [], 0
    for j, f in enumerate(schema.features):
        width = len(f.categories) if f.is_categorical else 1
        groups.append(ColumnGroup(j, f.name, f.kind, col, col + width, f.categories))
        col += width
    return tuple(groups)


def fit_encoding(ds: Dataset) -> tuple[EncodedMatrix, EncodingState]:
    if ds.n == 0:
        raise EmptyDataset("cannot fit an encoding on an empty dataset")
    means = np.full(ds.d, np.nan)
    stds = np.full(ds.d, np.nan)
    for j, f in enumerate(ds.schema.features):
        if not f.is_categorical:
            col = ds.numeric_column(j)
            means[j] = col.mean()
            stds[j] = col.std()  # population std
    state = EncodingState(ds.schema, means, stds, _layout(ds.schema))
    return EncodedMatrix(state.encode_rows(ds.rows), state), state


def encode_with(ds: Dataset, state: EncodingState) -> EncodedMatrix:
    if ds.schema.names != state.schema.names or [f.kind for f in ds.schema.features] != [
        f.kind for f in state.schema.features
    ]:
        raise SchemaMismatch("dataset schema differs from the encoding schema")
    return EncodedMatrix(state.encode_rows(ds.rows), state)


class Metric:
    """Distance on encoded rows: ``euclidean`` or ``gower``.

    Gower needs the column groups (to treat a one-hot block as one feature)
    and per-numeric-column ranges.
    """

    def __init__(self, kind: str = "euclidean", groups=None, ranges=None):
        if kind not in ("euclidean", "gower"):
            raise ValueError(f"unknown metric {kind!r}")
        if kind == "gower" and (groups is None or ranges is None):
            raise ValueError("gower metric needs column groups and numeric ranges")
        self.kind = kind
        self.groups = groups
        self.ranges = ranges

    def __repr__(self):
        return f"Metric({self.kind!r})"

    def pairwise(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        if A.shape[1] != B.shape[1]:
            raise DimensionMismatch(f"width {A.shape[1]} vs {B.shape[1]}")
        if self.kind == "euclidean":
            return cdist(A, B)
        out = np.zeros((A.shape[0], B.shape[0]))
        for g in self.groups:
            if g.kind == NUMERIC:
                rng = self.ranges[g.feature]
                if rng > 0:
                    out += np.abs(A[:, g.start][:, None] - B[:, g.start][None, :]) / rng
            else:
                ka = np.argmax(A[:, g.start:g.stop], axis=1)
                kb = np.argmax(B[:, g.start:g.stop], axis=1)
                out += ka[:, None] != kb[None, :]
        return np.minimum(out / len(self.groups), 1.0)

    def to_point(self, x: np.ndarray, B: np.ndarray) -> np.ndarray:
        return self.pairwise(np.asarray(x).reshape(1, -1), B)[0]


def gower_metric(state: EncodingState, *matrices: np.ndarray) -> Metric:
    """Gower metric with numeric ranges taken over the union of ``matrices``."""
    stacked = np.concatenate([np.atleast_2d(m) for m in matrices], axis=0)
    ranges = np.zeros(state.schema.d)
    for g in state.groups:
        if g.kind == NUMERIC:
            col = stacked[:, g.start]
            ranges[g.feature] = col.max() - col.min()
    return Metric("gower", state.groups, ranges)


def distance(a, b, metric: Metric | str = "euclidean") -> float:
    if isinstance(metric, str):
        metric = Metric(metric)
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"width {a.size} vs {b.size}")
    return float(metric.pairwise(a[None, :], b[None, :])[0, 0])


@dataclass(frozen=True)
class MarginalTable:
    """Per-feature empirical value pools of a reference dataset."""

    schema: FeatureSchema
    pools: tuple  # numeric: sorted float array; categorical: dict category -> count

    def probabilities(self, j: int) -> tuple[list, np.ndarray]:
        pool = self.pools[j]
        if isinstance(pool, dict):
            keys = list(pool)
            counts = np.array([pool[k] for k in keys], dtype=np.float64)
        else:
            keys, counts = np.unique(pool, return_counts=True)
            keys = list(keys)
            counts = counts.astype(np.float64)
        return keys, counts / counts.sum()

    def sample(self, j: int, size: int, rng: np.random.Generator) -> np.ndarray:
        pool = self.pools[j]
        if isinstance(pool, dict):
            keys = list(pool)
            counts = np.array([pool[k] for k in keys], dtype=np.float64)
            idx = rng.choice(len(keys), size=size, p=counts / counts.sum())
            return np.array([keys[i] for i in idx], dtype=object)
        return pool[rng.integers(0, pool.shape[0], size=size)]

    def sample_encoded(self, j: int, size: int, rng: np.random.Generator,
                       state: EncodingState) -> np.ndarray:
        return state.encode_value(j, self.sample(j, size, rng))


def marginals(ds: Dataset) -> MarginalTable:
    if ds.n == 0:
        raise EmptyDataset("cannot build marginals of an empty dataset")
    pools = []
    for j, f in enumerate(ds.schema.features):
        if f.is_categorical:
            counts = {c: 0 for c in f.categories}
            for v in ds.rows[:, j]:
                counts[v] += 1
            pools.append({c: n for c, n in counts.items() if n > 0})
        else:
            pools.append(np.sort(ds.numeric_column(j)))
    return MarginalTable(ds.schema, tuple(pools))
