"""Schema-driven loading, normalization and synthesis of mixed-type tables."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

KINDS = ("binary", "gaussian", "nominal", "poisson")
LABEL_COLUMN = "label"


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    """Type declaration for one visible attribute.

    ``cardinality`` is required for nominal columns and forbidden otherwise.
    ``norm_min``/``norm_max`` are only meaningful for gaussian columns and are
    filled in by :func:`fit_normalizer`.
    """

    name: str
    kind: str
    cardinality: Optional[int] = None
    norm_min: Optional[float] = None
    norm_max: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "nominal":
            if self.cardinality is None or int(self.cardinality) < 2:
                raise SchemaError(f"column {self.name!r}: nominal needs cardinality >= 2")
        elif self.cardinality is not None:
            raise SchemaError(f"column {self.name!r}: cardinality only allowed for nominal")
        if self.kind != "gaussian" and (self.norm_min is not None or self.norm_max is not None):
            raise SchemaError(f"column {self.name!r}: normalization only applies to gaussian")

    @property
    def width(self) -> int:
        """Number of visible units after one-hot expansion."""
        return self.cardinality if self.kind == "nominal" else 1

    @property
    def fitted(self) -> bool:
        return self.norm_min is not None and self.norm_max is not None

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.cardinality is not None:
            d["cardinality"] = self.cardinality
        if self.norm_min is not None:
            d["norm_min"] = self.norm_min
            d["norm_max"] = self.norm_max
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSpec":
        unknown = set(d) - {"name", "kind", "cardinality", "norm_min", "norm_max"}
        if unknown:
            raise SchemaError(f"unknown schema keys {sorted(unknown)}")
        try:
            name, kind = str(d["name"]), str(d["kind"])
        except KeyError as exc:
            raise SchemaError(f"schema entry missing {exc.args[0]!r}: {d}") from None
        card = d.get("cardinality")
        nmin, nmax = d.get("norm_min"), d.get("norm_max")
        return cls(
            name,
            kind,
            None if card is None else int(card),
            None if nmin is None else float(nmin),
            None if nmax is None else float(nmax),
        )


def binary_columns(n: int, prefix: str = "h") -> tuple:
    """Schema for an all-binary layer of ``n`` units."""
    return tuple(ColumnSpec(f"{prefix}{j}", "binary") for j in range(n))


@dataclass(frozen=True)
class Schema:
    columns: tuple

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.columns:
            raise SchemaError("schema has no columns")
        names = [c.name for c in self.columns]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise SchemaError(f"duplicate column names {sorted(dupes)}")
        if LABEL_COLUMN in names:
            raise SchemaError(f"{LABEL_COLUMN!r} is reserved for ground-truth labels")

    def __len__(self):
        return len(self.columns)

    def __iter__(self):
        return iter(self.columns)

    def __getitem__(self, i):
        return self.columns[i]

    @property
    def names(self) -> list:
        return [c.name for c in self.columns]

    def to_json(self) -> list:
        return [c.to_dict() for c in self.columns]

    @classmethod
    def from_json(cls, obj) -> "Schema":
        if not isinstance(obj, list):
            raise SchemaError("schema must be a JSON array of column objects")
        return cls(tuple(ColumnSpec.from_dict(d) for d in obj))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Schema":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_json(obj)


@dataclass(frozen=True)
class Dataset:
    """An M x N table of typed cells plus optional anomaly labels.

    Cells live in a float64 array; nominal cells hold category indices and
    poisson cells hold counts, both as exact integers.
    """

    schema: Schema
    values: np.ndarray
    labels: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.schema):
            raise DataError(f"values shape {values.shape} does not match {len(self.schema)} columns")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=bool).copy()
            if labels.shape != (values.shape[0],):
                raise DataError("labels length differs from row count")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.values.shape[0]

    def validate(self) -> None:
        """Raise DataError on the first cell that violates its column kind."""
        for j, col in enumerate(self.schema):
            v = self.values[:, j]
            if col.kind == "gaussian":
                bad = ~np.isfinite(v)
            elif col.kind == "binary":
                bad = (v != 0) & (v != 1)
            elif col.kind == "nominal":
                bad = (v != np.round(v)) | (v < 0) | (v >= col.cardinality)
            else:
                bad = ~np.isfinite(v) | (v != np.round(v)) | (v < 0)
            if bad.any():
                i = int(np.argmax(bad))
                raise DataError(f"row {i}, column {col.name!r}: invalid {col.kind} value {v[i]!r}")


def _parse_cell(text: str, col: ColumnSpec, row: int) -> float:
    where = f"row {row}, column {col.name!r}"
    text = text.strip()
    if text == "":
        raise DataError(f"{where}: missing value")
    try:
        x = float(text)
    except ValueError:
        raise DataError(f"{where}: cannot parse {text!r} as a number") from None
    if col.kind == "gaussian":
        if not math.isfinite(x):
            raise DataError(f"{where}: non-finite gaussian value {text!r}")
        return x
    if not math.isfinite(x) or x != int(x):
        raise DataError(f"{where}: {col.kind} value must be an integer, got {text!r}")
    if col.kind == "binary" and x not in (0.0, 1.0):
        raise DataError(f"{where}: binary value must be 0 or 1, got {text!r}")
    if col.kind == "nominal" and not 0 <= x < col.cardinality:
        raise DataError(f"{where}: nominal value {text!r} outside 0..{col.cardinality - 1}")
    if col.kind == "poisson" and x < 0:
        raise DataError(f"{where}: negative poisson count {text!r}")
    return x


def load_csv(path, schema) -> Dataset:
    """Read a CSV file with a header row into a typed :class:`Dataset`.

    ``schema`` is a :class:`Schema` or a path to a schema JSON file. Rows are
    numbered from 1 (the first data row) in error messages.
    """
    if not isinstance(schema, Schema):
        schema = Schema.load(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        index = {}
        for pos, name in enumerate(header):
            if name in index:
                raise DataError(f"{path}: duplicate header {name!r}")
            index[name] = pos
        missing = [c.name for c in schema if c.name not in index]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        label_pos = index.get(LABEL_COLUMN)
        rows, labels = [], []
        for r, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {r} has {len(rec)} fields, expected {len(header)}")
            rows.append([_parse_cell(rec[index[c.name]], c, r) for c in schema])
            if label_pos is not None:
                lab = rec[label_pos].strip()
                if lab not in ("0", "1"):
                    raise DataError(f"row {r}, column {LABEL_COLUMN!r}: expected 0 or 1, got {lab!r}")
                labels.append(lab == "1")
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(schema))
    return Dataset(schema, values, np.array(labels, dtype=bool) if label_pos is not None else None)


def format_cell(x: float, col: ColumnSpec) -> str:
    if col.kind == "gaussian":
        return repr(float(x))
    return str(int(x))


def save_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = data.schema.names + ([LABEL_COLUMN] if data.labels is not None else [])
        w.writerow(header)
        for i, row in enumerate(data.values):
            rec = [format_cell(x, c) for x, c in zip(row, data.schema)]
            if data.labels is not None:
                rec.append("1" if data.labels[i] else "0")
            w.writerow(rec)


def fit_normalizer(train: Dataset) -> Schema:
    """Record per-column min/max of every gaussian column of ``train``."""
    if len(train) == 0:
        raise DataError("cannot fit a normalizer on an empty dataset")
    cols = []
    for j, col in enumerate(train.schema):
        if col.kind == "gaussian":
            lo, hi = float(train.values[:, j].min()), float(train.values[:, j].max())
            if lo == hi:
                raise DataError(f"column {col.name!r} is constant ({lo!r}); cannot normalize")
            col = replace(col, norm_min=lo, norm_max=hi)
        cols.append(col)
    return Schema(tuple(cols))


def apply_normalizer(data: Dataset, schema: Schema) -> Dataset:
    """Min-max scale gaussian columns using the fitted ``schema``.

    Values outside the fitted range map outside [0, 1]; that is allowed.
    """
    if [(c.name, c.kind) for c in schema] != [(c.name, c.kind) for c in data.schema]:
        raise SchemaError("dataset columns do not match the normalizer schema")
    out = data.values.copy()
    for j, col in enumerate(schema):
        if col.kind != "gaussian":
            continue
        if not col.fitted:
            raise SchemaError(f"column {col.name!r} has no fitted normalization range")
        out[:, j] = (out[:, j] - col.norm_min) / (col.norm_max - col.norm_min)
    return Dataset(schema, out, data.labels)


@dataclass(frozen=True)
class SynthConfig:
    n_binary: int = 2
    n_gaussian: int = 3
    n_nominal: int = 2
    n_poisson: int = 1
    nominal_cardinality: int = 4
    n_inliers: int = 500
    n_outliers: int = 50
    flip_rate: float = 0.05
    poisson_rate: float = 3.0
    poisson_max: int = 12

    def schema(self) -> Schema:
        cols = [ColumnSpec(f"b{j}", "binary") for j in range(self.n_binary)]
        cols += [ColumnSpec(f"g{j}", "gaussian") for j in range(self.n_gaussian)]
        cols += [ColumnSpec(f"c{j}", "nominal", self.nominal_cardinality) for j in range(self.n_nominal)]
        cols += [ColumnSpec(f"p{j}", "poisson") for j in range(self.n_poisson)]
        return Schema(tuple(cols))


def _inlier_block(cfg: SynthConfig, rng: np.random.Generator, n: int, pattern_bin, pattern_nom, loadings):
    parts = []
    if cfg.n_binary:
        flips = rng.random((n, cfg.n_binary)) < cfg.flip_rate
        parts.append(np.where(flips, 1 - pattern_bin, pattern_bin))
    if cfg.n_gaussian:
        # one shared latent factor correlates every gaussian column
        z = rng.standard_normal((n, 1))
        g = z * loadings + 0.3 * rng.standard_normal((n, cfg.n_gaussian))
        parts.append(1.0 / (1.0 + np.exp(-g)))
    if cfg.n_nominal:
        k = cfg.nominal_cardinality
        flips = rng.random((n, cfg.n_nominal)) < cfg.flip_rate
        # a flipped cell moves to a different category, uniformly
        shift = rng.integers(1, k, size=(n, cfg.n_nominal))
        parts.append(np.where(flips, (pattern_nom + shift) % k, pattern_nom))
    if cfg.n_poisson:
        parts.append(rng.poisson(cfg.poisson_rate, size=(n, cfg.n_poisson)))
    return np.hstack([np.asarray(p, dtype=np.float64) for p in parts])


def _outlier_block(cfg: SynthConfig, rng: np.random.Generator, n: int):
    parts = []
    if cfg.n_binary:
        parts.append(rng.integers(0, 2, size=(n, cfg.n_binary)))
    if cfg.n_gaussian:
        parts.append(rng.random((n, cfg.n_gaussian)))
    if cfg.n_nominal:
        parts.append(rng.integers(0, cfg.nominal_cardinality, size=(n, cfg.n_nominal)))
    if cfg.n_poisson:
        parts.append(rng.integers(0, cfg.poisson_max + 1, size=(n, cfg.n_poisson)))
    return np.hstack([np.asarray(p, dtype=np.float64) for p in parts])


def generate_synthetic(config: SynthConfig, seed: int) -> Dataset:
    """Draw a labelled mixed-type dataset: one coherent inlier regime plus
    uniformly scattered outliers, rows shuffled. Deterministic in ``seed``."""
    if config.n_inliers <= 0:
        raise DataError("synthetic config needs at least one inlier")
    if config.n_outliers < 0:
        raise DataError("n_outliers must be non-negative")
    schema = config.schema()
    rng = np.random.default_rng(seed)
    pattern_bin = rng.integers(0, 2, size=config.n_binary)
    pattern_nom = rng.integers(0, config.nominal_cardinality, size=config.n_nominal)
    loadings = rng.choice([-1.0, 1.0], size=config.n_gaussian) * rng.uniform(1.0, 2.0, size=config.n_gaussian)
    inl = _inlier_block(config, rng, config.n_inliers, pattern_bin, pattern_nom, loadings)
    out = _outlier_block(config, rng, config.n_outliers) if config.n_outliers else np.empty((0, len(schema)))
    values = np.vstack([inl, out])
    labels = np.r_[np.zeros(config.n_inliers, bool), np.ones(config.n_outliers, bool)]
    order = rng.permutation(len(values))
    return Dataset(schema, values[order], labels[order])


__all__ = [
    "ColumnSpec",
    "DataError",
    "Dataset",
    "KINDS",
    "Schema",
    "SchemaError",
    "SynthConfig",
    "apply_normalizer",
    "binary_columns",
    "fit_normalizer",
    "generate_synthetic",
    "load_csv",
    "save_csv",
]
