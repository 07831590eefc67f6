"""Typed tabular data model: CSV ingestion, seeded splitting, groups, demographics.

A Dataset keeps one numpy array per column (float64 with NaN nulls for
numerical columns, object with None nulls for categorical columns) plus an
explicit boolean null mask over the feature columns. The mask is the source
of truth; stored cell values under the mask are always the null sentinel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, EvaluationError, ParseError, SchemaError, ValidationError
from .predicates import ValuePredicate

NUMERICAL = "numerical"
CATEGORICAL = "categorical"

FEATURE = "feature"
TARGET = "target"
SENSITIVE = "sensitive"

PRIV = "priv"
DIS = "dis"

_ROLE_ALIASES = {"sensitive-attribute": SENSITIVE, "sensitive_attribute": SENSITIVE}


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    role: str = FEATURE
    categories: tuple[str, ...] | None = None
    null_tokens: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "role", _ROLE_ALIASES.get(self.role, self.role))
        if self.kind not in (NUMERICAL, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in (FEATURE, TARGET, SENSITIVE):
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.kind == NUMERICAL and self.categories is not None:
            raise SchemaError(f"numerical column {self.name!r} must not declare categories")
        if self.categories is not None:
            cats = tuple(str(c) for c in self.categories)
            if len(set(cats)) != len(cats):
                raise SchemaError(f"column {self.name!r}: duplicate categories")
            object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "null_tokens", tuple(self.null_tokens))


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigurationError(f"test_fraction must be in (0,1), got {self.test_fraction}")


@dataclass(frozen=True)
class GroupSpec:
    """Maps 1 or 2 sensitive attributes onto the binary priv/dis partition.

    With two attributes a row is dis only when both predicates hold
    (the doubly-disadvantaged intersection); everyone else is priv.
    """

    attributes: tuple[str, ...]
    dis_predicates: tuple[ValuePredicate, ...]

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "dis_predicates", tuple(self.dis_predicates))
        if not 1 <= len(self.attributes) <= 2:
            raise ConfigurationError("GroupSpec needs 1 or 2 sensitive attributes")
        if len(self.attributes) != len(self.dis_predicates):
            raise ConfigurationError("one dis predicate required per attribute")


def _validate_schema(schema) -> tuple[ColumnSchema, ...]:
    schema = tuple(schema)
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate column names in schema")
    targets = [c for c in schema if c.role == TARGET]
    if len(targets) != 1:
        raise SchemaError(f"schema must have exactly one target column, found {len(targets)}")
    t = targets[0]
    if t.kind != CATEGORICAL:
        raise SchemaError("target column must be categorical")
    if t.categories is not None and len(t.categories) != 2:
        raise SchemaError("target column must have exactly 2 categories")
    return schema


class Dataset:
    """Immutable typed relation with an explicit feature-column null mask."""

    __slots__ = ("schema", "columns", "null_mask", "feature_names", "target_name")

    def __init__(self, schema, columns, null_mask):
        schema = _validate_schema(schema)
        feature_names = tuple(c.name for c in schema if c.role != TARGET)
        target_name = next(c.name for c in schema if c.role == TARGET)

        cols = {}
        n = None
        learned = []
        for col in schema:
            if col.name not in columns:
                raise SchemaError(f"missing data for column {col.name!r}")
            arr = np.asarray(columns[col.name])
            if col.kind == NUMERICAL:
                arr = arr.astype(np.float64, copy=True)
            else:
                arr = arr.astype(object, copy=True)
                if col.categories is None:
                    seen = tuple(dict.fromkeys(v for v in arr if v is not None))
                    col = replace(col, categories=seen)
                    if col.role == TARGET and len(seen) != 2:
                        raise SchemaError(
                            f"target column {col.name!r} must have exactly 2 categories")
            learned.append(col)
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise SchemaError(f"column {col.name!r} has {arr.shape[0]} rows, expected {n}")
            arr.flags.writeable = False
            cols[col.name] = arr
        schema = tuple(learned)

        mask = np.asarray(null_mask, dtype=bool)
        if mask.shape != (n, len(feature_names)):
            raise SchemaError(
                f"null_mask shape {mask.shape} != {(n, len(feature_names))}")
        mask = mask.copy()
        mask.flags.writeable = False

        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "null_mask", mask)
        object.__setattr__(self, "feature_names", feature_names)
        object.__setattr__(self, "target_name", target_name)
        self._check_consistency()

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    def __reduce__(self):
        return (Dataset, (self.schema, dict(self.columns), self.null_mask))

    def _check_consistency(self):
        tgt = self.columns[self.target_name]
        if any(v is None for v in tgt):
            raise ValidationError("target column contains nulls")
        for j, name in enumerate(self.feature_names):
            col = self.column_schema(name)
            arr = self.columns[name]
            m = self.null_mask[:, j]
            if col.kind == NUMERICAL:
                isnull = np.isnan(arr)
            else:
                isnull = np.array([v is None for v in arr], dtype=bool)
            if not np.array_equal(isnull, m):
                raise ValidationError(f"column {name!r}: null mask and sentinels disagree")
            if col.kind == CATEGORICAL and col.categories is not None:
                cats = set(col.categories)
                bad = {v for v, miss in zip(arr, m) if not miss and v not in cats}
                if bad:
                    raise ValidationError(f"column {name!r}: values outside category list: {sorted(bad)[:5]}")

    # -- basic accessors ---------------------------------------------------

    @property
    def n(self) -> int:
        return self.columns[self.target_name].shape[0]

    def column_schema(self, name: str) -> ColumnSchema:
        for c in self.schema:
            if c.name == name:
                return c
        raise SchemaError(f"no column named {name!r}")

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise SchemaError(f"{name!r} is not a feature column")

    @property
    def target_schema(self) -> ColumnSchema:
        return self.column_schema(self.target_name)

    def labels(self) -> np.ndarray:
        """Binary labels: 1 for the second target category (the positive class)."""
        cats = self.target_schema.categories
        pos = cats[1]
        return np.array([1 if v == pos else 0 for v in self.columns[self.target_name]],
                        dtype=np.int64)

    def complete_rows(self) -> np.ndarray:
        return ~self.null_mask.any(axis=1)

    # -- derivation --------------------------------------------------------

    def take(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        cols = {name: arr[indices] for name, arr in self.columns.items()}
        return Dataset(self.schema, cols, self.null_mask[indices])

    def with_null_mask(self, mask) -> "Dataset":
        """Return a copy whose null mask is `mask`; newly masked cells get sentinels."""
        mask = np.asarray(mask, dtype=bool)
        cols = dict(self.columns)
        for j, name in enumerate(self.feature_names):
            newly = mask[:, j] & ~self.null_mask[:, j]
            if not newly.any():
                continue
            arr = self.columns[name].copy()
            if self.column_schema(name).kind == NUMERICAL:
                arr[newly] = np.nan
            else:
                arr[newly] = None
            cols[name] = arr
        return Dataset(self.schema, cols, mask)

    def with_filled(self, fills: dict[str, np.ndarray]) -> "Dataset":
        """Return a completed copy: per-column fill values replace masked cells."""
        cols = dict(self.columns)
        mask = self.null_mask.copy()
        schema = list(self.schema)
        for name, values in fills.items():
            j = self.feature_index(name)
            m = self.null_mask[:, j]
            arr = self.columns[name].copy()
            arr[m] = values
            cols[name] = arr
            mask[:, j] = False
            col = self.column_schema(name)
            if col.kind == CATEGORICAL and col.categories is not None:
                extra = [v for v in dict.fromkeys(values) if v not in col.categories]
                if extra:
                    k = schema.index(col)
                    schema[k] = replace(col, categories=col.categories + tuple(extra))
        return Dataset(schema, cols, mask)


# -- ingestion ---------------------------------------------------------------

def load_csv(path, schema, null_tokens=()) -> Dataset:
    """Load an RFC-4180 CSV whose header matches `schema` exactly.

    Cells matching any null token (global or per-column) are masked.
    Categorical columns with no declared category list learn one from the
    observed data in first-appearance order; declared lists are closed.
    """
    schema = _validate_schema(schema)
    null_tokens = set(null_tokens)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file")
        expected = [c.name for c in schema]
        if header != expected:
            raise SchemaError(
                f"{path}: header {header} does not match schema columns {expected}")
        rows = [row for row in reader if row]

    for i, row in enumerate(rows):
        if len(row) != len(schema):
            raise ParseError(f"{path}: row {i} has {len(row)} fields, expected {len(schema)}")

    n = len(rows)
    raw = {c.name: [rows[i][j] for i in range(n)] for j, c in enumerate(schema)}

    columns = {}
    out_schema = []
    feature_names = [c.name for c in schema if c.role != TARGET]
    mask = np.zeros((n, len(feature_names)), dtype=bool)

    for col in schema:
        tokens = null_tokens | set(col.null_tokens)
        cells = raw[col.name]
        isnull = np.array([c in tokens for c in cells], dtype=bool)
        if col.role == TARGET and isnull.any():
            raise ValidationError(f"{path}: target column has null cells")
        if col.kind == NUMERICAL:
            arr = np.empty(n, dtype=np.float64)
            for i, c in enumerate(cells):
                if isnull[i]:
                    arr[i] = np.nan
                    continue
                try:
                    arr[i] = float(c)
                except ValueError:
                    raise ParseError(
                        f"{path}: column {col.name!r} row {i}: cannot parse {c!r} as number")
            columns[col.name] = arr
            out_schema.append(col)
        else:
            arr = np.empty(n, dtype=object)
            if col.categories is None:
                seen = list(dict.fromkeys(c for i, c in enumerate(cells) if not isnull[i]))
                cats = tuple(seen)
            else:
                cats = col.categories
                known = set(cats)
                for i, c in enumerate(cells):
                    if not isnull[i] and c not in known:
                        raise ValidationError(
                            f"{path}: column {col.name!r} row {i}: unknown category {c!r}")
            for i, c in enumerate(cells):
                arr[i] = None if isnull[i] else c
            columns[col.name] = arr
            out_schema.append(replace(col, categories=cats))
        if col.role != TARGET:
            mask[:, feature_names.index(col.name)] = isnull

    return Dataset(out_schema, columns, mask)


def write_csv(d: Dataset, path, null_token: str = "") -> None:
    """Write a dataset back to CSV; null cells become `null_token`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in d.schema])
        for i in range(d.n):
            row = []
            for c in d.schema:
                v = d.columns[c.name][i]
                if c.kind == NUMERICAL:
                    if np.isnan(v):
                        row.append(null_token)
                    else:
                        row.append(str(int(v)) if float(v).is_integer() else repr(float(v)))
                else:
                    row.append(null_token if v is None else v)
            writer.writerow(row)


# -- splitting ----------------------------------------------------------------

def split(d: Dataset, s: SplitSpec) -> tuple[Dataset, Dataset]:
    """Seeded uniform split. |test| = floor(test_fraction * n + 0.5)."""
    if d.n < 2:
        raise ConfigurationError("cannot split a dataset with fewer than 2 rows")
    n_test = int(math.floor(s.test_fraction * d.n + 0.5))
    if n_test == 0 or n_test == d.n:
        raise ConfigurationError(
            f"test_fraction {s.test_fraction} yields an empty train or test set for n={d.n}")
    rng = np.random.default_rng(np.random.SeedSequence(s.seed))
    perm = rng.permutation(d.n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return d.take(train_idx), d.take(test_idx)


# -- groups & demographics -----------------------------------------------------

def group_membership(d: Dataset, g: GroupSpec) -> np.ndarray:
    """Per-row group labels ('priv' or 'dis'); sensitive cells must be observed."""
    dis = np.ones(d.n, dtype=bool)
    for attr, pred in zip(g.attributes, g.dis_predicates):
        col = d.column_schema(attr)
        arr = d.columns[attr]
        for i in range(d.n):
            v = arr[i]
            if (col.kind == NUMERICAL and np.isnan(v)) or v is None:
                raise EvaluationError(
                    f"sensitive attribute {attr!r} is null at row {i}")
        hit = np.array([pred.matches(v) for v in arr], dtype=bool)
        dis &= hit
    return np.where(dis, DIS, PRIV)


def dis_mask(d: Dataset, g: GroupSpec) -> np.ndarray:
    return group_membership(d, g) == DIS


def demographics(d: Dataset, g: GroupSpec) -> dict:
    """Group proportions and positive-label base rates (None when a group is empty)."""
    y = d.labels()
    dis = dis_mask(d, g)
    out = {}
    for key, sel in (("overall", np.ones(d.n, dtype=bool)), ("priv", ~dis), ("dis", dis)):
        size = int(sel.sum())
        out[key] = {
            "proportion": size / d.n,
            "base_rate": float(y[sel].mean()) if size else None,
        }
    return out
