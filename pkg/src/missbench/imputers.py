"""Imputer suite: deletion, median/mode statistics, k-prototypes clustering,
and iterative random-forest imputation.

Every imputer follows a strict fit/transform contract: parameters are learned
exclusively from the training dataset handed to fit, and transform never
re-estimates anything from its input. Fitted imputers serialize to a
versioned byte string that round-trips exactly.
"""

from __future__ import annotations

import hashlib
import io
import math
import pickle
from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor

from .dataset import CATEGORICAL, Dataset, NUMERICAL
from .errors import ConfigurationError, ContractError, EmptyResultError, UnfittableError

DELETION = "deletion"
MEDIAN_MODE = "median-mode"
MEDIAN_DUMMY = "median-dummy"
CLUSTERING = "clustering"
MISS_FOREST = "miss-forest"
IMPUTER_KINDS = (DELETION, MEDIAN_MODE, MEDIAN_DUMMY, CLUSTERING, MISS_FOREST)

DUMMY_CATEGORY = "__missing__"

SERIAL_FORMAT = "missbench-imputer"
SERIAL_VERSION = 1


def schema_fingerprint(d: Dataset) -> str:
    """Digest of the feature-column structure (names, kinds, category lists)."""
    parts = []
    for name in d.feature_names:
        c = d.column_schema(name)
        cats = ",".join(c.categories) if c.categories else ""
        parts.append(f"{c.name}|{c.kind}|{cats}")
    return hashlib.sha256("\x1e".join(parts).encode()).hexdigest()[:16]


@dataclass
class ImputationResult:
    dataset: Dataset
    fill_values: dict[str, np.ndarray] = field(default_factory=dict)
    retained_rows: np.ndarray | None = None
    retained_fraction: float | None = None


@dataclass
class FittedImputer:
    kind: str
    state: dict
    hyper: dict
    fit_seed: int
    fingerprint: str


def _seed32(*parts) -> int:
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(h[:4], "big") & 0x7FFFFFFF


def lower_median(values: np.ndarray) -> float:
    """Median with the lower-of-two tie rule for even counts."""
    s = np.sort(values)
    return float(s[(len(s) - 1) // 2])


def column_mode(values, categories) -> str:
    """Most frequent value; ties broken by category-list (first appearance) order."""
    counts = {c: 0 for c in categories}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    best = max(counts.values())
    for c in counts:
        if counts[c] == best:
            return c


# -- deletion -------------------------------------------------------------------


def delete_rows(d: Dataset) -> ImputationResult:
    keep = d.complete_rows()
    if not keep.any():
        raise EmptyResultError("deletion removed every row")
    idx = np.flatnonzero(keep)
    return ImputationResult(
        dataset=d.take(idx),
        retained_rows=idx,
        retained_fraction=float(keep.mean()),
    )


# -- statistical ------------------------------------------------------------------


def fit_statistical(train: Dataset, kind: str, seed: int = 0) -> FittedImputer:
    """Per-column constants: observed median (numerical); mode or the reserved
    dummy category (categorical), depending on kind."""
    if kind not in (MEDIAN_MODE, MEDIAN_DUMMY):
        raise ConfigurationError(f"not a statistical imputer kind: {kind!r}")
    fills = {}
    for j, name in enumerate(train.feature_names):
        col = train.column_schema(name)
        observed = ~train.null_mask[:, j]
        if not observed.any():
            raise UnfittableError(f"column {name!r} has no observed values")
        values = train.columns[name][observed]
        if col.kind == NUMERICAL:
            fills[name] = lower_median(values)
        elif kind == MEDIAN_MODE:
            fills[name] = column_mode(values, col.categories)
        else:
            fills[name] = DUMMY_CATEGORY
    return FittedImputer(kind, {"fills": fills}, {}, seed, schema_fingerprint(train))


# -- clustering (k-prototypes) ------------------------------------------------------


def default_cluster_count(n_complete: int) -> int:
    return max(2, int(math.floor(math.sqrt(n_complete / 2) + 0.5)))


def _encode_complete(d: Dataset, rows):
    num_names = [n for n in d.feature_names if d.column_schema(n).kind == NUMERICAL]
    cat_names = [n for n in d.feature_names if d.column_schema(n).kind == CATEGORICAL]
    xnum = np.column_stack([d.columns[n][rows] for n in num_names]) if num_names \
        else np.empty((int(np.sum(rows)), 0))
    xcat = np.column_stack([d.columns[n][rows] for n in cat_names]) if cat_names \
        else np.empty((int(np.sum(rows)), 0), dtype=object)
    return num_names, cat_names, xnum.astype(float), xcat


def fit_clustering(train: Dataset, k: int | None = None, seed: int = 0,
                   max_iter: int = 100) -> FittedImputer:
    """k-prototypes on complete cases: squared Euclidean over standardized
    numericals plus gamma-weighted simple matching over categoricals."""
    complete = train.complete_rows()
    n_complete = int(complete.sum())
    if n_complete == 0:
        raise UnfittableError("clustering needs at least one complete row")
    if k is None:
        k = min(default_cluster_count(n_complete), n_complete)
    if not 1 <= k <= n_complete:
        raise UnfittableError(f"k={k} exceeds the {n_complete} complete rows")
    if max_iter < 1:
        raise ConfigurationError("max_iter must be positive")

    num_names, cat_names, xnum, xcat = _encode_complete(train, complete)
    means = xnum.mean(axis=0) if xnum.size else np.empty(0)
    stds = xnum.std(axis=0) if xnum.size else np.empty(0)
    scales = np.where(stds < 1e-12, 1.0, stds)
    znum = (xnum - means) / scales if xnum.size else xnum
    gamma = 0.5 * float(znum.var(axis=0).mean()) if znum.size else 1.0

    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF))
    proto_idx = rng.choice(n_complete, size=k, replace=False)
    proto_num = znum[proto_idx].copy()
    proto_cat = xcat[proto_idx].copy()

    assign = np.full(n_complete, -1)
    for _ in range(max_iter):
        dist = np.zeros((n_complete, k))
        for c in range(k):
            if znum.size:
                dist[:, c] += ((znum - proto_num[c]) ** 2).sum(axis=1)
            if xcat.size:
                dist[:, c] += gamma * (xcat != proto_cat[c]).sum(axis=1)
        new_assign = dist.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = assign == c
            if not members.any():
                continue  # empty cluster keeps its prototype
            if znum.size:
                proto_num[c] = znum[members].mean(axis=0)
            for jc, name in enumerate(cat_names):
                cats = train.column_schema(name).categories
                proto_cat[c, jc] = column_mode(xcat[members, jc], cats)

    # Per-cluster fill statistics in original units; empty clusters fall back
    # to global complete-case statistics.
    global_num = xnum.mean(axis=0) if xnum.size else np.empty(0)
    global_cat = [column_mode(xcat[:, jc], train.column_schema(name).categories)
                  for jc, name in enumerate(cat_names)]
    fill_num = np.tile(global_num, (k, 1)) if xnum.size else np.empty((k, 0))
    fill_cat = np.tile(np.array(global_cat, dtype=object), (k, 1)) if cat_names \
        else np.empty((k, 0), dtype=object)
    for c in range(k):
        members = assign == c
        if not members.any():
            continue
        if xnum.size:
            fill_num[c] = xnum[members].mean(axis=0)
        for jc, name in enumerate(cat_names):
            cats = train.column_schema(name).categories
            fill_cat[c, jc] = column_mode(xcat[members, jc], cats)

    state = {
        "num_names": num_names, "cat_names": cat_names,
        "means": means, "scales": scales, "gamma": gamma,
        "proto_num": proto_num, "proto_cat": proto_cat,
        "fill_num": fill_num, "fill_cat": fill_cat, "k": k,
    }
    return FittedImputer(CLUSTERING, state, {"k": k, "max_iter": max_iter},
                         seed, schema_fingerprint(train))


def _nearest_prototype(state, num_vals, num_obs, cat_vals, cat_obs) -> int:
    """Distance over observed fields only; ties go to the lowest cluster index."""
    k = state["k"]
    dist = np.zeros(k)
    if len(num_vals):
        z = (num_vals - state["means"]) / state["scales"]
        for c in range(k):
            dist[c] += ((z[num_obs] - state["proto_num"][c][num_obs]) ** 2).sum()
    if len(cat_vals):
        for c in range(k):
            dist[c] += state["gamma"] * sum(
                1 for jc in np.flatnonzero(cat_obs)
                if cat_vals[jc] != state["proto_cat"][c][jc])
    return int(dist.argmin())


# -- miss-forest ---------------------------------------------------------------------


def _initial_stats(train: Dataset) -> dict:
    stats = {}
    for j, name in enumerate(train.feature_names):
        col = train.column_schema(name)
        observed = ~train.null_mask[:, j]
        if not observed.any():
            raise UnfittableError(f"column {name!r} has no observed values")
        values = train.columns[name][observed]
        stats[name] = (lower_median(values) if col.kind == NUMERICAL
                       else column_mode(values, col.categories))
    return stats


def _encoded_matrix(d: Dataset, fills: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Numeric working matrix: floats as-is, categoricals as category indices."""
    n = d.n
    out = np.empty((n, len(d.feature_names)))
    for j, name in enumerate(d.feature_names):
        col = d.column_schema(name)
        arr = d.columns[name]
        if col.kind == NUMERICAL:
            out[:, j] = arr
        else:
            code = {c: i for i, c in enumerate(col.categories)}
            out[:, j] = [code[v] if v is not None else np.nan for v in arr]
    if fills:
        for name, values in fills.items():
            j = d.feature_index(name)
            out[d.null_mask[:, j], j] = values
    return out


def fit_miss_forest(train: Dataset, seed: int = 0, max_iter: int = 10,
                    tol: float = 1e-3, n_estimators: int = 100,
                    rf_params: dict | None = None) -> FittedImputer:
    """Iterative per-column random forests over initially median/mode-filled data.

    Columns are visited in ascending-missingness order. Iteration stops once
    the relative change of numerical fills and the flip fraction of
    categorical fills both drop below tol, or at max_iter. The forests from
    the final iteration are stored for single-pass transform.
    """
    if len(train.feature_names) < 2:
        raise UnfittableError("miss-forest needs at least 2 feature columns")
    init = _initial_stats(train)
    rf_params = dict(rf_params or {})

    miss_counts = train.null_mask.sum(axis=0)
    order = [name for _, name in sorted(
        (int(miss_counts[j]), name) for j, name in enumerate(train.feature_names)
        if miss_counts[j] > 0)]
    kinds = {name: train.column_schema(name).kind for name in train.feature_names}

    work = _encoded_matrix(train)
    for name in train.feature_names:
        j = train.feature_index(name)
        m = train.null_mask[:, j]
        if not m.any():
            continue
        col = train.column_schema(name)
        fill = init[name] if col.kind == NUMERICAL else col.categories.index(init[name])
        work[m, j] = fill

    forests: dict[str, object] = {}
    history = []
    prev_fills = {name: work[train.null_mask[:, train.feature_index(name)],
                             train.feature_index(name)].copy() for name in order}
    for iteration in range(max_iter):
        for ci, name in enumerate(order):
            j = train.feature_index(name)
            m = train.null_mask[:, j]
            others = [jj for jj in range(len(train.feature_names)) if jj != j]
            obs = ~m
            x_fit = work[obs][:, others]
            if kinds[name] == NUMERICAL:
                forest = RandomForestRegressor(
                    n_estimators=n_estimators,
                    random_state=_seed32(seed, iteration, ci), n_jobs=1, **rf_params)
                forest.fit(x_fit, work[obs, j])
            else:
                forest = RandomForestClassifier(
                    n_estimators=n_estimators,
                    random_state=_seed32(seed, iteration, ci), n_jobs=1, **rf_params)
                forest.fit(x_fit, work[obs, j].astype(int))
            pred = forest.predict(work[m][:, others])
            work[m, j] = pred
            forests[name] = forest

        num_change = 0.0
        num_norm = 0.0
        flips = 0
        cat_cells = 0
        for name in order:
            j = train.feature_index(name)
            new = work[train.null_mask[:, j], j]
            old = prev_fills[name]
            if kinds[name] == NUMERICAL:
                num_change += float(((new - old) ** 2).sum())
                num_norm += float((new ** 2).sum())
            else:
                flips += int((new != old).sum())
                cat_cells += len(new)
            prev_fills[name] = new.copy()
        rel_change = num_change / num_norm if num_norm > 0 else 0.0
        flip_frac = flips / cat_cells if cat_cells > 0 else 0.0
        history.append({"iteration": iteration + 1,
                        "numerical_rel_change": rel_change,
                        "categorical_flip_fraction": flip_frac})
        if rel_change < tol and flip_frac < tol:
            break

    state = {"init": init, "order": order, "forests": forests,
             "kinds": kinds, "history": history}
    hyper = {"max_iter": max_iter, "tol": tol, "n_estimators": n_estimators,
             "rf_params": rf_params}
    return FittedImputer(MISS_FOREST, state, hyper, seed, schema_fingerprint(train))


# -- transform -------------------------------------------------------------------------


def transform(f: FittedImputer, d: Dataset) -> ImputationResult:
    """Complete `d` using only parameters stored in `f`."""
    if f.kind == DELETION:
        return delete_rows(d)
    if f.fingerprint != schema_fingerprint(d):
        raise ContractError("dataset schema does not match the fitted imputer")
    if f.kind in (MEDIAN_MODE, MEDIAN_DUMMY):
        return _transform_statistical(f, d)
    if f.kind == CLUSTERING:
        return _transform_clustering(f, d)
    if f.kind == MISS_FOREST:
        return _transform_miss_forest(f, d)
    raise ConfigurationError(f"unknown imputer kind {f.kind!r}")


def _transform_statistical(f: FittedImputer, d: Dataset) -> ImputationResult:
    fills = {}
    for j, name in enumerate(d.feature_names):
        m = d.null_mask[:, j]
        if not m.any():
            continue
        constant = f.state["fills"][name]
        if d.column_schema(name).kind == NUMERICAL:
            fills[name] = np.full(int(m.sum()), float(constant))
        else:
            fills[name] = np.array([constant] * int(m.sum()), dtype=object)
    return ImputationResult(dataset=d.with_filled(fills), fill_values=fills)


def _transform_clustering(f: FittedImputer, d: Dataset) -> ImputationResult:
    st = f.state
    num_names, cat_names = st["num_names"], st["cat_names"]
    num_idx = {n: i for i, n in enumerate(num_names)}
    cat_idx = {n: i for i, n in enumerate(cat_names)}
    incomplete = np.flatnonzero(d.null_mask.any(axis=1))

    per_cell: dict[str, list] = {name: [] for name in d.feature_names}
    for i in incomplete:
        num_vals = np.array([d.columns[n][i] for n in num_names], dtype=float)
        cat_vals = np.array([d.columns[n][i] for n in cat_names], dtype=object)
        num_obs = ~np.isnan(num_vals) if len(num_vals) else np.zeros(0, bool)
        cat_obs = np.array([v is not None for v in cat_vals], dtype=bool)
        c = _nearest_prototype(st, num_vals, num_obs, cat_vals, cat_obs)
        for name in d.feature_names:
            j = d.feature_index(name)
            if not d.null_mask[i, j]:
                continue
            if name in num_idx:
                per_cell[name].append(float(st["fill_num"][c, num_idx[name]]))
            else:
                per_cell[name].append(st["fill_cat"][c, cat_idx[name]])

    fills = {}
    for name, values in per_cell.items():
        if not values:
            continue
        kind = d.column_schema(name).kind
        fills[name] = (np.array(values, dtype=float) if kind == NUMERICAL
                       else np.array(values, dtype=object))
    return ImputationResult(dataset=d.with_filled(fills), fill_values=fills)


def _transform_miss_forest(f: FittedImputer, d: Dataset) -> ImputationResult:
    st = f.state
    init_fill = {}
    for name in d.feature_names:
        j = d.feature_index(name)
        m = d.null_mask[:, j]
        if not m.any():
            continue
        col = d.column_schema(name)
        v = st["init"][name]
        init_fill[name] = np.full(int(m.sum()),
                                  float(v) if col.kind == NUMERICAL
                                  else col.categories.index(v))
    work = _encoded_matrix(d, init_fill)

    # One pass through the stored column order; no re-fitting on d. Columns
    # that were complete at fit time have no forest and keep their init fill.
    for name in st["order"]:
        if name not in st["forests"]:
            continue
        j = d.feature_index(name)
        m = d.null_mask[:, j]
        if not m.any():
            continue
        others = [jj for jj in range(len(d.feature_names)) if jj != j]
        work[m, j] = st["forests"][name].predict(work[m][:, others])

    fills = {}
    for name in d.feature_names:
        j = d.feature_index(name)
        m = d.null_mask[:, j]
        if not m.any():
            continue
        col = d.column_schema(name)
        if col.kind == NUMERICAL:
            fills[name] = work[m, j]
        else:
            codes = np.clip(np.round(work[m, j]).astype(int), 0, len(col.categories) - 1)
            fills[name] = np.array([col.categories[c] for c in codes], dtype=object)
    return ImputationResult(dataset=d.with_filled(fills), fill_values=fills)


# -- fitting front door and serialization -------------------------------------------------


def fit(train: Dataset, kind: str, seed: int = 0, **hyper) -> FittedImputer:
    if kind == DELETION:
        return FittedImputer(DELETION, {}, {}, seed, schema_fingerprint(train))
    if kind in (MEDIAN_MODE, MEDIAN_DUMMY):
        return fit_statistical(train, kind, seed=seed)
    if kind == CLUSTERING:
        return fit_clustering(train, seed=seed, **hyper)
    if kind == MISS_FOREST:
        return fit_miss_forest(train, seed=seed, **hyper)
    raise ConfigurationError(f"unknown imputer kind {kind!r}")


def _canonical_pickle(obj) -> bytes:
    """Pickle at its fixed point: one load/dump round trip normalizes object
    sharing, so serialize(deserialize(b)) == b."""
    return pickle.dumps(pickle.loads(pickle.dumps(obj, protocol=5)), protocol=5)


def to_bytes(f: FittedImputer) -> bytes:
    buf = io.BytesIO()
    header = {"format": SERIAL_FORMAT, "version": SERIAL_VERSION, "kind": f.kind}
    pickle.dump(header, buf, protocol=5)
    buf.write(_canonical_pickle(f))
    return buf.getvalue()


def from_bytes(data: bytes) -> FittedImputer:
    buf = io.BytesIO(data)
    header = pickle.load(buf)
    if header.get("format") != SERIAL_FORMAT:
        raise ContractError("not a serialized imputer")
    if header.get("version") != SERIAL_VERSION:
        raise ContractError(f"unsupported imputer format version {header.get('version')}")
    return pickle.load(buf)


def save(f: FittedImputer, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(f))


def load(path) -> FittedImputer:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
