"""Evaluation mathematics: imputation quality and fairness, model correctness,
group fairness, bootstrap label stability, and Spearman correlation.

All functions are pure and operate on numpy arrays / Dataset objects.
Undefined quantities (empty groups, zero denominators) are reported as None,
never silently coerced to 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .dataset import CATEGORICAL, Dataset, GroupSpec, NUMERICAL, dis_mask
from .errors import EvaluationError

KL_SMOOTHING = 1e-9
KDE_GRID_POINTS = 1000
KDE_DENSITY_FLOOR = 1e-12


# -- imputation quality ---------------------------------------------------------


def rmse_imputed(true: Dataset, imputed: Dataset, injected_mask: np.ndarray,
                 rows=None) -> dict:
    """Per-column RMSE over injected numerical cells, plus their mean.

    Columns with no injected cells (within `rows`) are omitted, not zero.
    """
    rows = _row_selector(true.n, rows)
    per_column = {}
    for j, name in enumerate(true.feature_names):
        if true.column_schema(name).kind != NUMERICAL:
            continue
        m = injected_mask[:, j] & rows
        if not m.any():
            continue
        diff = true.columns[name][m] - imputed.columns[name][m]
        per_column[name] = float(np.sqrt(np.mean(diff ** 2)))
    agg = float(np.mean(list(per_column.values()))) if per_column else None
    return {"per_column": per_column, "aggregate": agg}


def macro_f1(y_true, y_pred) -> float:
    """Macro-averaged F1 over the classes present in truth or prediction."""
    y_true = np.asarray(y_true, dtype=object)
    y_pred = np.asarray(y_pred, dtype=object)
    classes = list(dict.fromkeys(list(y_true) + list(y_pred)))
    scores = []
    for c in classes:
        tp = int(np.sum((y_true == c) & (y_pred == c)))
        fp = int(np.sum((y_true != c) & (y_pred == c)))
        fn = int(np.sum((y_true == c) & (y_pred != c)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * precision * recall / (precision + recall)
                      if precision + recall else 0.0)
    return float(np.mean(scores))


def f1_imputed(true: Dataset, imputed: Dataset, injected_mask: np.ndarray,
               rows=None) -> dict:
    """Per-column macro-F1 over injected categorical cells, plus their mean."""
    rows = _row_selector(true.n, rows)
    per_column = {}
    for j, name in enumerate(true.feature_names):
        if true.column_schema(name).kind != CATEGORICAL:
            continue
        m = injected_mask[:, j] & rows
        if not m.any():
            continue
        per_column[name] = macro_f1(true.columns[name][m], imputed.columns[name][m])
    agg = float(np.mean(list(per_column.values()))) if per_column else None
    return {"per_column": per_column, "aggregate": agg}


def kl_categorical(true_col, imputed_col) -> float:
    """KL(P_true || P_imputed) in nats over normalized value frequencies.

    Distributions get 1e-9 additive smoothing and renormalization, so a
    category absent from one side yields a large finite value, not infinity.
    """
    true_col = list(true_col)
    imputed_col = list(imputed_col)
    if not true_col or not imputed_col:
        raise EvaluationError("kl_categorical needs non-empty columns")
    support = list(dict.fromkeys(true_col + imputed_col))
    p = np.array([true_col.count(c) for c in support], dtype=float) / len(true_col)
    q = np.array([imputed_col.count(c) for c in support], dtype=float) / len(imputed_col)
    p = (p + KL_SMOOTHING) / (p + KL_SMOOTHING).sum()
    q = (q + KL_SMOOTHING) / (q + KL_SMOOTHING).sum()
    return float(np.sum(p * np.log(p / q)))


def _kde_on_grid(sample: np.ndarray, grid: np.ndarray, bandwidth: float) -> np.ndarray:
    z = (grid[:, None] - sample[None, :]) / bandwidth
    dens = np.exp(-0.5 * z ** 2).mean(axis=1) / (bandwidth * np.sqrt(2 * np.pi))
    return dens


def scott_bandwidth(sample: np.ndarray) -> float:
    """Scott's rule with population std: sigma * n^(-1/5)."""
    return float(np.std(sample) * len(sample) ** (-0.2))


def kl_numerical(true_col, imputed_col) -> float:
    """Grid-discretized KL(P_true || P_imputed) between Gaussian KDEs, in nats.

    Both densities are evaluated at 1000 equally spaced points spanning the
    union of supports padded by 3 bandwidths, floored at 1e-12, renormalized,
    then summed as sum(p * ln(p/q)) * dx.
    """
    p_sample = np.asarray(true_col, dtype=float)
    q_sample = np.asarray(imputed_col, dtype=float)
    for name, s in (("true", p_sample), ("imputed", q_sample)):
        if len(np.unique(s)) < 2:
            raise EvaluationError(f"degenerate distribution: {name} column is single-valued")
    h_p = scott_bandwidth(p_sample)
    h_q = scott_bandwidth(q_sample)
    h = max(h_p, h_q)
    lo = min(p_sample.min(), q_sample.min()) - 3 * h
    hi = max(p_sample.max(), q_sample.max()) + 3 * h
    grid = np.linspace(lo, hi, KDE_GRID_POINTS)
    dx = grid[1] - grid[0]
    p = np.maximum(_kde_on_grid(p_sample, grid, h_p), KDE_DENSITY_FLOOR)
    q = np.maximum(_kde_on_grid(q_sample, grid, h_q), KDE_DENSITY_FLOOR)
    p /= p.sum() * dx
    q /= q.sum() * dx
    return float(np.sum(p * np.log(p / q)) * dx)


def kl_imputed(true: Dataset, imputed: Dataset, injected_mask: np.ndarray,
               rows=None) -> dict:
    """Per-column KL over full column values, aggregated two ways.

    `imputed_columns` averages over columns that received injected cells;
    `all_columns` averages over every feature column.
    """
    rows = _row_selector(true.n, rows)
    per_column = {}
    injected_cols = []
    for j, name in enumerate(true.feature_names):
        kind = true.column_schema(name).kind
        t = true.columns[name][rows]
        m = imputed.columns[name][rows]
        try:
            kl = (kl_numerical(t, m) if kind == NUMERICAL else kl_categorical(t, m))
        except EvaluationError:
            kl = None
        per_column[name] = kl
        if (injected_mask[:, j] & rows).any():
            injected_cols.append(name)
    defined = lambda names: [per_column[n] for n in names if per_column[n] is not None]
    imp_vals = defined(injected_cols)
    all_vals = defined(true.feature_names)
    return {
        "per_column": per_column,
        "imputed_columns": float(np.mean(imp_vals)) if imp_vals else None,
        "all_columns": float(np.mean(all_vals)) if all_vals else None,
    }


def imputation_fairness(true: Dataset, imputed: Dataset, injected_mask: np.ndarray,
                        group: GroupSpec) -> dict:
    """priv-minus-dis differences of the imputation quality metrics."""
    dm = dis_mask(true, group)
    out = {}
    for key, sel in (("priv", ~dm), ("dis", dm)):
        if not sel.any():
            out[key] = None
            continue
        out[key] = {
            "rmse": rmse_imputed(true, imputed, injected_mask, sel)["aggregate"],
            "f1": f1_imputed(true, imputed, injected_mask, sel)["aggregate"],
            "kl_imputed_columns": kl_imputed(true, imputed, injected_mask, sel)["imputed_columns"],
            "kl_all_columns": kl_imputed(true, imputed, injected_mask, sel)["all_columns"],
        }

    def diff(metric):
        if out["priv"] is None or out["dis"] is None:
            return None
        a, b = out["priv"][metric], out["dis"][metric]
        return None if a is None or b is None else a - b

    return {
        "priv": out["priv"],
        "dis": out["dis"],
        "rmse_diff": diff("rmse"),
        "f1_diff": diff("f1"),
        "kl_imputed_columns_diff": diff("kl_imputed_columns"),
        "kl_all_columns_diff": diff("kl_all_columns"),
    }


# -- model correctness ------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(y_true, y_pred) -> ConfusionCounts:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    return ConfusionCounts(
        tp=int(np.sum((y_true == 1) & (y_pred == 1))),
        fp=int(np.sum((y_true == 0) & (y_pred == 1))),
        tn=int(np.sum((y_true == 0) & (y_pred == 0))),
        fn=int(np.sum((y_true == 1) & (y_pred == 0))),
    )


def model_scores(y_true, y_pred) -> dict:
    """Binary F1 (positive class = 1) and accuracy.

    With zero predicted and zero actual positives, F1 is reported as 0 and
    flagged via `f1_degenerate`.
    """
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if len(y_true) != len(y_pred) or len(y_true) == 0:
        raise EvaluationError("model_scores needs equal-length, non-empty label vectors")
    c = confusion(y_true, y_pred)
    accuracy = (c.tp + c.tn) / c.n
    degenerate = (c.tp + c.fp == 0) and (c.tp + c.fn == 0)
    if degenerate:
        f1 = 0.0
    else:
        precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
        recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"f1": float(f1), "accuracy": float(accuracy), "f1_degenerate": degenerate}


# -- stability ---------------------------------------------------------------------


def label_stability(prediction_matrix) -> dict:
    """Per-sample |B+ - B-| / B over a (B, N) binary prediction matrix."""
    m = np.asarray(prediction_matrix)
    if m.ndim != 2 or m.shape[0] < 1:
        raise EvaluationError("prediction matrix must be (B, N) with B >= 1")
    if not np.isin(m, (0, 1)).all():
        raise EvaluationError("prediction matrix entries must be binary")
    b = m.shape[0]
    b_pos = m.sum(axis=0)
    per_sample = np.abs(b_pos - (b - b_pos)) / b
    return {"per_sample": per_sample, "mean": float(per_sample.mean())}


# -- group fairness ------------------------------------------------------------------


def fairness_scores(y_true, y_pred, group_labels) -> dict:
    """TPRD, TNRD, SRD (dis minus priv) and DI (dis/priv selection-rate ratio).

    A metric whose denominator is undefined for either group is None; an
    empty group makes all four None.
    """
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    groups = np.asarray(group_labels)
    out = {"tprd": None, "tnrd": None, "srd": None, "di": None}
    sel_dis = groups == "dis"
    sel_priv = groups == "priv"
    if not sel_dis.any() or not sel_priv.any():
        return out

    def rates(sel):
        c = confusion(y_true[sel], y_pred[sel])
        tpr = c.tp / (c.tp + c.fn) if c.tp + c.fn else None
        tnr = c.tn / (c.tn + c.fp) if c.tn + c.fp else None
        sr = (c.tp + c.fp) / c.n
        return tpr, tnr, sr

    tpr_d, tnr_d, sr_d = rates(sel_dis)
    tpr_p, tnr_p, sr_p = rates(sel_priv)
    if tpr_d is not None and tpr_p is not None:
        out["tprd"] = float(tpr_d - tpr_p)
    if tnr_d is not None and tnr_p is not None:
        out["tnrd"] = float(tnr_d - tnr_p)
    out["srd"] = float(sr_d - sr_p)
    out["di"] = float(sr_d / sr_p) if sr_p > 0 else None
    return out


# -- correlation ------------------------------------------------------------------


def spearman(x, y) -> float | None:
    """Spearman rho: Pearson correlation of average ranks; None for constants."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 3:
        raise EvaluationError("spearman needs two equal-length vectors of length >= 3")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return None
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    return float(np.corrcoef(rx, ry)[0, 1])


def tprd_reversed(value: float) -> float:
    """Fairness-as-closeness transform: 1 - |difference|."""
    return 1.0 - abs(value)


tnrd_reversed = tprd_reversed


# -- helpers -------------------------------------------------------------------------


def _row_selector(n: int, rows) -> np.ndarray:
    if rows is None:
        return np.ones(n, dtype=bool)
    rows = np.asarray(rows, dtype=bool)
    if rows.shape != (n,):
        raise EvaluationError(f"row selector shape {rows.shape} != ({n},)")
    return rows
