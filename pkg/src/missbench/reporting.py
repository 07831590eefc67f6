"""Aggregation and reporting: summary tables (median + quartiles across seeds),
per-figure data files, rendered figures, and the Spearman correlation matrix.

The report path writes delimited CSVs and PNG figures side by side.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .errors import ConfigurationError
from .metrics import spearman, tprd_reversed

MODEL_METRICS = ("f1", "accuracy", "label_stability", "tprd", "tnrd", "srd", "di")
IMPUTATION_METRICS = ("rmse_imp", "f1_imp", "kl_imp_cols", "kl_full",
                      "rmse_imp_diff", "f1_imp_diff", "kl_imp_cols_diff", "kl_full_diff")
ALL_METRICS = MODEL_METRICS + IMPUTATION_METRICS

DEFAULT_GROUP_BY = ("dataset", "scenario", "imputer", "model")
DEFAULT_CORR_METRICS = ("f1", "label_stability", "tprd_reversed", "tnrd_reversed", "srd", "di")


def records_to_frame(records) -> pd.DataFrame:
    """One row per (record, test set report), spec fields flattened.

    Clean baselines appear with scenario 'clean', imputer 'none', and a NaN
    test rate.
    """
    rows = []
    for rec in records:
        if rec.get("status") != "ok":
            continue
        spec = rec["spec"]
        base = {
            "guid": rec["guid"],
            "dataset": spec["dataset"],
            "scenario": spec["scenario"] or "clean",
            "baseline": spec["scenario"] is None,
            "train_rate": spec["train_rate"],
            "imputer": spec["imputer"] or "none",
            "model": spec["model"],
            "seed": spec["seed"],
            "b": spec["b"],
        }
        for report in rec["reports"]:
            rate = report["test_rate"]
            row = dict(base)
            row["test_rate"] = np.nan if rate == "clean" else float(rate)
            row["n_test"] = report["n_test"]
            for k, v in report["metrics"].items():
                row[k] = np.nan if v is None else v
            rows.append(row)
    return pd.DataFrame(rows)


def aggregate_report(records, group_by=DEFAULT_GROUP_BY) -> pd.DataFrame:
    """Long-format medians and quartiles per metric across the grouped records."""
    frame = records_to_frame(records)
    if frame.empty:
        raise ConfigurationError("no successful records to aggregate")
    group_by = [k for k in group_by if k in frame.columns]
    if not group_by:
        raise ConfigurationError("no usable group-by keys")

    out = []
    metric_cols = [m for m in ALL_METRICS if m in frame.columns]
    for keys, sub in frame.groupby(group_by, dropna=False):
        keys = keys if isinstance(keys, tuple) else (keys,)
        for metric in metric_cols:
            values = sub[metric].dropna().to_numpy()
            if len(values) == 0:
                continue
            row = dict(zip(group_by, keys))
            row.update({
                "metric": metric,
                "median": float(np.median(values)),
                "q25": float(np.percentile(values, 25)),
                "q75": float(np.percentile(values, 75)),
                "n": int(len(values)),
            })
            out.append(row)
    summary = pd.DataFrame(out)

    # Clean-baseline medians for model metrics, joined per (dataset, model).
    if {"dataset", "model"} <= set(group_by):
        base = frame[frame["baseline"]]
        if not base.empty:
            rows = []
            for (ds, mdl), sub in base.groupby(["dataset", "model"]):
                for metric in MODEL_METRICS:
                    vals = sub[metric].dropna().to_numpy()
                    if len(vals):
                        rows.append({"dataset": ds, "model": mdl, "metric": metric,
                                     "clean_median": float(np.median(vals))})
            if rows:
                summary = summary.merge(pd.DataFrame(rows),
                                        on=["dataset", "model", "metric"], how="left")
    return summary


def write_report(records, outdir, group_by=DEFAULT_GROUP_BY,
                 figure_metrics=("f1", "tprd", "label_stability")) -> dict:
    """Emit summary.csv, per-figure data CSVs, and PNG figures under outdir."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = aggregate_report(records, group_by)
    paths = {"summary": outdir / "summary.csv"}
    summary.to_csv(paths["summary"], index=False)

    for metric in figure_metrics:
        sub = summary[(summary["metric"] == metric) & (summary["imputer"] != "none")] \
            if "imputer" in summary.columns else pd.DataFrame()
        if sub.empty:
            continue
        pivot = sub.pivot_table(index=["dataset", "scenario"], columns="imputer",
                                values="median", aggfunc="median")
        data_path = outdir / f"fig_{metric}.csv"
        pivot.to_csv(data_path)
        paths[f"fig_{metric}_data"] = data_path
        fig_path = outdir / f"fig_{metric}.png"
        _render_metric_figure(summary, metric, fig_path)
        paths[f"fig_{metric}"] = fig_path
    return paths


def _render_metric_figure(summary: pd.DataFrame, metric: str, path: Path):
    """Grouped bars: datasets on x, imputers as colors, one panel per scenario,
    with the clean-baseline median drawn as a reference line."""
    sub = summary[(summary["metric"] == metric) & (summary["imputer"] != "none")]
    scenarios = sorted(sub["scenario"].unique())
    datasets = sorted(sub["dataset"].unique())
    imputers = sorted(sub["imputer"].unique())
    fig, axes = plt.subplots(len(scenarios), 1,
                             figsize=(max(6, 1.8 * len(datasets) * max(1, len(imputers) // 2)),
                                      2.6 * len(scenarios)),
                             squeeze=False, sharex=True)
    width = 0.8 / max(1, len(imputers))
    xs = np.arange(len(datasets))
    for ax_row, scenario in zip(axes[:, 0], scenarios):
        panel = sub[sub["scenario"] == scenario]
        for k, imp in enumerate(imputers):
            vals = [panel[(panel["dataset"] == ds) & (panel["imputer"] == imp)]["median"]
                    for ds in datasets]
            heights = [v.iloc[0] if len(v) else np.nan for v in vals]
            ax_row.bar(xs + (k - len(imputers) / 2 + 0.5) * width, heights, width, label=imp)
        if "clean_median" in panel.columns:
            for i, ds in enumerate(datasets):
                ref = panel[panel["dataset"] == ds]["clean_median"].dropna()
                if len(ref):
                    ax_row.hlines(ref.iloc[0], i - 0.45, i + 0.45,
                                  colors="tab:blue", linestyles="--", linewidth=1.2)
        ax_row.set_ylabel(metric)
        ax_row.set_title(scenario, fontsize=9)
    axes[-1, 0].set_xticks(xs)
    axes[-1, 0].set_xticklabels(datasets, rotation=20)
    axes[0, 0].legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# -- correlation analysis --------------------------------------------------------------


def correlation_frame(records, metric_names=DEFAULT_CORR_METRICS) -> pd.DataFrame:
    """Indicator and metric columns for the Spearman analysis.

    Imputer and model identities become one-hot indicators; TPRD/TNRD enter
    as their reversed (closeness-to-fair) transforms. Baselines are excluded.
    """
    frame = records_to_frame(records)
    frame = frame[~frame["baseline"]] if not frame.empty else frame
    if len(frame) < 3:
        raise ConfigurationError("correlation needs at least 3 non-baseline records")
    out = pd.DataFrame(index=frame.index)
    for imp in sorted(frame["imputer"].unique()):
        out[f"imputer_{imp}"] = (frame["imputer"] == imp).astype(float)
    for mdl in sorted(frame["model"].unique()):
        out[f"model_{mdl}"] = (frame["model"] == mdl).astype(float)
    for metric in metric_names:
        if metric == "tprd_reversed":
            out[metric] = frame["tprd"].map(lambda v: tprd_reversed(v) if pd.notna(v) else np.nan)
        elif metric == "tnrd_reversed":
            out[metric] = frame["tnrd"].map(lambda v: tprd_reversed(v) if pd.notna(v) else np.nan)
        elif metric in frame.columns:
            out[metric] = frame[metric]
    return out


def correlate(records, metric_names=DEFAULT_CORR_METRICS) -> pd.DataFrame:
    """Pairwise Spearman matrix over indicators and metrics; NaN marks
    undefined cells (constant columns)."""
    data = correlation_frame(records, metric_names)
    cols = list(data.columns)
    matrix = pd.DataFrame(np.nan, index=cols, columns=cols)
    for i, a in enumerate(cols):
        for b in cols[i:]:
            pair = data[[a, b]].dropna()
            if len(pair) < 3:
                continue
            rho = spearman(pair[a].to_numpy(), pair[b].to_numpy())
            if rho is not None:
                matrix.loc[a, b] = matrix.loc[b, a] = rho
    return matrix


def write_correlation(records, outdir, metric_names=DEFAULT_CORR_METRICS) -> dict:
    """Emit correlation.csv and a heatmap PNG under outdir."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    matrix = correlate(records, metric_names)
    csv_path = outdir / "correlation.csv"
    matrix.to_csv(csv_path)

    fig, ax = plt.subplots(figsize=(1.5 + 0.5 * len(matrix), 1.2 + 0.5 * len(matrix)))
    im = ax.imshow(matrix.to_numpy(dtype=float), vmin=-1, vmax=1, cmap="RdBu_r")
    ax.set_xticks(range(len(matrix)))
    ax.set_xticklabels(matrix.columns, rotation=90, fontsize=7)
    ax.set_yticks(range(len(matrix)))
    ax.set_yticklabels(matrix.index, fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    png_path = outdir / "correlation.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return {"csv": csv_path, "figure": png_path}
