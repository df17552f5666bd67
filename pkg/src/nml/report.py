"""Markdown report with embedded tables and static SVG charts built from stage artifacts."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data_model import read_csv_columns  # noqa: E402
from .variables import INDEX, TARGET  # noqa: E402

plt.rcParams.update({"svg.hashsalt": "nml-report", "svg.fonttype": "none", "figure.dpi": 100,
                     "font.size": 9})


def _rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        r = list(csv.reader(fh))
    return r[0], r[1:]


def _short(cell: str) -> str:
    try:
        v = float(cell)
    except ValueError:
        return cell
    if cell.strip().lstrip("-").isdigit():
        return cell
    return f"{v:.4g}"


def md_table(path, limit: int | None = None) -> str:
    header, rows = _rows(path)
    if limit is not None:
        rows = rows[:limit]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(_short(c) for c in r) + " |" for r in rows]
    return "\n".join(lines)


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_index_and_target(out: Path, path) -> None:
    dates, cols = read_csv_columns(out / "index" / "panel.csv")
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(dates, cols[INDEX], lw=0.8, color="tab:blue", label=INDEX)
    ax.set_ylabel(INDEX)
    ax2 = ax.twinx()
    ax2.plot(dates, cols[TARGET], lw=0.6, color="tab:orange", alpha=0.7, label=f"{TARGET} return")
    ax2.set_ylabel(f"{TARGET} weekly log return")
    ax.set_title("Weekly policy-stance index and target return")
    _save(fig, path)


def plot_event_study(out: Path, path) -> None:
    header, rows = _rows(out / "index" / "event_study.csv")
    fig, ax = plt.subplots(figsize=(6, 3))
    for regime in sorted({r[0] for r in rows}):
        sel = [r for r in rows if r[0] == regime]
        k = np.array([int(r[1]) for r in sel])
        m = np.array([float(r[2]) if r[2] else np.nan for r in sel])
        s = np.array([float(r[3]) if r[3] else np.nan for r in sel])
        ax.plot(k, m, marker="o", ms=3, label=f"{regime} (n={sel[0][4]})")
        ax.fill_between(k, m - s, m + s, alpha=0.15)
    ax.axvline(0, color="k", lw=0.5)
    ax.set_xlabel("weeks relative to meeting")
    ax.set_ylabel(INDEX)
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_regime_boxes(out: Path, path) -> None:
    dates, cols = read_csv_columns(out / "index" / "panel.csv")
    ret = dict(zip(dates.tolist(), cols[TARGET]))
    _, rows = _rows(out / "index" / "regimes.csv")
    fig, axes = plt.subplots(1, 2, figsize=(8, 3))
    for ax, col, title in ((axes[0], 2, f"{INDEX} regimes"), (axes[1], 4, "rate regimes")):
        groups = {}
        for r in rows:
            if r[col]:
                groups.setdefault(r[col], []).append(ret[np.datetime64(r[0], "D").tolist()])
        names = sorted(groups)
        ax.boxplot([groups[n] for n in names], showfliers=False)
        ax.set_xticks(range(1, len(names) + 1), [f"{n}\n(n={len(groups[n])})" for n in names])
        ax.set_title(title)
        ax.set_ylabel(f"{TARGET} return")
    _save(fig, path)


def plot_imfs(out: Path, path) -> None:
    dates, cols = read_csv_columns(out / "vmd" / f"imfs_{TARGET}.csv")
    names = sorted(cols)
    fig, axes = plt.subplots(len(names), 1, figsize=(8, 1.6 * len(names)), sharex=True)
    for ax, n in zip(np.atleast_1d(axes), names):
        ax.plot(dates, cols[n], lw=0.7)
        ax.set_ylabel(n.upper())
    np.atleast_1d(axes)[0].set_title(f"{TARGET} modes")
    _save(fig, path)


def plot_temporal_profile(out: Path, path, top: int = 4) -> None:
    _, g = _rows(out / "explain" / "global.csv")
    feats = [r[1] for r in g[:top]]
    _, rows = _rows(out / "explain" / "temporal_profile.csv")
    fig, ax = plt.subplots(figsize=(6, 3))
    for f in feats:
        sel = [r for r in rows if r[0] == f]
        lag = np.array([int(r[1]) for r in sel])
        m = np.array([float(r[2]) for r in sel])
        s = np.array([float(r[3]) if r[3] else 0.0 for r in sel])
        ax.plot(lag, m, marker="o", ms=3, label=f)
        ax.fill_between(lag, np.maximum(m - s, 0), m + s, alpha=0.15)
    ax.set_xlabel("lag (weeks before forecast origin)")
    ax.set_ylabel("mean |SHAP|")
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_interaction(out: Path, path) -> None:
    _, pts = _rows(out / "explain" / "interaction_points.csv")
    _, slopes = _rows(out / "explain" / "interaction.csv")
    fit = {r[0]: r for r in slopes if r[2]}
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for regime in sorted({p[0] for p in pts}):
        sel = [p for p in pts if p[0] == regime]
        x = np.array([float(p[1]) for p in sel])
        y = np.array([float(p[2]) for p in sel])
        e = np.array([float(p[3]) for p in sel])
        ax.errorbar(x, y, yerr=e, fmt="o", ms=3, lw=0.5, label=regime or "unlabelled")
        if regime in fit and fit[regime][5] == "true":
            xs = np.linspace(x.min(), x.max(), 2)
            ax.plot(xs, float(fit[regime][3]) + float(fit[regime][2]) * xs, lw=1)
    if "All" in fit and fit["All"][5] == "true":
        xs = np.array([min(float(p[1]) for p in pts), max(float(p[1]) for p in pts)])
        ax.plot(xs, float(fit["All"][3]) + float(fit["All"][2]) * xs, "k--", lw=1, label="all")
    ax.set_xlabel(f"{INDEX} (window mean)")
    ax.set_ylabel(f"SHAP of {INDEX}")
    ax.legend(fontsize=7)
    _save(fig, path)


FIGURES = (
    ("index_and_target.svg", plot_index_and_target),
    ("event_study.svg", plot_event_study),
    ("regime_returns.svg", plot_regime_boxes),
    ("target_modes.svg", plot_imfs),
    ("temporal_profile.svg", plot_temporal_profile),
    ("interaction.svg", plot_interaction),
)


def render_report(out: Path, dest: Path) -> Path:
    out, dest = Path(out), Path(dest)
    for name, fn in FIGURES:
        fn(out, dest / name)
    parts = [
        "# Pipeline report", "",
        f"Target: `{TARGET}` weekly log return. Index: `{INDEX}`.", "",
        "## Stance distribution", "", md_table(out / "classify" / "stance_counts.csv"), "",
        "![index](index_and_target.svg)", "",
        "## Meeting event study", "", "![events](event_study.svg)", "",
        "## Descriptive statistics", "", md_table(out / "stats" / "descriptive.csv"), "",
        "## Return distribution by regime", "", md_table(out / "stats" / "regime_tests.csv"), "",
        "![regimes](regime_returns.svg)", "",
        "## Granger causality p-values (lags 1-6)", "",
        "`**` p < 0.05, `*` p < 0.10.", "", md_table(out / "granger" / "lag_table.csv"), "",
        "## Mode-level Granger scan (p < 0.05)", "", md_table(out / "vmd" / "scan.csv", limit=40), "",
        "![modes](target_modes.svg)", "",
        "## Forecast accuracy against ARIMA", "", md_table(out / "forecast" / "accuracy.csv"), "",
        "## Per-run reports", "", md_table(out / "forecast" / "run_report.csv"), "",
        "## Global attribution ranking", "", md_table(out / "explain" / "global.csv"), "",
        "## Top feature-lag cells", "", md_table(out / "explain" / "feature_lag.csv", limit=20), "",
        "![profile](temporal_profile.svg)", "",
        "## Attribution against index value by rate regime", "", md_table(out / "explain" / "interaction.csv"), "",
        "![interaction](interaction.svg)", "",
    ]
    path = dest / "report.md"
    path.write_text("\n".join(parts))
    return path
