"""KernelSHAP attributions over (lag, feature) cells, their aggregations and the
regime-conditional slope of attribution on the index value."""

from __future__ import annotations

import csv
import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special, stats

from .data_model import SeriesError


class SingularSystemError(SeriesError):
    pass


@dataclass
class ShapResult:
    phi: np.ndarray  # same shape as the instance
    phi0: float
    fx: float
    n_coalitions: int
    exact: bool

    @property
    def additivity_residual(self) -> float:
        return float(abs(self.phi0 + self.phi.sum() - self.fx))


def default_nsamples(M: int) -> int:
    return 2 * M + 512


def shapley_kernel(M: int, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return (M - 1) / (special.comb(M, s) * s * (M - s))


def _enumerate_all(M: int) -> tuple[np.ndarray, np.ndarray]:
    rows = np.array(list(itertools.product([0, 1], repeat=M)), dtype=bool)
    sizes = rows.sum(axis=1)
    rows = rows[(sizes > 0) & (sizes < M)]
    return rows, shapley_kernel(M, rows.sum(axis=1))


def _sample_coalitions(M: int, nsamples: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Size-stratified paired sampling: sizes whose subsets fit in the remaining budget
    are enumerated with exact kernel mass; the rest are drawn in complementary pairs."""
    n_sizes = int(np.ceil((M - 1) / 2.0))
    n_paired = int(np.floor((M - 1) / 2.0))
    size_w = np.array([(M - 1) / (s * (M - s)) for s in range(1, n_sizes + 1)])
    size_w[:n_paired] *= 2
    size_w /= size_w.sum()
    masks: list[np.ndarray] = []
    weights: list[float] = []
    remaining = nsamples
    left_w = size_w.copy()
    done = 0
    for k, s in enumerate(range(1, n_sizes + 1)):
        paired = k < n_paired
        count = math.comb(M, s) * (2 if paired else 1)
        share = left_w[k] / left_w[k:].sum()
        if remaining * share + 1e-9 < count:
            break
        w_each = size_w[k] / count
        for idx in itertools.combinations(range(M), s):
            m = np.zeros(M, dtype=bool)
            m[list(idx)] = True
            masks.append(m)
            weights.append(w_each)
            if paired:
                masks.append(~m)
                weights.append(w_each)
        remaining -= count
        done = k + 1
    mass_left = size_w[done:].sum()
    if done < n_sizes and remaining > 0:
        probs = size_w[done:] / mass_left
        seen: dict[bytes, int] = {}
        n_draw = remaining // 2 * 2 or remaining
        drawn = []
        for _ in range(n_draw // 2 if n_draw > 1 else 1):
            s = done + 1 + int(rng.choice(probs.size, p=probs))
            m = np.zeros(M, dtype=bool)
            m[rng.choice(M, size=s, replace=False)] = True
            drawn.extend([m, ~m] if (s - 1) < n_paired else [m])
        w_each = mass_left / len(drawn)
        for m in drawn:
            key = m.tobytes()
            if key in seen:
                weights[seen[key]] += w_each
            else:
                seen[key] = len(masks)
                masks.append(m)
                weights.append(w_each)
    return np.array(masks, dtype=bool).reshape(-1, M), np.asarray(weights)


def _masked_means(predict, x: np.ndarray, background: np.ndarray, masks: np.ndarray, shape: tuple,
                  chunk: int = 8192) -> np.ndarray:
    """Average model output over the background with players outside each coalition replaced."""
    B = background.shape[0]
    out = np.empty(masks.shape[0])
    per = max(1, chunk // B)
    for s in range(0, masks.shape[0], per):
        m = masks[s:s + per]
        batch = np.where(m[:, None, :], x[None, None, :], background[None, :, :])
        y = np.asarray(predict(batch.reshape(-1, *shape)), dtype=float)
        out[s:s + per] = y.reshape(m.shape[0], B).mean(axis=1)
    return out


def kernel_shap(predict: Callable[[np.ndarray], np.ndarray], background, instance,
                nsamples: int | None = None, seed: int = 0) -> ShapResult:
    """Shapley values of every cell of ``instance`` for a batch predictor.

    ``predict`` maps an array of shape (k, *instance.shape) to k outputs. The base
    value is the mean prediction over ``background``. Coalitions are enumerated
    exactly when ``2**M - 2 <= nsamples``; otherwise they are sampled. The
    weighted least-squares solve enforces ``phi0 + sum(phi) == f(instance)``.
    """
    x = np.asarray(instance, dtype=float)
    bg = np.asarray(background, dtype=float)
    if bg.ndim == x.ndim:
        bg = bg[None]
    if bg.shape[1:] != x.shape or bg.shape[0] < 1:
        raise SeriesError("kernel_shap: background must be a stack of windows shaped like the instance")
    shape = x.shape
    M = x.size
    nsamples = default_nsamples(M) if nsamples is None else int(nsamples)
    if nsamples < 2 * M + 2 and 2**M - 2 > nsamples:
        raise SeriesError(f"kernel_shap: nsamples must be >= {2 * M + 2}")
    xf = x.ravel()
    bgf = bg.reshape(bg.shape[0], M)
    fx = float(np.asarray(predict(x[None]), dtype=float).ravel()[0])
    phi0 = float(np.mean(np.asarray(predict(bg), dtype=float)))
    if M == 1:
        return ShapResult(np.full(shape, fx - phi0), phi0, fx, 0, True)
    exact = 2**M - 2 <= nsamples
    if exact:
        masks, w = _enumerate_all(M)
    else:
        masks, w = _sample_coalitions(M, nsamples, np.random.default_rng(seed))
    ey = _masked_means(predict, xf, bgf, masks, shape) - phi0
    total = fx - phi0
    # eliminate the last player through the efficiency constraint
    Z = masks.astype(float)
    A = Z[:, :-1] - Z[:, [-1]]
    b = ey - Z[:, -1] * total
    Aw = A * w[:, None]
    G = A.T @ Aw
    if not np.isfinite(np.linalg.cond(G)) or np.linalg.cond(G) > 1e12:
        raise SingularSystemError("kernel_shap: weighted system is singular; increase nsamples")
    sol = np.linalg.solve(G, Aw.T @ b)
    phi = np.append(sol, total - sol.sum())
    return ShapResult(phi.reshape(shape), phi0, fx, masks.shape[0], exact)


# --- attribution store and aggregation ----------------------------------------

@dataclass
class AttributionEntry:
    dates: np.ndarray  # (S,) label or window-end dates
    phi: np.ndarray  # (S, L, N); lag axis 0 is the most recent week
    phi0: float
    fx: np.ndarray  # (S,) model outputs on the explained windows
    inputs: np.ndarray | None = None  # (S, L, N) explained windows, same lag convention


@dataclass
class AttributionTensor:
    features: list[str]
    entries: dict = field(default_factory=dict)  # (fold, run) -> AttributionEntry
    meta: dict = field(default_factory=dict)

    def add(self, fold: int, run: int, entry: AttributionEntry) -> None:
        if entry.phi.shape[2] != len(self.features):
            raise SeriesError("AttributionTensor: feature count mismatch")
        self.entries[(fold, run)] = entry

    def keys(self) -> list[tuple[int, int]]:
        return sorted(self.entries)

    def max_additivity_residual(self) -> float:
        out = 0.0
        for e in self.entries.values():
            r = np.abs(e.phi0 + e.phi.sum(axis=(1, 2)) - e.fx)
            out = max(out, float(r.max(initial=0.0)))
        return out

    def write(self, csv_path, json_path=None) -> None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "run", "sample_date", "lag", "feature", "phi"])
            for fold, run in self.keys():
                e = self.entries[(fold, run)]
                for s, d in enumerate(np.asarray(e.dates, dtype="datetime64[D]")):
                    for lag in range(e.phi.shape[1]):
                        for j, name in enumerate(self.features):
                            w.writerow([fold, run, str(d), lag, name, repr(float(e.phi[s, lag, j]))])
        if json_path is not None:
            meta = dict(self.meta)
            meta["base_values"] = {f"{k[0]}:{k[1]}": self.entries[k].phi0 for k in self.keys()}
            with open(json_path, "w") as fh:
                json.dump(meta, fh, indent=1, sort_keys=True)


def _sorted_mean(a: np.ndarray, axis: int) -> np.ndarray:
    # sorting first makes the result independent of input order
    return np.sort(a, axis=axis).mean(axis=axis)


@dataclass
class AggTable:
    mode: str
    columns: list[str]
    rows: list[list]

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in r])


def aggregate_attributions(t: AttributionTensor, mode: str = "Global") -> AggTable:
    """Rank features (Global), (feature, lag) cells (FeatureLag) or tabulate the
    mean absolute attribution by lag (TemporalProfile)."""
    if not t.entries:
        raise SeriesError("aggregate_attributions: empty tensor")
    keys = t.keys()
    N = len(t.features)
    folds = sorted({k[0] for k in keys})
    if mode == "Global":
        per = np.array([_sorted_mean(_sorted_mean(np.abs(t.entries[k].phi), 0), 0) for k in keys])  # (E, N)
        mean, sd = _sorted_mean(per, 0), np.sort(per, axis=0).std(axis=0)
        fold_cols = []
        for f in folds:
            sel = np.sort(per[[i for i, k in enumerate(keys) if k[0] == f]], axis=0)
            fold_cols.append((sel.mean(axis=0), sel.std(axis=0)))
        order = sorted(range(N), key=lambda j: (-mean[j], j))
        rows = []
        for rank, j in enumerate(order, start=1):
            cells = [f"{m[j]:.4g} ({s[j]:.2g})" for m, s in fold_cols]
            rows.append([rank, t.features[j], float(mean[j]), float(sd[j]), *cells])
        return AggTable(mode, ["rank", "feature", "mean_abs_shap", "sd", *[f"fold{f}" for f in folds]], rows)
    Lmax = max(t.entries[k].phi.shape[1] for k in keys)
    per = np.full((len(keys), Lmax, N), np.nan)
    for i, k in enumerate(keys):
        e = t.entries[k]
        per[i, :e.phi.shape[1]] = _sorted_mean(np.abs(e.phi), 0)
    if mode == "FeatureLag":
        srt = np.sort(per, axis=0)
        with np.errstate(invalid="ignore"):
            mean = np.nanmean(srt, axis=0)
            sd = np.nanstd(srt, axis=0)
        cells = [(lag, j) for lag in range(Lmax) for j in range(N) if np.isfinite(mean[lag, j])]
        cells.sort(key=lambda c: (-mean[c], c[1], c[0]))
        rows = [[r, t.features[j], lag, float(mean[lag, j]), float(sd[lag, j])]
                for r, (lag, j) in enumerate(cells, start=1)]
        return AggTable(mode, ["rank", "feature", "lag", "mean_abs_shap", "sd"], rows)
    if mode == "TemporalProfile":
        # folds with a shorter lookback leave trailing lags as NaN
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            by_fold = np.array([np.nanmean(np.sort(per[[i for i, k in enumerate(keys) if k[0] == f]], axis=0),
                                           axis=0) for f in folds])
            mean = np.nanmean(by_fold, axis=0)
            sd = np.nanstd(by_fold, axis=0)
        rows = [[t.features[j], lag, float(mean[lag, j]), float(sd[lag, j])]
                for j in range(N) for lag in range(Lmax) if np.isfinite(mean[lag, j])]
        return AggTable(mode, ["feature", "lag", "mean_abs_shap", "fold_sd"], rows)
    raise ValueError(f"unknown aggregation mode {mode!r}")


# --- regime-conditional interaction regression -------------------------------

DISPLAY_LEVEL = 0.01


@dataclass(frozen=True)
class RegimeSlope:
    regime: str
    slope: float
    intercept: float
    p_value: float
    n: int

    @property
    def display(self) -> bool:
        return bool(self.p_value < DISPLAY_LEVEL)


@dataclass
class InteractionResult:
    slopes: dict  # regime -> RegimeSlope, plus "All"
    omitted: dict  # regime -> reason
    points: list  # (regime, mpe, phi_mean, phi_sd)

    def write(self, slopes_path, points_path=None) -> None:
        with open(slopes_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["regime", "n", "slope", "intercept", "p_value", "display", "note"])
            for name in sorted(set(self.slopes) | set(self.omitted)):
                if name in self.slopes:
                    r = self.slopes[name]
                    w.writerow([name, r.n, f"{r.slope:.6g}", f"{r.intercept:.6g}", f"{r.p_value:.6g}",
                                str(r.display).lower(), ""])
                else:
                    w.writerow([name, "", "", "", "", "false", self.omitted[name]])
        if points_path is not None:
            with open(points_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["regime", "mpe", "phi_mean", "phi_sd"])
                for row in self.points:
                    w.writerow([row[0], *(repr(float(v)) for v in row[1:])])


def _fit_slope(name: str, x: np.ndarray, y: np.ndarray) -> RegimeSlope | str:
    if x.size < 3:
        return f"fewer than 3 points ({x.size})"
    if np.ptp(x) == 0:
        return "index value is constant"
    r = stats.linregress(x, y)
    p = float(r.pvalue) if np.isfinite(r.pvalue) else 1.0
    return RegimeSlope(name, float(r.slope), float(r.intercept), min(max(p, 0.0), 1.0), int(x.size))


def interaction_by_regime(mpe_values, mpe_phi, regimes: Sequence, regime_names: Sequence[str] | None = None,
                          ) -> InteractionResult:
    """OLS of the attribution on the index value within each regime and overall.

    ``mpe_phi`` is either one value per sample or an array (runs, samples);
    in the latter case the run mean is regressed and the run sd is kept for
    error bars.
    """
    x = np.asarray(mpe_values, dtype=float)
    phi = np.asarray(mpe_phi, dtype=float)
    if phi.ndim == 1:
        phi_mean, phi_sd = phi, np.zeros_like(phi)
    else:
        phi_mean, phi_sd = phi.mean(axis=0), phi.std(axis=0)
    labels = [getattr(r, "value", str(r)) for r in regimes]
    if not (x.size == phi_mean.size == len(labels)):
        raise SeriesError("interaction_by_regime: inputs must have one entry per sample")
    names = list(regime_names) if regime_names is not None else sorted(set(labels))
    slopes, omitted = {}, {}
    lab = np.asarray(labels, dtype=object)
    for name in names:
        m = lab == name
        res = _fit_slope(name, x[m], phi_mean[m])
        if isinstance(res, str):
            omitted[name] = res
        else:
            slopes[name] = res
    res = _fit_slope("All", x, phi_mean)
    if isinstance(res, str):
        omitted["All"] = res
    else:
        slopes["All"] = res
    points = [(labels[i], x[i], phi_mean[i], phi_sd[i]) for i in range(x.size)]
    return InteractionResult(slopes, omitted, points)


def background_windows(X_train: np.ndarray, size: int = 50, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = X_train.shape[0]
    idx = np.sort(rng.choice(n, size=min(size, n), replace=False))
    return X_train[idx]


def explain_windows(predict, background: np.ndarray, windows: np.ndarray, nsamples: int | None = None,
                    seed: int = 0) -> tuple[np.ndarray, float, np.ndarray]:
    """KernelSHAP for each window; returns phi with the lag axis reversed (lag 0 = latest)."""
    phis, fxs = [], []
    phi0 = float("nan")
    for s, w in enumerate(windows):
        r = kernel_shap(predict, background, w, nsamples=nsamples, seed=seed + s)
        phis.append(r.phi[::-1])
        fxs.append(r.fx)
        phi0 = r.phi0
    return np.array(phis), phi0, np.array(fxs)


def feature_series(t: AttributionTensor, feature: str, runs: Mapping | None = None) -> dict:
    """Per-fold (runs, samples) arrays of the attribution summed over lags for one feature."""
    j = t.features.index(feature)
    out: dict[int, list] = {}
    for fold, run in t.keys():
        if runs is not None and run not in runs.get(fold, (run,)):
            continue
        out.setdefault(fold, []).append(t.entries[(fold, run)].phi[:, :, j].sum(axis=1))
    return {f: np.array(v) for f, v in out.items()}
