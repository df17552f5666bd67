"""Bivariate VAR equations, Granger SSR F-tests and lag tables."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import linalg, stats

from .data_model import SeriesError, WeeklySeries, intersect


class RankDeficientError(SeriesError):
    pass


@dataclass
class VarModel:
    """One OLS equation ``y_t ~ const + y_{t-1..t-p} [+ x_{t-1..t-p}]``."""

    p: int
    alpha: float
    beta: np.ndarray
    gamma: np.ndarray | None
    residuals: np.ndarray
    ssr: float
    nobs: int


def _values(s) -> np.ndarray:
    v = np.asarray(s.values if isinstance(s, WeeklySeries) else s, dtype=float)
    if np.any(~np.isfinite(v)):
        raise SeriesError("series contains missing values; align and drop them first")
    return v


def _aligned(y, x) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(y, WeeklySeries) and isinstance(x, WeeklySeries):
        _, (yv, xv) = intersect(y, x)
        return yv, xv
    yv, xv = _values(y), _values(x)
    if yv.shape != xv.shape:
        raise SeriesError("y and x must have equal length")
    return yv, xv


def lag_design(y: np.ndarray, x: np.ndarray | None, p: int, start: int | None = None):
    """Regressors for rows ``t = start..n-1``: const, y lags 1..p, x lags 1..p."""
    n = y.size
    start = p if start is None else start
    rows = np.arange(start, n)
    cols = [np.ones(rows.size)]
    cols += [y[rows - i] for i in range(1, p + 1)]
    if x is not None:
        cols += [x[rows - j] for j in range(1, p + 1)]
    return np.column_stack(cols), y[rows]


def ols_qr(X: np.ndarray, y: np.ndarray, rtol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Least squares through column-pivoted QR; raises on numerical rank deficiency."""
    q, r, piv = linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    if d.size == 0 or d[-1] <= rtol * d[0]:
        raise RankDeficientError("design matrix is rank deficient")
    coef = np.empty(X.shape[1])
    coef[piv] = linalg.solve_triangular(r, q.T @ y)
    return coef, y - X @ coef


def fit_var_ols(y, x, p: int, start: int | None = None) -> VarModel:
    yv, xv = _aligned(y, x)
    if p < 1:
        raise SeriesError("lag order must be >= 1")
    if yv.size <= 2 * p + 5:
        raise SeriesError(f"need more than {2 * p + 5} observations for p={p}")
    X, target = lag_design(yv, xv, p, start)
    coef, resid = ols_qr(X, target)
    return VarModel(p, float(coef[0]), coef[1:p + 1], coef[p + 1:], resid,
                    float(resid @ resid), target.size)


def _fit_restricted(yv: np.ndarray, p: int, start: int) -> VarModel:
    X, target = lag_design(yv, None, p, start)
    coef, resid = ols_qr(X, target)
    return VarModel(p, float(coef[0]), coef[1:], None, resid, float(resid @ resid), target.size)


@dataclass(frozen=True)
class GrangerResult:
    lag: int
    f_stat: float
    p_value: float
    df_num: int
    df_den: int
    ssr_restricted: float
    ssr_unrestricted: float


def granger_ftest(y, x, p: int) -> GrangerResult:
    """SSR F-test of ``x`` lags 1..p jointly zero in the ``y`` equation.

    Restricted and unrestricted regressions share the sample ``t = p..n-1``.
    """
    yv, xv = _aligned(y, x)
    unres = fit_var_ols(yv, xv, p)
    res = _fit_restricted(yv, p, p)
    n = unres.nobs
    df_den = n - 2 * p - 1
    if unres.ssr <= 1e-300 * max(1.0, res.ssr):
        raise SeriesError("unrestricted model fits perfectly (SSR = 0)")
    f = max((res.ssr - unres.ssr) / p / (unres.ssr / df_den), 0.0)
    return GrangerResult(p, float(f), float(stats.f.sf(f, p, df_den)), p, df_den,
                         res.ssr, unres.ssr)


def select_lag_aic(y, x, max_lag: int = 6) -> int:
    """Bivariate VAR lag order minimising AIC on the common sample ``t = max_lag..n-1``."""
    yv, xv = _aligned(y, x)
    Y = np.column_stack([yv, xv])
    best = None
    for p in range(1, max_lag + 1):
        resid = []
        for eq in range(2):
            X, target = lag_design(Y[:, eq], Y[:, 1 - eq], p, max_lag)
            _, r = ols_qr(X, target)
            resid.append(r)
        R = np.column_stack(resid)
        n = R.shape[0]
        sigma = R.T @ R / n
        aic = np.log(np.linalg.det(sigma)) + 2.0 * (4 * p + 2) / n
        if best is None or aic < best[0]:
            best = (aic, p)
    return best[1]


@dataclass
class LagTable:
    predictors: list[str]
    lags: list[int]
    pvalues: np.ndarray  # (predictor, lag); NaN where a cell failed
    results: dict[tuple[str, int], GrangerResult]
    failures: dict[tuple[str, int], str]

    def stars(self, name: str, lag: int) -> str:
        p = self.pvalues[self.predictors.index(name), self.lags.index(lag)]
        if not np.isfinite(p):
            return ""
        return "**" if p < 0.05 else "*" if p < 0.10 else ""

    def write(self, csv_path, json_path=None) -> None:
        csv_path = Path(csv_path)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["predictor", *self.lags])
            for i, name in enumerate(self.predictors):
                cells = []
                for j, lag in enumerate(self.lags):
                    p = self.pvalues[i, j]
                    cells.append(f"{p:.3f}{self.stars(name, lag)}" if np.isfinite(p)
                                 else f"NA[{self.failures.get((name, lag), 'error')}]")
                w.writerow([name, *cells])
        if json_path is not None:
            records = [{"predictor": k[0], **asdict(v)} for k, v in self.results.items()]
            fails = [{"predictor": k[0], "lag": k[1], "reason": v} for k, v in self.failures.items()]
            with open(json_path, "w") as fh:
                json.dump({"results": records, "failures": fails}, fh, indent=1, sort_keys=True)


def granger_lag_table(y, predictors: Mapping[str, object], lags=range(1, 7)) -> LagTable:
    """p-values of ``predictor -> y`` for every predictor and lag; failures become NaN cells."""
    lags = list(lags)
    names = list(predictors)
    pv = np.full((len(names), len(lags)), np.nan)
    results, failures = {}, {}
    for i, name in enumerate(names):
        x = predictors[name]
        try:
            yv, xv = _aligned(y, x)
            degenerate = np.ptp(xv) == 0
        except SeriesError as exc:
            for lag in lags:
                failures[(name, lag)] = str(exc)
            continue
        for j, lag in enumerate(lags):
            if degenerate:
                failures[(name, lag)] = "degenerate: constant predictor"
                continue
            try:
                r = granger_ftest(yv, xv, lag)
            except SeriesError as exc:
                failures[(name, lag)] = str(exc)
                continue
            pv[i, j] = r.p_value
            results[(name, lag)] = r
    return LagTable(names, lags, pv, results, failures)
