"""Unit-root and distributional tests used for the regime and stationarity analysis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .data_model import SeriesError, WeeklySeries


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class

    statistic: float
    p_value: float
    df: int
    method: str


# MacKinnon (1994) response-surface coefficients, one regressor, constant only.
_TAU_MAX = 2.74
_TAU_MIN = -18.83
_TAU_STAR = -1.61
_SMALL_P = np.array([2.1659, 1.4412, 3.8269]) * np.array([1.0, 1.0, 1e-2])
_LARGE_P = np.array([1.7339, 9.3202, -1.2745, -1.0368]) * np.array([1.0, 1e-1, 1e-1, 1e-2])
# MacKinnon (2010) finite-sample critical values, constant only: rows 1%, 5%, 10%.
_CRIT = np.array([
    [-3.43035, -6.5393, -16.786, -79.433],
    [-2.86154, -2.8903, -4.234, -40.04],
    [-2.56677, -1.5384, -2.809, 0.0],
])


def mackinnon_p(tau: float) -> float:
    """Asymptotic p-value of an ADF t-statistic (constant, no trend)."""
    if tau > _TAU_MAX:
        return 1.0
    if tau < _TAU_MIN:
        return 0.0
    coef = _SMALL_P if tau <= _TAU_STAR else _LARGE_P
    return float(stats.norm.cdf(np.polynomial.polynomial.polyval(tau, coef)))


def mackinnon_crit(nobs: int) -> dict[str, float]:
    x = 1.0 / nobs
    vals = _CRIT @ np.array([1.0, x, x**2, x**3])
    return {"1%": float(vals[0]), "5%": float(vals[1]), "10%": float(vals[2])}


def default_max_lag(n: int) -> int:
    return int(np.ceil(12.0 * (n / 100.0) ** 0.25))


def _ols_tstat(X: np.ndarray, y: np.ndarray, col: int) -> tuple[float, float]:
    """t-ratio of coefficient ``col`` and the log-likelihood of the fit."""
    n, k = X.shape
    q, r = np.linalg.qr(X)
    if np.min(np.abs(np.diag(r))) <= 1e-12 * np.max(np.abs(np.diag(r))):
        raise SeriesError("ADF regression is rank deficient")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    ssr = float(resid @ resid)
    sigma2 = ssr / (n - k)
    rinv = np.linalg.inv(r)
    var = sigma2 * float(rinv[col] @ rinv[col])
    llf = -0.5 * n * (np.log(2 * np.pi * ssr / n) + 1.0)
    return float(beta[col] / np.sqrt(var)), llf


def adf_test(x, max_lag: int | None = None, autolag: str | None = "aic") -> TestResult:
    """Augmented Dickey-Fuller test with a constant.

    Regresses the first difference on a constant, the lagged level and ``k``
    lagged differences. With ``autolag="aic"`` ``k`` minimises AIC over
    ``0..max_lag`` on a common sample; the chosen model is then refit on all
    usable observations. The p-value comes from MacKinnon's response surface.
    """
    y = np.asarray(x.values if isinstance(x, WeeklySeries) else x, dtype=float)
    if np.any(~np.isfinite(y)):
        raise SeriesError("adf_test: series has missing values")
    n = y.size
    if max_lag is None:
        max_lag = min(default_max_lag(n), max(0, n // 2 - 3))
    if n < max_lag + 10:
        raise SeriesError(f"adf_test: need at least {max_lag + 10} observations, got {n}")
    if np.ptp(y) == 0:
        raise SeriesError("adf_test: constant series")
    dy = np.diff(y)

    def design(k: int, start: int):
        # rows t = start..n-2 in dy index space
        rows = np.arange(start, n - 1)
        cols = [np.ones(rows.size), y[rows]]
        cols += [dy[rows - j] for j in range(1, k + 1)]
        return np.column_stack(cols), dy[rows]

    if autolag is None:
        k = max_lag
    else:
        best = None
        for k_try in range(max_lag + 1):
            X, target = design(k_try, max_lag)
            _, llf = _ols_tstat(X, target, 1)
            aic = -2.0 * llf + 2.0 * X.shape[1]
            if best is None or aic < best[0] - 1e-12:
                best = (aic, k_try)
        k = best[1]
    X, target = design(k, k)
    tau, _ = _ols_tstat(X, target, 1)
    return TestResult(tau, mackinnon_p(tau), k, "adf-c")


def _groups(groups: Sequence[Sequence[float]]) -> list[np.ndarray]:
    out = [np.asarray(g, dtype=float) for g in groups]
    return [g[np.isfinite(g)] for g in out]


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> TestResult:
    """Kruskal-Wallis H with tie correction; chi-square p-value on k-1 df."""
    gs = [g for g in _groups(groups) if g.size]
    if len(gs) < 2:
        raise SeriesError("kruskal_wallis: need at least 2 nonempty groups")
    allx = np.concatenate(gs)
    n = allx.size
    if n < 5:
        raise SeriesError("kruskal_wallis: need at least 5 observations in total")
    ranks = stats.rankdata(allx)
    h = 0.0
    start = 0
    for g in gs:
        r = ranks[start:start + g.size]
        h += r.sum() ** 2 / g.size
        start += g.size
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    _, counts = np.unique(allx, return_counts=True)
    ties = 1.0 - np.sum(counts**3 - counts) / (n**3 - n)
    df = len(gs) - 1
    if ties <= 0:
        return TestResult(0.0, 1.0, df, "kruskal")
    h = max(h / ties, 0.0)
    return TestResult(float(h), float(stats.chi2.sf(h, df)), df, "kruskal")


def levene_test(groups: Sequence[Sequence[float]], center: str = "mean") -> TestResult:
    """Levene's W on absolute deviations from group means (``center="median"`` gives
    Brown-Forsythe); F(k-1, n-k) p-value."""
    gs = _groups(groups)
    if len(gs) < 2:
        raise SeriesError("levene_test: need at least 2 groups")
    if any(g.size < 2 for g in gs):
        raise SeriesError("levene_test: every group needs at least 2 observations")
    loc = np.mean if center == "mean" else np.median
    z = [np.abs(g - loc(g)) for g in gs]
    k = len(z)
    n = sum(g.size for g in z)
    zbar = np.concatenate(z).mean()
    between = sum(g.size * (g.mean() - zbar) ** 2 for g in z)
    within = sum(np.sum((g - g.mean()) ** 2) for g in z)
    if within <= 0:
        w = 0.0 if between <= 1e-300 else np.inf
    else:
        w = (n - k) / (k - 1) * between / within
    p = 1.0 if w == 0 else float(stats.f.sf(w, k - 1, n - k))
    return TestResult(float(w), p, k - 1, f"levene-{center}")


def quantile(x, q: float) -> float:
    return float(np.percentile(np.asarray(x, dtype=float), 100.0 * q))


@dataclass(frozen=True)
class RegimeTests:
    kruskal: TestResult
    levene: TestResult
    max_tail_q5: float
    tail_regime: str
    group_sizes: dict


def regime_distribution_tests(returns: WeeklySeries, dates, labels) -> RegimeTests:
    """Kruskal-Wallis and Levene across regime groups plus the most negative q5."""
    pos = {d: i for i, d in enumerate(np.asarray(dates, dtype="datetime64[D]").tolist())}
    groups: dict[str, list[float]] = {}
    for d, v, m in zip(returns.dates.tolist(), returns.values, returns.missing):
        i = pos.get(d)
        if i is None or m:
            continue
        key = getattr(labels[i], "value", str(labels[i]))
        groups.setdefault(key, []).append(float(v))
    usable = {k: np.asarray(v) for k, v in groups.items() if len(v) >= 2}
    if len(usable) < 2:
        raise SeriesError("regime_distribution_tests: fewer than 2 regimes with data")
    names = sorted(usable)
    gs = [usable[k] for k in names]
    q5 = {k: quantile(usable[k], 0.05) for k in names}
    worst = min(names, key=lambda k: q5[k])
    return RegimeTests(kruskal_wallis(gs), levene_test(gs), q5[worst], worst,
                       {k: int(usable[k].size) for k in names})
