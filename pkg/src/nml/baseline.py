"""ARIMA benchmark (CSS-initialised exact Gaussian MLE) and the Diebold-Mariano test."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, signal, stats

from .data_model import SeriesError, WeeklySeries

log = logging.getLogger(__name__)

ROOT_MARGIN = 1e-3


@dataclass(frozen=True, order=True)
class ArimaOrder:
    p: int
    d: int
    q: int

    def __post_init__(self):
        if min(self.p, self.d, self.q) < 0 or self.p > 5 or self.q > 5 or self.d > 2:
            raise ValueError(f"invalid ARIMA order {self}")

    def __str__(self) -> str:
        return f"({self.p}, {self.d}, {self.q})"


class ArimaFitError(SeriesError):
    def __init__(self, msg: str, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass
class ArimaFit:
    order: ArimaOrder
    ar: np.ndarray
    ma: np.ndarray
    intercept: float
    sigma2: float
    loglik: float
    aic: float
    nobs: int
    residuals: np.ndarray = field(repr=False)
    include_mean: bool = True

    @property
    def k(self) -> int:
        return self.order.p + self.order.q + 1 + int(self.include_mean)

    def forecast_next(self, history) -> float:
        """One-step-ahead forecast given the full (undifferenced) history."""
        y = np.asarray(history, dtype=float)
        w = np.diff(y, n=self.order.d) if self.order.d else y
        eps = _residuals(w - self.intercept, self.ar, self.ma, self.order.p)
        pred = self.intercept
        for i, phi in enumerate(self.ar, start=1):
            pred += phi * (w[-i] - self.intercept)
        for j, th in enumerate(self.ma, start=1):
            if eps.size - j >= 0:
                pred += th * eps[-j]
        if self.order.d == 1:
            pred += y[-1]
        elif self.order.d == 2:
            pred += 2 * y[-1] - y[-2]
        return float(pred)

    def rolling_forecasts(self, y, start: int) -> np.ndarray:
        """Forecasts of ``y[t]`` from ``y[:t]`` for ``t = start..len(y)-1`` with fixed parameters."""
        y = np.asarray(y, dtype=float)
        return np.array([self.forecast_next(y[:t]) for t in range(start, y.size)])


def _pacf_to_ar(r: np.ndarray) -> np.ndarray:
    """Durbin-Levinson map from partial autocorrelations in (-1, 1) to AR coefficients."""
    phi = np.zeros(0)
    for k, rk in enumerate(r):
        phi = np.concatenate([phi - rk * phi[::-1], [rk]]) if k else np.array([rk])
    return phi


def _ar_to_pacf(phi: np.ndarray) -> np.ndarray:
    phi = np.array(phi, dtype=float)
    r = np.zeros(phi.size)
    for k in range(phi.size - 1, -1, -1):
        rk = phi[k]
        r[k] = rk
        if k:
            phi = (phi[:k] + rk * phi[:k][::-1]) / (1 - rk**2)
    return r


def _constrain(u: np.ndarray, sign: float) -> np.ndarray:
    # sign=+1 for AR (1 - sum phi L^i), -1 for MA (1 + sum theta L^j)
    return sign * _pacf_to_ar(np.tanh(u)) if u.size else u


def _unconstrain(c: np.ndarray, sign: float) -> np.ndarray:
    if not c.size:
        return c
    r = np.clip(_ar_to_pacf(sign * c), -0.999, 0.999)
    return np.arctanh(r)


def _residuals(z: np.ndarray, ar: np.ndarray, ma: np.ndarray, start: int) -> np.ndarray:
    """Conditional residuals for rows ``t >= start`` of the demeaned series ``z``; pre-sample
    innovations are zero. ``start`` must be at least the AR order."""
    e = z[start:].copy()
    for i, phi in enumerate(ar, start=1):
        e -= phi * z[start - i:z.size - i]
    if ma.size:
        e = signal.lfilter([1.0], np.concatenate([[1.0], ma]), e)
    return e


def _presample_cov(ar: np.ndarray, ma: np.ndarray) -> np.ndarray:
    """Covariance (unit innovation variance) of the pre-sample vector
    ``(z_0, z_-1, .., z_1-p, eps_0, .., eps_1-q)`` of a stationary ARMA."""
    p, q = ar.size, ma.size
    V = np.eye(p + q)
    if p:
        r = max(p, q + 1)
        T = np.eye(r, k=1)
        T[:p, 0] = ar
        R = np.zeros(r)
        R[0] = 1.0
        R[1:q + 1] = ma
        P = linalg.solve_discrete_lyapunov(T, np.outer(R, R))
        gam = np.empty(p)
        Th = P
        for h in range(p):
            gam[h] = Th[0, 0]
            Th = T @ Th
        V[:p, :p] = linalg.toeplitz(gam)
        if q:
            impulse = np.zeros(q)
            impulse[0] = 1.0
            psi = signal.lfilter(np.r_[1.0, ma], np.r_[1.0, -ar], impulse)
            for i in range(p):
                for j in range(i, q):
                    V[i, p + j] = V[p + j, i] = psi[j - i]
    return V


def _exact_terms(z: np.ndarray, ar: np.ndarray, ma: np.ndarray):
    """Exact Gaussian likelihood pieces for a zero-mean stationary ARMA.

    Residuals run from zero pre-sample values are ``e0 = e - G u`` with ``e`` the
    true innovations and ``u`` the unknown pre-sample vector, so
    ``e0 ~ N(0, s2 (I + G V G'))``. Returns the quadratic form, the log-determinant
    of that covariance (unit s2) and the residuals with ``u`` replaced by its
    conditional mean.
    """
    p, q = ar.size, ma.size
    b_poly, a_poly = np.r_[1.0, -ar], np.r_[1.0, ma]
    e0 = signal.lfilter(b_poly, a_poly, z)
    m = p + q
    if not m:
        return float(e0 @ e0), 0.0, e0
    zi = np.array([signal.lfiltic(b_poly, a_poly, y=np.eye(q)[k - p] if k >= p else np.zeros(q),
                                  x=np.eye(p)[k] if k < p else np.zeros(p)) for k in range(m)])
    G, _ = signal.lfilter(b_poly, a_poly, np.zeros((m, z.size)), axis=-1, zi=zi)
    G = G.T
    V = _presample_cov(ar, ma)
    A = np.eye(m) + V @ (G.T @ G)
    c = G.T @ e0
    u_hat = -np.linalg.solve(A, V @ c)
    sign, logdet = np.linalg.slogdet(A)
    if sign <= 0:
        raise ArimaFitError("pre-sample covariance is not positive definite")
    return float(e0 @ e0 + c @ u_hat), float(logdet), e0 + G @ u_hat


def _exact_nll(z: np.ndarray, ar: np.ndarray, ma: np.ndarray) -> float:
    """Gaussian negative log-likelihood with the innovation variance concentrated out (constants dropped)."""
    S, logdet, _ = _exact_terms(z, ar, ma)
    return 0.5 * (z.size * np.log(max(S / z.size, 1e-300)) + logdet)


def _hannan_rissanen(x: np.ndarray, p: int, q: int):
    """Two-stage regression start: long AR for innovations, then OLS on lagged values and innovations."""
    m = min(max(p, q) + 8, x.size // 4)
    if x.size - m - max(p, q) < 2 * (p + q) + 5:
        return None
    lagged = np.column_stack([x[m - i:x.size - i] for i in range(1, m + 1)])
    a, *_ = np.linalg.lstsq(lagged, x[m:], rcond=None)
    eps = np.r_[np.zeros(m), x[m:] - lagged @ a]
    s0 = m + max(p, q)
    cols = [x[s0 - i:x.size - i] for i in range(1, p + 1)] + [eps[s0 - j:x.size - j] for j in range(1, q + 1)]
    b, *_ = np.linalg.lstsq(np.column_stack(cols), x[s0:], rcond=None)
    ar, ma = b[:p], b[p:]
    if _min_root_modulus(-ar) < 1.01 or _min_root_modulus(ma) < 1.01:
        return None
    return ar, ma


def _min_root_modulus(poly_coefs: np.ndarray) -> float:
    if not poly_coefs.size or not np.any(poly_coefs):
        return np.inf
    # roots of 1 + c1 z + ... + cn z^n
    roots = np.roots(np.concatenate([[1.0], poly_coefs])[::-1])
    return float(np.min(np.abs(roots))) if roots.size else np.inf


def _best_of_starts(resid, nll, starts):
    theta, best, msg = None, np.inf, ""
    for th0 in starts:
        css = optimize.least_squares(resid, th0, method="trf", xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=2000)
        cand = css.x
        ml = optimize.minimize(nll, cand, method="BFGS", options={"gtol": 1e-8, "maxiter": 500})
        if np.isfinite(ml.fun) and ml.fun <= nll(cand):
            cand = ml.x
        val = nll(cand) if np.all(np.isfinite(cand)) else np.inf
        msg = css.message
        if val < best:
            theta, best = cand, val
    return theta, best, msg


def fit_arima(s, order: ArimaOrder | tuple, include_mean: bool = True,
              n_cond: int | None = None) -> ArimaFit:
    """Fit ARIMA(p, d, q) by conditional sum of squares, refined on the exact Gaussian
    likelihood of the differenced series.

    AR and MA polynomials are parameterised through partial autocorrelations so
    estimates stay stationary/invertible; estimates within ``ROOT_MARGIN`` of the
    unit circle are rejected. ``n_cond`` drops that many leading differenced
    observations (default none) so that candidates with different ``d`` can be
    scored on the same raw-time sample.
    """
    order = order if isinstance(order, ArimaOrder) else ArimaOrder(*order)
    y = np.asarray(s.values if isinstance(s, WeeklySeries) else s, dtype=float)
    if np.any(~np.isfinite(y)):
        raise SeriesError("fit_arima: series has missing values")
    p, d, q = order.p, order.d, order.q
    if y.size < 10 * (p + q + 1):
        raise SeriesError(f"fit_arima: need at least {10 * (p + q + 1)} observations for {order}")
    w = np.diff(y, n=d) if d else y.copy()
    n_cond = 0 if n_cond is None else max(int(n_cond), 0)
    w = w[n_cond:]
    n_eff = w.size
    if n_eff <= p + q + 2 or n_eff <= p:
        raise SeriesError("fit_arima: too few observations after conditioning")
    # work on a standardised copy; estimates are mapped back afterwards
    loc = float(w.mean())
    scale = float(w.std())
    if scale == 0 or not np.isfinite(scale):
        scale = 1.0
    x = (w - loc) / scale
    off = int(include_mean)

    def unpack(theta):
        mu = theta[0] if include_mean else 0.0
        ar = _constrain(theta[off:off + p], 1.0)
        ma = _constrain(theta[off + p:off + p + q], -1.0)
        return mu, ar, ma

    def resid(theta):
        mu, ar, ma = unpack(theta)
        return _residuals(x - mu, ar, ma, p)

    def nll(theta):
        mu, ar, ma = unpack(theta)
        try:
            return _exact_nll(x - mu, ar, ma)
        except (ArimaFitError, np.linalg.LinAlgError, ValueError):
            return np.inf

    starts = []
    theta0 = np.zeros(off + p + q)
    if p:
        # Yule-Walker start for the AR block
        acf = np.array([np.dot(x[:x.size - k], x[k:]) / x.size for k in range(p + 1)])
        R = np.array([[acf[abs(i - j)] for j in range(p)] for i in range(p)])
        try:
            phi0 = np.linalg.solve(R, acf[1:])
            theta0[off:off + p] = _unconstrain(phi0, 1.0)
        except np.linalg.LinAlgError:
            pass
    starts.append(theta0)
    if q:
        hr = _hannan_rissanen(x, p, q)
        if hr is not None:
            th = np.zeros_like(theta0)
            th[off:off + p] = _unconstrain(hr[0], 1.0)
            th[off + p:] = _unconstrain(hr[1], -1.0)
            starts.append(th)
    if theta0.size:
        # the likelihood is flat along near-cancelling AR/MA roots, so keep the best of several starts
        with warnings.catch_warnings():
            # line searches probe near-unit roots where the stationary covariance is ill-conditioned
            warnings.simplefilter("ignore", (RuntimeWarning, linalg.LinAlgWarning))
            theta, best, msg = _best_of_starts(resid, nll, starts)
        if theta is None:
            raise ArimaFitError(f"{order}: optimizer did not converge", trace=msg)
    else:
        theta = theta0
    mu, ar, ma = unpack(theta)
    if _min_root_modulus(-ar) < 1 + ROOT_MARGIN:
        raise ArimaFitError(f"{order}: AR polynomial at the unit circle")
    if _min_root_modulus(ma) < 1 + ROOT_MARGIN:
        raise ArimaFitError(f"{order}: MA polynomial not invertible")
    S, logdet, e = _exact_terms(x - mu, ar, ma)
    e = e * scale
    sigma2 = max(S * scale**2 / n_eff, np.finfo(float).tiny)
    loglik = -0.5 * (n_eff * (np.log(2 * np.pi * sigma2) + 1.0) + logdet)
    intercept = loc + mu * scale
    k = p + q + 1 + int(include_mean)
    return ArimaFit(order, ar, ma, float(intercept), float(sigma2), float(loglik),
                    float(2 * k - 2 * loglik), n_eff, e, include_mean)


def select_arima_aic(s, pmax: int = 3, dmax: int = 1, qmax: int = 3,
                     include_mean: bool = True) -> tuple[ArimaOrder, dict]:
    """Exhaustive AIC search; every candidate is scored on the same raw-time sample.

    Ties go to the smaller ``p + q``, then the smaller ``p``. Returns the winning
    order and the table of candidate fits (failures map to the exception text).
    """
    y = np.asarray(s.values if isinstance(s, WeeklySeries) else s, dtype=float)
    table: dict[ArimaOrder, ArimaFit | str] = {}
    best = None
    for p, d, q in itertools.product(range(pmax + 1), range(dmax + 1), range(qmax + 1)):
        order = ArimaOrder(p, d, q)
        try:
            fit = fit_arima(y, order, include_mean=include_mean, n_cond=dmax - d)
        except SeriesError as exc:
            table[order] = str(exc)
            continue
        table[order] = fit
        key = (round(fit.aic, 9), p + q, p, d)
        if best is None or key < best[0]:
            best = (key, order)
    if best is None:
        raise ArimaFitError("select_arima_aic: every candidate failed")
    return best[1], table


# --- Diebold-Mariano ---------------------------------------------------------

@dataclass(frozen=True)
class DmResult:
    statistic: float
    p_value: float
    h: int
    loss: str = "squared"


def diebold_mariano(e1, e2, h: int = 1, hln: bool = True) -> DmResult:
    """Equal predictive accuracy test on squared-error loss.

    ``d_t = e1_t^2 - e2_t^2``; the long-run variance uses autocovariances up to
    lag ``h - 1`` with Bartlett weights. The Harvey-Leybourne-Newbold correction
    is applied when ``hln`` and the p-value is two-sided Student-t on ``n - 1`` df.
    Positive statistics mean the first forecast has larger loss.
    """
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    if e1.shape != e2.shape or e1.ndim != 1:
        raise SeriesError("diebold_mariano: error series must be 1-D with equal length")
    n = e1.size
    if n < 10:
        raise SeriesError("diebold_mariano: need at least 10 forecast errors")
    d = e1**2 - e2**2
    dbar = d.mean()
    dev = d - dbar
    gamma0 = float(dev @ dev) / n
    lrv = gamma0
    for k in range(1, h):
        lrv += 2.0 * (1.0 - k / h) * float(dev[k:] @ dev[:-k]) / n
    if not lrv > 0:
        raise SeriesError("diebold_mariano: loss differential has zero variance; forecasts are indistinguishable")
    dm = dbar / np.sqrt(lrv / n)
    if hln:
        dm *= np.sqrt((n + 1 - 2 * h + h * (h - 1) / n) / n)
    p = 2.0 * stats.t.sf(abs(dm), df=n - 1)
    return DmResult(float(dm), float(min(p, 1.0)), h)
