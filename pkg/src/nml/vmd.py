"""Variational mode decomposition by ADMM on the one-sided spectrum, and the IMF Granger scan.

Frequencies are in cycles per sample. The signal is mirror-extended by half
its length on each side before transforming; the extension is cropped from
the returned modes.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .causality import granger_ftest
from .data_model import SeriesError, WeeklySeries, intersect
from .stattests import adf_test

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VmdConfig:
    K: int = 3
    alpha: float = 2000.0
    tau: float = 0.0
    dc: bool = False
    init: str = "uniform"  # "uniform" | "zero"
    tol: float = 1e-7
    max_iter: int = 500

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.init not in ("uniform", "zero"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class VmdResult:
    modes: np.ndarray  # (K, n), ascending center frequency
    omegas: np.ndarray  # (K,)
    iterations: int
    final_residual: float
    config: VmdConfig
    spectra: np.ndarray = field(repr=False)  # (K, T//2+1) one-sided spectra of the extended modes
    freqs: np.ndarray = field(repr=False)
    objective: np.ndarray = field(repr=False)  # per-iteration objective trace


def _objective(u_hat, f_hat, freqs, omegas, alpha, lam):
    bw = sum(2.0 * alpha * np.sum((freqs - w) ** 2 * np.abs(u) ** 2) for u, w in zip(u_hat, omegas))
    gap = f_hat - u_hat.sum(axis=0)
    return float(bw + np.sum(np.abs(gap) ** 2) + np.real(np.vdot(lam, gap)))


def vmd_decompose(signal, cfg: VmdConfig = VmdConfig()) -> VmdResult:
    """Split ``signal`` into ``cfg.K`` band-limited modes.

    Each sweep updates, for every mode in turn, its spectrum by the Wiener-type
    filter ``(f - sum_{i!=k} u_i + lam/2) / (1 + 2 alpha (w - w_k)^2)`` and its
    center frequency by the power-weighted mean frequency; the dual variable then
    moves by ``tau (f - sum u)``. Iteration stops when the summed relative change
    of the mode spectra falls below ``cfg.tol``.
    """
    f = np.asarray(signal, dtype=float)
    if f.ndim != 1:
        raise SeriesError("vmd_decompose: signal must be 1-D")
    if not np.all(np.isfinite(f)):
        raise SeriesError("vmd_decompose: signal has non-finite values")
    n = f.size
    if n < 16:
        raise SeriesError("vmd_decompose: need at least 16 samples")
    if cfg.K > n / 4:
        raise SeriesError(f"vmd_decompose: K={cfg.K} exceeds length/4")
    K = cfg.K
    half = n // 2
    ext = np.concatenate([f[:half][::-1], f, f[n - half:][::-1]])
    T = ext.size
    f_hat = np.fft.rfft(ext)
    freqs = np.arange(f_hat.size) / T

    if cfg.init == "uniform":
        omegas = 0.5 / K * np.arange(K)
    else:
        omegas = np.zeros(K)
    if cfg.dc:
        omegas[0] = 0.0
    u_hat = np.zeros((K, f_hat.size), dtype=complex)
    lam = np.zeros(f_hat.size, dtype=complex)
    total = u_hat.sum(axis=0)
    trace = []
    diff = np.inf
    it = 0
    while it < cfg.max_iter and diff > cfg.tol:
        prev = u_hat.copy()
        for k in range(K):
            total = total - u_hat[k]
            u_hat[k] = (f_hat - total + lam / 2.0) / (1.0 + 2.0 * cfg.alpha * (freqs - omegas[k]) ** 2)
            total = total + u_hat[k]
            if cfg.dc and k == 0:
                continue
            power = np.abs(u_hat[k]) ** 2
            mass = power.sum()
            if mass > 0:
                omegas[k] = float(freqs @ power / mass)
        lam = lam + cfg.tau * (f_hat - total)
        it += 1
        trace.append(_objective(u_hat, f_hat, freqs, omegas, cfg.alpha, lam))
        num = np.sum(np.abs(u_hat - prev) ** 2, axis=1)
        den = np.sum(np.abs(prev) ** 2, axis=1)
        if np.all(num == 0):
            diff = 0.0
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                diff = float(np.sum(np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)))
    order = np.argsort(omegas, kind="stable")
    u_hat = u_hat[order]
    omegas = omegas[order]
    modes = np.fft.irfft(u_hat, n=T, axis=1)[:, half:half + n]
    if not np.isfinite(diff):
        diff = float("nan")
    return VmdResult(modes, omegas.copy(), it, diff, cfg, u_hat, freqs, np.asarray(trace))


def vmd_reconstruct(r: VmdResult) -> np.ndarray:
    return r.modes.sum(axis=0)


def spectral_bandwidth(r: VmdResult) -> np.ndarray:
    """Power-weighted standard deviation of each mode's spectrum about its center."""
    out = []
    for u, w in zip(r.spectra, r.omegas):
        p = np.abs(u) ** 2
        m = p.sum()
        out.append(np.sqrt((r.freqs - w) ** 2 @ p / m) if m > 0 else 0.0)
    return np.asarray(out)


def write_imfs(path, dates, r: VmdResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *[f"imf{k + 1}" for k in range(r.modes.shape[0])]])
        for i, d in enumerate(np.asarray(dates, dtype="datetime64[D]")):
            w.writerow([str(d), *(repr(float(m[i])) for m in r.modes)])


# --- IMF-level Granger scan --------------------------------------------------

@dataclass(frozen=True)
class ScanRow:
    predictor: str
    j: int  # predictor IMF (1-based)
    i: int  # target IMF (1-based)
    lag: int
    f_stat: float
    p_value: float

    @property
    def label(self) -> str:
        return f"{self.predictor}({self.j}, {self.lag})"


@dataclass
class ScanResult:
    rows: list[ScanRow]
    tested: int
    failures: list[tuple[str, int, int, int, str]]
    differenced: dict[str, list[bool]]

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["target_imf", "Predictor(j,p)", "predictor", "j", "lag", "F-stat", "p-val"])
            for r in self.rows:
                w.writerow([r.i, r.label, r.predictor, r.j, r.lag, f"{r.f_stat:.6f}", f"{r.p_value:.6g}"])


def _stationary(mode: np.ndarray, level: float = 0.05) -> tuple[np.ndarray, bool]:
    """ADF-check a mode; difference once if the unit root is not rejected."""
    try:
        if adf_test(mode).p_value < level:
            return mode, False
    except SeriesError:
        pass
    return np.diff(mode), True


def decompose_imfs(x: np.ndarray, cfg: VmdConfig) -> tuple[list[np.ndarray], list[bool]]:
    r = vmd_decompose(x, cfg)
    out, flags = [], []
    for m in r.modes:
        s, d = _stationary(m)
        out.append(s)
        flags.append(d)
    return out, flags


def vmd_granger_scan(target, predictors: Mapping[str, object], cfg: VmdConfig = VmdConfig(),
                     max_lag: int = 6, alpha_level: float = 0.05,
                     decomposed: dict[str, list[np.ndarray]] | None = None) -> ScanResult:
    """Granger-test every (predictor IMF j -> target IMF i, lag) triple; keep p < alpha_level.

    Series are intersected on common dates first. IMFs whose unit root is not
    rejected by ADF are differenced once; pairs are end-aligned.
    """
    names = list(predictors)
    if isinstance(target, WeeklySeries) and all(isinstance(predictors[k], WeeklySeries) for k in names):
        _, vals = intersect(target, *[predictors[k] for k in names])
        tv, pvals = vals[0], dict(zip(names, vals[1:]))
    else:
        tv = np.asarray(target, dtype=float)
        pvals = {k: np.asarray(predictors[k], dtype=float) for k in names}
    t_imfs, t_diff = decompose_imfs(tv, cfg)
    differenced = {"__target__": t_diff}
    rows, failures = [], []
    tested = 0
    for name in names:
        if decomposed and name in decomposed:
            p_imfs, p_diff = decomposed[name], [False] * cfg.K
        else:
            try:
                p_imfs, p_diff = decompose_imfs(pvals[name], cfg)
            except SeriesError as exc:
                failures.append((name, 0, 0, 0, str(exc)))
                continue
        differenced[name] = p_diff
        for i, y in enumerate(t_imfs, start=1):
            for j, x in enumerate(p_imfs, start=1):
                m = min(y.size, x.size)
                yy, xx = y[-m:], x[-m:]
                for lag in range(1, max_lag + 1):
                    tested += 1
                    try:
                        g = granger_ftest(yy, xx, lag)
                    except SeriesError as exc:
                        failures.append((name, j, i, lag, str(exc)))
                        continue
                    if g.p_value < alpha_level:
                        rows.append(ScanRow(name, j, i, lag, g.f_stat, g.p_value))
    order = {n: k for k, n in enumerate(names)}
    rows.sort(key=lambda r: (r.i, order[r.predictor], r.j, r.lag))
    return ScanResult(rows, tested, failures, differenced)
