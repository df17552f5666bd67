"""Tree-structured Parzen estimator over a small mixed search space."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from ..data_model import SeriesError
from . import lstm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FloatDim:
    low: float
    high: float
    log: bool = False

    def to_unit(self, x: float) -> float:
        return math.log(x) if self.log else x

    def bounds(self) -> tuple[float, float]:
        return (self.to_unit(self.low), self.to_unit(self.high))

    def from_unit(self, z: float) -> float:
        v = math.exp(z) if self.log else z
        return float(min(max(v, self.low), self.high))


@dataclass(frozen=True)
class Categorical:
    choices: tuple


@dataclass(frozen=True)
class SearchSpace:
    dims: dict

    def names(self) -> list[str]:
        return list(self.dims)


DEFAULT_SPACE = SearchSpace({
    "units": Categorical(lstm.UNITS),
    "dropout": FloatDim(*lstm.DROPOUT_RANGE),
    "lookback": Categorical(lstm.LOOKBACKS),
    "learning_rate": FloatDim(*lstm.LR_RANGE, log=True),
    "optimizer": Categorical(lstm.OPTIMIZERS),
    "batch_size": Categorical(lstm.BATCH_SIZES),
})


@dataclass
class Trial:
    number: int
    params: dict
    loss: float
    info: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class TpeResult:
    best_params: dict
    best_loss: float
    best_trial: int
    trials: list[Trial]


def _sample_prior(space: SearchSpace, rng: np.random.Generator) -> dict:
    out = {}
    for name, d in space.dims.items():
        if isinstance(d, Categorical):
            out[name] = d.choices[int(rng.integers(len(d.choices)))]
        else:
            lo, hi = d.bounds()
            out[name] = d.from_unit(float(rng.uniform(lo, hi)))
    return out


class _Parzen1d:
    """Mixture of truncated Gaussians at the observations plus a flat-ish prior kernel."""

    def __init__(self, obs: np.ndarray, lo: float, hi: float):
        width = hi - lo
        mus = np.concatenate([np.sort(obs), [0.5 * (lo + hi)]])
        n = obs.size
        if n:
            srt = np.sort(obs)
            padded = np.concatenate([[lo], srt, [hi]])
            gaps = np.maximum(np.diff(padded)[:-1], np.diff(padded)[1:])
            sig = np.clip(gaps, width / min(100.0, 1.0 + n), width)
        else:
            sig = np.zeros(0)
        self.mu = mus
        self.sigma = np.concatenate([sig, [width]])
        self.w = np.full(mus.size, 1.0 / mus.size)
        self.lo, self.hi = lo, hi
        a = (lo - self.mu) / self.sigma
        b = (hi - self.mu) / self.sigma
        self.a, self.b = a, b
        self.log_mass = np.log(np.maximum(stats.norm.cdf(b) - stats.norm.cdf(a), 1e-300))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(self.mu.size, size=size, p=self.w)
        return stats.truncnorm.rvs(self.a[comp], self.b[comp], loc=self.mu[comp], scale=self.sigma[comp],
                                   random_state=rng)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x)[:, None] - self.mu) / self.sigma
        comp = stats.norm.logpdf(z) - np.log(self.sigma) - self.log_mass + np.log(self.w)
        return special.logsumexp(comp, axis=1)


def _cat_logprob(obs: Sequence, choices: tuple) -> np.ndarray:
    counts = np.array([sum(1 for o in obs if o == c) for c in choices], dtype=float) + 1.0
    return np.log(counts / counts.sum())


def _propose(space: SearchSpace, good: list[dict], bad: list[dict], rng: np.random.Generator,
             n_candidates: int) -> dict:
    score = np.zeros(n_candidates)
    cand: dict[str, list] = {}
    for name, d in space.dims.items():
        if isinstance(d, Categorical):
            lg = _cat_logprob([t[name] for t in good], d.choices)
            lb = _cat_logprob([t[name] for t in bad], d.choices)
            idx = rng.choice(len(d.choices), size=n_candidates, p=np.exp(lg))
            score += lg[idx] - lb[idx]
            cand[name] = [d.choices[i] for i in idx]
        else:
            lo, hi = d.bounds()
            pg = _Parzen1d(np.array([d.to_unit(t[name]) for t in good]), lo, hi)
            pb = _Parzen1d(np.array([d.to_unit(t[name]) for t in bad]), lo, hi)
            z = np.clip(pg.sample(rng, n_candidates), lo, hi)
            score += pg.logpdf(z) - pb.logpdf(z)
            cand[name] = [d.from_unit(v) for v in z]
    k = int(np.argmax(score))
    return {name: cand[name][k] for name in space.dims}


def tpe_search(objective: Callable[[dict], float | tuple[float, dict]], space: SearchSpace = DEFAULT_SPACE,
               trials: int = 75, seed: int = 0, n_startup: int = 15, gamma: float = 0.25,
               n_candidates: int = 24) -> TpeResult:
    """Minimise ``objective`` over ``space``.

    The first ``n_startup`` points are drawn from the prior. Afterwards the
    history is split at the ``gamma`` loss quantile into good and bad sets and
    the candidate with the largest good/bad density ratio out of
    ``n_candidates`` draws from the good model is evaluated. The objective may
    return a loss or ``(loss, info)``; exceptions count as failed trials.
    """
    if trials < 10:
        raise ValueError("tpe_search: trials must be >= 10")
    rng = np.random.default_rng(seed)
    history: list[Trial] = []
    for number in range(trials):
        finite = [t for t in history if np.isfinite(t.loss)]
        if number < n_startup or len(finite) < 2:
            params = _sample_prior(space, rng)
        else:
            ranked = sorted(history, key=lambda t: (t.loss, t.number))
            n_good = max(1, int(math.ceil(gamma * len(ranked))))
            params = _propose(space, [t.params for t in ranked[:n_good]],
                              [t.params for t in ranked[n_good:]], rng, n_candidates)
        try:
            out = objective(params)
            loss, info = (out if isinstance(out, tuple) else (out, {}))
            loss = float(loss)
            err = None if np.isfinite(loss) else "non-finite loss"
        except (SeriesError, ValueError, FloatingPointError) as exc:
            loss, info, err = float("inf"), {}, f"{type(exc).__name__}: {exc}"
        if err is not None:
            loss = float("inf")
            log.info("trial %d failed: %s", number, err)
        history.append(Trial(number, params, loss, info, err))
    ok = [t for t in history if np.isfinite(t.loss)]
    if not ok:
        raise SeriesError(f"tpe_search: all {trials} trials failed; first error: {history[0].error}")
    best = min(ok, key=lambda t: (t.loss, t.number))
    return TpeResult(best.params, best.loss, best.number, history)


def to_hyperparams(params: dict, **extra) -> lstm.Hyperparams:
    hp = lstm.Hyperparams(**{k: params[k] for k in DEFAULT_SPACE.dims})
    return replace(hp, **extra) if extra else hp
