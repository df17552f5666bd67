"""Synthetic corpus with planted structure: messages, daily macro panel and meeting dates.

The policy index drives the target's weekly log return at lags 3, 4 and 5, and
a band-limited component of GeopolRisk drives the target one week later.
Message bodies are built from keyword templates whose lexicon score equals the
planted stance, so the lexicon backend recovers every label.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .data_model import AlignRule, SeriesError, write_frame_csv
from .messages import ClassifiedMessage, RawMessage, Source, Stance, build_mpe_weekly, lexicon_score, write_jsonl
from .variables import BY_NAME, INDEX, MACRO_NAMES, TARGET

START_FRIDAY = np.datetime64("2014-01-03")

TEMPLATES = {
    2: ("Fed will cut soon and pivot to easing", "Rate cuts and fresh stimulus are coming",
        "Dovish pivot ahead, cutting rates"),
    1: ("Expecting a pause at the next meeting", "Looks like a dovish tone today",
        "Markets price in lower rates"),
    0: ("Watching the Fed presser this afternoon", "Minutes out later, no strong view",
        "Rates unchanged as expected"),
    -1: ("Powell sounded hawkish again", "They keep tightening into weakness",
         "Another hike is on the table"),
    -2: ("Another hike coming, higher for longer", "Hawkish Fed will raise rates aggressively",
         "75 bps hike and more tightening"),
}


@dataclass
class PlantedTruth:
    seed: int
    weeks: int
    mpe_lags: tuple = (3, 4, 5)
    mpe_coefs: tuple = (0.012, 0.016, 0.012)  # return per unit of standardised index
    geo_lag: int = 1
    geo_coef: float = 0.012
    geo_frequency: float = 0.18  # cycles per week of the band-limited driver
    noise_sd: float = 0.012
    index_mean: float = 0.0
    index_sd: float = 1.0
    stance_counts: dict = field(default_factory=dict)


def _check_templates() -> None:
    for stance, bodies in TEMPLATES.items():
        for b in bodies:
            if int(lexicon_score(b)) != stance:
                raise AssertionError(f"template {b!r} scores {int(lexicon_score(b))}, expected {stance}")


def _ar1(rng, n, phi, sd, x0=0.0):
    x = np.empty(n)
    prev = x0
    for t in range(n):
        prev = phi * prev + sd * rng.standard_normal()
        x[t] = prev
    return x


def _band_process(rng, n, freq, radius=0.92):
    a1, a2 = 2 * radius * np.cos(2 * np.pi * freq), -radius**2
    x = np.zeros(n + 100)
    e = rng.standard_normal(n + 100)
    for t in range(2, n + 100):
        x[t] = a1 * x[t - 1] + a2 * x[t - 2] + e[t]
    x = x[100:]
    return (x - x.mean()) / x.std()


def _messages(rng, weeks, fridays, latent, rate):
    stances = np.arange(-2, 3)
    msgs, labels = [], []
    for t in range(weeks):
        n = max(5, int(rng.poisson(rate)))
        logits = 0.9 * stances * latent[t] - 0.35 * stances**2
        p = np.exp(logits - logits.max())
        p /= p.sum()
        draw = rng.choice(stances, size=n, p=p)
        start = datetime.fromisoformat(str(fridays[t] - np.timedelta64(6, "D"))).replace(tzinfo=timezone.utc)
        secs = np.sort(rng.integers(0, 7 * 86400, size=n))
        for j in range(n):
            s = int(draw[j])
            body = TEMPLATES[s][int(rng.integers(len(TEMPLATES[s])))]
            likes = int(rng.geometric(0.3)) - 1
            reshares = int(rng.poisson(0.5))
            m = RawMessage(f"m{t:04d}-{j:03d}", start + timedelta(seconds=int(secs[j])), body, likes, reshares)
            msgs.append(m)
            labels.append(s)
    return msgs, labels


def _daily(rng, fridays, weekly: np.ndarray, rule: AlignRule, positive: bool, jitter: float):
    """Five weekday observations per week consistent with the weekly value under ``rule``."""
    n = fridays.size
    out = np.empty((n, 5))
    for t in range(n):
        if rule is AlignRule.LAST_VALUE:
            noise = jitter * rng.standard_normal(4)
            base = weekly[t - 1] if t else weekly[t]
            out[t, :4] = base * np.exp(noise) if positive else base + noise
            out[t, 4] = weekly[t]
        else:
            d = jitter * rng.standard_normal(5)
            d -= d.mean()
            out[t] = weekly[t] * (1.0 + d) if positive else weekly[t] + d
            out[t, 4] = 5 * weekly[t] - out[t, :4].sum()
    days = (fridays[:, None] - np.arange(4, -1, -1)[None, :]).ravel()
    return days, out.ravel()


def gen_synthetic(out_dir, seed: int = 0, weeks: int = 546, message_rate: float = 40.0) -> PlantedTruth:
    """Write ``messages.jsonl``, ``macro_daily.csv``, ``fomc_dates.csv`` and ``planted.json``."""
    if weeks < 120:
        raise SeriesError("gen_synthetic: weeks must be >= 120")
    _check_templates()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    truth = PlantedTruth(seed=seed, weeks=weeks)
    fridays = START_FRIDAY + 7 * np.arange(weeks)

    latent = _ar1(rng, weeks, 0.85, np.sqrt(1 - 0.85**2))
    msgs, labels = _messages(rng, weeks, fridays, latent, message_rate)
    classified = [ClassifiedMessage(m, Stance(s), Source.LEXICON) for m, s in zip(msgs, labels)]
    mpe = build_mpe_weekly(classified).series.values
    truth.index_mean, truth.index_sd = float(mpe.mean()), float(mpe.std())
    truth.stance_counts = {str(s): int(np.sum(np.asarray(labels) == s)) for s in range(-2, 3)}
    z = (mpe - truth.index_mean) / truth.index_sd

    geo_band = _band_process(rng, weeks, truth.geo_frequency)
    ret = truth.noise_sd * rng.standard_normal(weeks) + 0.002
    for lag, c in zip(truth.mpe_lags, truth.mpe_coefs):
        ret[lag:] += c * z[:-lag]
    ret[truth.geo_lag:] += truth.geo_coef * geo_band[:-truth.geo_lag]

    level = {}
    level["Btc"] = 500.0 * np.exp(np.cumsum(ret))
    level["SP500"] = 1800.0 * np.exp(np.cumsum(0.002 + 0.02 * rng.standard_normal(weeks)))
    level["Gold"] = 1200.0 * np.exp(np.cumsum(0.001 + 0.018 * rng.standard_normal(weeks)))
    level["Brent"] = 70.0 * np.exp(np.cumsum(0.04 * rng.standard_normal(weeks)))
    level["HighYield"] = 4.5 * np.exp(_ar1(rng, weeks, 0.97, 0.03))
    level["VIX"] = 18.0 * np.exp(_ar1(rng, weeks, 0.9, 0.12))
    level["PolUncert"] = 120.0 * np.exp(_ar1(rng, weeks, 0.8, 0.15))
    geo_growth = 0.03 * geo_band + 0.01 * rng.standard_normal(weeks)
    level["GeopolRisk"] = 100.0 * np.cumprod(1.0 + geo_growth)
    level["USDollar"] = 110.0 * np.exp(np.cumsum(0.005 * rng.standard_normal(weeks)))
    level["Infect"] = np.abs(5.0 + _ar1(rng, weeks, 0.95, 1.0))
    level["JoblessClaim"] = 230000.0 * np.exp(_ar1(rng, weeks, 0.9, 0.05))
    level["ExchRate"] = 100.0 * np.exp(np.cumsum(0.004 * rng.standard_normal(weeks)))
    level["5yInflExp"] = 2.0 + _ar1(rng, weeks, 0.97, 0.05)
    level["GgleInfl"] = np.clip(40.0 + _ar1(rng, weeks, 0.9, 5.0), 1.0, 100.0)
    level["GgleReces"] = np.clip(30.0 + _ar1(rng, weeks, 0.9, 5.0), 1.0, 100.0)
    level["GgleClimate"] = np.clip(50.0 + _ar1(rng, weeks, 0.7, 6.0), 1.0, 100.0)
    level["NewsSent"] = _ar1(rng, weeks, 0.8, 0.1)

    # policy rate: moves only at meetings, leaning against the stance latent
    fomc = []
    d = np.datetime64("2014-01-29")
    k = 0
    while d <= fridays[-1]:
        fomc.append(d)
        d = d + np.timedelta64(7 * (6 if k % 2 else 7), "D")
        k += 1
    ffr = np.empty(weeks)
    rate = 1.0
    meet = set(((np.asarray(fomc) - np.timedelta64(6, "D") - START_FRIDAY) // np.timedelta64(7, "D") + 1).tolist())
    for t in range(weeks):
        if t in meet:
            u = rng.random()
            if latent[t] < -0.3 and u < 0.6:
                rate += 0.25
            elif latent[t] > 0.3 and u < 0.6 and rate > 0.3:
                rate -= 0.25
        ffr[t] = rate
    level["FFR"] = ffr

    cols, days = {}, None
    positive = {"NewsSent": False, "5yInflExp": False, "FFR": False}
    for name in MACRO_NAMES:
        var = BY_NAME[name]
        jitter = 0.0 if name == "FFR" else (0.002 if positive.get(name, True) else 0.01)
        days, vals = _daily(rng, fridays, level[name], var.rule, positive.get(name, True), jitter)
        cols[name] = vals
    write_frame_csv(out / "macro_daily.csv", days, cols)
    write_jsonl(out / "messages.jsonl", (m.to_json() for m in msgs))
    with open(out / "planted_stances.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "stance"])
        for m, s in zip(msgs, labels):
            w.writerow([m.id, s])
    with open(out / "fomc_dates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date"])
        for d in fomc:
            w.writerow([str(d)])
    with open(out / "planted.json", "w") as fh:
        json.dump(asdict(truth), fh, indent=1, sort_keys=True)
    return truth


__all__ = ["gen_synthetic", "PlantedTruth", "TEMPLATES", "TARGET", "INDEX"]
