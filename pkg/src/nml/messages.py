"""Stance classification, the engagement-weighted MPE index, regimes and FOMC event study."""

from __future__ import annotations

import csv
import enum
import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Protocol, Sequence

import numpy as np

from .data_model import SeriesError, WeeklySeries, to_dates, week_ending_friday

log = logging.getLogger(__name__)

REGIME_BAND = 0.01


class Stance(enum.IntEnum):
    VERY_HAWKISH = -2
    HAWKISH = -1
    NEUTRAL = 0
    DOVISH = 1
    VERY_DOVISH = 2

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, text: str) -> "Stance":
        key = " ".join(str(text).strip().strip('."\'').lower().split())
        try:
            return _BY_KEY[key]
        except KeyError:
            raise ValueError(f"not a stance category: {text!r}") from None


_LABELS = {
    Stance.VERY_HAWKISH: "Very Hawkish",
    Stance.HAWKISH: "Hawkish",
    Stance.NEUTRAL: "Neutral",
    Stance.DOVISH: "Dovish",
    Stance.VERY_DOVISH: "Very Dovish",
}
_BY_KEY = {lab.lower(): s for s, lab in _LABELS.items()}


class Source(str, enum.Enum):
    REMOTE = "Remote"
    LEXICON = "Lexicon"


@dataclass(frozen=True)
class RawMessage:
    id: str
    created_at: datetime
    body: str
    likes: int = 0
    reshares: int = 0

    def __post_init__(self):
        if self.likes < 0 or self.reshares < 0:
            raise ValueError(f"message {self.id}: engagement counts must be nonnegative")

    @property
    def weight(self) -> float:
        return 1.0 + self.likes + self.reshares

    @classmethod
    def from_json(cls, obj: dict) -> "RawMessage":
        return cls(
            id=str(obj["id"]),
            created_at=datetime.fromisoformat(str(obj["created_at"]).replace("Z", "+00:00")),
            body=str(obj.get("body") or ""),
            likes=int(obj.get("likes", 0)),
            reshares=int(obj.get("reshares", 0)),
        )

    def to_json(self) -> dict:
        return {"id": self.id, "created_at": self.created_at.isoformat(), "body": self.body,
                "likes": self.likes, "reshares": self.reshares}


@dataclass(frozen=True)
class ClassifiedMessage:
    message: RawMessage
    stance: Stance
    source: Source

    def to_json(self) -> dict:
        out = self.message.to_json()
        out.update(stance=int(self.stance), label=self.stance.label, source=self.source.value)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ClassifiedMessage":
        return cls(RawMessage.from_json(obj), Stance(int(obj["stance"])), Source(obj["source"]))


def read_messages(path) -> list[RawMessage]:
    out, seen = [], set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                msg = RawMessage.from_json(json.loads(line))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if msg.id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate message id {msg.id!r}")
            seen.add(msg.id)
            out.append(msg)
    return out


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


# --- classifiers -------------------------------------------------------------

LEXICON_VERSION = "1"

HAWKISH_TERMS = (
    r"hik(?:e|es|ed|ing)",
    r"tighten(?:s|ed|ing)?",
    r"raise rates?",
    r"inflation fight",
    r"higher for longer",
    r"aggressive(?:ly)?",
    r"hawkish",
    r"(?:50|75|100) ?bps",
)
DOVISH_TERMS = (
    r"cut(?:s|ting)?",
    r"eas(?:e|es|ed|ing)",
    r"stimulus",
    r"qe",
    r"pause[sd]?",
    r"pivot(?:s|ed|ing)?",
    r"dovish",
    r"lower rates",
)
_HAWK_RE = [re.compile(rf"\b{t}\b", re.IGNORECASE) for t in HAWKISH_TERMS]
_DOVE_RE = [re.compile(rf"\b{t}\b", re.IGNORECASE) for t in DOVISH_TERMS]


def lexicon_score(body: str) -> Stance:
    """``clamp(dovish hits - hawkish hits, -2, 2)`` over the shipped keyword table."""
    hawk = sum(len(r.findall(body)) for r in _HAWK_RE)
    dove = sum(len(r.findall(body)) for r in _DOVE_RE)
    return Stance(int(np.clip(dove - hawk, -2, 2)))


class StanceClassifier(Protocol):
    source: Source

    def classify(self, body: str) -> Stance: ...


class LexiconClassifier:
    source = Source.LEXICON

    def classify(self, body: str) -> Stance:
        return lexicon_score(body)


SYSTEM_PROMPT = """\
You label short social-media posts by the monetary-policy stance they express.
Answer with exactly one of: Very Hawkish, Hawkish, Neutral, Dovish, Very Dovish.

Very Hawkish: pushes for large rate hikes or aggressive tightening to fight inflation.
Hawkish: leans toward tighter policy, without calling for drastic action.
Neutral: no clear lean, or content with current policy.
Dovish: leans toward easier policy such as lower rates or asset purchases.
Very Dovish: pushes for deep cuts or large-scale easing well beyond routine moves.

Read tone, hashtags, tickers and any economic events mentioned. Reply with the label only.
"""

USER_PROMPT = """\
Post: "{}"
Reply with one label: Very Hawkish, Hawkish, Neutral, Dovish or Very Dovish. No other text.
"""


def load_prompts(path) -> tuple[str, str]:
    """Read a replacement prompt pair from JSON ``{"system": ..., "user": ...}``.

    The user template must contain a single ``{}`` where the message body goes.
    """
    with open(path) as fh:
        doc = json.load(fh)
    system, user = doc.get("system"), doc.get("user")
    if not isinstance(system, str) or not isinstance(user, str) or user.count("{}") != 1:
        raise ValueError(f"{path}: need string 'system' and 'user' keys, user with exactly one {{}}")
    return system, user


def build_request(body: str, system: str = SYSTEM_PROMPT, user: str = USER_PROMPT) -> dict:
    return {"system": system, "user": user.format(body)}


class ClassifierUnavailable(RuntimeError):
    def __init__(self, unclassified: int, cause: str):
        super().__init__(f"remote classifier unreachable; {unclassified} message(s) unclassified: {cause}")
        self.unclassified = unclassified


class _InvalidLabel(Exception):
    pass


@dataclass
class RemoteClassifier:
    """HTTP client for an external LLM stance classifier.

    POSTs ``{"system", "user"}`` JSON and expects ``{"category": str}``. Labels
    outside the five categories are retried up to ``label_retries`` times and
    then defaulted to Neutral, incrementing ``invalid_labels``.
    """

    url: str | None = None
    timeout: float = 30.0
    retries: int = 3
    label_retries: int = 2
    backoff: float = 0.5
    concurrency: int = 4
    system_prompt: str = SYSTEM_PROMPT
    user_prompt: str = USER_PROMPT
    invalid_labels: int = field(default=0, init=False)
    source = Source.REMOTE

    def __post_init__(self):
        self.url = self.url or os.environ.get("NML_CLASSIFIER_URL")
        if not self.url:
            raise ValueError("no classifier URL configured (set NML_CLASSIFIER_URL)")

    def _post(self, payload: dict) -> str:
        data = json.dumps(payload).encode()
        last = "no attempt"
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(self.url, data=data, headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return str(json.loads(resp.read().decode())["category"])
            except (urllib.error.URLError, OSError, KeyError, ValueError) as exc:
                last = repr(exc)
                if attempt < self.retries:
                    time.sleep(self.backoff * 2**attempt)
        raise ConnectionError(last)

    def classify(self, body: str) -> Stance:
        payload = build_request(body, self.system_prompt, self.user_prompt)
        for _ in range(self.label_retries + 1):
            try:
                return Stance.from_label(self._post(payload))
            except ValueError:
                continue
        self.invalid_labels += 1
        log.warning("classifier returned no valid category after %d tries; using Neutral",
                    self.label_retries + 1)
        return Stance.NEUTRAL


def classify_batch(messages: Sequence[RawMessage], backend: StanceClassifier) -> list[ClassifiedMessage]:
    """Classify messages in input order; remote backends run with bounded concurrency."""
    if isinstance(backend, RemoteClassifier) and backend.concurrency > 1 and len(messages) > 1:
        results: list[Stance | None] = [None] * len(messages)
        errors: list[str] = []

        def work(i: int):
            try:
                results[i] = backend.classify(messages[i].body)
            except ConnectionError as exc:
                errors.append(str(exc))

        with ThreadPoolExecutor(max_workers=backend.concurrency) as pool:
            list(pool.map(work, range(len(messages))))
        missing = sum(r is None for r in results)
        if missing:
            raise ClassifierUnavailable(missing, errors[0] if errors else "unknown")
        stances = results
    else:
        stances = []
        for i, m in enumerate(messages):
            try:
                stances.append(backend.classify(m.body))
            except ConnectionError as exc:
                raise ClassifierUnavailable(len(messages) - i, str(exc)) from None
    return [ClassifiedMessage(m, s, backend.source) for m, s in zip(messages, stances)]


# --- index -------------------------------------------------------------------

@dataclass(frozen=True)
class MpeSeries:
    series: WeeklySeries
    counts: np.ndarray
    weights: np.ndarray


def build_mpe_weekly(classified: Sequence[ClassifiedMessage]) -> MpeSeries:
    """Weekly engagement-weighted mean stance, weight ``1 + likes + reshares``."""
    if not classified:
        raise SeriesError("build_mpe_weekly: no messages")
    days = to_dates([c.message.created_at.date().isoformat() for c in classified])
    fridays = week_ending_friday(days)
    w = np.array([c.message.weight for c in classified], dtype=float)
    s = np.array([int(c.stance) for c in classified], dtype=float)
    start, stop = fridays.min(), fridays.max()
    grid = np.arange(start, stop + np.timedelta64(1, "D"), np.timedelta64(7, "D"))
    idx = ((fridays - start) // np.timedelta64(7, "D")).astype(int)
    # sort within bins so the result does not depend on message order
    order = np.lexsort((s, w, idx))
    num = np.bincount(idx[order], weights=(w * s)[order], minlength=len(grid))
    den = np.bincount(idx[order], weights=w[order], minlength=len(grid))
    counts = np.bincount(idx, minlength=len(grid))
    with np.errstate(invalid="ignore", divide="ignore"):
        mpe = np.where(counts > 0, num / np.where(den > 0, den, 1.0), np.nan)
    mpe = np.clip(mpe, -2.0, 2.0)
    return MpeSeries(WeeklySeries("MPE", grid, mpe), counts, den)


# --- regimes -----------------------------------------------------------------

class Regime(str, enum.Enum):
    DOVISH = "Dovish"
    NEUTRAL = "Neutral"
    HAWKISH = "Hawkish"
    FALLING = "Falling"
    FLAT = "Flat"
    RISING = "Rising"


MPE_REGIMES = (Regime.DOVISH, Regime.NEUTRAL, Regime.HAWKISH)
RATE_REGIMES = (Regime.FALLING, Regime.FLAT, Regime.RISING)


def mpe_regime(value: float, band: float = REGIME_BAND) -> Regime:
    if value > band:
        return Regime.DOVISH
    if value < -band:
        return Regime.HAWKISH
    return Regime.NEUTRAL


def rate_regime(delta: float) -> Regime:
    if delta > 0:
        return Regime.RISING
    if delta < 0:
        return Regime.FALLING
    return Regime.FLAT


def partition_regime(s: WeeklySeries, mode: str = "mpe") -> tuple[np.ndarray, list[Regime]]:
    """Label each date. ``mpe`` thresholds levels at +-0.01; ``rate`` uses the sign of
    the weekly change and drops the first date. Missing dates are skipped."""
    mode = mode.lower()
    if mode in ("mpe", "mpemode"):
        keep = ~s.missing
        return s.dates[keep], [mpe_regime(v) for v in s.values[keep]]
    if mode in ("rate", "ratemode"):
        d = np.diff(s.values)
        keep = np.isfinite(d)
        return s.dates[1:][keep], [rate_regime(v) for v in d[keep]]
    raise ValueError(f"unknown regime mode {mode!r}")


# --- event study -------------------------------------------------------------

@dataclass
class EventStudy:
    rel_weeks: np.ndarray
    mean: dict[Regime, np.ndarray]
    sd: dict[Regime, np.ndarray]
    events: dict[Regime, list[np.datetime64]]
    dropped: int

    def rows(self) -> list[list]:
        out = []
        for g in MPE_REGIMES:
            if g not in self.mean:
                continue
            for k, m, s in zip(self.rel_weeks, self.mean[g], self.sd[g]):
                out.append([g.value, int(k), float(m), float(s), len(self.events[g])])
        return out


def event_study(mpe: MpeSeries | WeeklySeries, events, half_window: int = 6,
                pre_weeks: int = 5) -> EventStudy:
    """Mean and sd of the index at t-h..t+h around events grouped by pre-window mean."""
    s = mpe.series if isinstance(mpe, MpeSeries) else mpe
    fridays = np.unique(week_ending_friday(to_dates(list(events))))
    pos = {d: i for i, d in enumerate(s.dates.tolist())}
    paths: dict[Regime, list[np.ndarray]] = {}
    used: dict[Regime, list] = {}
    dropped = 0
    for ev in fridays.tolist():
        i = pos.get(ev)
        if i is None or i - half_window < 0 or i + half_window >= len(s):
            dropped += 1
            continue
        window = s.values[i - half_window:i + half_window + 1]
        pre = s.values[i - pre_weeks:i]
        if np.all(np.isnan(pre)):
            dropped += 1
            continue
        g = mpe_regime(float(np.nanmean(pre)))
        paths.setdefault(g, []).append(window)
        used.setdefault(g, []).append(np.datetime64(ev, "D"))
    if dropped:
        log.warning("event_study: dropped %d event(s) outside the usable span", dropped)
    if not paths:
        raise SeriesError("event_study: no usable events")
    rel = np.arange(-half_window, half_window + 1)
    mean, sd = {}, {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for g, ps in paths.items():
            arr = np.vstack(ps)
            mean[g] = np.nanmean(arr, axis=0)
            sd[g] = np.nanstd(arr, axis=0)
    return EventStudy(rel, mean, sd, used, dropped)


def read_event_dates(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "date":
            raise ValueError(f"{path}: expected header 'date'")
        return to_dates([r[0].strip() for r in reader if r and r[0].strip()])
