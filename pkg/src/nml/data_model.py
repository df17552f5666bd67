"""Weekly series container, Friday-grid alignment, transforms and summary statistics."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FRIDAY = 4  # datetime.weekday() of Friday
_DAY = np.timedelta64(1, "D")
_WEEK = np.timedelta64(7, "D")


class SeriesError(ValueError):
    """Raised when a series violates a precondition."""


class AlignRule(str, enum.Enum):
    LAST_VALUE = "LastValue"
    WEEK_MEAN = "WeekMean"


class TransformKind(str, enum.Enum):
    LEVEL = "Level"
    LOG_RETURN = "LogReturn"
    GROWTH_RATE = "GrowthRate"
    LOG_DIFF = "LogDiff"
    DIFF1 = "Diff1"
    DIFF2 = "Diff2"


def to_dates(values: Sequence) -> np.ndarray:
    return np.asarray(values, dtype="datetime64[D]")


def week_ending_friday(dates) -> np.ndarray:
    """Map each calendar date to the Friday closing its week (Sat..Fri)."""
    d = to_dates(dates)
    # 1970-01-01 was a Thursday, so weekday = (days + 3) % 7 with Monday = 0.
    weekday = (d.astype("int64") + 3) % 7
    return d + ((FRIDAY - weekday) % 7).astype("timedelta64[D]")


@dataclass(frozen=True)
class WeeklySeries:
    """A named series on a contiguous week-ending-Friday grid.

    Missing weeks carry ``NaN`` in ``values`` and ``True`` in ``missing``.
    """

    name: str
    dates: np.ndarray
    values: np.ndarray
    missing: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        dates = to_dates(self.dates)
        values = np.asarray(self.values, dtype=float).copy()
        if self.missing is None:
            missing = ~np.isfinite(values)
        else:
            missing = np.asarray(self.missing, dtype=bool).copy()
        if not self.name:
            raise SeriesError("series name must be nonempty")
        if dates.ndim != 1 or dates.shape != values.shape or missing.shape != values.shape:
            raise SeriesError(f"{self.name}: dates, values and mask must be 1-D of equal length")
        if len(dates):
            if np.any(week_ending_friday(dates) != dates):
                raise SeriesError(f"{self.name}: dates must fall on Fridays")
            if len(dates) > 1 and np.any(np.diff(dates) != _WEEK):
                raise SeriesError(f"{self.name}: dates must be consecutive weeks")
        if np.any(~np.isfinite(values[~missing])):
            raise SeriesError(f"{self.name}: non-finite value at a non-missing date")
        values[missing] = np.nan
        for arr in (dates, values, missing):
            arr.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    def __len__(self) -> int:
        return len(self.dates)

    def rename(self, name: str) -> "WeeklySeries":
        return WeeklySeries(name, self.dates, self.values, self.missing)

    def dropna(self) -> tuple[np.ndarray, np.ndarray]:
        """Non-missing ``(dates, values)``; the result is no longer a contiguous grid."""
        keep = ~self.missing
        return self.dates[keep], self.values[keep]

    def slice(self, start=None, end=None) -> "WeeklySeries":
        """Inclusive date slice."""
        keep = np.ones(len(self), dtype=bool)
        if start is not None:
            keep &= self.dates >= np.datetime64(start, "D")
        if end is not None:
            keep &= self.dates <= np.datetime64(end, "D")
        return WeeklySeries(self.name, self.dates[keep], self.values[keep], self.missing[keep])

    def reindex(self, dates) -> "WeeklySeries":
        """Place values on another Friday grid; absent dates become missing."""
        dates = to_dates(dates)
        out = np.full(len(dates), np.nan)
        pos = {d: i for i, d in enumerate(self.dates.tolist())}
        for j, d in enumerate(dates.tolist()):
            i = pos.get(d)
            if i is not None and not self.missing[i]:
                out[j] = self.values[i]
        return WeeklySeries(self.name, dates, out)


def align_weekly(dates, values, rule: AlignRule | str = AlignRule.LAST_VALUE,
                 name: str = "series") -> WeeklySeries:
    """Resample dated observations onto the week-ending-Friday grid.

    ``LastValue`` keeps the latest observation in (previous Friday, Friday];
    ``WeekMean`` averages every observation in that interval. Weeks without
    observations are flagged missing.
    """
    rule = AlignRule(rule)
    d = to_dates(dates)
    v = np.asarray(values, dtype=float)
    if d.size == 0:
        raise SeriesError("align_weekly: empty input")
    if d.shape != v.shape:
        raise SeriesError("align_weekly: dates and values differ in length")
    if np.any(np.diff(d) < np.timedelta64(0, "D")):
        raise SeriesError("align_weekly: dates must be sorted ascending")
    ok = np.isfinite(v)
    fridays = week_ending_friday(d)
    grid = np.arange(fridays[0], fridays[-1] + _DAY, _WEEK)
    week_idx = ((fridays - grid[0]) // _WEEK).astype(int)
    out = np.full(len(grid), np.nan)
    if rule is AlignRule.LAST_VALUE:
        # later rows overwrite earlier ones within a week
        out[week_idx[ok]] = v[ok]
    else:
        sums = np.bincount(week_idx[ok], weights=v[ok], minlength=len(grid))
        counts = np.bincount(week_idx[ok], minlength=len(grid))
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return WeeklySeries(name, grid, out)


def transform(s: WeeklySeries, kind: TransformKind | str) -> WeeklySeries:
    """Apply one of the variable transformations; missing values propagate."""
    kind = TransformKind(kind)
    v = s.values
    if kind is TransformKind.LEVEL:
        return s
    if kind in (TransformKind.LOG_RETURN, TransformKind.LOG_DIFF):
        bad = (~s.missing) & (v <= 0)
        if np.any(bad):
            first = s.dates[np.argmax(bad)]
            raise SeriesError(f"{s.name}: nonpositive value {v[bad][0]!r} at {first} under {kind.value}")
        if len(v) < 2:
            raise SeriesError(f"{s.name}: {kind.value} needs at least 2 observations")
        out = np.log(v[1:] / v[:-1])
        return WeeklySeries(s.name, s.dates[1:], out)
    if kind is TransformKind.GROWTH_RATE:
        if len(v) < 2:
            raise SeriesError(f"{s.name}: GrowthRate needs at least 2 observations")
        with np.errstate(divide="ignore", invalid="ignore"):
            out = v[1:] / v[:-1] - 1.0
        out[~np.isfinite(out)] = np.nan
        return WeeklySeries(s.name, s.dates[1:], out)
    if kind is TransformKind.DIFF1:
        if len(v) < 2:
            raise SeriesError(f"{s.name}: Diff1 needs at least 2 observations")
        return WeeklySeries(s.name, s.dates[1:], np.diff(v))
    if len(v) < 3:
        raise SeriesError(f"{s.name}: Diff2 needs at least 3 observations")
    return WeeklySeries(s.name, s.dates[2:], np.diff(v, n=2))


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    sd: float
    skewness: float
    kurtosis: float
    min: float
    p5: float
    p25: float
    median: float
    p75: float
    p95: float
    max: float
    n: int

    def as_row(self) -> list:
        return [self.mean, self.sd, self.skewness, self.kurtosis, self.min, self.p5,
                self.p25, self.median, self.p75, self.p95, self.max, self.n]


SUMMARY_COLUMNS = ["Mean", "SD", "Skew", "Kurt", "Min", "5%", "25%", "Med", "75%", "95%", "Max", "n"]


def describe_values(x) -> SummaryStats:
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise SeriesError("describe: no non-missing observations")
    mean = float(x.mean())
    dev = x - mean
    m2 = float(np.mean(dev**2))
    sd = float(np.sqrt(m2))
    if m2 > 0 and sd > 1e-14 * max(1.0, abs(mean)):
        skew = float(np.mean(dev**3) / m2**1.5)
        kurt = float(np.mean(dev**4) / m2**2)
    else:
        sd, skew, kurt = 0.0, 0.0, 0.0
    q = np.percentile(x, [0, 5, 25, 50, 75, 95, 100])
    q = np.maximum.accumulate(q)  # guard against rounding inversions in interpolation
    return SummaryStats(mean, sd, skew, kurt, *map(float, q), n=int(x.size))


def describe(s: WeeklySeries) -> SummaryStats:
    """Moments with n-denominators, non-excess kurtosis, linear-interpolated percentiles."""
    try:
        return describe_values(s.values[~s.missing])
    except SeriesError as exc:
        raise SeriesError(f"{s.name}: {exc}") from None


def intersect(*series: WeeklySeries) -> tuple[np.ndarray, list[np.ndarray]]:
    """Common non-missing dates across series and the matching value arrays."""
    common = None
    for s in series:
        d, _ = s.dropna()
        common = d if common is None else np.intersect1d(common, d)
    out = []
    for s in series:
        idx = np.searchsorted(s.dates, common)
        out.append(s.values[idx])
    return common, out


def pearson_corr(a: WeeklySeries, b: WeeklySeries) -> float:
    _, (x, y) = intersect(a, b)
    if x.size < 3:
        raise SeriesError(f"corr({a.name}, {b.name}): fewer than 3 overlapping dates")
    x = x - x.mean()
    y = y - y.mean()
    sx = np.sqrt(np.dot(x, x))
    sy = np.sqrt(np.dot(y, y))
    if sx == 0 or sy == 0:
        raise SeriesError(f"corr({a.name}, {b.name}): zero variance")
    return float(np.clip(np.dot(x, y) / (sx * sy), -1.0, 1.0))


# --- CSV ---------------------------------------------------------------------

def read_csv_columns(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Read ``date,<name1>,...``; blank cells become NaN."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "date":
            raise SeriesError(f"{path}: first column must be 'date'")
        names = [h.strip() for h in header[1:]]
        dates, cols = [], [[] for _ in names]
        for lineno, row in enumerate(reader, start=2):
            if not row or not row[0].strip():
                continue
            dates.append(row[0].strip())
            for j in range(len(names)):
                cell = row[j + 1].strip() if j + 1 < len(row) else ""
                try:
                    cols[j].append(float(cell) if cell else np.nan)
                except ValueError:
                    raise SeriesError(f"{path}:{lineno}: bad number {cell!r}") from None
    return to_dates(dates), {n: np.asarray(c, dtype=float) for n, c in zip(names, cols)}


def read_series_csv(path, rule: AlignRule | str = AlignRule.LAST_VALUE) -> dict[str, WeeklySeries]:
    """Read a (possibly multi-column) CSV and align every column to Fridays."""
    dates, cols = read_csv_columns(path)
    if list(cols) == ["value"]:
        cols = {Path(path).stem: cols["value"]}
    return {n: align_weekly(dates, v, rule, name=n) for n, v in cols.items()}


def fmt_float(x) -> str:
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    return repr(float(x))


def write_frame_csv(path, dates, columns: dict[str, Sequence]) -> None:
    """Write ``date,<col>...`` with round-trip float repr and blanks for NaN."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dates = [str(d) for d in to_dates(dates)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *columns])
        cols = list(columns.values())
        for i, d in enumerate(dates):
            w.writerow([d, *(fmt_float(c[i]) for c in cols)])


def frame_to_series(dates, columns: dict[str, np.ndarray]) -> dict[str, WeeklySeries]:
    return {n: WeeklySeries(n, dates, v) for n, v in columns.items()}
