"""Expanding-window walk-forward partitions of a weekly grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data_model import SeriesError

REFERENCE_WEEKS = 546
TRAIN_WEEKS = (288, 391)
VAL_WEEKS = (36, 40)
TEST_WEEKS = (52, 64)
MIN_GRID = 500


@dataclass(frozen=True)
class FoldSpec:
    """Half-open index ranges ``[start, stop)`` on the weekly grid plus their dates."""

    fold_id: int
    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]
    dates: np.ndarray = None  # the full grid, for reporting

    def __post_init__(self):
        if not (self.train[0] < self.train[1] == self.val[0] < self.val[1] == self.test[0] < self.test[1]):
            raise ValueError(f"fold {self.fold_id}: ranges must be contiguous and nonempty")

    def lengths(self) -> tuple[int, int, int]:
        return (self.train[1] - self.train[0], self.val[1] - self.val[0], self.test[1] - self.test[0])

    def date_range(self, part: str) -> tuple[np.datetime64, np.datetime64]:
        lo, hi = getattr(self, part)
        return self.dates[lo], self.dates[hi - 1]


def make_folds(dates, n_folds: int = 4, scale: bool = False, val_weeks: int = 36,
               test_weeks: int = 52, last_test_weeks: int = 64) -> list[FoldSpec]:
    """Four anchored folds: each fold's training range absorbs the previous fold's
    training and validation ranges.

    With validation fixed at ``val_weeks`` the training length grows by that
    amount per fold starting at the bracket minimum. The last fold may use a
    longer test range, up to ``last_test_weeks``. With ``scale`` every length
    is multiplied by ``len(dates) / 546`` so shorter grids keep the same shape.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    n = dates.size
    if n < MIN_GRID and not scale:
        raise SeriesError(f"make_folds: grid of {n} weeks is shorter than {MIN_GRID}; pass scale=True")
    f = n / REFERENCE_WEEKS if scale else 1.0
    train0 = max(4, int(round(TRAIN_WEEKS[0] * f)))
    val = max(2, int(round(val_weeks * f)))
    test = max(2, int(round(test_weeks * f)))
    test_last = max(test, int(round(last_test_weeks * f)))
    folds = []
    for k in range(n_folds):
        tr_end = train0 + k * val
        va_end = tr_end + val
        te_len = test if k < n_folds - 1 else min(test_last, n - va_end)
        if te_len < test or va_end + te_len > n:
            raise SeriesError(f"make_folds: grid of {n} weeks cannot hold fold {k + 1}")
        folds.append(FoldSpec(k + 1, (0, tr_end), (tr_end, va_end), (va_end, va_end + te_len), dates))
    return folds
