"""Windowing, per-fold standardisation, hyperparameter search and the multi-run ensemble."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data_model import SeriesError
from .folds import FoldSpec, make_folds
from .lstm import Hyperparams, LstmParams, lstm_predict, train_lstm
from .tpe import DEFAULT_SPACE, SearchSpace, TpeResult, to_hyperparams, tpe_search

log = logging.getLogger(__name__)

RUN_REPORT_COLUMNS = ("Fold", "Run", "RMSE", "MAE", "Val. Loss", "Opt.", "Lbk.", "Units")


def substream(seed: int, *keys: int) -> int:
    """Independent integer seed for a named position (fold, trial, run, ...)."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def window_supervised(features, target, L: int):
    """Windows ending at each ``t`` paired with the next-week target.

    Returns ``X`` of shape (n - L, L, N), ``y`` with ``y[s] = target[s + L]`` and
    the grid index of each label.
    """
    F = np.asarray(features, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    y = np.asarray(target, dtype=float)
    n = F.shape[0]
    if y.size != n:
        raise SeriesError("window_supervised: features and target lengths differ")
    if L < 1 or L >= n:
        raise SeriesError(f"window_supervised: lookback {L} must be in [1, {n - 1}]")
    if np.any(~np.isfinite(F)) or np.any(~np.isfinite(y)):
        raise SeriesError("window_supervised: missing values in the window span")
    idx = np.arange(L)[None, :] + np.arange(n - L)[:, None]
    return F[idx], y[L:], np.arange(L, n)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    sd: np.ndarray
    y_mean: float
    y_sd: float

    @classmethod
    def fit(cls, features: np.ndarray, target: np.ndarray) -> "Standardizer":
        """Statistics from the rows handed in; callers pass the fitting range only."""
        mu = features.mean(axis=0)
        sd = features.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        ysd = float(target.std())
        return cls(mu, sd, float(target.mean()), ysd if ysd > 0 else 1.0)

    def features(self, F: np.ndarray) -> np.ndarray:
        return (F - self.mean) / self.sd

    def target(self, y: np.ndarray) -> np.ndarray:
        return (y - self.y_mean) / self.y_sd

    def inverse_target(self, z: np.ndarray) -> np.ndarray:
        return z * self.y_sd + self.y_mean


@dataclass
class ForecastDataset:
    dates: np.ndarray
    features: np.ndarray  # (n, N), aligned, no missing values
    names: list[str]
    target: np.ndarray  # (n,), the quantity forecast one week ahead

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        if self.features.shape != (len(self.dates), len(self.names)) or self.target.size != len(self.dates):
            raise SeriesError("ForecastDataset: inconsistent shapes")


@dataclass
class FoldData:
    X: dict  # part -> (samples, L, N) standardised windows
    y: dict  # part -> standardised labels
    label_idx: dict
    scaler: Standardizer


def fold_windows(ds: ForecastDataset, fold: FoldSpec, L: int, fit_end: int) -> FoldData:
    """Standardise with rows ``[0, fit_end)`` and assign windows to parts by label date."""
    sc = Standardizer.fit(ds.features[:fit_end], ds.target[:fit_end])
    X, y, lab = window_supervised(sc.features(ds.features), sc.target(ds.target), L)
    out_X, out_y, out_i = {}, {}, {}
    for part in ("train", "val", "test"):
        lo, hi = getattr(fold, part)
        m = (lab >= lo) & (lab < hi)
        out_X[part], out_y[part], out_i[part] = X[m], y[m], lab[m]
    return FoldData(out_X, out_y, out_i, sc)


@dataclass
class TrainReport:
    fold: int
    run: int
    rmse: float
    mae: float
    best_val_loss: float
    hyperparams: Hyperparams
    seed: int

    def row(self) -> list:
        hp = self.hyperparams
        return [self.fold, self.run, self.rmse, self.mae, self.best_val_loss, hp.optimizer, hp.lookback, hp.units]


@dataclass
class WalkForwardConfig:
    trials: int = 75
    runs: int = 5
    max_epochs: int = 100
    patience: int = 10
    n_startup: int = 15
    scale_folds: bool = False
    seed: int = 0
    space: SearchSpace = DEFAULT_SPACE
    identical_run_seeds: bool = False  # every run reuses run 1's seed


@dataclass
class FoldResult:
    fold: FoldSpec
    best: Hyperparams
    search: TpeResult
    reports: list[TrainReport]
    failures: list[tuple[int, str]]
    test_idx: np.ndarray
    y_true: np.ndarray
    run_predictions: dict  # run -> original-scale test predictions
    ensemble_prediction: np.ndarray
    ensemble_rmse: float
    ensemble_mae: float
    mean_predictor_rmse: float
    median_run: int | None
    models: dict = field(repr=False, default_factory=dict)
    data: FoldData | None = field(repr=False, default=None)

    @property
    def ensemble_errors(self) -> np.ndarray:
        return self.y_true - self.ensemble_prediction


@dataclass
class WalkForwardResult:
    folds: list[FoldResult]
    names: list[str]

    def run_report(self) -> list[list]:
        return [r.row() for f in self.folds for r in sorted(f.reports, key=lambda r: r.run)]

    def write_run_report(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RUN_REPORT_COLUMNS)
            for row in self.run_report():
                w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])

    def mean_rmse_ratio(self) -> float:
        return float(np.mean([f.ensemble_rmse / f.mean_predictor_rmse for f in self.folds]))


def _metrics(y: np.ndarray, yhat: np.ndarray) -> tuple[float, float]:
    e = y - yhat
    return float(np.sqrt(np.mean(e**2))), float(np.mean(np.abs(e)))


def _median_run(reports: list[TrainReport]) -> int | None:
    if not reports:
        return None
    ranked = sorted(reports, key=lambda r: (r.rmse, r.run))
    return ranked[(len(ranked) - 1) // 2].run


def run_fold(ds: ForecastDataset, fold: FoldSpec, cfg: WalkForwardConfig) -> FoldResult:
    cache: dict[int, FoldData] = {}

    def data_for(L: int, final: bool) -> FoldData:
        key = (L, final)
        if key not in cache:
            cache[key] = fold_windows(ds, fold, L, fold.val[1] if final else fold.train[1])
        return cache[key]

    def objective(params: dict):
        hp = to_hyperparams(params)
        d = data_for(hp.lookback, False)
        trial_seed = substream(cfg.seed, fold.fold_id, 1, len(seen))
        seen.append(trial_seed)
        _, hist = train_lstm(d.X["train"], d.y["train"], hp, trial_seed, d.X["val"], d.y["val"],
                             max_epochs=cfg.max_epochs, patience=cfg.patience)
        return hist.best_val_loss, {"stopped_epoch": hist.stopped_epoch, "best_epoch": hist.best_epoch}

    seen: list[int] = []
    search = tpe_search(objective, cfg.space, trials=cfg.trials, seed=substream(cfg.seed, fold.fold_id, 0),
                        n_startup=cfg.n_startup)
    budget = int(search.trials[search.best_trial].info["stopped_epoch"])
    best = to_hyperparams(search.best_params, epochs=budget)
    d_search = data_for(best.lookback, False)
    d_final = data_for(best.lookback, True)
    X_fit = np.concatenate([d_final.X["train"], d_final.X["val"]])
    y_fit = np.concatenate([d_final.y["train"], d_final.y["val"]])
    sc = d_final.scaler
    y_true = sc.inverse_target(d_final.y["test"])
    reports, failures, preds, models = [], [], {}, {}
    for run in range(1, cfg.runs + 1):
        seed = substream(cfg.seed, fold.fold_id, 2, 1 if cfg.identical_run_seeds else run)
        try:
            _, hist = train_lstm(d_search.X["train"], d_search.y["train"], best, seed,
                                 d_search.X["val"], d_search.y["val"], cfg.max_epochs, cfg.patience)
            params, _ = train_lstm(X_fit, y_fit, best, seed)
        except SeriesError as exc:
            failures.append((run, str(exc)))
            log.warning("fold %d run %d failed: %s", fold.fold_id, run, exc)
            continue
        yhat = sc.inverse_target(lstm_predict(params, d_final.X["test"]))
        rmse, mae = _metrics(y_true, yhat)
        reports.append(TrainReport(fold.fold_id, run, rmse, mae, hist.best_val_loss, best, seed))
        preds[run] = yhat
        models[run] = params
    if preds:
        ens = np.mean([preds[r] for r in sorted(preds)], axis=0)
        e_rmse, e_mae = _metrics(y_true, ens)
    else:
        ens = np.full(y_true.size, np.nan)
        e_rmse = e_mae = float("nan")
    mean_pred = float(np.mean(ds.target[:fold.val[1]]))
    base_rmse, _ = _metrics(y_true, np.full(y_true.size, mean_pred))
    return FoldResult(fold, best, search, reports, failures, d_final.label_idx["test"], y_true, preds,
                      ens, e_rmse, e_mae, base_rmse, _median_run(reports), models, d_final)


def walk_forward_ensemble(ds: ForecastDataset, cfg: WalkForwardConfig = WalkForwardConfig(),
                          folds: list[FoldSpec] | None = None) -> WalkForwardResult:
    """Search once per fold, then train ``cfg.runs`` seeds and average their test predictions."""
    folds = folds if folds is not None else make_folds(ds.dates, scale=cfg.scale_folds)
    out = []
    for fold in folds:
        log.info("fold %d: search with %d trials", fold.fold_id, cfg.trials)
        out.append(run_fold(ds, fold, cfg))
    return WalkForwardResult(out, list(ds.names))


def hyperparams_row(hp: Hyperparams) -> dict:
    return asdict(hp)
