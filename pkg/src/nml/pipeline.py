"""Stage runner: each stage reads upstream artifacts from disk, writes its own and a manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from . import baseline, causality, explain, messages, stattests, vmd
from .config import PipelineConfig
from .data_model import (SUMMARY_COLUMNS, SeriesError, WeeklySeries, align_weekly, describe, intersect,
                         pearson_corr, read_csv_columns, transform, write_frame_csv)
from .forecasting.lstm import Hyperparams, LstmParams, lstm_predict
from .forecasting.walkforward import (ForecastDataset, Standardizer, WalkForwardConfig, substream,
                                      walk_forward_ensemble, window_supervised)
from .variables import BY_NAME, INDEX, MACRO_NAMES, NAMES, TARGET

log = logging.getLogger(__name__)

STAGES = ("ingest", "classify", "index", "stats", "granger", "vmd", "forecast", "explain", "report")
DEPENDS = {
    "ingest": (),
    "classify": ("ingest",),
    "index": ("classify",),
    "stats": ("index",),
    "granger": ("index",),
    "vmd": ("index",),
    "forecast": ("index",),
    "explain": ("forecast",),
    "report": ("stats", "granger", "vmd", "forecast", "explain"),
}
STAGE_CONFIG = {
    "ingest": (),
    "classify": ("classifier",),
    "index": (),
    "stats": (),
    "granger": ("granger",),
    "vmd": ("vmd",),
    "forecast": ("forecast", "arima", "seed"),
    "explain": ("explain", "seed"),
    "report": (),
}
MANIFEST_VERSION = 1


class DependencyError(RuntimeError):
    def __init__(self, stage: str, missing: list[str]):
        super().__init__(f"stage {stage!r} requires prior stage(s): {', '.join(missing)}")
        self.stage, self.missing = stage, missing


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage, self.cause = stage, cause


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if not np.isfinite(v) else repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_rows(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


@dataclass
class Context:
    cfg: PipelineConfig
    out: Path
    seed: int
    extra: dict = field(default_factory=dict)

    def stage_dir(self, stage: str) -> Path:
        d = self.out / stage
        d.mkdir(parents=True, exist_ok=True)
        return d

    def panel(self) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        dates, cols = read_csv_columns(self.out / "index" / "panel.csv")
        return dates, cols


# --- stages -------------------------------------------------------------------

def stage_ingest(ctx: Context) -> None:
    cfg = ctx.cfg
    d = ctx.stage_dir("ingest")
    dates, cols = read_csv_columns(cfg.path(cfg.data.macro))
    missing = [n for n in MACRO_NAMES if n not in cols]
    if missing:
        raise SeriesError(f"macro file lacks column(s): {', '.join(missing)}")
    aligned = {n: align_weekly(dates, cols[n], BY_NAME[n].rule, n) for n in MACRO_NAMES}
    grid = np.unique(np.concatenate([s.dates for s in aligned.values()]))
    levels = {n: s.reindex(grid) for n, s in aligned.items()}
    write_frame_csv(d / "weekly_levels.csv", grid, {n: s.values for n, s in levels.items()})
    transformed = {n: transform(levels[n], BY_NAME[n].transform).reindex(grid) for n in MACRO_NAMES}
    write_frame_csv(d / "weekly_transformed.csv", grid, {n: s.values for n, s in transformed.items()})
    msgs = messages.read_messages(cfg.path(cfg.data.messages))
    messages.write_jsonl(d / "messages.jsonl", (m.to_json() for m in msgs))
    events = messages.read_event_dates(cfg.path(cfg.data.fomc))
    write_rows(d / "fomc_dates.csv", ["date"], [[str(e)] for e in events])
    write_json(d / "summary.json", {"messages": len(msgs), "weeks": int(grid.size), "events": int(events.size),
                                    "variables": list(MACRO_NAMES)})


def _backend(cfg: PipelineConfig):
    if cfg.classifier.backend == "lexicon":
        return messages.LexiconClassifier()
    c = cfg.classifier
    prompts = {}
    if c.prompt_file:
        system, user = messages.load_prompts(cfg.path(c.prompt_file))
        prompts = {"system_prompt": system, "user_prompt": user}
    return messages.RemoteClassifier(url=c.url, timeout=c.timeout, retries=c.retries, concurrency=c.concurrency,
                                     **prompts)


def stage_classify(ctx: Context) -> None:
    d = ctx.stage_dir("classify")
    msgs = messages.read_messages(ctx.out / "ingest" / "messages.jsonl")
    backend = _backend(ctx.cfg)
    classified = messages.classify_batch(msgs, backend)
    messages.write_jsonl(d / "classified.jsonl", (c.to_json() for c in classified))
    stances = np.array([int(c.stance) for c in classified])
    weights = np.array([c.message.weight for c in classified])
    rows = []
    for s in messages.Stance:
        m = stances == int(s)
        rows.append([int(s), s.label, int(m.sum()), float(m.mean()), float(weights[m].sum() / weights.sum())])
    write_rows(d / "stance_counts.csv", ["score", "label", "count", "share", "weighted_share"], rows)
    write_json(d / "summary.json", {"backend": backend.source.value, "messages": len(classified),
                                    "invalid_labels": int(getattr(backend, "invalid_labels", 0)),
                                    "lexicon_version": messages.LEXICON_VERSION})


def _read_classified(path) -> list[messages.ClassifiedMessage]:
    with open(path) as fh:
        return [messages.ClassifiedMessage.from_json(json.loads(line)) for line in fh if line.strip()]


def stage_index(ctx: Context) -> None:
    d = ctx.stage_dir("index")
    classified = _read_classified(ctx.out / "classify" / "classified.jsonl")
    mpe = messages.build_mpe_weekly(classified)
    write_frame_csv(d / "mpe_weekly.csv", mpe.series.dates,
                    {"MPE": mpe.series.values, "messages": mpe.counts.astype(float), "weight": mpe.weights})
    dates, cols = read_csv_columns(ctx.out / "ingest" / "weekly_transformed.csv")
    series = {n: WeeklySeries(n, dates, cols[n]) for n in MACRO_NAMES}
    series[INDEX] = mpe.series
    common, vals = intersect(*[series[n] for n in NAMES])
    write_frame_csv(d / "panel.csv", common, dict(zip(NAMES, vals)))
    ldates, lcols = read_csv_columns(ctx.out / "ingest" / "weekly_levels.csv")
    ffr = WeeklySeries("FFR", ldates, lcols["FFR"])
    rdates, rlabels = messages.partition_regime(ffr, "rate")
    rate_of = dict(zip(rdates.tolist(), rlabels))
    dffr = dict(zip(ffr.dates[1:].tolist(), np.diff(ffr.values)))
    rows = []
    for day, v in zip(common.tolist(), vals[NAMES.index(INDEX)]):
        rr = rate_of.get(day)
        rows.append([str(day), float(v), messages.mpe_regime(v).value, dffr.get(day, float("nan")),
                     rr.value if rr is not None else ""])
    write_rows(d / "regimes.csv", ["date", "MPE", "mpe_regime", "dFFR", "rate_regime"], rows)
    events = messages.read_event_dates(ctx.out / "ingest" / "fomc_dates.csv")
    es = messages.event_study(mpe, events)
    write_rows(d / "event_study.csv", ["regime", "rel_week", "mean", "sd", "events"], es.rows())


def stage_stats(ctx: Context) -> None:
    d = ctx.stage_dir("stats")
    dates, cols = ctx.panel()
    series = {n: WeeklySeries(n, dates, cols[n]) for n in NAMES}
    write_rows(d / "descriptive.csv", ["variable", *SUMMARY_COLUMNS],
               [[n, *describe(series[n]).as_row()] for n in NAMES])
    corr = []
    for n in NAMES:
        if n == TARGET:
            continue
        try:
            corr.append([n, pearson_corr(series[TARGET], series[n])])
        except SeriesError as exc:
            corr.append([n, f"NA[{exc}]"])
    write_rows(d / "correlations.csv", ["variable", f"corr_{TARGET}"], corr)
    adf_rows = []
    for n in NAMES:
        try:
            r = stattests.adf_test(series[n])
            adf_rows.append([n, r.statistic, r.p_value, r.df])
        except SeriesError as exc:
            adf_rows.append([n, "", "", f"NA[{exc}]"])
    write_rows(d / "adf.csv", ["variable", "adf_stat", "p_value", "lags"], adf_rows)
    reg = read_rows(ctx.out / "index" / "regimes.csv")
    rows = []
    for part, key in (("MPE", "mpe_regime"), ("FFR", "rate_regime")):
        keep = [r for r in reg if r[key]]
        rd = np.array([r["date"] for r in keep], dtype="datetime64[D]")
        labels = [r[key] for r in keep]
        try:
            t = stattests.regime_distribution_tests(series[TARGET], rd, labels)
            sizes = ";".join(f"{k}={v}" for k, v in sorted(t.group_sizes.items()))
            rows.append([part, t.kruskal.statistic, t.kruskal.p_value, t.levene.statistic, t.levene.p_value,
                         t.max_tail_q5, t.tail_regime, sizes])
        except SeriesError as exc:
            rows.append([part, "", "", "", "", "", "", f"NA[{exc}]"])
    write_rows(d / "regime_tests.csv", ["partition", "kruskal_H", "kruskal_p", "levene_W", "levene_p",
                                        "max_tail_q5", "tail_regime", "group_sizes"], rows)


def _stationary_panel(ctx: Context, max_diff: int) -> tuple[dict[str, WeeklySeries], list[list]]:
    dates, cols = ctx.panel()
    out, rows = {}, []
    for n in NAMES:
        s = WeeklySeries(n, dates, cols[n])
        k = 0
        p = float("nan")
        while True:
            try:
                p = stattests.adf_test(s).p_value
            except SeriesError:
                break
            if p < 0.05 or k >= max_diff:
                break
            s = transform(s, "Diff1")
            k += 1
        out[n] = s
        rows.append([n, k, p])
    return out, rows


def stage_granger(ctx: Context) -> None:
    d = ctx.stage_dir("granger")
    g = ctx.cfg.granger
    series, rows = _stationary_panel(ctx, g.max_diff)
    write_rows(d / "stationarity.csv", ["variable", "differences", "adf_p"], rows)
    preds = {n: series[n] for n in NAMES if n != TARGET}
    table = causality.granger_lag_table(series[TARGET], preds, range(1, g.lags + 1))
    table.write(d / "lag_table.csv", d / "results.json")
    aic = []
    for n, s in preds.items():
        try:
            aic.append([n, causality.select_lag_aic(series[TARGET], s, g.lags)])
        except SeriesError as exc:
            aic.append([n, f"NA[{exc}]"])
    write_rows(d / "aic_lags.csv", ["predictor", "aic_lag"], aic)


def stage_vmd(ctx: Context) -> None:
    d = ctx.stage_dir("vmd")
    v = ctx.cfg.vmd
    cfg = v.to_vmd()
    dates, cols = ctx.panel()
    r = vmd.vmd_decompose(cols[TARGET], cfg)
    vmd.write_imfs(d / f"imfs_{TARGET}.csv", dates, r)
    omega_rows = [[TARGET, k + 1, float(w)] for k, w in enumerate(r.omegas)]
    for n in NAMES:
        if n == TARGET:
            continue
        try:
            rn = vmd.vmd_decompose(cols[n], cfg)
            omega_rows += [[n, k + 1, float(w)] for k, w in enumerate(rn.omegas)]
        except SeriesError as exc:
            omega_rows.append([n, "", f"NA[{exc}]"])
    write_rows(d / "omegas.csv", ["variable", "imf", "omega"], omega_rows)
    preds = {n: cols[n] for n in NAMES if n != TARGET}
    scan = vmd.vmd_granger_scan(cols[TARGET], preds, cfg, max_lag=v.max_lag, alpha_level=v.level)
    scan.write(d / "scan.csv")
    write_json(d / "scan_summary.json", {
        "config": {"K": cfg.K, "alpha": cfg.alpha, "tau": cfg.tau, "dc": cfg.dc, "init": cfg.init,
                   "tol": cfg.tol, "max_iter": cfg.max_iter},
        "tested": scan.tested, "significant": len(scan.rows),
        "failures": [list(f) for f in scan.failures],
        "differenced": scan.differenced, "iterations": r.iterations,
    })


def _dataset(ctx: Context) -> ForecastDataset:
    dates, cols = ctx.panel()
    return ForecastDataset(dates, np.column_stack([cols[n] for n in NAMES]), list(NAMES), cols[TARGET])


def stage_forecast(ctx: Context) -> None:
    d = ctx.stage_dir("forecast")
    fc, ar = ctx.cfg.forecast, ctx.cfg.arima
    ds = _dataset(ctx)
    wcfg = WalkForwardConfig(trials=fc.trials, runs=fc.runs, max_epochs=fc.max_epochs, patience=fc.patience,
                             n_startup=fc.n_startup, scale_folds=fc.scale_folds, seed=ctx.seed,
                             space=fc.space.to_space())
    t0 = time.perf_counter()
    wf = walk_forward_ensemble(ds, wcfg)
    elapsed = time.perf_counter() - t0
    wf.write_run_report(d / "run_report.csv")
    (d / "models").mkdir(exist_ok=True)
    fold_docs, pred_rows, trial_rows, t6 = [], [], [], []
    for f in wf.folds:
        fs = f.fold
        for run, params in sorted(f.models.items()):
            params.save(d / "models" / f"fold{fs.fold_id}_run{run}.json",
                        meta={"fold": fs.fold_id, "run": run, "lookback": f.best.lookback})
        sc = f.data.scaler
        fold_docs.append({
            "fold": fs.fold_id, "train": list(fs.train), "val": list(fs.val), "test": list(fs.test),
            "dates": {p: [str(x) for x in fs.date_range(p)] for p in ("train", "val", "test")},
            "hyperparams": asdict(f.best), "median_run": f.median_run,
            "runs": sorted(f.models), "failures": [list(x) for x in f.failures],
            "scaler": {"mean": sc.mean.tolist(), "sd": sc.sd.tolist(), "y_mean": sc.y_mean, "y_sd": sc.y_sd},
            "ensemble_rmse": f.ensemble_rmse, "ensemble_mae": f.ensemble_mae,
            "mean_predictor_rmse": f.mean_predictor_rmse,
        })
        for t in f.search.trials:
            trial_rows.append([fs.fold_id, t.number, t.loss, *[t.params[k] for k in sorted(t.params)],
                               t.info.get("stopped_epoch", ""), t.error or ""])
        y_hist = ds.target
        order, _ = baseline.select_arima_aic(y_hist[:fs.val[1]], ar.pmax, ar.dmax, ar.qmax)
        fit = baseline.fit_arima(y_hist[:fs.val[1]], order)
        arima_pred = np.array([fit.forecast_next(y_hist[:t]) for t in f.test_idx])
        e_arima = f.y_true - arima_pred
        e_lstm = f.ensemble_errors
        dm = baseline.diebold_mariano(e_lstm, e_arima)
        a_rmse = float(np.sqrt(np.mean(e_arima**2)))
        a_mae = float(np.mean(np.abs(e_arima)))
        t6.append([fs.fold_id, f.ensemble_rmse, f.ensemble_mae, dm.statistic, dm.p_value, a_rmse, a_mae, str(order)])
        for k, t in enumerate(f.test_idx):
            pred_rows.append([fs.fold_id, str(ds.dates[t]), f.y_true[k], f.ensemble_prediction[k], arima_pred[k],
                              *[f.run_predictions.get(r, [np.nan] * len(f.test_idx))[k]
                                for r in range(1, fc.runs + 1)]])
    num = np.array([[r[1], r[2], r[5], r[6]] for r in t6], dtype=float)
    mean, sd = num.mean(axis=0), num.std(axis=0, ddof=1) if len(t6) > 1 else np.zeros(4)
    t6.append(["Mean", mean[0], mean[1], "", "", mean[2], mean[3], ""])
    t6.append(["SD", sd[0], sd[1], "", "", sd[2], sd[3], ""])
    write_rows(d / "accuracy.csv", ["Fold", "LSTM_RMSE", "LSTM_MAE", "DM_stat", "DM_p", "ARIMA_RMSE", "ARIMA_MAE",
                                  "ARIMA_order"], t6)
    write_rows(d / "predictions.csv", ["fold", "date", "actual", "ensemble", "arima",
                                       *[f"run{r}" for r in range(1, fc.runs + 1)]], pred_rows)
    names = sorted(wcfg.space.dims)
    write_rows(d / "search_trials.csv", ["fold", "trial", "val_loss", *names, "stopped_epoch", "error"], trial_rows)
    write_json(d / "folds.json", {"features": list(NAMES), "target": TARGET, "folds": fold_docs,
                                  "mean_rmse_ratio": wf.mean_rmse_ratio()})
    ctx.extra["elapsed_s"] = elapsed


def stage_explain(ctx: Context) -> None:
    d = ctx.stage_dir("explain")
    ex = ctx.cfg.explain
    with open(ctx.out / "forecast" / "folds.json") as fh:
        doc = json.load(fh)
    ds = _dataset(ctx)
    reg = {r["date"]: r["rate_regime"] for r in read_rows(ctx.out / "index" / "regimes.csv")}
    tensor = explain.AttributionTensor(list(NAMES), meta={
        "background_size": ex.background, "nsamples": ex.nsamples or "2M+512", "runs": ex.runs,
        "background_seed_base": ctx.seed, "checkpoints": {}})
    j_idx = NAMES.index(INDEX)
    inter_x, inter_phi, inter_reg = [], [], []
    for fd in doc["folds"]:
        k = fd["fold"]
        hp = Hyperparams(**fd["hyperparams"])
        s = fd["scaler"]
        sc = Standardizer(np.asarray(s["mean"]), np.asarray(s["sd"]), s["y_mean"], s["y_sd"])
        X, _, lab = window_supervised(sc.features(ds.features), sc.target(ds.target), hp.lookback)
        fit_mask = lab < fd["val"][1]
        test_mask = (lab >= fd["test"][0]) & (lab < fd["test"][1])
        bg = explain.background_windows(X[fit_mask], ex.background, substream(ctx.seed, k, 3))
        Xt, lt = X[test_mask], lab[test_mask]
        if ex.max_samples and Xt.shape[0] > ex.max_samples:
            pick = np.unique(np.linspace(0, Xt.shape[0] - 1, ex.max_samples).round().astype(int))
            Xt, lt = Xt[pick], lt[pick]
        runs = [fd["median_run"]] if ex.runs == "median" else fd["runs"]
        fold_phi = []
        for run in runs:
            ck = ctx.out / "forecast" / "models" / f"fold{k}_run{run}.json"
            params = LstmParams.load(ck)
            tensor.meta["checkpoints"][f"{k}:{run}"] = sha256_file(ck)[:16]
            phi, phi0, fx = explain.explain_windows(lambda B: lstm_predict(params, B), bg, Xt, ex.nsamples,
                                                    seed=substream(ctx.seed, k, 4, run))
            tensor.add(k, run, explain.AttributionEntry(ds.dates[lt], phi, phi0, fx, Xt[:, ::-1]))
            fold_phi.append(phi[:, :, j_idx].sum(axis=1))
        raw_mpe = ds.features[:, j_idx]
        inter_x += [float(raw_mpe[t - hp.lookback:t].mean()) for t in lt]
        inter_phi.append(np.array(fold_phi))
        inter_reg += [reg.get(str(ds.dates[t - 1]), "") for t in lt]
    tensor.write(d / "shap_values.csv", d / "shap_meta.json")
    explain.aggregate_attributions(tensor, "Global").write(d / "global.csv")
    explain.aggregate_attributions(tensor, "FeatureLag").write(d / "feature_lag.csv")
    explain.aggregate_attributions(tensor, "TemporalProfile").write(d / "temporal_profile.csv")
    n_runs = min(a.shape[0] for a in inter_phi)
    phi_runs = np.concatenate([a[:n_runs] for a in inter_phi], axis=1)
    res = explain.interaction_by_regime(inter_x, phi_runs, inter_reg,
                                        [r.value for r in messages.RATE_REGIMES])
    res.write(d / "interaction.csv", d / "interaction_points.csv")
    write_json(d / "additivity.json", {"max_residual": tensor.max_additivity_residual()})


def stage_report(ctx: Context) -> None:
    from .report import render_report
    render_report(ctx.out, ctx.stage_dir("report"))


STAGE_FUNCS: dict[str, Callable[[Context], None]] = {
    "ingest": stage_ingest, "classify": stage_classify, "index": stage_index, "stats": stage_stats,
    "granger": stage_granger, "vmd": stage_vmd, "forecast": stage_forecast, "explain": stage_explain,
    "report": stage_report,
}


# --- manifests and orchestration -----------------------------------------------

def manifest_path(out: Path, stage: str) -> Path:
    return out / "manifests" / f"{stage}.json"


def read_manifest(out: Path, stage: str) -> dict | None:
    p = manifest_path(out, stage)
    if not p.is_file():
        return None
    with open(p) as fh:
        return json.load(fh)


def _input_hashes(ctx: Context, stage: str) -> dict[str, str]:
    cfg = ctx.cfg
    if stage == "ingest":
        return {f"data:{n}": sha256_file(cfg.path(getattr(cfg.data, n))) for n in ("messages", "macro", "fomc")}
    out = {}
    for dep in DEPENDS[stage]:
        m = read_manifest(ctx.out, dep)
        blob = json.dumps(m["artifacts"] if m else {}, sort_keys=True).encode()
        out[f"stage:{dep}"] = hashlib.sha256(blob).hexdigest()
    # report also reads index outputs directly
    if stage in ("report", "explain"):
        m = read_manifest(ctx.out, "index")
        out["stage:index"] = hashlib.sha256(json.dumps(m["artifacts"] if m else {}, sort_keys=True).encode()).hexdigest()
    return out


def _config_hash(ctx: Context, stage: str) -> str:
    parts = [p for p in STAGE_CONFIG[stage] if p != "seed"]
    doc = {"sections": ctx.cfg.section_hash(*parts) if parts else "",
           "seed": ctx.seed if "seed" in STAGE_CONFIG[stage] else None}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _up_to_date(ctx: Context, stage: str, inputs: dict, chash: str) -> bool:
    m = read_manifest(ctx.out, stage)
    if not m or m.get("inputs") != inputs or m.get("config_hash") != chash or m.get("status") != "ok":
        return False
    for rel, h in m["artifacts"].items():
        p = ctx.out / rel
        if not p.is_file() or sha256_file(p) != h:
            return False
    return True


def _check_dependencies(out: Path, stages: list[str]) -> None:
    planned = set(stages)
    for s in stages:
        missing = [d for d in DEPENDS[s] if d not in planned and read_manifest(out, d) is None]
        if missing:
            # name everything transitively needed that is absent
            need, todo = [], list(missing)
            while todo:
                x = todo.pop()
                if x not in need:
                    need.append(x)
                    todo += [y for y in DEPENDS[x] if y not in planned and read_manifest(out, y) is None]
            raise DependencyError(s, sorted(need, key=STAGES.index))


@dataclass
class StageOutcome:
    stage: str
    skipped: bool
    artifacts: dict


def run_pipeline(cfg: PipelineConfig, stages=None, seed: int | None = None, out: str | None = None,
                 force: bool = False) -> list[StageOutcome]:
    """Run ``stages`` (default all) in dependency order; unchanged stages are skipped."""
    unknown = set(stages or []) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stage(s): {', '.join(sorted(unknown))}")
    stages = list(STAGES) if not stages else [s for s in STAGES if s in set(stages)]
    out_dir = Path(out) if out else cfg.out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out_dir, cfg.seed if seed is None else int(seed))
    _check_dependencies(out_dir, stages)
    outcomes = []
    for stage in stages:
        inputs = _input_hashes(ctx, stage)
        chash = _config_hash(ctx, stage)
        if not force and _up_to_date(ctx, stage, inputs, chash):
            log.info("stage %s up to date; skipped", stage)
            outcomes.append(StageOutcome(stage, True, read_manifest(out_dir, stage)["artifacts"]))
            continue
        log.info("stage %s: running", stage)
        sd = out_dir / stage
        if sd.is_dir():
            for p in sorted(sd.rglob("*"), reverse=True):
                p.unlink() if p.is_file() else p.rmdir()
        ctx.extra = {}
        t0 = time.perf_counter()
        try:
            STAGE_FUNCS[stage](ctx)
        except DependencyError:
            raise
        except Exception as exc:  # every stage failure maps to one error type
            write_json(manifest_path(out_dir, stage), {"stage": stage, "status": "failed", "error": str(exc)})
            raise StageError(stage, exc) from exc
        arts = {str(p.relative_to(out_dir)): sha256_file(p) for p in sorted(sd.rglob("*")) if p.is_file()}
        write_json(manifest_path(out_dir, stage), {
            "stage": stage, "version": MANIFEST_VERSION, "status": "ok", "depends_on": list(DEPENDS[stage]),
            "inputs": inputs, "config_hash": chash, "seed": ctx.seed,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "duration_s": round(time.perf_counter() - t0, 3), "extra": ctx.extra, "artifacts": arts,
        })
        outcomes.append(StageOutcome(stage, False, arts))
    return outcomes
