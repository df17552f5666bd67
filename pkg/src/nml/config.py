"""Pipeline configuration: a single YAML or JSON file with strict key checking.

Relative paths resolve against the directory holding the config file. Example::

    data:
      messages: messages.jsonl
      macro: macro_daily.csv
      fomc: fomc_dates.csv
    classifier: {backend: lexicon}
    seed: 7
    out: artifacts
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .forecasting import lstm
from .forecasting.tpe import Categorical, FloatDim, SearchSpace
from .vmd import VmdConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataPaths:
    messages: str = ""
    macro: str = ""
    fomc: str = ""


@dataclass
class ClassifierConfig:
    backend: str = "lexicon"  # lexicon | remote
    url: str | None = None
    timeout: float = 30.0
    retries: int = 3
    concurrency: int = 4
    prompt_file: str | None = None  # JSON {"system", "user"} replacing the built-in prompts


@dataclass
class VmdSection:
    K: int = 3
    alpha: float = 2000.0
    tau: float = 0.0
    dc: bool = False
    init: str = "uniform"
    tol: float = 1e-7
    max_iter: int = 500
    max_lag: int = 6
    level: float = 0.05

    def to_vmd(self) -> VmdConfig:
        return VmdConfig(self.K, self.alpha, self.tau, self.dc, self.init, self.tol, self.max_iter)


@dataclass
class GrangerSection:
    lags: int = 6
    max_diff: int = 2
    level: float = 0.05


@dataclass
class SpaceSection:
    units: list = field(default_factory=lambda: list(lstm.UNITS))
    dropout: list = field(default_factory=lambda: list(lstm.DROPOUT_RANGE))
    lookback: list = field(default_factory=lambda: list(lstm.LOOKBACKS))
    learning_rate: list = field(default_factory=lambda: list(lstm.LR_RANGE))
    optimizer: list = field(default_factory=lambda: list(lstm.OPTIMIZERS))
    batch_size: list = field(default_factory=lambda: list(lstm.BATCH_SIZES))

    def to_space(self) -> SearchSpace:
        return SearchSpace({
            "units": Categorical(tuple(self.units)),
            "dropout": FloatDim(*self.dropout),
            "lookback": Categorical(tuple(self.lookback)),
            "learning_rate": FloatDim(*self.learning_rate, log=True),
            "optimizer": Categorical(tuple(self.optimizer)),
            "batch_size": Categorical(tuple(self.batch_size)),
        })


@dataclass
class ForecastSection:
    trials: int = 75
    runs: int = 5
    max_epochs: int = 100
    patience: int = 10
    n_startup: int = 15
    scale_folds: bool = False
    space: SpaceSection = field(default_factory=SpaceSection)


@dataclass
class ArimaSection:
    pmax: int = 3
    dmax: int = 1
    qmax: int = 3


@dataclass
class ExplainSection:
    background: int = 50
    nsamples: int | None = None  # default 2M + 512
    runs: str = "median"  # median | all
    max_samples: int | None = None  # explained test windows per fold; None = all


@dataclass
class PipelineConfig:
    data: DataPaths = field(default_factory=DataPaths)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    vmd: VmdSection = field(default_factory=VmdSection)
    granger: GrangerSection = field(default_factory=GrangerSection)
    forecast: ForecastSection = field(default_factory=ForecastSection)
    arima: ArimaSection = field(default_factory=ArimaSection)
    explain: ExplainSection = field(default_factory=ExplainSection)
    seed: int = 0
    out: str = "artifacts"
    base_dir: str = field(default=".", metadata={"internal": True})

    def path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def out_dir(self) -> Path:
        return self.path(self.out)

    def section_hash(self, *names: str) -> str:
        doc = {n: to_dict(getattr(self, n)) if dataclasses.is_dataclass(getattr(self, n)) else getattr(self, n)
               for n in names}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def to_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        if f.metadata.get("internal"):
            continue
        v = getattr(obj, f.name)
        out[f.name] = to_dict(v) if dataclasses.is_dataclass(v) else v
    return out


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name: f for f in fields(cls) if not f.metadata.get("internal")}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _validate(cfg: PipelineConfig, check_paths: bool) -> None:
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        raise ConfigError("seed must be an explicit integer")
    if cfg.classifier.backend not in ("lexicon", "remote"):
        raise ConfigError(f"classifier.backend must be lexicon or remote, got {cfg.classifier.backend!r}")
    if cfg.classifier.backend == "remote" and not (cfg.classifier.url or os.environ.get("NML_CLASSIFIER_URL")):
        raise ConfigError("classifier.backend=remote needs classifier.url or NML_CLASSIFIER_URL")
    if cfg.classifier.prompt_file and not cfg.path(cfg.classifier.prompt_file).is_file():
        raise ConfigError(f"classifier.prompt_file: file not found: {cfg.path(cfg.classifier.prompt_file)}")
    if cfg.explain.runs not in ("median", "all"):
        raise ConfigError("explain.runs must be median or all")
    try:
        cfg.vmd.to_vmd()
    except ValueError as exc:
        raise ConfigError(f"vmd: {exc}") from None
    sp = cfg.forecast.space
    checks = [("units", sp.units, lstm.UNITS), ("lookback", sp.lookback, lstm.LOOKBACKS),
              ("optimizer", sp.optimizer, lstm.OPTIMIZERS), ("batch_size", sp.batch_size, lstm.BATCH_SIZES)]
    for name, vals, allowed in checks:
        if not vals or any(v not in allowed for v in vals):
            raise ConfigError(f"forecast.space.{name} must be a nonempty subset of {list(allowed)}")
    for name, rng, allowed in (("dropout", sp.dropout, lstm.DROPOUT_RANGE),
                               ("learning_rate", sp.learning_rate, lstm.LR_RANGE)):
        if len(rng) != 2 or not allowed[0] <= rng[0] < rng[1] <= allowed[1]:
            raise ConfigError(f"forecast.space.{name} must be [low, high] within {list(allowed)}")
    if cfg.forecast.trials < 10 or cfg.forecast.runs < 1:
        raise ConfigError("forecast.trials must be >= 10 and forecast.runs >= 1")
    if check_paths:
        for name in ("messages", "macro", "fomc"):
            rel = getattr(cfg.data, name)
            if not rel:
                raise ConfigError(f"data.{name} is required")
            if not cfg.path(rel).is_file():
                raise ConfigError(f"data.{name}: file not found: {cfg.path(rel)}")


def load_config(path, overrides: dict | None = None, check_paths: bool = True) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    doc.update(overrides or {})
    cfg = _build(PipelineConfig, doc, "config")
    cfg.base_dir = str(path.parent)
    _validate(cfg, check_paths)
    return cfg


def dump_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=False)
