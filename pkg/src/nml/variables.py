"""The 19-variable weekly panel: alignment rule and transformation per variable."""

from __future__ import annotations

from dataclasses import dataclass

from .data_model import AlignRule, TransformKind

TARGET = "Btc"
INDEX = "MPE"


@dataclass(frozen=True)
class VariableSpec:
    name: str
    rule: AlignRule
    transform: TransformKind
    description: str


_L, _M = AlignRule.LAST_VALUE, AlignRule.WEEK_MEAN
_T = TransformKind

VARIABLES = (
    VariableSpec("Btc", _L, _T.LOG_RETURN, "Bitcoin price"),
    VariableSpec("MPE", _M, _T.LEVEL, "engagement-weighted policy stance index"),
    VariableSpec("NewsSent", _M, _T.LEVEL, "news sentiment index"),
    VariableSpec("PolUncert", _M, _T.GROWTH_RATE, "policy uncertainty index"),
    VariableSpec("SP500", _L, _T.LOG_RETURN, "equity index"),
    VariableSpec("Brent", _L, _T.GROWTH_RATE, "crude oil price"),
    VariableSpec("Gold", _L, _T.LOG_RETURN, "gold price"),
    VariableSpec("HighYield", _L, _T.GROWTH_RATE, "high-yield spread"),
    VariableSpec("GeopolRisk", _M, _T.GROWTH_RATE, "geopolitical risk index"),
    VariableSpec("VIX", _L, _T.GROWTH_RATE, "implied volatility index"),
    VariableSpec("USDollar", _L, _T.GROWTH_RATE, "trade-weighted dollar index"),
    VariableSpec("Infect", _M, _T.LEVEL, "infectious disease equity-market tracker"),
    VariableSpec("JoblessClaim", _L, _T.LOG_DIFF, "initial jobless claims"),
    VariableSpec("ExchRate", _M, _T.LOG_DIFF, "effective exchange rate"),
    VariableSpec("FFR", _L, _T.LEVEL, "effective federal funds rate"),
    VariableSpec("5yInflExp", _L, _T.LEVEL, "5-year breakeven inflation"),
    VariableSpec("GgleInfl", _M, _T.LEVEL, "search interest: inflation"),
    VariableSpec("GgleReces", _M, _T.LEVEL, "search interest: recession"),
    VariableSpec("GgleClimate", _M, _T.LEVEL, "search interest: climate"),
)

NAMES = tuple(v.name for v in VARIABLES)
BY_NAME = {v.name: v for v in VARIABLES}
MACRO_NAMES = tuple(n for n in NAMES if n != INDEX)
