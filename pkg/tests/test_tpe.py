import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nml.data_model import SeriesError
from nml.forecasting import tpe
from nml.forecasting.lstm import Hyperparams
from nml.forecasting.tpe import (DEFAULT_SPACE, Categorical, FloatDim, SearchSpace, to_hyperparams, tpe_search)


def lr_objective(params):
    return (params["learning_rate"] - 5e-4) ** 2


def test_flat_objective_returns_constant():
    r = tpe_search(lambda p: 3.25, trials=30, seed=1)
    assert r.best_loss == 3.25
    assert r.best_trial == 0  # ties go to the earliest trial
    assert len(r.trials) == 30


def test_known_optimum_found_in_most_seeds():
    hits = [3e-4 <= tpe_search(lr_objective, trials=75, seed=s).best_params["learning_rate"] <= 7e-4
            for s in range(20)]
    assert np.mean(hits) >= 0.9


def test_warmup_only_is_random_search():
    r = tpe_search(lr_objective, trials=15, seed=9)
    rng = np.random.default_rng(9)
    expected = [tpe._sample_prior(DEFAULT_SPACE, rng) for _ in range(15)]
    assert [t.params for t in r.trials] == expected
    longer = tpe_search(lr_objective, trials=40, seed=9)
    assert [t.params for t in longer.trials[:15]] == expected


def test_model_phase_beats_random_on_average():
    def obj(p):
        return (np.log(p["learning_rate"]) - np.log(2e-4)) ** 2 + (p["dropout"] - 0.3) ** 2 + (p["units"] != 32)

    guided = [tpe_search(obj, trials=60, seed=s).best_loss for s in range(10)]
    random = [tpe_search(obj, trials=60, seed=s, n_startup=60).best_loss for s in range(10)]
    assert np.median(guided) < np.median(random)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_proposals_stay_in_domain(seed):
    r = tpe_search(lambda p: p["dropout"] + p["units"] / 64, trials=25, seed=seed)
    for t in r.trials:
        Hyperparams(**t.params)  # validates every domain
    assert r.best_loss == min(t.loss for t in r.trials)


def test_reproducible_by_seed():
    a = tpe_search(lr_objective, trials=30, seed=4)
    b = tpe_search(lr_objective, trials=30, seed=4)
    assert [t.params for t in a.trials] == [t.params for t in b.trials]


def test_failed_trials_recorded_and_all_failed_raises():
    def sometimes(p):
        if p["optimizer"] == "Adam":
            raise SeriesError("boom")
        return 1.0

    r = tpe_search(sometimes, trials=20, seed=0)
    bad = [t for t in r.trials if t.error]
    assert bad and all(t.loss == float("inf") and "boom" in t.error for t in bad)
    assert r.best_loss == 1.0

    def never(p):
        raise ValueError("nope")

    with pytest.raises(SeriesError):
        tpe_search(never, trials=10, seed=0)
    with pytest.raises(ValueError):
        tpe_search(lr_objective, trials=9)


def test_objective_info_is_kept():
    r = tpe_search(lambda p: (1.0, {"stopped_epoch": 7}), trials=10, seed=0)
    assert r.trials[r.best_trial].info == {"stopped_epoch": 7}


def test_log_dimension_round_trip_and_clamp():
    d = FloatDim(1e-4, 1e-3, log=True)
    lo, hi = d.bounds()
    assert d.from_unit(lo) == pytest.approx(1e-4) and d.from_unit(hi + 1) == 1e-3
    assert d.from_unit(d.to_unit(3e-4)) == pytest.approx(3e-4, rel=1e-12)


def test_custom_space_and_conversion():
    space = SearchSpace({"x": FloatDim(-1, 1), "c": Categorical(("a", "b"))})
    r = tpe_search(lambda p: p["x"] ** 2 + (p["c"] == "b"), space, trials=40, seed=2)
    assert r.best_params["c"] == "a" and abs(r.best_params["x"]) < 0.3
    hp = to_hyperparams({"units": 8, "dropout": 0.2, "lookback": 4, "learning_rate": 1e-4,
                         "optimizer": "Adam", "batch_size": 8}, epochs=12)
    assert hp.epochs == 12 and hp.units == 8
