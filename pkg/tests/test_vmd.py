import csv
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nml.data_model import SeriesError
from nml.vmd import (VmdConfig, spectral_bandwidth, vmd_decompose, vmd_granger_scan, vmd_reconstruct, write_imfs)

N = 1024
T = np.arange(N)
LOW, HIGH = np.sin(2 * np.pi * 0.02 * T), np.sin(2 * np.pi * 0.2 * T)
TWO_TONE = LOW + HIGH
INNER = slice(int(0.1 * N), int(0.9 * N))


def rel_err(a, b, sl=INNER):
    return np.linalg.norm((a - b)[sl]) / np.linalg.norm(b[sl])


def test_config_validation():
    for bad in (dict(K=0), dict(alpha=0), dict(tau=-1), dict(tol=0), dict(init="random")):
        with pytest.raises(ValueError):
            VmdConfig(**bad)


def test_input_errors():
    with pytest.raises(SeriesError):
        vmd_decompose(np.r_[np.zeros(20), np.nan])
    with pytest.raises(SeriesError):
        vmd_decompose(np.zeros(10))
    with pytest.raises(SeriesError):
        vmd_decompose(np.ones(20), VmdConfig(K=6))


def test_two_tone_recovery():
    t0 = time.perf_counter()
    r = vmd_decompose(TWO_TONE, VmdConfig(K=2))
    assert time.perf_counter() - t0 < 5
    np.testing.assert_allclose(r.omegas, [0.02, 0.2], rtol=0.05)
    assert np.corrcoef(r.modes[0], LOW)[0, 1] >= 0.95
    assert np.corrcoef(r.modes[1], HIGH)[0, 1] >= 0.95


def test_zero_signal_gives_zero_modes():
    r = vmd_decompose(np.zeros(64), VmdConfig(K=3))
    assert np.all(r.modes == 0)
    assert np.all(vmd_reconstruct(r) == 0)


def test_single_tone_k1():
    f = np.sin(2 * np.pi * 0.05 * T)
    r = vmd_decompose(f, VmdConfig(K=1))
    assert rel_err(r.modes[0], f) <= 0.05
    assert np.array_equal(vmd_reconstruct(r), r.modes[0])


def test_dual_ascent_reconstruction():
    r = vmd_decompose(TWO_TONE, VmdConfig(K=2, tau=0.1))
    assert rel_err(vmd_reconstruct(r), TWO_TONE) <= 1e-2


@settings(max_examples=10, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_scaling_equivariance(c):
    r0 = vmd_decompose(TWO_TONE, VmdConfig(K=2))
    r1 = vmd_decompose(c * TWO_TONE, VmdConfig(K=2))
    np.testing.assert_allclose(r1.omegas, r0.omegas, atol=1e-8)
    np.testing.assert_allclose(r1.modes, c * r0.modes, atol=1e-8 * c)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 4), st.sampled_from(["uniform", "zero"]))
def test_omegas_in_band_and_ascending(seed, K, init):
    x = np.cumsum(np.random.default_rng(seed).standard_normal(200))
    r = vmd_decompose(x, VmdConfig(K=K, init=init, max_iter=100))
    assert np.all((r.omegas >= 0) & (r.omegas <= 0.5))
    assert np.all(np.diff(r.omegas) >= 0)
    assert r.iterations <= 100
    assert np.isrealobj(r.modes) and r.modes.shape == (K, 200)


def test_bit_reproducible():
    x = np.random.default_rng(1).standard_normal(300)
    a, b = vmd_decompose(x), vmd_decompose(x)
    assert a.modes.tobytes() == b.modes.tobytes() and a.omegas.tobytes() == b.omegas.tobytes()


def test_bandwidth_nonincreasing_in_alpha():
    bw = np.array([spectral_bandwidth(vmd_decompose(TWO_TONE, VmdConfig(K=2, alpha=a))) for a in (500, 2000, 8000)])
    assert np.all(np.diff(bw, axis=0) <= 0)


@pytest.mark.parametrize("signal,K", [(TWO_TONE, 2), (TWO_TONE, 3),
                                      (np.cumsum(np.random.default_rng(2).standard_normal(400)), 3)])
def test_objective_nonincreasing_without_dual_ascent(signal, K):
    r = vmd_decompose(signal, VmdConfig(K=K, tau=0.0))
    d = np.diff(r.objective)
    assert np.all(d <= 1e-10 * np.maximum(1.0, np.abs(r.objective[:-1])))


def test_dc_mode_pinned_to_zero():
    x = 3.0 + np.sin(2 * np.pi * 0.1 * np.arange(256))
    r = vmd_decompose(x, VmdConfig(K=2, dc=True))
    assert r.omegas[0] == 0.0
    assert abs(r.modes[0][50:200].mean() - 3.0) < 0.05


def test_write_imfs(tmp_path):
    r = vmd_decompose(TWO_TONE[:64], VmdConfig(K=2))
    dates = np.datetime64("2020-01-03") + 7 * np.arange(64).astype("timedelta64[D]")
    write_imfs(tmp_path / "i.csv", dates, r)
    lines = (tmp_path / "i.csv").read_text().splitlines()
    assert lines[0] == "date,imf1,imf2" and len(lines) == 65


def test_scan_finds_planted_cross_scale_shift():
    rng = np.random.default_rng(3)
    n = 500
    t = np.arange(n + 2)
    # broadband high-frequency content so the third mode is not predictable from its own lags
    base = (np.sin(2 * np.pi * 0.01 * t) + 0.8 * np.sin(2 * np.pi * 0.08 * t + 1.0)
            + 0.8 * rng.standard_normal(n + 2))
    y = base[:n]
    x = base[2:]  # x_t = y_{t+2}: y's third mode trails x's third mode by 2
    r = vmd_granger_scan(y, {"lead": x, "noise": rng.standard_normal(n)})
    hit = [row for row in r.rows if row.predictor == "lead" and row.i == 3 and row.j == 3 and row.lag == 2]
    assert hit and hit[0].p_value < 1e-6
    assert hit[0].label == "lead(3, 2)"
    assert r.tested == 2 * 3 * 3 * 6


def test_scan_rows_sorted_and_significant():
    rng = np.random.default_rng(4)
    y = rng.standard_normal(300)
    r = vmd_granger_scan(y, {"a": rng.standard_normal(300), "b": np.r_[y[1:], 0.0]})
    keys = [(row.i, ["a", "b"].index(row.predictor), row.j, row.lag) for row in r.rows]
    assert keys == sorted(keys)
    assert all(row.p_value < 0.05 for row in r.rows)


def test_scan_null_discovery_rate():
    rng = np.random.default_rng(5)
    rates = []
    for _ in range(30):
        r = vmd_granger_scan(rng.standard_normal(400), {"a": rng.standard_normal(400)})
        rates.append(len(r.rows) / r.tested)
    assert 0.03 <= np.mean(rates) <= 0.10


def test_scan_records_degenerate_predictor():
    rng = np.random.default_rng(6)
    r = vmd_granger_scan(rng.standard_normal(200), {"flat": np.zeros(200)})
    assert r.rows == [] and r.failures


def test_scan_csv_header(tmp_path):
    rng = np.random.default_rng(7)
    r = vmd_granger_scan(rng.standard_normal(200), {"a": rng.standard_normal(200)})
    r.write(tmp_path / "s.csv")
    with open(tmp_path / "s.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["target_imf", "Predictor(j,p)", "predictor", "j", "lag", "F-stat", "p-val"]
