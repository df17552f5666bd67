import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nml.data_model import SeriesError
from nml.forecasting import lstm
from nml.forecasting.lstm import (Hyperparams, LstmDivergence, LstmParams, clip_by_global_norm, init_params,
                                  loss_and_grad, lstm_predict, train_lstm)
from nml.forecasting.walkforward import window_supervised


def sig(z):
    return 1 / (1 + np.exp(-z))


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(1e-8, np.maximum(np.abs(a), np.abs(b)))


@pytest.mark.parametrize("use_mask", [False, True])
def test_gradient_matches_central_differences(use_mask):
    rng = np.random.default_rng(0)
    p = init_params(2, 2, rng)
    p.b += 0.1 * rng.standard_normal(p.b.shape)
    p.b_out = 0.3
    X = rng.standard_normal((5, 3, 2))
    y = rng.standard_normal(5)
    mask = (rng.random((5, 2)) < 0.7) / 0.7 if use_mask else None
    _, g = loss_and_grad(p, X, y, mask)
    v = p.to_vector()
    num = np.empty_like(v)
    h = 1e-6
    for k in range(v.size):
        vp, vm = v.copy(), v.copy()
        vp[k] += h
        vm[k] -= h
        lp = loss_and_grad(LstmParams.from_vector(vp, 2, 2), X, y, mask)[0]
        lm = loss_and_grad(LstmParams.from_vector(vm, 2, 2), X, y, mask)[0]
        num[k] = (lp - lm) / (2 * h)
    assert np.max(rel_err(g.to_vector(), num)) <= 1e-4


def test_zero_network_predicts_zero():
    p = LstmParams(np.zeros((3, 16)), np.zeros((4, 16)), np.zeros(16), np.zeros(4), 0.0)
    X = np.random.default_rng(1).standard_normal((7, 5, 3))
    assert np.all(lstm_predict(p, X) == 0)


def test_single_unit_without_recurrence_closed_form():
    # one unit, one feature, U = 0: each step's gates see only x_t
    wi, wf, wg, wo = 0.7, -0.4, 1.3, 0.9
    bi, bf, bg, bo = 0.1, 1.0, -0.2, 0.05
    p = LstmParams(np.array([[wi, wf, wg, wo]]), np.zeros((1, 4)), np.array([bi, bf, bg, bo]),
                   np.array([2.0]), -0.5)
    x = np.array([0.3, -1.2])
    c = 0.0
    for xt in x:
        c = sig(wf * xt + bf) * c + sig(wi * xt + bi) * np.tanh(wg * xt + bg)
    h = sig(wo * x[-1] + bo) * np.tanh(c)
    assert lstm_predict(p, x[:, None]) == pytest.approx(2.0 * h - 0.5, abs=1e-14)


def test_inference_path_matches_training_forward():
    rng = np.random.default_rng(2)
    p = init_params(4, 8, rng)
    X = rng.standard_normal((6, 13, 4))
    yhat, _, _ = lstm._forward(p, X, None)
    np.testing.assert_allclose(lstm_predict(p, X), yhat, atol=1e-12)


@settings(max_examples=20)
@given(st.integers(0, 10**6), st.sampled_from([1.0, 1e3, -1e3]))
def test_prediction_bounded_for_large_inputs(seed, mag):
    rng = np.random.default_rng(seed)
    p = init_params(3, 8, rng)
    X = mag * rng.standard_normal((4, 8, 3))
    y = lstm_predict(p, X)
    assert np.all(np.isfinite(y))
    # |h| < 1 so the head output is bounded by its weights
    assert np.all(np.abs(y - p.b_out) <= np.abs(p.w_out).sum() + 1e-12)


def test_predict_is_pure_and_checks_shape():
    rng = np.random.default_rng(3)
    p = init_params(3, 8, rng)
    w = rng.standard_normal((8, 3))
    before = p.to_vector().copy()
    assert lstm_predict(p, w) == lstm_predict(p, w)
    assert np.array_equal(p.to_vector(), before)
    with pytest.raises(SeriesError):
        lstm_predict(p, rng.standard_normal((8, 2)))


def test_hyperparam_domains():
    Hyperparams()
    for bad in (dict(units=12), dict(dropout=0.5), dict(lookback=5), dict(learning_rate=1e-2),
                dict(optimizer="SGD"), dict(batch_size=32), dict(clipnorm=2.0), dict(epochs=-1)):
        with pytest.raises(ValueError):
            Hyperparams(**bad)


@settings(max_examples=40)
@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=20))
def test_clip_by_global_norm(vals):
    g = [np.array(vals), np.array([3.0])]
    out, norm = clip_by_global_norm(g, 1.0)
    new = np.sqrt(sum(float(np.sum(a * a)) for a in out))
    assert new <= 1.0 + 1e-9
    if norm <= 1.0:
        assert all(np.array_equal(a, b) for a, b in zip(out, g))


def linear_fixture(n=400, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    y = np.r_[0.0, 0.9 * x[:-1]]  # y_{t+1} = 0.9 x_t
    X, yy, _ = window_supervised(np.column_stack([x, rng.standard_normal(n)]), y, 4)
    return X, yy


def test_clipping_holds_during_training():
    X, y = linear_fixture(200)
    _, hist = train_lstm(X, y, Hyperparams(units=8, lookback=4, learning_rate=1e-3, epochs=5), seed=1)
    assert 0 < hist.max_grad_norm_after_clip <= 1.0 + 1e-9


def test_zero_target_trains_to_zero():
    X = np.random.default_rng(4).standard_normal((120, 4, 3))
    hp = Hyperparams(units=8, lookback=4, learning_rate=1e-3, dropout=0.1, epochs=300, optimizer="RMSprop")
    p, hist = train_lstm(X, np.zeros(120), hp, seed=0)
    assert hist.train_loss[-1] < hist.train_loss[0]
    assert np.max(np.abs(lstm_predict(p, X))) <= 1e-3


def test_training_is_seed_deterministic():
    X, y = linear_fixture(150)
    hp = Hyperparams(units=8, lookback=4, epochs=4)
    a, _ = train_lstm(X, y, hp, seed=7)
    b, _ = train_lstm(X, y, hp, seed=7)
    c, _ = train_lstm(X, y, hp, seed=8)
    assert a.to_vector().tobytes() == b.to_vector().tobytes()
    assert not np.array_equal(a.to_vector(), c.to_vector())


def test_learns_linear_system_and_loss_decreases():
    X, y = linear_fixture(400)
    tr, va, te = slice(0, 280), slice(280, 330), slice(330, None)
    hp = Hyperparams(units=16, lookback=4, learning_rate=1e-3, dropout=0.1, batch_size=8)
    p, hist = train_lstm(X[tr], y[tr], hp, seed=0, X_val=X[va], y_val=y[va], max_epochs=150)
    rmse = np.sqrt(np.mean((lstm_predict(p, X[te]) - y[te]) ** 2))
    base = np.sqrt(np.mean((y[tr].mean() - y[te]) ** 2))
    assert rmse <= 0.5 * base
    smooth = np.convolve(hist.train_loss, np.ones(5) / 5, mode="valid")
    # minibatch noise on the plateau moves the smoothed curve by up to ~15% of its level
    assert np.all(np.diff(smooth) <= 0.2 * smooth[:-1])
    assert smooth[-1] < 0.05 * smooth[0]
    assert hist.best_epoch >= 1 and hist.best_val_loss == min(hist.val_loss)


def test_early_stopping_restores_best():
    X, y = linear_fixture(200)
    hp = Hyperparams(units=8, lookback=4)
    p, hist = train_lstm(X[:150], y[:150], hp, 0, X[150:], y[150:], max_epochs=30, patience=3)
    assert hist.stopped_epoch - hist.best_epoch <= 3 or hist.stopped_epoch == 30
    vl = float(np.mean((lstm_predict(p, X[150:]) - y[150:]) ** 2))
    assert vl == pytest.approx(hist.best_val_loss, rel=1e-12)


def test_divergence_reports_last_finite_epoch(monkeypatch):
    X, y = linear_fixture(100)
    real = lstm.loss_and_grad
    calls = {"n": 0}

    def flaky(p, Xb, yb, mask=None):
        calls["n"] += 1
        loss, g = real(p, Xb, yb, mask)
        return (np.nan if calls["n"] > 30 else loss), g

    monkeypatch.setattr(lstm, "loss_and_grad", flaky)
    with pytest.raises(LstmDivergence) as ei:
        train_lstm(X, y, Hyperparams(units=8, lookback=4, batch_size=16, epochs=10), seed=0)
    # 96 samples in batches of 16: six steps per epoch, so epoch 6 breaks
    assert ei.value.last_finite_epoch == 5


def test_train_input_errors():
    X, y = linear_fixture(100)
    with pytest.raises(SeriesError):
        train_lstm(X[:0], y[:0], Hyperparams(lookback=4), 0)
    with pytest.raises(SeriesError):
        train_lstm(X, y, Hyperparams(lookback=4), 0, X[:0], y[:0])


def test_checkpoint_round_trip(tmp_path):
    p = init_params(5, 16, np.random.default_rng(5))
    p.save(tmp_path / "m.json", {"fold": 1})
    q = LstmParams.load(tmp_path / "m.json")
    assert q.to_vector().tobytes() == p.to_vector().tobytes()
    (tmp_path / "bad.json").write_text('{"version": 99}')
    with pytest.raises(SeriesError):
        LstmParams.load(tmp_path / "bad.json")
    with pytest.raises(SeriesError):
        LstmParams(np.zeros((2, 8)), np.zeros((3, 8)), np.zeros(8), np.zeros(2))
