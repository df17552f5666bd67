"""Single-layer LSTM regressor in numpy with full backpropagation through time."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data_model import SeriesError

UNITS = (8, 16, 32, 64)
LOOKBACKS = (4, 8, 13)
OPTIMIZERS = ("Adam", "RMSprop")
BATCH_SIZES = (8, 16)
DROPOUT_RANGE = (0.1, 0.45)
LR_RANGE = (1e-4, 1e-3)
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Hyperparams:
    units: int = 16
    dropout: float = 0.2
    lookback: int = 8
    learning_rate: float = 5e-4
    optimizer: str = "Adam"
    batch_size: int = 16
    clipnorm: float = 1.0
    epochs: int = 0  # fixed budget for the final fit; 0 means "use early stopping"

    def __post_init__(self):
        if self.units not in UNITS:
            raise ValueError(f"units {self.units} not in {UNITS}")
        if not DROPOUT_RANGE[0] <= self.dropout <= DROPOUT_RANGE[1]:
            raise ValueError(f"dropout {self.dropout} outside {DROPOUT_RANGE}")
        if self.lookback not in LOOKBACKS:
            raise ValueError(f"lookback {self.lookback} not in {LOOKBACKS}")
        if not LR_RANGE[0] <= self.learning_rate <= LR_RANGE[1]:
            raise ValueError(f"learning rate {self.learning_rate} outside {LR_RANGE}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size not in BATCH_SIZES:
            raise ValueError(f"batch size {self.batch_size} not in {BATCH_SIZES}")
        if self.clipnorm != 1.0:
            raise ValueError("clipnorm is fixed at 1.0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class LstmParams:
    """Gate blocks are stacked in the order input, forget, candidate, output."""

    W: np.ndarray  # (N, 4u) input weights
    U: np.ndarray  # (u, 4u) recurrent weights
    b: np.ndarray  # (4u,)
    w_out: np.ndarray  # (u,)
    b_out: float = 0.0

    def __post_init__(self):
        N, four_u = self.W.shape
        u = four_u // 4
        if four_u != 4 * u or self.U.shape != (u, 4 * u) or self.b.shape != (4 * u,) or self.w_out.shape != (u,):
            raise SeriesError("LstmParams: inconsistent shapes")

    @property
    def n_features(self) -> int:
        return self.W.shape[0]

    @property
    def units(self) -> int:
        return self.U.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [self.W, self.U, self.b, self.w_out, np.atleast_1d(np.float64(self.b_out))]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_vector(cls, v: np.ndarray, n_features: int, units: int) -> "LstmParams":
        N, u = n_features, units
        sizes = [N * 4 * u, u * 4 * u, 4 * u, u, 1]
        parts = np.split(np.asarray(v, dtype=float), np.cumsum(sizes)[:-1])
        return cls(parts[0].reshape(N, 4 * u), parts[1].reshape(u, 4 * u), parts[2].copy(),
                   parts[3].copy(), float(parts[4][0]))

    def copy(self) -> "LstmParams":
        return LstmParams(self.W.copy(), self.U.copy(), self.b.copy(), self.w_out.copy(), float(self.b_out))

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_vector())))

    def save(self, path, meta: dict | None = None) -> None:
        doc = {"version": CHECKPOINT_VERSION, "n_features": self.n_features, "units": self.units,
               "meta": meta or {}, "params": self.to_vector().tolist()}
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "LstmParams":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("version") != CHECKPOINT_VERSION:
            raise SeriesError(f"unsupported checkpoint version {doc.get('version')}")
        return cls.from_vector(np.asarray(doc["params"]), doc["n_features"], doc["units"])


def init_params(n_features: int, units: int, rng: np.random.Generator) -> LstmParams:
    """Glorot-uniform input and head weights, orthogonal recurrent weights, forget bias 1."""
    N, u = n_features, units
    lim = np.sqrt(6.0 / (N + 4 * u))
    W = rng.uniform(-lim, lim, size=(N, 4 * u))
    a = rng.standard_normal((4 * u, u))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    U = q.T
    b = np.zeros(4 * u)
    b[u:2 * u] = 1.0
    lim_o = np.sqrt(6.0 / (u + 1))
    w_out = rng.uniform(-lim_o, lim_o, size=u)
    return LstmParams(W, U, b, w_out, 0.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(p: LstmParams, X: np.ndarray, mask: np.ndarray | None):
    """Run the recursion on a batch ``X`` of shape (B, L, N); keep what backprop needs."""
    B, L, N = X.shape
    u = p.units
    Zx = X @ p.W + p.b
    h = np.zeros((B, u))
    c = np.zeros((B, u))
    cache = []
    for t in range(L):
        z = Zx[:, t] + h @ p.U
        i = _sigmoid(z[:, :u])
        f = _sigmoid(z[:, u:2 * u])
        g = np.tanh(z[:, 2 * u:3 * u])
        o = _sigmoid(z[:, 3 * u:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        cache.append((h_prev, c_prev, i, f, g, o, tc))
    hd = h if mask is None else h * mask
    return hd @ p.w_out + p.b_out, hd, cache


def lstm_predict(p: LstmParams, X) -> np.ndarray | float:
    """Deterministic prediction (dropout off) for one window (L, N) or a batch (B, L, N)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != p.n_features:
        raise SeriesError(f"lstm_predict: expected windows with {p.n_features} features, got shape {X.shape}")
    y = _infer(p, X)
    return float(y[0]) if single else y


def _infer(p: LstmParams, X: np.ndarray) -> np.ndarray:
    """Inference-only recursion: one tanh per step, sigmoid as 0.5 * (1 + tanh(z / 2))."""
    B, L, _ = X.shape
    u = p.units
    half = np.full(4 * u, 0.5)
    half[2 * u:3 * u] = 1.0
    W, U, b = p.W * half, p.U * half, p.b * half
    h = np.zeros((B, u))
    c = np.zeros((B, u))
    for t in range(L):
        z = X[:, t] @ W
        z += h @ U
        z += b
        np.tanh(z, out=z)
        g = z[:, 2 * u:3 * u].copy()
        z += 1.0
        z *= 0.5
        c *= z[:, u:2 * u]
        c += z[:, :u] * g
        h = z[:, 3 * u:] * np.tanh(c)
    return h @ p.w_out + p.b_out


def loss_and_grad(p: LstmParams, X: np.ndarray, y: np.ndarray, mask: np.ndarray | None = None):
    """Mean squared error and its gradient with respect to every parameter."""
    B, L, N = X.shape
    u = p.units
    yhat, hd, cache = _forward(p, X, mask)
    err = yhat - y
    loss = float(np.mean(err**2))
    dy = 2.0 * err / B
    gw_out = hd.T @ dy
    gb_out = float(dy.sum())
    dh = np.outer(dy, p.w_out)
    if mask is not None:
        dh = dh * mask
    dc = np.zeros((B, u))
    gW = np.zeros_like(p.W)
    gU = np.zeros_like(p.U)
    gb = np.zeros_like(p.b)
    dz = np.empty((B, 4 * u))
    for t in range(L - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tc = cache[t]
        dc = dc + dh * o * (1.0 - tc**2)
        dz[:, :u] = dc * g * i * (1.0 - i)
        dz[:, u:2 * u] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * u:3 * u] = dc * i * (1.0 - g**2)
        dz[:, 3 * u:] = dh * tc * o * (1.0 - o)
        gW += X[:, t].T @ dz
        gU += h_prev.T @ dz
        gb += dz.sum(axis=0)
        dh = dz @ p.U.T
        dc = dc * f
    return loss, LstmParams(gW, gU, gb, gw_out, gb_out)


def clip_by_global_norm(grads: list[np.ndarray], clipnorm: float) -> tuple[list[np.ndarray], float]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > clipnorm:
        scale = clipnorm / norm
        grads = [g * scale for g in grads]
    return grads, norm


class _Optimizer:
    """Adam or RMSprop with Keras default constants."""

    def __init__(self, kind: str, lr: float, shapes):
        self.kind, self.lr, self.t = kind, lr, 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        eps = 1e-7
        if self.kind == "Adam":
            b1, b2 = 0.9, 0.999
            lr_t = self.lr * np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
            for x, g, m, v in zip(params, grads, self.m, self.v):
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                x -= lr_t * m / (np.sqrt(v) + eps)
        else:
            rho = 0.9
            for x, g, v in zip(params, grads, self.v):
                v *= rho
                v += (1 - rho) * g * g
                x -= self.lr * g / (np.sqrt(v) + eps)


class LstmDivergence(SeriesError):
    def __init__(self, msg: str, last_finite_epoch: int):
        super().__init__(msg)
        self.last_finite_epoch = last_finite_epoch


@dataclass
class FitHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based epoch with the lowest validation loss
    best_val_loss: float = float("nan")
    stopped_epoch: int = 0
    max_grad_norm_after_clip: float = 0.0


def train_lstm(X: np.ndarray, y: np.ndarray, hp: Hyperparams, seed: int,
               X_val: np.ndarray | None = None, y_val: np.ndarray | None = None,
               max_epochs: int = 200, patience: int = 10) -> tuple[LstmParams, FitHistory]:
    """Minibatch training on MSE with gradient clipping and inverted output dropout.

    With validation data, training stops after ``patience`` epochs without
    improvement and the best weights are restored. Without it, ``hp.epochs``
    (or ``max_epochs`` if zero) epochs are run.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 3 or X.shape[0] == 0 or X.shape[0] != y.size:
        raise SeriesError("train_lstm: need a nonempty (samples, L, N) array with matching targets")
    has_val = X_val is not None and len(X_val) > 0
    if X_val is not None and not has_val:
        raise SeriesError("train_lstm: validation set is empty")
    rng = np.random.default_rng(seed)
    p = init_params(X.shape[2], hp.units, rng)
    params = [p.W, p.U, p.b, p.w_out]
    b_out = np.zeros(1)
    opt = _Optimizer(hp.optimizer, hp.learning_rate, [a.shape for a in params] + [(1,)])
    hist = FitHistory()
    n_epochs = max_epochs if (has_val or hp.epochs == 0) else hp.epochs
    best = (np.inf, p.copy(), 0)
    keep = 1.0 - hp.dropout
    wait = 0
    for epoch in range(1, n_epochs + 1):
        order = rng.permutation(X.shape[0])
        total = 0.0
        for s in range(0, order.size, hp.batch_size):
            idx = order[s:s + hp.batch_size]
            mask = (rng.random((idx.size, hp.units)) < keep) / keep
            p.b_out = float(b_out[0])
            loss, g = loss_and_grad(p, X[idx], y[idx], mask)
            if not np.isfinite(loss):
                raise LstmDivergence(f"training diverged in epoch {epoch}", epoch - 1)
            grads, _ = clip_by_global_norm([g.W, g.U, g.b, g.w_out, np.array([g.b_out])], hp.clipnorm)
            hist.max_grad_norm_after_clip = max(hist.max_grad_norm_after_clip,
                                                float(np.sqrt(sum(float(np.sum(x * x)) for x in grads))))
            opt.step(params + [b_out], grads)
            total += loss * idx.size
        p.b_out = float(b_out[0])
        tl = total / X.shape[0]
        if not np.isfinite(tl) or not p.all_finite():
            raise LstmDivergence(f"training diverged in epoch {epoch}", epoch - 1)
        hist.train_loss.append(tl)
        hist.stopped_epoch = epoch
        if has_val:
            vl = float(np.mean((lstm_predict(p, X_val) - y_val) ** 2))
            hist.val_loss.append(vl)
            if vl < best[0] - 1e-12:
                best = (vl, p.copy(), epoch)
                wait = 0
            else:
                wait += 1
                if wait >= patience:
                    break
    if has_val:
        hist.best_val_loss, p, hist.best_epoch = best[0], best[1], best[2]
    else:
        hist.best_epoch = hist.stopped_epoch
    return p, hist


def hyperparams_dict(hp: Hyperparams) -> dict:
    return asdict(hp)
