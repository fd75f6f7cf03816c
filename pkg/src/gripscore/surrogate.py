"""LSTM surrogate for the optimizer pipeline.

Predicts the three scores per time step from windows of normalized telemetry.
The network (two LSTM layers, two fully connected layers) is implemented
directly in numpy with hand-written backpropagation through time, so the
gradients can be verified against finite differences and training is
bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from .telemetry import LapTelemetry, NormalizationStats, WHEELS

_PER_WHEEL_M1 = ("alpha", "kappa", "fx_n", "fy_n", "fz_n")
_SCALARS_M1 = (
    "r_brake_bar", "r_throttle_pct", "psi_dot", "ax_cog", "ay_cog", "delta", "v", "beta",
)


def _wheels(stem: str) -> list[str]:
    return [f"{stem}_{w}" for w in WHEELS]


def feature_channels(variant: str) -> list[str]:
    """Channel lists of the three model variants (m2 is the default)."""
    m1: list[str] = []
    for stem in _PER_WHEEL_M1:
        m1 += _wheels(stem)
    m1 += list(_SCALARS_M1)
    m1 += _wheels("rocker")
    if variant == "m1":
        return m1
    if variant == "m2":
        return m1 + _wheels("gamma") + _wheels("r_dyn_m") + _wheels("mu_toe")
    if variant == "m3":
        return _wheels("fz_n") + list(_SCALARS_M1) + _wheels("rocker")
    raise ValueError(f"unknown feature set variant {variant!r} (expected m1, m2 or m3)")


SCORE_NAMES = ("s_handling", "s_veh_traj", "s_tot")


@dataclass(frozen=True)
class SurrogateConfig:
    feature_set: str = "m2"
    window: int = 100
    hidden_lstm: int = 64
    hidden_dense: int = 32
    outputs: int = 3
    learning_rate: float = 1e-3
    batch_size: int = 128
    dropout: float = 0.3
    recurrent_dropout: float = 0.1
    max_epochs: int = 200
    patience: int = 10


def make_windows(
    lap: LapTelemetry,
    scores: np.ndarray,
    weights: np.ndarray,
    channels: Sequence[str],
    window: int = 100,
):
    """Non-overlapping windows of (features, targets, mask weights).

    ``scores`` has shape (n, 3); ``weights`` zero marks excluded samples.
    Laps shorter than one window are skipped with a warning.
    """
    n = len(lap)
    if n < window:
        warnings.warn(f"lap {lap.lap_id} shorter than one window ({n} < {window}), skipped")
        return []
    feats = np.stack([lap.channel(c) for c in channels], axis=1)
    out = []
    for lo in range(0, n - window + 1, window):
        hi = lo + window
        out.append((feats[lo:hi], scores[lo:hi], weights[lo:hi]))
    return out


# ---------------------------------------------------------------------------
# network


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _glorot(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out))


def _orthogonal(rng, rows, cols):
    a = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def init_params(config: SurrogateConfig, n_features: int, seed: int) -> dict:
    """Deterministic parameter initialization; forget-gate bias starts at 1."""
    rng = np.random.default_rng(seed)
    h = config.hidden_lstm
    d = config.hidden_dense
    params = {}
    fan = n_features
    for layer in (1, 2):
        params[f"W{layer}"] = _glorot(rng, fan, 4 * h)
        params[f"U{layer}"] = np.concatenate(
            [_orthogonal(rng, h, h) for _ in range(4)], axis=1
        )
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        params[f"b{layer}"] = b
        fan = h
    params["V1"] = _glorot(rng, h, d)
    params["c1"] = np.zeros(d)
    params["V2"] = _glorot(rng, d, config.outputs)
    params["c2"] = np.zeros(config.outputs)
    return params


def _lstm_forward(X, W, U, b, mask_x, mask_h):
    """One LSTM layer over (B, T, F); returns outputs and the BPTT cache."""
    B, T, _ = X.shape
    H = U.shape[0]
    Xd = X * mask_x[:, None, :] if mask_x is not None else X
    zx = Xd.reshape(B * T, -1) @ W
    zx = zx.reshape(B, T, 4 * H)
    hs = np.empty((B, T, H))
    cache = {"i": np.empty((B, T, H)), "f": np.empty((B, T, H)),
             "g": np.empty((B, T, H)), "o": np.empty((B, T, H)),
             "tc": np.empty((B, T, H)), "c": np.empty((B, T, H)),
             "hd": np.empty((B, T, H)), "Xd": Xd}
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        hd = h * mask_h if mask_h is not None else h
        z = zx[:, t] + hd @ U + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        cache["i"][:, t] = i
        cache["f"][:, t] = f
        cache["g"][:, t] = g
        cache["o"][:, t] = o
        cache["tc"][:, t] = tc
        cache["c"][:, t] = c
        cache["hd"][:, t] = hd
    return hs, cache


def _lstm_backward(dhs, X, hs, cache, W, U, mask_x, mask_h):
    """Backpropagation through time for one layer; returns input grads."""
    B, T, H = hs.shape
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(4 * H)
    dX = np.zeros_like(X)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    Xd = cache["Xd"]
    for t in range(T - 1, -1, -1):
        dh = dhs[:, t] + dh_next
        i = cache["i"][:, t]
        f = cache["f"][:, t]
        g = cache["g"][:, t]
        o = cache["o"][:, t]
        tc = cache["tc"][:, t]
        c_prev = cache["c"][:, t - 1] if t > 0 else np.zeros((B, H))
        dc = dh * o * (1.0 - tc * tc) + dc_next
        do = dh * tc
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_next = dc * f
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)],
            axis=1,
        )
        dW += Xd[:, t].T @ dz
        dU += cache["hd"][:, t].T @ dz
        db += dz.sum(axis=0)
        dh_prev = dz @ U.T
        dh_next = dh_prev * mask_h if mask_h is not None else dh_prev
        dxd = dz @ W.T
        dX[:, t] = dxd * mask_x if mask_x is not None else dxd
    return dX, dW, dU, db


def forward(params, X, config, rng=None):
    """Full forward pass. ``rng`` enables dropout (training mode)."""
    B = X.shape[0]
    masks = [None] * 4
    if rng is not None:
        p, q = config.dropout, config.recurrent_dropout
        h = config.hidden_lstm
        if p > 0:
            masks[0] = (rng.random((B, X.shape[2])) >= p) / (1.0 - p)
            masks[2] = (rng.random((B, h)) >= p) / (1.0 - p)
        if q > 0:
            masks[1] = (rng.random((B, h)) >= q) / (1.0 - q)
            masks[3] = (rng.random((B, h)) >= q) / (1.0 - q)
    h1, cache1 = _lstm_forward(X, params["W1"], params["U1"], params["b1"], masks[0], masks[1])
    h2, cache2 = _lstm_forward(h1, params["W2"], params["U2"], params["b2"], masks[2], masks[3])
    a1 = np.tanh(h2 @ params["V1"] + params["c1"])
    yhat = a1 @ params["V2"] + params["c2"]
    return yhat, (X, h1, cache1, h2, cache2, a1, masks)


def loss_and_grads(params, X, Y, Wt, config, rng=None):
    """Masked mean-squared-error loss and gradients for one batch.

    ``Wt`` (B, T) weights each position; masked positions contribute exactly
    zero gradient.
    """
    yhat, ctx = forward(params, X, config, rng=rng)
    X, h1, cache1, h2, cache2, a1, masks = ctx
    w = Wt[:, :, None]
    denom = max(float(Wt.sum()) * yhat.shape[2], 1.0)
    resid = (yhat - Y) * w
    loss = float(np.sum(resid * (yhat - Y))) / denom
    dy = 2.0 * resid / denom

    grads = {}
    grads["V2"] = np.einsum("btd,bto->do", a1, dy)
    grads["c2"] = dy.sum(axis=(0, 1))
    da1 = dy @ params["V2"].T
    dz1 = da1 * (1.0 - a1 * a1)
    grads["V1"] = np.einsum("bth,btd->hd", h2, dz1)
    grads["c1"] = dz1.sum(axis=(0, 1))
    dh2 = dz1 @ params["V1"].T
    dh1, grads["W2"], grads["U2"], grads["b2"] = _lstm_backward(
        dh2, h1, h2, cache2, params["W2"], params["U2"], masks[2], masks[3]
    )
    _, grads["W1"], grads["U1"], grads["b1"] = _lstm_backward(
        dh1, X, h1, cache1, params["W1"], params["U1"], masks[0], masks[1]
    )
    return loss, grads


class Adam:
    """Adaptive-moment estimation over a parameter dict."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            mhat = self.m[k] / b1c
            vhat = self.v[k] / b2c
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def rmse(reference: np.ndarray, prediction: np.ndarray, weights=None) -> float:
    """Root-mean-square error over unmasked positions."""
    reference = np.asarray(reference, dtype=float)
    prediction = np.asarray(prediction, dtype=float)
    if reference.shape != prediction.shape:
        raise ValueError(f"shape mismatch {reference.shape} vs {prediction.shape}")
    d2 = (reference - prediction) ** 2
    if weights is None:
        return float(np.sqrt(d2.mean()))
    w = np.asarray(weights, dtype=float)
    if w.shape != d2.shape[: w.ndim]:
        raise ValueError("weights shape mismatch")
    if w.ndim < d2.ndim:
        w = w.reshape(w.shape + (1,) * (d2.ndim - w.ndim))
    total = float((w * np.ones_like(d2)).sum())
    if total <= 0:
        raise ValueError("no unmasked positions")
    return float(np.sqrt(float((d2 * w).sum()) / total))


@dataclass
class TrainedSurrogate:
    config: SurrogateConfig
    channels: list
    params: dict
    stats: NormalizationStats
    history: list = field(default_factory=list)
    train_rmse: float = math.nan
    val_rmse: float = math.nan

    def predict_windows(self, X: np.ndarray) -> np.ndarray:
        yhat, _ = forward(self.params, X, self.config, rng=None)
        return yhat


def _dataset_tensors(windows):
    X = np.stack([w[0] for w in windows])
    Y = np.stack([w[1] for w in windows])
    Wt = np.stack([w[2] for w in windows])
    return X, Y, Wt


@dataclass(frozen=True)
class DatasetSplit:
    """Lap-level partitions; a held-out track never appears in training."""

    train: list
    validation: list
    test: list

    @staticmethod
    def of(laps: Sequence, seed: int, holdout_track: Optional[str] = None) -> "DatasetSplit":
        held = [lap for lap in laps if holdout_track and lap.track_id == holdout_track]
        rest = [lap for lap in laps if not (holdout_track and lap.track_id == holdout_track)]
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(rest))
        rest = [rest[i] for i in order]
        n = len(rest)
        n_val = max(1, round(0.1 * n)) if n >= 3 else 0
        n_test = max(1, round(0.1 * n)) if n >= 3 else 0
        n_train = n - n_val - n_test
        train = rest[:n_train]
        val = rest[n_train : n_train + n_val]
        test = rest[n_train + n_val :] + held
        if not train:
            raise ValueError("empty training partition")
        return DatasetSplit(train=train, validation=val, test=test)


def train(
    windows_train,
    windows_val,
    config: SurrogateConfig,
    seed: int,
    stats: NormalizationStats,
    channels: Sequence[str],
    verbose: bool = False,
) -> TrainedSurrogate:
    """Train with Adam and early stopping on validation RMSE.

    Deterministic for a fixed seed: initialization, batch shuffling and
    dropout masks all come from one seeded generator.
    """
    if not windows_train:
        raise ValueError("empty training set")
    X, Y, Wt = _dataset_tensors(windows_train)
    has_val = bool(windows_val)
    if has_val:
        Xv, Yv, Wv = _dataset_tensors(windows_val)
    params = init_params(config, X.shape[2], seed)
    rng = np.random.default_rng(seed + 1)
    opt = Adam(params, lr=config.learning_rate)
    best = None
    best_metric = math.inf
    patience_left = config.patience
    history = []
    n = X.shape[0]
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        nb = 0
        for lo in range(0, n, config.batch_size):
            sel = order[lo : lo + config.batch_size]
            loss, grads = loss_and_grads(params, X[sel], Y[sel], Wt[sel], config, rng=rng)
            if not math.isfinite(loss):
                raise FloatingPointError(f"training diverged at epoch {epoch} (loss={loss})")
            opt.step(params, grads)
            total += loss
            nb += 1
        train_loss = total / max(nb, 1)
        if has_val:
            pv = forward(params, Xv, config, rng=None)[0]
            metric = rmse(Yv, pv, Wv)
        else:
            pt = forward(params, X, config, rng=None)[0]
            metric = rmse(Y, pt, Wt)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_rmse": metric})
        if verbose:
            print(f"epoch {epoch:3d}  loss {train_loss:.5f}  val_rmse {metric:.5f}")
        if metric < best_metric - 1e-6:
            best_metric = metric
            best = {k: v.copy() for k, v in params.items()}
            patience_left = config.patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                break
    params = best if best is not None else params
    pt = forward(params, X, config, rng=None)[0]
    return TrainedSurrogate(
        config=config,
        channels=list(channels),
        params=params,
        stats=stats,
        history=history,
        train_rmse=rmse(Y, pt, Wt),
        val_rmse=best_metric if has_val else math.nan,
    )


def predict(model: TrainedSurrogate, lap: LapTelemetry) -> np.ndarray:
    """Score series for one normalized lap; complete windows only, stitched
    back in order. Dropout is off."""
    missing = [c for c in model.channels if c not in lap.channels]
    if missing:
        raise ValueError(f"lap {lap.lap_id} is missing feature channels: {', '.join(missing)}")
    n = len(lap)
    w = model.config.window
    if n < w:
        raise ValueError(f"lap {lap.lap_id} shorter than one window")
    feats = np.stack([lap.channel(c) for c in model.channels], axis=1)
    n_win = n // w
    X = feats[: n_win * w].reshape(n_win, w, -1)
    yhat = model.predict_windows(X)
    return yhat.reshape(n_win * w, model.config.outputs)


CHECKPOINT_VERSION = 1


def save_checkpoint(model: TrainedSurrogate, path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "channels": model.channels,
        "train_rmse": model.train_rmse,
        "val_rmse": model.val_rmse,
        "stats_mean": model.stats.mean,
        "stats_std": model.stats.std,
    }
    arrays = {f"param_{k}": v for k, v in model.params.items()}
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> TrainedSurrogate:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {
            k[len("param_") :]: data[k] for k in data.files if k.startswith("param_")
        }
    return TrainedSurrogate(
        config=SurrogateConfig(**meta["config"]),
        channels=list(meta["channels"]),
        params=params,
        stats=NormalizationStats(mean=meta["stats_mean"], std=meta["stats_std"]),
        history=[],
        train_rmse=meta["train_rmse"],
        val_rmse=meta["val_rmse"],
    )
