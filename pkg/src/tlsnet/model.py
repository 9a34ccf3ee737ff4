"""Conditional encoder-decoder LSTM for dipole forecasting.

One shared-weight LSTM cell per side, unrolled over the window. Gate rows in
every kernel are stacked in the order input, forget, cell candidate, output
(``i, f, g, o``), each block ``H`` rows tall.

Encoder input at step k is ``[d_k, E_k]``. Decoder input at step k is
``[previous prediction, E_k]`` where the first "previous prediction" is the
start-of-sequence value. Predictions are ``out_w @ h + out_b``. There is no
teacher forcing; the gradient flows back through the fed-back predictions.

All numerics are float64 and batched over a leading axis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields
from typing import Iterator, Protocol

import numpy as np

RMSE_EPS = 1e-12
TENSOR_NAMES = ("enc_wx", "enc_wh", "enc_b", "dec_wx", "dec_wh", "dec_b", "out_w", "out_b")


class SosPolicy(str, enum.Enum):
    LAST_OBSERVED = "last_observed"
    FIXED_ZERO = "fixed_zero"


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, tensor: str):
        super().__init__(f"non-finite gradient in {tensor}")
        self.tensor = tensor


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 64
    encoder_length: int = 100
    decoder_length: int = 100
    sos_policy: SosPolicy = SosPolicy.LAST_OBSERVED
    input_dim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "sos_policy", SosPolicy(self.sos_policy))
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if self.encoder_length < 1 or self.decoder_length < 1:
            raise ValueError("sequence lengths must be >= 1")
        if self.input_dim != 2:
            raise ValueError("input_dim is fixed at 2 (dipole, field)")

    def to_dict(self) -> dict:
        return {
            "hidden_size": self.hidden_size,
            "encoder_length": self.encoder_length,
            "decoder_length": self.decoder_length,
            "sos_policy": self.sos_policy.value,
            "input_dim": self.input_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelParams:
    """Weights, also used as the gradient buffer (same shapes, same order)."""

    enc_wx: np.ndarray  # (4H, 2)
    enc_wh: np.ndarray  # (4H, H)
    enc_b: np.ndarray  # (4H,)
    dec_wx: np.ndarray
    dec_wh: np.ndarray
    dec_b: np.ndarray
    out_w: np.ndarray  # (1, H)
    out_b: np.ndarray  # (1,)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        return cls(**{name: np.zeros(shape) for name, shape in tensor_shapes(config).items()})

    @property
    def hidden_size(self) -> int:
        return self.enc_wh.shape[1]

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(**{k: np.zeros_like(v) for k, v in self.items()})

    def check_shapes(self, config: ModelConfig) -> None:
        for name, shape in tensor_shapes(config).items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for _, v in self.items()])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(v * v) for _, v in self.items())))


def tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    h = config.hidden_size
    lstm = {"wx": (4 * h, config.input_dim), "wh": (4 * h, h), "b": (4 * h,)}
    shapes = {f"{side}_{k}": s for side in ("enc", "dec") for k, s in lstm.items()}
    shapes["out_w"] = (1, h)
    shapes["out_b"] = (1,)
    return {name: shapes[name] for name in TENSOR_NAMES}


@dataclass
class HiddenState:
    h: np.ndarray
    c: np.ndarray


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def _rows(a, w):
    """``a @ w.T`` computed so that each row's value does not depend on the batch size.

    BLAS takes a different kernel for a single row; padding to two rows keeps
    every row on the matrix-matrix path.
    """
    if a.ndim == 2 and a.shape[0] == 1:
        return (np.concatenate([a, a]) @ w.T)[:1]
    return a @ w.T


def _cell(x, h, c, wx, wh, b):
    H = h.shape[-1]
    z = _rows(x, wx) + _rows(h, wh) + b
    s = _sigmoid(z)
    i, f, o = s[..., :H], s[..., H:2 * H], s[..., 3 * H:]
    g = np.tanh(z[..., 2 * H:3 * H])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (x, h, c, i, f, g, o, tc)


def _cell_backward(dh, dc, cache, wx, wh, gwx, gwh, gb):
    """Backprop through one cell; accumulates weight grads in place, returns (dx, dh_prev, dc_prev)."""
    x, h, c, i, f, g, o, tc = cache
    H = h.shape[-1]
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.empty((dc.shape[0], 4 * H))
    dz[:, :H] = dc * g * i * (1.0 - i)
    dz[:, H:2 * H] = dc * c * f * (1.0 - f)
    dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
    dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
    gwx += dz.T @ x
    gwh += dz.T @ h
    gb += dz.sum(axis=0)
    return dz @ wx, dz @ wh, dc * f


def lstm_cell(x: np.ndarray, state: HiddenState, wx: np.ndarray, wh: np.ndarray, b: np.ndarray) -> HiddenState:
    h, c, _ = _cell(np.asarray(x, float), state.h, state.c, wx, wh, b)
    return HiddenState(h, c)


def _batch2(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[None] if a.ndim == 1 else a


def encode(encoder_d, encoder_e, params: ModelParams, keep: list | None = None) -> HiddenState:
    """Run the encoder from a zero state. 1-D inputs give 1-D state vectors."""
    single = np.ndim(encoder_d) == 1
    d, e = _batch2(encoder_d), _batch2(encoder_e)
    if d.shape != e.shape:
        raise ValueError(f"encoder arrays differ in shape: {d.shape} vs {e.shape}")
    H = params.hidden_size
    h = np.zeros((d.shape[0], H))
    c = np.zeros((d.shape[0], H))
    x = np.stack([d, e], axis=-1)
    for k in range(d.shape[1]):
        h, c, cache = _cell(x[:, k], h, c, params.enc_wx, params.enc_wh, params.enc_b)
        if keep is not None:
            keep.append(cache)
    return HiddenState(h[0], c[0]) if single else HiddenState(h, c)


def decode(init: HiddenState, sos_d, decoder_e, params: ModelParams, keep: list | None = None) -> np.ndarray:
    """Autoregressive decoder; each prediction is the next step's dipole input."""
    single = np.ndim(decoder_e) == 1
    e = _batch2(decoder_e)
    if e.shape[1] < 1:
        raise ValueError("decoder length must be >= 1")
    h, c = np.atleast_2d(init.h), np.atleast_2d(init.c)
    prev = np.broadcast_to(np.asarray(sos_d, float), (e.shape[0],))
    b0 = params.out_b[0]
    preds = np.empty_like(e)
    for k in range(e.shape[1]):
        x = np.stack([prev, e[:, k]], axis=-1)
        h, c, cache = _cell(x, h, c, params.dec_wx, params.dec_wh, params.dec_b)
        if keep is not None:
            keep.append((cache, h))
        prev = _rows(h, params.out_w)[:, 0] + b0
        preds[:, k] = prev
    return preds[0] if single else preds


def sos_values(encoder_d: np.ndarray, config: ModelConfig) -> np.ndarray:
    if config.sos_policy is SosPolicy.LAST_OBSERVED:
        return encoder_d[..., -1]
    return np.zeros(encoder_d.shape[:-1])


@dataclass
class TrainingWindow:
    encoder_d: np.ndarray
    encoder_e: np.ndarray
    decoder_e: np.ndarray
    target_d: np.ndarray
    wave_index: int = -1
    start: int = -1


def _check_window(window, config: ModelConfig) -> None:
    le, ld = config.encoder_length, config.decoder_length
    for name, n in (("encoder_d", le), ("encoder_e", le), ("decoder_e", ld), ("target_d", ld)):
        got = np.shape(getattr(window, name))[-1]
        if got != n:
            raise ValueError(f"{name} has length {got}, model expects {n}")


def forward(window, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Predictions for one window (or a batch, if the window arrays are 2-D)."""
    _check_window(window, config)
    state = encode(window.encoder_d, window.encoder_e, params)
    return decode(state, sos_values(np.asarray(window.encoder_d, float), config), window.decoder_e, params)


def loss_rmse(pred, target) -> float:
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("empty arrays")
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def loss_and_grads(params: ModelParams, config: ModelConfig, encoder_d, encoder_e, decoder_e, target_d,
                   detach_feedback: bool = False) -> tuple[float, ModelParams, np.ndarray]:
    """Mean per-window RMSE over a batch and its exact gradient.

    Returns ``(mean_loss, grads, per_window_losses)``. With ``detach_feedback``
    the fed-back predictions are treated as constants (ablation only).
    """
    enc_d, enc_e = _batch2(encoder_d), _batch2(encoder_e)
    dec_e, tgt = _batch2(decoder_e), _batch2(target_d)
    batch, n = tgt.shape
    enc_cache: list = []
    dec_cache: list = []
    state = encode(enc_d, enc_e, params, keep=enc_cache)
    preds = decode(state, sos_values(enc_d, config), dec_e, params, keep=dec_cache)

    resid = preds - tgt
    mse = np.mean(resid * resid, axis=1)
    losses = np.sqrt(mse)
    dpred = resid / (n * np.sqrt(mse + RMSE_EPS))[:, None] / batch

    g = params.zeros_like()
    w = params.out_w[0]
    dh_next = np.zeros_like(state.h)
    dc_next = np.zeros_like(state.c)
    dfeed = np.zeros(batch)
    for k in reversed(range(n)):
        cache, h_k = dec_cache[k]
        dp = dpred[:, k] + dfeed
        g.out_w[0] += dp @ h_k
        g.out_b[0] += dp.sum()
        dh = dp[:, None] * w + dh_next
        dx, dh_next, dc_next = _cell_backward(dh, dc_next, cache, params.dec_wx, params.dec_wh,
                                              g.dec_wx, g.dec_wh, g.dec_b)
        # step k's dipole input is step k-1's prediction; at k = 0 it is data
        dfeed = np.zeros(batch) if detach_feedback else dx[:, 0]
    for cache in reversed(enc_cache):
        _, dh_next, dc_next = _cell_backward(dh_next, dc_next, cache, params.enc_wx, params.enc_wh,
                                             g.enc_wx, g.enc_wh, g.enc_b)
    for name, arr in g.items():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteGradientError(name)
    return float(np.mean(losses)), g, losses


def backward(window, params: ModelParams, config: ModelConfig, detach_feedback: bool = False) -> tuple[float, ModelParams]:
    """Loss of one window and the gradient of that loss with respect to every tensor."""
    _check_window(window, config)
    loss, grads, _ = loss_and_grads(params, config, window.encoder_d, window.encoder_e, window.decoder_e,
                                    window.target_d, detach_feedback=detach_feedback)
    return loss, grads


class Forecaster(Protocol):
    encoder_length: int
    decoder_length: int

    def predict(self, encoder_d: np.ndarray, encoder_e: np.ndarray, decoder_e: np.ndarray, start: int) -> np.ndarray:
        """Batched block prediction; ``start`` is the index of ``decoder_e[:, 0]`` in the full field."""


@dataclass
class Seq2Seq:
    config: ModelConfig
    params: ModelParams

    def __post_init__(self):
        self.params.check_shapes(self.config)

    @property
    def encoder_length(self) -> int:
        return self.config.encoder_length

    @property
    def decoder_length(self) -> int:
        return self.config.decoder_length

    def predict(self, encoder_d, encoder_e, decoder_e, start=None):
        state = encode(encoder_d, encoder_e, self.params)
        return decode(state, sos_values(np.asarray(encoder_d, float), self.config), decoder_e, self.params)


def rollout(model: Forecaster, seed_d, e_full, horizon: int) -> np.ndarray:
    """Windowed autoregressive continuation of ``seed_d`` for ``horizon`` points.

    Each block re-encodes the latest ``encoder_length`` dipoles (predicted ones
    after the first block) with their field values and decodes the next
    ``decoder_length``; the final block is shortened to land exactly on
    ``horizon``. Accepts 1-D inputs or a batch along axis 0.
    """
    single = np.ndim(seed_d) == 1
    seed, e = _batch2(seed_d), _batch2(e_full)
    le, ld = model.encoder_length, model.decoder_length
    if seed.shape[1] != le:
        raise ValueError(f"seed has {seed.shape[1]} points, model encodes {le}")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if e.shape[1] < le + horizon:
        raise ValueError(f"rollout needs {le + horizon} field samples, got {e.shape[1]}")
    if e.shape[0] != seed.shape[0]:
        raise ValueError("seed and field batches differ")
    d = np.empty((seed.shape[0], le + horizon))
    d[:, :le] = seed
    pos = le
    while pos < le + horizon:
        n = min(ld, le + horizon - pos)
        d[:, pos:pos + n] = model.predict(d[:, pos - le:pos], e[:, pos - le:pos], e[:, pos:pos + n], pos)
        pos += n
    out = d[:, le:]
    return out[0] if single else out
