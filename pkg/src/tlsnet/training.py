"""Adam training of the seq2seq model over a window dataset."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .model import ModelConfig, ModelParams, TENSOR_NAMES, loss_and_grads, tensor_shapes

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 128
    shuffle_seed: int = 0
    init_seed: int = 0
    checkpoint_every: int = 0  # 0 = only at the end
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 0.0  # 0 = no clipping

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be >= 0")


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Kernels ~ U(-1/sqrt(H), 1/sqrt(H)) drawn tensor by tensor in declared order; biases 0, forget bias 1."""
    gen = rng.derive(seed, rng.INIT)
    bound = 1.0 / math.sqrt(config.hidden_size)
    h = config.hidden_size
    tensors = {}
    for name, shape in tensor_shapes(config).items():
        if name.endswith("_b"):
            b = np.zeros(shape)
            if name != "out_b":
                b[h:2 * h] = 1.0
            tensors[name] = b
        else:
            tensors[name] = gen.uniform(-bound, bound, shape)
    return ModelParams(**tensors)


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams, beta1=0.9, beta2=0.999, epsilon=1e-8) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, beta1, beta2, epsilon)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update of ``params`` and ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name in TENSOR_NAMES:
        g = getattr(grads, name)
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p = getattr(params, name)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


@dataclass
class EpochRecord:
    epoch: int
    train_rmse: float
    val_rmse: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_rmse", "val_rmse", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, format(r.train_rmse, ".17g"), format(r.val_rmse, ".17g"), format(r.seconds, ".6f")])


def _arrays(windows):
    return windows.encoder_d, windows.encoder_e, windows.decoder_e, windows.target_d


def evaluate_windows(params: ModelParams, config: ModelConfig, windows, batch_size: int = 256) -> float:
    """Mean per-window RMSE; no gradient, no state change."""
    from .model import decode, encode, sos_values

    n = len(windows)
    if n == 0:
        return math.nan
    enc_d, enc_e, dec_e, tgt = _arrays(windows)
    total = 0.0
    for lo in range(0, n, batch_size):
        sl = slice(lo, lo + batch_size)
        state = encode(enc_d[sl], enc_e[sl], params)
        pred = decode(state, sos_values(enc_d[sl], config), dec_e[sl], params)
        total += float(np.sum(np.sqrt(np.mean((pred - tgt[sl]) ** 2, axis=1))))
    return total / n


def _clip(grads: ModelParams, max_norm: float) -> None:
    norm = grads.norm()
    if norm > max_norm:
        scale = max_norm / norm
        for _, g in grads.items():
            g *= scale


def train(dataset, model_config: ModelConfig, train_config: TrainConfig, checkpoint_path=None,
          params: ModelParams | None = None, progress=None) -> tuple[ModelParams, TrainHistory]:
    """Minibatch Adam over ``dataset.train``; validation RMSE on ``dataset.val`` after every epoch.

    Epoch ``e`` visits the training windows in the order
    ``rng.derive(shuffle_seed, rng.SHUFFLE, e).permutation(n)``. If a loss turns
    non-finite the run stops with :class:`TrainingDiverged`; a checkpoint file
    already on disk is left untouched.
    """
    from .checkpoint import write_checkpoint

    if len(dataset.train) == 0:
        raise ValueError("dataset has no training windows")
    if params is None:
        params = init_params(model_config, train_config.init_seed)
    params.check_shapes(model_config)
    tc = train_config
    state = AdamState.zeros_like(params, tc.beta1, tc.beta2, tc.epsilon)
    history = TrainHistory()
    enc_d, enc_e, dec_e, tgt = _arrays(dataset.train)
    n = len(dataset.train)

    for epoch in range(1, tc.epochs + 1):
        t0 = time.perf_counter()
        order = rng.derive(tc.shuffle_seed, rng.SHUFFLE, epoch).permutation(n)
        loss_sum = 0.0
        for b, lo in enumerate(range(0, n, tc.batch_size)):
            idx = order[lo:lo + tc.batch_size]
            loss, grads, per_window = loss_and_grads(params, model_config, enc_d[idx], enc_e[idx], dec_e[idx], tgt[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, b, loss)
            if tc.clip_norm > 0:
                _clip(grads, tc.clip_norm)
            adam_step(params, grads, state, tc.learning_rate)
            loss_sum += float(np.sum(per_window))
        val = evaluate_windows(params, model_config, dataset.val)
        rec = EpochRecord(epoch, loss_sum / n, val, time.perf_counter() - t0)
        history.records.append(rec)
        log.info("epoch %d train %.6g val %.6g (%.1fs)", epoch, rec.train_rmse, rec.val_rmse, rec.seconds)
        if progress is not None:
            progress(rec)
        if checkpoint_path is not None and tc.checkpoint_every and epoch % tc.checkpoint_every == 0:
            write_checkpoint(checkpoint_path, model_config, params)
    if checkpoint_path is not None:
        write_checkpoint(checkpoint_path, model_config, params)
    return params, history
