"""Self-checks: finite-difference gradient check and splitting-order study.

The gradient check compares :func:`tlsnet.model.backward` against central
differences of a reference forward pass that shares no code with the model
module and runs in ``numpy.longdouble``, so the oracle's own rounding stays far
below the tolerance even for gradient components near 1e-8.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .fields import FieldSpec
from .model import ModelConfig, ModelParams, SosPolicy, TrainingWindow, backward, tensor_shapes
from .physics import TwoLevelParams, convergence_study

LD = np.longdouble


def _ref_sigmoid(z):
    return 1 / (1 + np.exp(-z))


def _ref_step(x, h, c, wx, wh, b):
    H = h.shape[0]
    gate = lambda k: wx[k * H:(k + 1) * H] @ x + wh[k * H:(k + 1) * H] @ h + b[k * H:(k + 1) * H]  # noqa: E731
    i = _ref_sigmoid(gate(0))
    f = _ref_sigmoid(gate(1))
    g = np.tanh(gate(2))
    o = _ref_sigmoid(gate(3))
    c = f * c + i * g
    return o * np.tanh(c), c


def reference_forward(window, tensors: dict, sos_policy: SosPolicy = SosPolicy.LAST_OBSERVED, dtype=LD) -> np.ndarray:
    """Unrolled encoder/decoder evaluation of a single window."""
    t = {k: np.asarray(v, dtype=dtype) for k, v in tensors.items()}
    H = t["enc_wh"].shape[1]
    h = np.zeros(H, dtype=dtype)
    c = np.zeros(H, dtype=dtype)
    for d, e in zip(window.encoder_d, window.encoder_e):
        h, c = _ref_step(np.array([d, e], dtype=dtype), h, c, t["enc_wx"], t["enc_wh"], t["enc_b"])
    prev = dtype(window.encoder_d[-1]) if sos_policy is SosPolicy.LAST_OBSERVED else dtype(0)
    out = []
    for e in window.decoder_e:
        h, c = _ref_step(np.array([prev, e], dtype=dtype), h, c, t["dec_wx"], t["dec_wh"], t["dec_b"])
        prev = t["out_w"][0] @ h + t["out_b"][0]
        out.append(prev)
    return np.array(out, dtype=dtype)


def reference_loss(window, tensors: dict, sos_policy=SosPolicy.LAST_OBSERVED) -> LD:
    pred = reference_forward(window, tensors, sos_policy)
    r = pred - np.asarray(window.target_d, dtype=LD)
    return np.sqrt(np.mean(r * r))


def finite_difference_grads(window, params: ModelParams, sos_policy=SosPolicy.LAST_OBSERVED,
                            rel_step: float = 1e-5) -> dict:
    """Central differences with step ``rel_step * max(1, |theta|)`` per component."""
    tensors = {k: np.asarray(v, dtype=LD) for k, v in params.items()}
    grads = {}
    for name, arr in tensors.items():
        g = np.zeros(arr.shape)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            step = LD(rel_step) * max(LD(1), abs(old))
            arr[idx] = old + step
            up = reference_loss(window, tensors, sos_policy)
            arr[idx] = old - step
            down = reference_loss(window, tensors, sos_policy)
            arr[idx] = old
            g[idx] = float((up - down) / (2 * step))
        grads[name] = g
    return grads


@dataclass
class GradcheckReport:
    seed: int
    checked: int
    max_rel_error: float
    worst: str
    feedback_components: int
    feedback_max_rel_error: float
    detached_max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < GRADCHECK_TOL and self.feedback_components > 0


GRADCHECK_TOL = 1e-4
GRADCHECK_FLOOR = 1e-8


def gradcheck_instance(seed: int, hidden: int = 8, length: int = 10):
    """Random model/window pair: every tensor ~ U(-0.5, 0.5), window values ~ U(-1, 1)."""
    config = ModelConfig(hidden_size=hidden, encoder_length=length, decoder_length=length)
    gen = rng.derive(seed, rng.GRADCHECK)
    params = ModelParams(**{k: gen.uniform(-0.5, 0.5, s) for k, s in tensor_shapes(config).items()})
    window = TrainingWindow(*(gen.uniform(-1.0, 1.0, length) for _ in range(4)))
    return config, params, window


def _rel_errors(analytic: ModelParams, numeric: dict, mask_fn=None):
    out = []
    for name, a in analytic.items():
        n = numeric[name]
        for idx in np.ndindex(a.shape):
            if abs(a[idx]) > GRADCHECK_FLOOR and (mask_fn is None or mask_fn(name, idx)):
                out.append((abs(a[idx] - n[idx]) / max(abs(a[idx]), abs(n[idx])), f"{name}{list(idx)}"))
    return out


def gradcheck(seed: int, hidden: int = 8, length: int = 10) -> GradcheckReport:
    config, params, window = gradcheck_instance(seed, hidden, length)
    _, grads = backward(window, params, config)
    _, detached = backward(window, params, config, detach_feedback=True)
    numeric = finite_difference_grads(window, params, config.sos_policy)
    errs = _rel_errors(grads, numeric)
    worst = max(errs)

    # components whose gradient carries a contribution from the fed-back predictions
    def via_feedback(name, idx):
        return abs(getattr(grads, name)[idx] - getattr(detached, name)[idx]) > GRADCHECK_FLOOR

    fb = _rel_errors(grads, numeric, via_feedback)
    det = _rel_errors(detached, numeric)
    return GradcheckReport(
        seed=seed,
        checked=len(errs),
        max_rel_error=worst[0],
        worst=worst[1],
        feedback_components=len(fb),
        feedback_max_rel_error=max(fb)[0] if fb else math.nan,
        detached_max_rel_error=max(det)[0],
    )


def gradcheck_suite(seeds=(0, 1, 2), hidden: int = 8, length: int = 10) -> list[GradcheckReport]:
    return [gradcheck(s, hidden, length) for s in seeds]


ORDER_BAND = (1.8, 2.2)


def self_test_convergence(field: FieldSpec | None = None, scheme: str = "strang",
                          params: TwoLevelParams = TwoLevelParams()) -> dict:
    """dt-halving study (0.05, 0.025, 0.0125 vs 0.0125/64); passes iff every observed order is in [1.8, 2.2].

    A field that the splitting propagates exactly (zero field) gives identically
    zero errors and passes as an exact case.
    """
    field = field if field is not None else FieldSpec.sine(1.0, 0.5)
    report = convergence_study(params, field, scheme=scheme)
    if report["exact"]:
        report["passed"] = True
    else:
        lo, hi = ORDER_BAND
        report["passed"] = all(lo <= o <= hi for o in report["orders"])
    report["scheme"] = scheme
    return report
