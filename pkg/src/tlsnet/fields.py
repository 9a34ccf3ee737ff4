"""Driving-field families.

=============  =====================================
family         E(t)
=============  =====================================
zero           0
sine           A sin(w t)
pulse          A sin(w t / 20)^2 sin(w t)
random         A env(t) sin(w t)
linear         0.01 a1 a2 t
=============  =====================================

``env`` is a seeded band-limited envelope: ``|s(t)| / max|s|`` with
``s(t) = sum_k a_k sin(2 pi k t / duration + phi_k)``, ``k = 1..K``, where
``a_k ~ U[0, 1)`` and ``phi_k ~ U[0, 2 pi)`` are drawn (all ``a`` first, then all
``phi``) from ``rng.derive(seed, rng.ENVELOPE)``. The maximum is taken over the
10100 nodes ``j * (duration / 10100)``; between nodes the ratio is clipped at 1.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import rng
from .physics import DEFAULT_DT, DEFAULT_POINTS, TimeGrid

DEFAULT_DURATION = DEFAULT_DT * DEFAULT_POINTS  # 252.5
ENVELOPE_SCAN_POINTS = DEFAULT_POINTS


class Family(str, enum.Enum):
    ZERO = "zero"
    SINE = "sine"
    PULSE = "pulse"
    RANDOM = "random"
    LINEAR = "linear"


@dataclass(frozen=True)
class EnvelopeSpec:
    seed: int
    components: int = 4
    duration: float = DEFAULT_DURATION

    def __post_init__(self):
        if self.components < 1:
            raise ValueError("envelope needs at least one component")
        if not self.duration > 0:
            raise ValueError("envelope duration must be positive")


@dataclass(frozen=True)
class FieldSpec:
    family: Family = Family.ZERO
    amplitude: float = 0.0
    frequency: float = 0.0
    linear_a1: float = 0.0
    linear_a2: float = 0.0
    envelope_seed: int = 0
    envelope_components: int = 4
    envelope_duration: float = DEFAULT_DURATION

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not self.amplitude >= 0:
            raise ValueError("amplitude must be >= 0")
        if not self.frequency >= 0:
            raise ValueError("frequency must be >= 0")
        if self.envelope_components < 1:
            raise ValueError("envelope_components must be >= 1")

    @classmethod
    def sine(cls, amplitude: float, frequency: float) -> "FieldSpec":
        return cls(Family.SINE, amplitude, frequency)

    @classmethod
    def pulse(cls, amplitude: float, frequency: float) -> "FieldSpec":
        return cls(Family.PULSE, amplitude, frequency)

    @classmethod
    def random_pulse(cls, amplitude: float, frequency: float, seed: int, components: int = 4) -> "FieldSpec":
        return cls(Family.RANDOM, amplitude, frequency, envelope_seed=seed, envelope_components=components)

    @classmethod
    def linear(cls, a1: float, a2: float) -> "FieldSpec":
        return cls(Family.LINEAR, linear_a1=a1, linear_a2=a2)

    @property
    def envelope(self) -> EnvelopeSpec:
        return EnvelopeSpec(self.envelope_seed, self.envelope_components, self.envelope_duration)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FieldSpec":
        return cls(**d)


@functools.lru_cache(maxsize=4096)
def _envelope_terms(spec: EnvelopeSpec) -> tuple[np.ndarray, np.ndarray, float]:
    gen = rng.derive(spec.seed, rng.ENVELOPE)
    amps = gen.uniform(0.0, 1.0, spec.components)
    phases = gen.uniform(0.0, 2.0 * math.pi, spec.components)
    scan = np.arange(ENVELOPE_SCAN_POINTS) * (spec.duration / ENVELOPE_SCAN_POINTS)
    peak = float(np.max(np.abs(_fourier_sum(amps, phases, spec.duration, scan))))
    if peak == 0.0:
        raise ValueError(f"degenerate envelope for seed {spec.seed}")
    return amps, phases, peak


def _fourier_sum(amps, phases, duration, t):
    # elementwise accumulation: a value must not depend on how many others are evaluated with it
    s = np.zeros_like(t)
    for k, (a, phi) in enumerate(zip(amps, phases), start=1):
        s += a * np.sin(2.0 * math.pi * k * t / duration + phi)
    return s


def random_envelope(spec: EnvelopeSpec, t):
    """Envelope value(s) in ``[0, 1]``; ``t`` may be a scalar or an array inside ``[0, duration]``."""
    arr = np.atleast_1d(np.asarray(t, dtype=float))
    if arr.size and (arr.min() < 0.0 or arr.max() > spec.duration):
        raise ValueError(f"envelope evaluated outside [0, {spec.duration}]")
    amps, phases, peak = _envelope_terms(spec)
    out = np.minimum(np.abs(_fourier_sum(amps, phases, spec.duration, arr)) / peak, 1.0)
    return float(out[0]) if np.ndim(t) == 0 else out


def eval_field(spec: FieldSpec, t):
    """E(t) for a scalar or array ``t``; scalars are routed through the array path so both agree bitwise."""
    arr = np.atleast_1d(np.asarray(t, dtype=float))
    fam = spec.family
    if fam is Family.ZERO:
        out = np.zeros_like(arr)
    elif fam is Family.SINE:
        out = spec.amplitude * np.sin(spec.frequency * arr)
    elif fam is Family.PULSE:
        wt = spec.frequency * arr
        out = spec.amplitude * np.sin(wt / 20.0) ** 2 * np.sin(wt)
    elif fam is Family.RANDOM:
        out = spec.amplitude * random_envelope(spec.envelope, arr) * np.sin(spec.frequency * arr)
    elif fam is Family.LINEAR:
        out = 0.01 * spec.linear_a1 * spec.linear_a2 * arr
    else:  # pragma: no cover
        raise ValueError(f"unknown family {fam}")
    return float(out[0]) if np.ndim(t) == 0 else out


def sample_field(spec: FieldSpec, grid: TimeGrid) -> np.ndarray:
    return eval_field(spec, grid.times())
