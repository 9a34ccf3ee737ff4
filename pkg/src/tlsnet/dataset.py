"""Training windows cut from solver trajectories, and their ``TLSD`` container.

Window ``j`` of wave ``i`` starts at an index drawn uniformly (with replacement)
from ``[0, n_points - window_length]`` by ``rng.derive(seed, DATASET_WINDOWS, i)``.
The train/validation split permutes the concatenated window list with
``rng.derive(seed, DATASET_SPLIT)``; the first ``round(val_fraction * total)``
permuted positions go to validation. Both sets keep generation order.

Container sections (see :mod:`tlsnet.container`): config JSON, then for the
train set and the validation set in turn the arrays ``encoder_d``,
``encoder_e``, ``decoder_e``, ``target_d`` (float64, ``(n, L)``), ``wave_index``
and ``start`` (int64, ``(n,)``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import container, rng
from .errors import ConfigError
from .fields import Family, FieldSpec
from .model import TrainingWindow
from .physics import DEFAULT_DT, DEFAULT_POINTS, TimeGrid, Trajectory, TwoLevelParams, solve_batch

MAGIC = b"TLSD"
VERSION = 1
WINDOW_ARRAYS = ("encoder_d", "encoder_e", "decoder_e", "target_d", "wave_index", "start")


@dataclass(frozen=True)
class DatasetConfig:
    family: Family = Family.SINE
    amplitude_values: tuple[float, ...] = tuple(round(0.1 * k, 10) for k in range(1, 21))
    frequency_values: tuple[float, ...] = (0.5,)
    windows_per_wave: int = 5000
    window_length: int = 200
    encoder_length: int = 100
    val_fraction: float = 0.1
    seed: int = 0
    dt: float = DEFAULT_DT
    n_points: int = DEFAULT_POINTS
    omega1: float = 0.0
    omega2: float = 1.0
    mu: float = 1.0
    envelope_components: int = 4

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "amplitude_values", tuple(float(a) for a in self.amplitude_values))
        object.__setattr__(self, "frequency_values", tuple(float(w) for w in self.frequency_values))
        if not self.amplitude_values or not self.frequency_values:
            raise ConfigError("amplitude and frequency lists must be non-empty")
        if self.windows_per_wave < 1:
            raise ConfigError("windows_per_wave must be >= 1")
        if not 1 <= self.encoder_length < self.window_length:
            raise ConfigError("need 1 <= encoder_length < window_length")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.window_length > self.n_points:
            raise ConfigError("window_length exceeds trajectory length")
        try:
            self.grid
            self.physics
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def decoder_length(self) -> int:
        return self.window_length - self.encoder_length

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.dt, self.n_points)

    @property
    def physics(self) -> TwoLevelParams:
        return TwoLevelParams(self.omega1, self.omega2, self.mu)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        d["amplitude_values"] = list(self.amplitude_values)
        d["frequency_values"] = list(self.frequency_values)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        return cls(**d)


def generate_wave_family(config: DatasetConfig) -> list[FieldSpec]:
    """Amplitude-major Cartesian product of the value lists.

    For the linear family the two lists are the two slope constants. Random
    pulses get envelope seed ``rng.derive_seed(seed, ENVELOPE, wave_index)``.
    """
    if not config.amplitude_values or not config.frequency_values:
        raise ConfigError("amplitude and frequency lists must be non-empty")
    specs = []
    for a in config.amplitude_values:
        for w in config.frequency_values:
            i = len(specs)
            if config.family is Family.LINEAR:
                specs.append(FieldSpec.linear(a, w))
            elif config.family is Family.RANDOM:
                seed = rng.derive_seed(config.seed, rng.ENVELOPE, i)
                specs.append(FieldSpec(Family.RANDOM, a, w, envelope_seed=seed,
                                       envelope_components=config.envelope_components,
                                       envelope_duration=config.dt * config.n_points))
            else:
                specs.append(FieldSpec(config.family, a, w))
    return specs


@dataclass
class WindowSet:
    """A batch of training windows stored as stacked arrays."""

    encoder_d: np.ndarray
    encoder_e: np.ndarray
    decoder_e: np.ndarray
    target_d: np.ndarray
    wave_index: np.ndarray
    start: np.ndarray

    @classmethod
    def empty(cls, encoder_length: int, decoder_length: int) -> "WindowSet":
        le, ld = encoder_length, decoder_length
        return cls(np.empty((0, le)), np.empty((0, le)), np.empty((0, ld)), np.empty((0, ld)),
                   np.empty(0, np.int64), np.empty(0, np.int64))

    @classmethod
    def concat(cls, parts: Sequence["WindowSet"]) -> "WindowSet":
        return cls(*(np.concatenate([getattr(p, k) for p in parts]) for k in WINDOW_ARRAYS))

    def __len__(self) -> int:
        return len(self.start)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return TrainingWindow(self.encoder_d[idx], self.encoder_e[idx], self.decoder_e[idx],
                                  self.target_d[idx], int(self.wave_index[idx]), int(self.start[idx]))
        return WindowSet(*(getattr(self, k)[idx] for k in WINDOW_ARRAYS))

    def equals(self, other: "WindowSet") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in WINDOW_ARRAYS)


@dataclass
class Dataset:
    train: WindowSet
    val: WindowSet
    config: DatasetConfig
    format_version: int = VERSION
    fields: list[FieldSpec] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.fields:
            self.fields = generate_wave_family(self.config)

    @property
    def grid(self) -> TimeGrid:
        return self.config.grid

    def equals(self, other: "Dataset") -> bool:
        return (self.config == other.config and self.format_version == other.format_version
                and self.train.equals(other.train) and self.val.equals(other.val))


def extract_windows(traj: Trajectory, n_windows: int, window_length: int, encoder_length: int,
                    gen: np.random.Generator, wave_index: int = -1) -> WindowSet:
    n = traj.grid.n_points
    if n < window_length:
        raise ValueError(f"trajectory has {n} points, window needs {window_length}")
    starts = gen.integers(0, n - window_length + 1, size=n_windows).astype(np.int64)
    return _slice_windows(traj.d_samples, traj.e_samples, starts, window_length, encoder_length, wave_index)


def _slice_windows(d, e, starts, window_length, encoder_length, wave_index) -> WindowSet:
    idx = starts[:, None] + np.arange(window_length)
    dw, ew = d[idx], e[idx]
    le = encoder_length
    return WindowSet(dw[:, :le], ew[:, :le], ew[:, le:], dw[:, le:],
                     np.full(len(starts), wave_index, dtype=np.int64), starts)


def split_train_val(windows: WindowSet, fraction: float, gen: np.random.Generator) -> tuple[WindowSet, WindowSet]:
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    total = len(windows)
    n_val = int(math.floor(fraction * total + 0.5))
    perm = gen.permutation(total)
    is_val = np.zeros(total, dtype=bool)
    is_val[perm[:n_val]] = True
    return windows[~is_val], windows[is_val]


def build_dataset(config: DatasetConfig, chunk: int = 32) -> Dataset:
    """Solve every wave (vectorized in chunks), cut windows, split. Chunk size does not affect the result."""
    specs = generate_wave_family(config)
    grid = config.grid
    parts = []
    for lo in range(0, len(specs), chunk):
        group = specs[lo:lo + chunk]
        e, d = solve_batch(config.physics, group, grid)
        for j in range(len(group)):
            i = lo + j
            traj = Trajectory(grid, e[j], d[j])
            gen = rng.derive(config.seed, rng.DATASET_WINDOWS, i)
            parts.append(extract_windows(traj, config.windows_per_wave, config.window_length,
                                         config.encoder_length, gen, wave_index=i))
    windows = WindowSet.concat(parts)
    train, val = split_train_val(windows, config.val_fraction, rng.derive(config.seed, rng.DATASET_SPLIT))
    return Dataset(train, val, config, VERSION, specs)


def dataset_bytes(ds: Dataset) -> bytes:
    sections = [container.text_section(ds.config.to_dict())]
    for ws in (ds.train, ds.val):
        sections += [container.array_section(getattr(ws, k)) for k in WINDOW_ARRAYS]
    return container.pack(MAGIC, ds.format_version, sections)


def write_dataset(ds: Dataset, path) -> None:
    container.atomic_write(path, dataset_bytes(ds))


def read_dataset(path) -> Dataset:
    version, sections = container.unpack(Path(path).read_bytes(), MAGIC, VERSION)
    if len(sections) != 1 + 2 * len(WINDOW_ARRAYS):
        raise container.FormatError(f"expected {1 + 2 * len(WINDOW_ARRAYS)} sections, found {len(sections)}")
    try:
        config = DatasetConfig.from_dict(container.read_text(sections[0]))
    except (TypeError, ValueError) as exc:
        raise container.FormatError(f"invalid dataset config: {exc}") from exc
    arrays = [container.read_array(s) for s in sections[1:]]
    k = len(WINDOW_ARRAYS)
    train, val = WindowSet(*arrays[:k]), WindowSet(*arrays[k:])
    le, ld = config.encoder_length, config.decoder_length
    for ws in (train, val):
        n = len(ws.start)
        expect = {"encoder_d": (n, le), "encoder_e": (n, le), "decoder_e": (n, ld), "target_d": (n, ld),
                  "wave_index": (n,), "start": (n,)}
        for name, shape in expect.items():
            if getattr(ws, name).shape != shape:
                raise container.FormatError(f"{name} has shape {getattr(ws, name).shape}, expected {shape}")
    return Dataset(train, val, config, version)
