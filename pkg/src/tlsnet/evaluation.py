"""Long-horizon rollout scoring against the solver.

The test loss of a rollout is the mean of the RMSEs of consecutive
``segment``-point pieces, divided by the amplitude of the true dipole over the
horizon (``max|d|`` by default). Cells of a test grid are independent: each
gets its own solver run and its own rollout, and a failing cell becomes NaN in
the matrix with a line in the error log instead of aborting the sweep.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import rng
from .errors import ConfigError
from .fields import Family, FieldSpec
from .model import Forecaster, rollout
from .physics import DEFAULT_DT, DEFAULT_POINTS, TimeGrid, TwoLevelParams, solve_batch

log = logging.getLogger(__name__)

DEGENERATE_AMPLITUDE = 1e-6


def normalized_test_loss(pred, truth, segment: int = 100, amplitude_mode: str = "max") -> float:
    """Segment-averaged RMSE over the amplitude of ``truth``.

    A trailing partial segment counts as one segment. When the amplitude is
    below 1e-6 the bare segment-averaged RMSE is returned.
    """
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if segment < 1 or len(truth) < segment:
        raise ValueError(f"need at least one full segment of {segment} points")
    r2 = (pred - truth) ** 2
    rmses = [math.sqrt(float(np.mean(r2[lo:lo + segment]))) for lo in range(0, len(r2), segment)]
    avg = float(np.mean(rmses))
    amp = dipole_amplitude(truth, amplitude_mode)
    return avg if amp < DEGENERATE_AMPLITUDE else avg / amp


def dipole_amplitude(truth, mode: str = "max") -> float:
    truth = np.asarray(truth, float)
    if mode == "max":
        return float(np.max(np.abs(truth)))
    if mode == "half_p2p":
        return 0.5 * float(np.max(truth) - np.min(truth))
    raise ValueError(f"unknown amplitude mode {mode!r}")


class OracleForecaster:
    """Harness stub that answers every block with the true dipole.

    Evaluation binds it to the batch of true trajectories before the rollout;
    ``predict`` then returns ``truth[:, start:start + L]``.
    """

    def __init__(self, encoder_length: int = 100, decoder_length: int = 100, truth: np.ndarray | None = None):
        self.encoder_length = encoder_length
        self.decoder_length = decoder_length
        self.truth = truth

    def bind_truth(self, truth: np.ndarray) -> "OracleForecaster":
        return OracleForecaster(self.encoder_length, self.decoder_length, np.atleast_2d(truth))

    def predict(self, encoder_d, encoder_e, decoder_e, start):
        if self.truth is None:
            raise RuntimeError("oracle stub used without bound truth")
        n = np.shape(decoder_e)[-1]
        return self.truth[:, start:start + n].copy()


class ZeroForecaster:
    """Harness stub that always predicts zero dipole."""

    def __init__(self, encoder_length: int = 100, decoder_length: int = 100):
        self.encoder_length = encoder_length
        self.decoder_length = decoder_length

    def predict(self, encoder_d, encoder_e, decoder_e, start):
        return np.zeros(np.shape(np.atleast_2d(decoder_e)))


def _bound(model, truth: np.ndarray):
    bind = getattr(model, "bind_truth", None)
    return bind(truth) if bind is not None else model


class CellResult(NamedTuple):
    loss: float
    pred: np.ndarray  # horizon points
    truth: np.ndarray  # full solver dipole, n_points


def evaluate_cell(model: Forecaster, field_spec: FieldSpec, grid: TimeGrid = TimeGrid(), horizon: int = 10000,
                  physics: TwoLevelParams = TwoLevelParams(), segment: int = 100,
                  amplitude_mode: str = "max") -> CellResult:
    """Seed the model with the first ``encoder_length`` true dipoles and roll out ``horizon`` points."""
    e, d = solve_batch(physics, [field_spec], grid)
    le = model.encoder_length
    pred = rollout(_bound(model, d), d[:, :le], e, horizon)
    loss = normalized_test_loss(pred[0], d[0, le:le + horizon], segment, amplitude_mode)
    return CellResult(loss, pred[0], d[0])


@dataclass(frozen=True)
class TestGridConfig:
    family: Family = Family.SINE
    amplitude_min: float = 0.1
    amplitude_max: float = 2.0
    frequency_min: float = 0.1
    frequency_max: float = 2.0
    grid_n: int = 20
    offset: float = 0.038
    horizon: int = 10000
    segment: int = 100
    amplitude_mode: str = "max"
    envelope_seed: int = 0
    envelope_components: int = 4
    dt: float = DEFAULT_DT
    n_points: int = DEFAULT_POINTS
    omega1: float = 0.0
    omega2: float = 1.0
    mu: float = 1.0

    __test__ = False  # not a pytest class

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.grid_n < 1:
            raise ConfigError("grid_n must be >= 1")
        if self.amplitude_min > self.amplitude_max or self.frequency_min > self.frequency_max:
            raise ConfigError("axis minimum exceeds maximum")
        if self.grid_n > 1 and (self.amplitude_min == self.amplitude_max or self.frequency_min == self.frequency_max):
            raise ConfigError("axes must be strictly increasing")
        if self.horizon < 1 or self.segment < 1 or self.horizon < self.segment:
            raise ConfigError("need horizon >= segment >= 1")
        if self.amplitude_mode not in ("max", "half_p2p"):
            raise ConfigError(f"unknown amplitude_mode {self.amplitude_mode!r}")
        try:
            self.grid
            self.physics
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.dt, self.n_points)

    @property
    def physics(self) -> TwoLevelParams:
        return TwoLevelParams(self.omega1, self.omega2, self.mu)

    def amplitude_axis(self) -> np.ndarray:
        return np.linspace(self.amplitude_min, self.amplitude_max, self.grid_n) + self.offset

    def frequency_axis(self) -> np.ndarray:
        return np.linspace(self.frequency_min, self.frequency_max, self.grid_n) + self.offset

    def cell_field(self, i: int, j: int) -> FieldSpec:
        """Field of cell ``(i, j)``; for the linear family the axes carry the two slope constants."""
        a = float(self.amplitude_axis()[i])
        w = float(self.frequency_axis()[j])
        if self.family is Family.LINEAR:
            return FieldSpec.linear(a, w)
        if self.family is Family.RANDOM:
            seed = rng.derive_seed(self.envelope_seed, rng.GRID_ENVELOPE, i * self.grid_n + j)
            return FieldSpec(Family.RANDOM, a, w, envelope_seed=seed, envelope_components=self.envelope_components,
                             envelope_duration=self.dt * self.n_points)
        if self.family is Family.ZERO:
            return FieldSpec()
        return FieldSpec(self.family, a, w)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        return d


@dataclass
class LossMatrix:
    amplitudes: np.ndarray
    frequencies: np.ndarray
    values: np.ndarray  # (len(amplitudes), len(frequencies)); NaN marks a failed cell
    metadata: dict = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    def finite_values(self) -> np.ndarray:
        return self.values[np.isfinite(self.values)]


def evaluate_grid(model: Forecaster, grid_config: TestGridConfig, chunk: int = 50,
                  metadata: dict | None = None) -> LossMatrix:
    """Loss of every cell ``(amplitude_i + offset, frequency_j + offset)``.

    Cells are solved and rolled out in vectorized chunks; a chunk that raises is
    retried cell by cell so that only the offending cells become NaN.
    """
    cfg = grid_config
    n = cfg.grid_n
    cells = [(i, j) for i in range(n) for j in range(n)]
    values = np.full((n, n), np.nan)
    errors: list[str] = []
    for lo in range(0, len(cells), chunk):
        group = cells[lo:lo + chunk]
        try:
            losses = _evaluate_cells(model, cfg, group)
        except Exception:  # noqa: BLE001 - isolate the failing cells below
            losses = []
            for cell in group:
                try:
                    losses.extend(_evaluate_cells(model, cfg, [cell]))
                except Exception as exc:  # noqa: BLE001
                    losses.append(math.nan)
                    errors.append(_cell_error(cfg, cell, f"{type(exc).__name__}: {exc}"))
        for cell, loss in zip(group, losses):
            if not math.isfinite(loss):
                if not any(e.startswith(f"cell {cell}") for e in errors):
                    errors.append(_cell_error(cfg, cell, "non-finite loss"))
                loss = math.nan
            values[cell] = loss
    for e in errors:
        log.warning(e)
    meta = {"family": cfg.family.value, "grid": cfg.to_dict()}
    meta.update(metadata or {})
    return LossMatrix(cfg.amplitude_axis(), cfg.frequency_axis(), values, meta, errors)


def _cell_error(cfg: TestGridConfig, cell, message: str) -> str:
    i, j = cell
    return (f"cell {cell} amplitude={cfg.amplitude_axis()[i]!r} "
            f"frequency={cfg.frequency_axis()[j]!r}: {message}")


def _evaluate_cells(model: Forecaster, cfg: TestGridConfig, cells) -> list[float]:
    specs = [cfg.cell_field(i, j) for i, j in cells]
    e, d = solve_batch(cfg.physics, specs, cfg.grid)
    le = model.encoder_length
    with np.errstate(all="ignore"):
        pred = rollout(_bound(model, d), d[:, :le], e, cfg.horizon)
    out = []
    for k in range(len(cells)):
        if not np.all(np.isfinite(pred[k])):
            out.append(math.nan)
            continue
        out.append(normalized_test_loss(pred[k], d[k, le:le + cfg.horizon], cfg.segment, cfg.amplitude_mode))
    return out


def export_matrix_csv(matrix: LossMatrix, path) -> None:
    """``amplitude,frequency,loss``; amplitude-major, 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["amplitude", "frequency", "loss"])
        for i, a in enumerate(matrix.amplitudes):
            for j, f in enumerate(matrix.frequencies):
                w.writerow([_g17(a), _g17(f), _g17(matrix.values[i, j])])


def read_matrix_csv(path) -> LossMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    amps = sorted({float(r["amplitude"]) for r in rows})
    freqs = sorted({float(r["frequency"]) for r in rows})
    values = np.full((len(amps), len(freqs)), np.nan)
    ai = {a: k for k, a in enumerate(amps)}
    fi = {f: k for k, f in enumerate(freqs)}
    for r in rows:
        values[ai[float(r["amplitude"])], fi[float(r["frequency"])]] = float(r["loss"])
    return LossMatrix(np.array(amps), np.array(freqs), values)


def export_comparison_csv(pred, truth, e, grid: TimeGrid, path, seed_length: int = 100) -> None:
    """``t,E,d_true,d_pred`` over the seed and the horizon; seed rows repeat the true dipole as prediction."""
    pred = np.asarray(pred, float)
    n = seed_length + len(pred)
    truth = np.asarray(truth, float)[:n]
    e = np.asarray(e, float)[:n]
    if len(truth) < n or len(e) < n:
        raise ValueError(f"need {n} truth and field samples")
    d_pred = np.concatenate([truth[:seed_length], pred])
    t = grid.times()[:n]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "E", "d_true", "d_pred"])
        for k in range(n):
            w.writerow([_g17(t[k]), _g17(e[k]), _g17(truth[k]), _g17(d_pred[k])])


def _g17(x) -> str:
    return format(float(x), ".17g")
