import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlsnet.errors import ConfigError
from tlsnet.evaluation import (
    LossMatrix,
    OracleForecaster,
    TestGridConfig,
    ZeroForecaster,
    evaluate_cell,
    evaluate_grid,
    export_comparison_csv,
    export_matrix_csv,
    normalized_test_loss,
    read_matrix_csv,
)
from tlsnet.fields import Family, FieldSpec, sample_field
from tlsnet.model import ModelConfig, Seq2Seq, rollout
from tlsnet.physics import TimeGrid, TwoLevelParams, solve_trajectory
from tlsnet.training import init_params

SHORT = dict(n_points=1100, horizon=1000)


def segment_rms(x, seg=100):
    return float(np.mean([math.sqrt(np.mean(x[k:k + seg] ** 2)) for k in range(0, len(x), seg)]))


def test_loss_examples():
    t = np.arange(1000) * 0.025
    truth = 0.5 * np.sin(2.0 * t)
    assert normalized_test_loss(truth, truth) == 0.0
    assert normalized_test_loss(truth + 0.05, truth) == pytest.approx(0.1, abs=1e-3)
    assert normalized_test_loss(truth + 0.05, truth) == pytest.approx(0.05 / np.max(np.abs(truth)), abs=1e-14)
    assert normalized_test_loss(np.full(300, 0.01), np.zeros(300)) == pytest.approx(0.01, abs=1e-17)
    with pytest.raises(ValueError):
        normalized_test_loss(truth, truth[:-1])
    with pytest.raises(ValueError):
        normalized_test_loss(truth[:50], truth[:50])


def test_partial_trailing_segment():
    truth = np.ones(250)
    pred = np.concatenate([np.ones(200), np.full(50, 1.3)])
    assert normalized_test_loss(pred, truth) == pytest.approx(0.1, abs=1e-14)


def test_half_peak_to_peak_mode():
    truth = 0.2 + np.sin(np.linspace(0, 20 * np.pi, 400))
    pred = truth + 0.1
    half = 0.5 * (truth.max() - truth.min())
    assert normalized_test_loss(pred, truth, amplitude_mode="half_p2p") == pytest.approx(0.1 / half, rel=1e-14)
    assert normalized_test_loss(pred, truth) == pytest.approx(0.1 / truth.max(), rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.floats(1e-3, 1e3))
def test_loss_scale_equivariant(seed, k):
    gen = np.random.default_rng(seed)
    truth = np.sin(np.linspace(0, 30, 300)) + 0.1 * gen.normal(size=300)
    pred = truth + 0.05 * gen.normal(size=300)
    a = normalized_test_loss(pred, truth)
    assert a >= 0
    assert normalized_test_loss(k * pred, k * truth) == pytest.approx(a, rel=1e-12)


def test_zero_stub_on_pure_sinusoid():
    # period of 20 samples divides the 100-point segment and hits the peak exactly
    n = np.arange(10100)
    truth = 0.8 * np.sin(2 * np.pi * n / 20)
    pred = rollout(ZeroForecaster(), truth[:100], np.zeros(10100), 10000)
    assert normalized_test_loss(pred, truth[100:]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


@pytest.mark.parametrize("amp,freq", [(0.5, 0.5), (1.0, 1.0), (1.7, 0.3)])
def test_zero_stub_on_solver_cell_is_rms_over_peak(amp, freq):
    grid = TimeGrid(n_points=2100)
    res = evaluate_cell(ZeroForecaster(), FieldSpec.sine(amp, freq), grid, horizon=2000)
    truth = solve_trajectory(TwoLevelParams(), FieldSpec.sine(amp, freq), grid).d_samples[100:]
    assert np.array_equal(res.truth[100:], truth)
    assert res.loss == pytest.approx(segment_rms(truth) / np.max(np.abs(truth)), rel=1e-13)


def test_oracle_cell_is_zero():
    res = evaluate_cell(OracleForecaster(), FieldSpec.pulse(1.2, 0.8), TimeGrid(n_points=1100), horizon=1000)
    assert res.loss == 0.0
    assert np.array_equal(res.pred, res.truth[100:1100])


def test_unbound_oracle_refuses():
    with pytest.raises(RuntimeError):
        OracleForecaster().predict(np.zeros((1, 100)), np.zeros((1, 100)), np.zeros((1, 100)), 100)


@pytest.mark.parametrize("family", list(Family))
def test_oracle_grid_is_all_zero(family):
    m = evaluate_grid(OracleForecaster(), TestGridConfig(family=family, grid_n=3, **SHORT))
    assert m.values.shape == (3, 3)
    assert np.all(m.values == 0.0) and not m.errors


def test_grid_axes_and_cells():
    cfg = TestGridConfig()
    a = cfg.amplitude_axis()
    assert len(a) == 20 and a[0] == pytest.approx(0.138) and a[-1] == pytest.approx(2.038)
    assert np.all(np.diff(a) > 0) and np.all(np.diff(cfg.frequency_axis()) > 0)
    assert cfg.cell_field(2, 5) == FieldSpec.sine(float(a[2]), float(cfg.frequency_axis()[5]))
    lin = TestGridConfig(family=Family.LINEAR).cell_field(1, 3)
    assert (lin.linear_a1, lin.linear_a2) == (float(a[1]), float(cfg.frequency_axis()[3]))
    r1 = TestGridConfig(family=Family.RANDOM).cell_field(0, 1)
    r2 = TestGridConfig(family=Family.RANDOM).cell_field(1, 0)
    assert r1.envelope_seed != r2.envelope_seed
    with pytest.raises(ConfigError):
        TestGridConfig(grid_n=0)
    with pytest.raises(ConfigError):
        TestGridConfig(amplitude_min=3.0)


def test_single_cell_grid_equals_evaluate_cell():
    mc = ModelConfig(hidden_size=8)
    model = Seq2Seq(mc, init_params(mc, 4))
    cfg = TestGridConfig(grid_n=1, amplitude_min=0.9, amplitude_max=0.9, frequency_min=0.4, frequency_max=0.4,
                         **SHORT)
    m = evaluate_grid(model, cfg)
    res = evaluate_cell(model, cfg.cell_field(0, 0), cfg.grid, cfg.horizon)
    assert m.values.shape == (1, 1) and m.values[0, 0] == res.loss


def test_grid_chunking_and_determinism():
    mc = ModelConfig(hidden_size=8)
    model = Seq2Seq(mc, init_params(mc, 5))
    cfg = TestGridConfig(grid_n=4, family=Family.RANDOM, **SHORT)
    a = evaluate_grid(model, cfg, chunk=16)
    assert np.array_equal(a.values, evaluate_grid(model, cfg, chunk=1).values)
    assert np.array_equal(a.values, evaluate_grid(model, cfg, chunk=5).values)
    assert np.all(np.isfinite(a.values)) and np.all(a.values >= 0)


class Exploding:
    encoder_length = 100
    decoder_length = 100

    def __init__(self, bad_start):
        self.bad_start = bad_start

    def predict(self, encoder_d, encoder_e, decoder_e, start):
        out = np.zeros(np.shape(decoder_e))
        # poison only the cells driven strongly during the seed window
        hot = np.max(np.abs(encoder_e), axis=1) > 0.5
        if start == self.bad_start:
            out[hot] = np.nan
        return out


def test_failed_cells_become_nan_with_log():
    cfg = TestGridConfig(grid_n=3, **SHORT)
    m = evaluate_grid(Exploding(bad_start=100), cfg)
    assert m.values.shape == (3, 3)
    bad = ~np.isfinite(m.values)
    assert bad.any()
    assert len(m.errors) == int(bad.sum())
    assert np.all(m.values[~bad] >= 0)


class Raising(Exploding):
    def predict(self, encoder_d, encoder_e, decoder_e, start):
        if np.any(np.max(np.abs(encoder_e), axis=1) > 0.5):
            raise FloatingPointError("boom")
        return np.zeros(np.shape(decoder_e))


def test_raising_cells_are_isolated():
    m = evaluate_grid(Raising(0), TestGridConfig(grid_n=3, **SHORT))
    bad = np.isnan(m.values)
    assert bad.any() and (~bad).any()
    assert all("boom" in e for e in m.errors) and len(m.errors) == int(bad.sum())


def test_matrix_csv_round_trip(tmp_path):
    m = LossMatrix(np.array([0.138, 1.1]), np.array([0.5, 0.7]), np.array([[0.1, 1 / 3], [math.pi, 1e-17]]))
    path = tmp_path / "m.csv"
    export_matrix_csv(m, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["amplitude", "frequency", "loss"] and len(rows) == 5
    back = read_matrix_csv(path)
    assert np.array_equal(back.values, m.values) and np.array_equal(back.amplitudes, m.amplitudes)


def test_comparison_csv(tmp_path):
    grid = TimeGrid(n_points=1100)
    spec = FieldSpec.sine(1.0, 0.5)
    res = evaluate_cell(OracleForecaster(), spec, grid, horizon=1000)
    path = tmp_path / "c.csv"
    export_comparison_csv(res.pred, res.truth, sample_field(spec, grid), grid, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "E", "d_true", "d_pred"]
    assert len(rows) - 1 == 1000 + 100
    assert all(r[2] == r[3] for r in rows[1:])
