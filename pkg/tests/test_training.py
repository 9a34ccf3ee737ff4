import math

import numpy as np
import pytest

from tlsnet.checkpoint import read_checkpoint
from tlsnet.dataset import Dataset, DatasetConfig, build_dataset
from tlsnet.model import ModelConfig, ModelParams
from tlsnet.training import (
    AdamState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    evaluate_windows,
    init_params,
    train,
)


def scalar_params(value):
    """ModelParams with H=1 whose every entry equals ``value``."""
    p = ModelParams.zeros(ModelConfig(hidden_size=1))
    for _, arr in p.items():
        arr[...] = value
    return p


@pytest.fixture(scope="module")
def tiny_dataset():
    cfg = DatasetConfig(amplitude_values=(0.6, 1.2), frequency_values=(0.5,), windows_per_wave=12,
                        window_length=40, encoder_length=20, n_points=400, seed=3)
    return build_dataset(cfg)


def test_init_params_deterministic_and_bounded():
    cfg = ModelConfig(hidden_size=400)
    a, b = init_params(cfg, 5), init_params(cfg, 5)
    assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(a.items(), b.items()))
    for name in ("enc_wx", "enc_wh", "dec_wx", "dec_wh", "out_w"):
        w = getattr(a, name)
        assert np.all(np.abs(w) < 0.05)
    for name in ("enc_b", "dec_b"):
        b_ = getattr(a, name)
        assert np.all(b_[400:800] == 1.0)
        assert np.all(b_[:400] == 0.0) and np.all(b_[800:] == 0.0)
    assert a.out_b[0] == 0.0
    assert not np.array_equal(init_params(cfg, 6).enc_wx, a.enc_wx)


def test_adam_zero_gradient_is_fixed_point():
    p = scalar_params(0.25)
    st = AdamState.zeros_like(p)
    adam_step(p, scalar_params(0.0), st, 1e-3)
    assert st.step == 1
    assert all(np.all(arr == 0.25) for _, arr in p.items())


def test_adam_first_step_moves_by_lr_sign():
    p = scalar_params(0.0)
    g = scalar_params(0.0)
    g.enc_wx[...] = 3.0
    g.dec_wh[...] = -0.02
    st = AdamState.zeros_like(p)
    adam_step(p, g, st, 1e-3)
    assert np.allclose(p.enc_wx, -1e-3 * 3.0 / (3.0 + 1e-8), rtol=0, atol=1e-15)
    assert np.allclose(p.dec_wh, 1e-3 * 0.02 / (0.02 + 1e-8), rtol=0, atol=1e-15)


def test_adam_three_steps_match_unrolled_recurrence():
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.01
    g1, g2, g3 = 1.0, 1.0, 1.0
    theta0 = 0.5
    m1 = (1 - b1) * g1
    v1 = (1 - b2) * g1 * g1
    theta1 = theta0 - lr * (m1 / (1 - b1)) / (math.sqrt(v1 / (1 - b2)) + eps)
    m2 = b1 * m1 + (1 - b1) * g2
    v2 = b2 * v1 + (1 - b2) * g2 * g2
    theta2 = theta1 - lr * (m2 / (1 - b1**2)) / (math.sqrt(v2 / (1 - b2**2)) + eps)
    m3 = b1 * m2 + (1 - b1) * g3
    v3 = b2 * v2 + (1 - b2) * g3 * g3
    theta3 = theta2 - lr * (m3 / (1 - b1**3)) / (math.sqrt(v3 / (1 - b2**3)) + eps)

    p = scalar_params(theta0)
    st = AdamState.zeros_like(p)
    for _ in range(3):
        adam_step(p, scalar_params(1.0), st, lr)
    assert st.step == 3
    for _, arr in p.items():
        assert np.all(np.abs(arr - theta3) < 1e-12)
    assert np.all(np.abs(st.m.enc_b - m3) < 1e-15) and np.all(np.abs(st.v.enc_b - v3) < 1e-15)


def test_adam_rejects_non_finite_without_mutating():
    p = scalar_params(0.1)
    g = scalar_params(1.0)
    g.out_b[0] = math.nan
    st = AdamState.zeros_like(p)
    with pytest.raises(FloatingPointError):
        adam_step(p, g, st, 1e-3)
    assert st.step == 0 and np.all(p.enc_wx == 0.1) and np.all(st.m.enc_wx == 0.0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_zero_epochs_is_noop(tiny_dataset):
    mc = ModelConfig(hidden_size=4, encoder_length=20, decoder_length=20)
    p, h = train(tiny_dataset, mc, TrainConfig(epochs=0, init_seed=2))
    assert len(h) == 0
    ref = init_params(mc, 2)
    assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(p.items(), ref.items()))


def test_training_is_deterministic(tiny_dataset, tmp_path):
    mc = ModelConfig(hidden_size=5, encoder_length=20, decoder_length=20)
    tc = TrainConfig(learning_rate=1e-2, epochs=3, batch_size=4, shuffle_seed=7, init_seed=8)
    _, h1 = train(tiny_dataset, mc, tc, checkpoint_path=tmp_path / "a.tlsm")
    _, h2 = train(tiny_dataset, mc, tc, checkpoint_path=tmp_path / "b.tlsm")
    assert (tmp_path / "a.tlsm").read_bytes() == (tmp_path / "b.tlsm").read_bytes()
    assert [(r.epoch, r.train_rmse, r.val_rmse) for r in h1.records] == \
        [(r.epoch, r.train_rmse, r.val_rmse) for r in h2.records]
    assert [r.epoch for r in h1.records] == [1, 2, 3]
    cfg, _ = read_checkpoint(tmp_path / "a.tlsm")
    assert cfg == mc


def test_shuffle_seed_matters(tiny_dataset):
    mc = ModelConfig(hidden_size=5, encoder_length=20, decoder_length=20)
    a, _ = train(tiny_dataset, mc, TrainConfig(learning_rate=1e-2, epochs=2, batch_size=4, shuffle_seed=1))
    b, _ = train(tiny_dataset, mc, TrainConfig(learning_rate=1e-2, epochs=2, batch_size=4, shuffle_seed=2))
    assert not np.array_equal(a.enc_wh, b.enc_wh)


def test_validation_does_not_mutate(tiny_dataset):
    mc = ModelConfig(hidden_size=5, encoder_length=20, decoder_length=20)
    p = init_params(mc, 0)
    before = p.flat().copy()
    v = evaluate_windows(p, mc, tiny_dataset.val)
    assert np.array_equal(before, p.flat())
    assert v == evaluate_windows(p, mc, tiny_dataset.val)


def test_history_csv(tiny_dataset, tmp_path):
    mc = ModelConfig(hidden_size=3, encoder_length=20, decoder_length=20)
    _, h = train(tiny_dataset, mc, TrainConfig(learning_rate=1e-2, epochs=2, batch_size=8))
    h.write_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_rmse,val_rmse,seconds"
    assert len(lines) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(tiny_dataset):
    mc = ModelConfig(hidden_size=3, encoder_length=20, decoder_length=20)
    p = init_params(mc, 0)
    p.out_b[0] = math.inf
    with pytest.raises((TrainingDiverged, FloatingPointError)):
        train(tiny_dataset, mc, TrainConfig(epochs=1, batch_size=8), params=p)


@pytest.mark.slow
def test_single_window_memorization():
    cfg = DatasetConfig(amplitude_values=(1.0,), frequency_values=(0.5,), windows_per_wave=2, val_fraction=0.5)
    ds = build_dataset(cfg)
    one = Dataset(ds.train, ds.train, cfg)
    assert len(one.train) == 1
    _, h = train(one, ModelConfig(hidden_size=16), TrainConfig(learning_rate=1e-3, epochs=500, batch_size=1))
    assert h.records[-1].train_rmse < 0.01
    assert h.records[-1].train_rmse < h.records[0].train_rmse / 10
