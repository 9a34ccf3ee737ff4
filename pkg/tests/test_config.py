import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlsnet.config import dump_section, load_section, parse_value_list, section_from_mapping
from tlsnet.dataset import DatasetConfig
from tlsnet.errors import ConfigError
from tlsnet.evaluation import TestGridConfig
from tlsnet.fields import Family
from tlsnet.model import ModelConfig, SosPolicy
from tlsnet.training import TrainConfig


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_value_lists():
    assert parse_value_list("0.5") == (0.5,)
    assert parse_value_list("0.1, 0.2,0.3") == (0.1, 0.2, 0.3)
    r = parse_value_list("0.1:2.0:20")
    assert len(r) == 20 and r[0] == 0.1 and r[-1] == 2.0 and r[9] == 1.0
    for bad in ("", "1:2", "1:2:0", "a,b"):
        with pytest.raises((ConfigError, ValueError)):
            parse_value_list(bad)


def test_full_file(tmp_path):
    p = write(tmp_path, """
# desk run
[dataset]
format_version = 1
family = pulse
amplitude_values = 0.8:2.0:5
frequency_values = 0.3, 0.6 ; inline comment
windows_per_wave = 200
seed = 9

[model]
hidden_size = 128
sos_policy = fixed_zero

[train]
learning_rate = 3e-3
epochs = 30
clip_norm = 1.0

[grid]
family = random
grid_n = 5
amplitude_min = 0.2
amplitude_max = 1.5
""")
    ds = load_section(p, "dataset")
    assert ds.family is Family.PULSE and ds.amplitude_values == (0.8, 1.1, 1.4, 1.7, 2.0)
    assert ds.frequency_values == (0.3, 0.6) and ds.windows_per_wave == 200 and ds.seed == 9
    m = load_section(p, "model")
    assert m == ModelConfig(hidden_size=128, sos_policy=SosPolicy.FIXED_ZERO)
    t = load_section(p, "train")
    assert t == TrainConfig(learning_rate=3e-3, epochs=30, clip_norm=1.0)
    g = load_section(p, "grid")
    assert g == TestGridConfig(family=Family.RANDOM, grid_n=5, amplitude_min=0.2, amplitude_max=1.5)


def test_full_scale_run_is_expressible(tmp_path):
    p = write(tmp_path, """
[dataset]
amplitude_values = 0.1:2.0:20
frequency_values = 0.1:2.0:20
windows_per_wave = 5000
[model]
hidden_size = 400
[train]
epochs = 100
learning_rate = 1e-4
""")
    ds = load_section(p, "dataset")
    assert len(ds.amplitude_values) * len(ds.frequency_values) * ds.windows_per_wave == 2_000_000
    assert load_section(p, "model").hidden_size == 400
    assert load_section(p, "train").epochs == 100


def test_unknown_key_and_section(tmp_path):
    with pytest.raises(ConfigError, match="hiden_size"):
        load_section(write(tmp_path, "[model]\nhiden_size = 4\n"), "model")
    with pytest.raises(ConfigError, match="modle"):
        load_section(write(tmp_path, "[modle]\nhidden_size = 4\n"), "model")


def test_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_section(tmp_path / "missing.ini", "model")
    with pytest.raises(ConfigError):
        load_section(write(tmp_path, "[train]\nepochs = 3\n"), "model")
    with pytest.raises(ConfigError):
        load_section(write(tmp_path, "[model]\nhidden_size = many\n"), "model")
    with pytest.raises(ConfigError):
        load_section(write(tmp_path, "[model]\nhidden_size = 0\n"), "model")
    with pytest.raises(ConfigError):
        load_section(write(tmp_path, "[model]\nformat_version = 2\n"), "model")
    with pytest.raises(ConfigError):
        load_section(write(tmp_path, "not an ini file"), "model")
    with pytest.raises(ConfigError):
        load_section(write(tmp_path, "[dataset]\nfamily = square\n"), "dataset")


def test_overrides(tmp_path):
    p = write(tmp_path, "[dataset]\nseed = 1\n")
    assert load_section(p, "dataset", {"seed": 77}).seed == 77


@pytest.mark.parametrize("obj,section", [
    (DatasetConfig(amplitude_values=(0.1, 0.7), windows_per_wave=3, seed=2**63 + 1), "dataset"),
    (ModelConfig(hidden_size=7, sos_policy=SosPolicy.FIXED_ZERO), "model"),
    (TrainConfig(learning_rate=0.1 + 0.2, clip_norm=2.5), "train"),
    (TestGridConfig(family=Family.LINEAR, offset=0.0, amplitude_mode="half_p2p"), "grid"),
])
def test_dump_load_round_trip(tmp_path, obj, section):
    text = dump_section(section, obj)
    assert load_section(write(tmp_path, text), section) == obj


@settings(max_examples=40, deadline=None)
@given(values=st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=6))
def test_value_list_round_trip(values):
    text = ", ".join(repr(v) for v in values)
    assert section_from_mapping("dataset", {"amplitude_values": text}).amplitude_values == tuple(values)
