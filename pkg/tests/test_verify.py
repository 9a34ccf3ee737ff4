import numpy as np
import pytest

from tlsnet.fields import FieldSpec
from tlsnet.model import ModelConfig, TrainingWindow, forward
from tlsnet.verify import (
    GRADCHECK_TOL,
    gradcheck,
    gradcheck_instance,
    reference_forward,
    self_test_convergence,
)


def test_reference_forward_agrees_with_model():
    config, params, window = gradcheck_instance(4)
    ref = reference_forward(window, dict(params.items()), config.sos_policy)
    assert np.max(np.abs(np.asarray(ref, float) - forward(window, params, config))) < 1e-14


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradcheck_passes(seed):
    r = gradcheck(seed)
    assert r.passed
    assert r.max_rel_error < GRADCHECK_TOL
    assert r.checked > 500
    # the feedback path carries gradient, and cutting it is detected
    assert r.feedback_components > 0 and r.feedback_max_rel_error < GRADCHECK_TOL
    assert r.detached_max_rel_error > GRADCHECK_TOL


def test_gradcheck_instance_shapes():
    config, params, window = gradcheck_instance(0)
    assert config == ModelConfig(hidden_size=8, encoder_length=10, decoder_length=10)
    assert isinstance(window, TrainingWindow) and window.target_d.shape == (10,)
    params.check_shapes(config)


def test_convergence_self_test_default_passes():
    rep = self_test_convergence()
    assert rep["passed"] and not rep["exact"]
    assert all(1.8 <= o <= 2.2 for o in rep["orders"])


def test_convergence_self_test_zero_field_exact():
    rep = self_test_convergence(FieldSpec())
    assert rep["exact"] and rep["passed"] and rep["errors"] == [0.0, 0.0, 0.0]


def test_convergence_self_test_first_order_fails():
    rep = self_test_convergence(scheme="lie")
    assert not rep["passed"]
    assert all(0.8 <= o <= 1.2 for o in rep["orders"])
