import numpy as np
import pytest

from pvglab import nnkit as nn
from pvglab.errors import NumericError
from pvglab.rng import stream


def make_params(rng, sizes=(5, 3)):
    return {i: rng.standard_normal(s) for i, s in enumerate(sizes)}


def test_zero_gradient_leaves_params_unchanged():
    rng = stream(0, 0)
    params = make_params(rng)
    state = nn.OptimState(lr=0.1)
    new = nn.optim_step(params, {k: np.zeros_like(v) for k, v in params.items()}, state)
    for k in params:
        assert np.array_equal(new[k], params[k])
    assert state.step == 1


def test_first_adam_step_is_signed_lr():
    params = {0: np.array([1.0, -2.0, 0.5])}
    grads = {0: np.array([0.3, -0.7, 2.0])}
    state = nn.OptimState(lr=0.01)
    new = nn.optim_step(params, grads, state)
    expected = params[0] - 0.01 * np.sign(grads[0])
    assert np.allclose(new[0], expected, atol=1e-6)


def test_ten_steps_match_scalar_adam_trace():
    # independent hand-rolled scalar Adam on f(x) = x^2 (gradient 2x)
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    x = 1.3
    m = v = 0.0
    trace = []
    for t in range(1, 11):
        g = 2 * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
        trace.append(x)

    params = {0: np.array([1.3])}
    state = nn.OptimState(lr=lr)
    got = []
    for _ in range(10):
        params = nn.optim_step(params, {0: 2 * params[0]}, state)
        got.append(params[0][0])
    assert np.allclose(got, trace, atol=1e-12)


def test_zero_lr_is_identity_on_params():
    rng = stream(5, 0)
    for _ in range(10):
        params = make_params(rng)
        grads = {k: rng.standard_normal(v.shape) for k, v in params.items()}
        state = nn.OptimState(lr=0.0)
        new = nn.optim_step(params, grads, state)
        for k in params:
            assert np.array_equal(new[k], params[k])


def test_nonfinite_gradients_leave_params_untouched():
    params = {0: np.array([1.0, 2.0])}
    before = params[0].copy()
    state = nn.OptimState(lr=0.1)
    with pytest.raises(NumericError):
        nn.optim_step(params, {0: np.array([np.nan, 1.0])}, state)
    assert np.array_equal(params[0], before)
    assert state.step == 0


def test_sgd_step():
    params = {0: np.array([1.0, -1.0])}
    grads = {0: np.array([0.5, 0.5])}
    state = nn.OptimState(lr=0.1, algorithm="sgd")
    new = nn.optim_step(params, grads, state)
    assert np.allclose(new[0], [0.95, -1.05])
