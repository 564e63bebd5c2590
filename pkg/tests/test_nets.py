import numpy as np
import pytest

from pvglab import nnkit as nn
from pvglab.errors import ConfigError, NumericError
from pvglab.rng import stream


def finite_diff_param_grads(spec, params, x, loss_fn, h=1e-5):
    """Central finite differences of loss_fn(forward output) w.r.t. params."""
    grads = {}
    for key, seg in params.items():
        g = np.zeros_like(seg)
        for j in range(seg.size):
            bumped = {k: v.copy() for k, v in params.items()}
            bumped[key][j] += h
            up, _ = nn.forward(spec, bumped, x)
            bumped[key][j] -= 2 * h
            down, _ = nn.forward(spec, bumped, x)
            g[j] = (loss_fn(up) - loss_fn(down)) / (2 * h)
        grads[key] = g
    return grads


def quadratic_weighted_loss(out, weights):
    return float(np.sum(weights * out * out))


TEST_FAMILY = [
    nn.mlp([3, 5, 4]),
    nn.mlp([2, 7, 7, 3]),
    nn.NetworkSpec((nn.Linear(4, 6), nn.LeakyRelu(0.2), nn.Linear(6, 2))),
    nn.NetworkSpec((nn.Linear(3, 5), nn.LayerNorm(5), nn.Linear(5, 4), nn.Softmax())),
    nn.NetworkSpec((nn.Linear(5, 5), nn.LayerNorm(5, eps=1e-3), nn.LeakyRelu(0.01),
                    nn.Linear(5, 3), nn.Softmax())),
]


def test_identity_linear_forward():
    spec = nn.NetworkSpec((nn.Linear(4, 4),))
    params = {0: np.concatenate([np.eye(4).ravel(), np.zeros(4)])}
    x = np.array([[1.0, -2.0, 3.0, 0.5]])
    out, _ = nn.forward(spec, params, x)
    assert np.array_equal(out, x)


def test_layernorm_constant_vector_is_zero():
    spec = nn.NetworkSpec((nn.LayerNorm(6),))
    params = nn.init_params(spec, stream(0, 0))
    out, _ = nn.forward(spec, params, np.full((3, 6), 2.5))
    assert np.allclose(out, 0.0)


def test_wide_net_shape_and_finiteness():
    spec = nn.mlp([2, 100, 100, 16])
    params = nn.init_params(spec, stream(7, 0))
    x = stream(7, 1).standard_normal((8, 2))
    out, _ = nn.forward(spec, params, x)
    assert out.shape == (8, 16)
    assert np.all(np.isfinite(out))


def test_forward_shape_mismatch_raises():
    spec = nn.mlp([3, 4, 2])
    params = nn.init_params(spec, stream(0, 0))
    with pytest.raises(ConfigError):
        nn.forward(spec, params, np.zeros((2, 5)))


def test_forward_nonfinite_reports_layer():
    spec = nn.NetworkSpec((nn.Linear(2, 2), nn.Linear(2, 2)))
    params = nn.init_params(spec, stream(0, 0))
    params[0] = params[0] * 1e300
    with np.errstate(over="ignore"):
        with pytest.raises(NumericError) as err:
            nn.forward(spec, params, np.ones((1, 2)) * 1e300)
    assert err.value.where == 0


def test_zero_upstream_gives_zero_grads():
    spec = nn.mlp([3, 6, 2])
    params = nn.init_params(spec, stream(1, 0))
    x = stream(1, 1).standard_normal((4, 3))
    out, cache = nn.forward(spec, params, x)
    grads, dx = nn.backward(spec, params, cache, np.zeros_like(out))
    assert all(np.all(g == 0) for g in grads.values())
    assert np.all(dx == 0)


@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(seed):
    spec = TEST_FAMILY[seed % len(TEST_FAMILY)]
    params = nn.init_params(spec, stream(seed, 0))
    rng = stream(seed, 1)
    x = rng.standard_normal((3, spec.in_dim))
    weights = rng.standard_normal((3, spec.out_dim))

    out, cache = nn.forward(spec, params, x)
    upstream = 2.0 * weights * out
    grads, dx = nn.backward(spec, params, cache, upstream)

    fd = finite_diff_param_grads(
        spec, params, x, lambda o: quadratic_weighted_loss(o, weights)
    )
    for key in fd:
        denom = max(np.linalg.norm(fd[key]), 1e-8)
        assert np.linalg.norm(grads[key] - fd[key]) / denom <= 1e-4

    # input gradient against finite differences too
    fd_x = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            xp = x.copy()
            xp[i, j] += 1e-5
            up, _ = nn.forward(spec, params, xp)
            xp[i, j] -= 2e-5
            down, _ = nn.forward(spec, params, xp)
            fd_x[i, j] = (
                quadratic_weighted_loss(up, weights)
                - quadratic_weighted_loss(down, weights)
            ) / 2e-5
    assert np.linalg.norm(dx - fd_x) / max(np.linalg.norm(fd_x), 1e-8) <= 1e-4


def test_backward_wide_net_spot_check():
    spec = nn.mlp([2, 100, 100, 16])
    params = nn.init_params(spec, stream(3, 0))
    x = stream(3, 1).standard_normal((4, 2))
    out, cache = nn.forward(spec, params, x)
    grads, _ = nn.backward(spec, params, cache, np.ones_like(out))

    # check a handful of coordinates of the first linear layer by FD
    rng = stream(3, 2)
    for j in rng.choice(nn.param_count(spec) and params[0].size, size=5, replace=False):
        bumped = {k: v.copy() for k, v in params.items()}
        bumped[0][j] += 1e-5
        up, _ = nn.forward(spec, bumped, x)
        bumped[0][j] -= 2e-5
        down, _ = nn.forward(spec, bumped, x)
        fd = (up.sum() - down.sum()) / 2e-5
        assert abs(grads[0][j] - fd) / max(abs(fd), 1e-6) <= 1e-4


def test_stale_cache_rejected():
    spec_a = nn.mlp([3, 4, 2])
    spec_b = nn.NetworkSpec((nn.Linear(3, 2),))
    params_a = nn.init_params(spec_a, stream(0, 0))
    out, cache = nn.forward(spec_a, params_a, np.ones((1, 3)))
    with pytest.raises(Exception):
        nn.backward(spec_b, nn.init_params(spec_b, stream(0, 1)), cache, out)


class TestCrossEntropy:
    def test_perfect_prediction_zero_loss(self):
        logits = np.array([[100.0, 0.0], [0.0, 100.0]])
        loss = nn.cross_entropy_smoothed(logits, [0, 1], smoothing=0.0)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_uniform_two_class_is_ln2(self):
        loss = nn.cross_entropy_smoothed(np.zeros((5, 2)), [0, 1, 0, 1, 1], 0.0)
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)

    def test_smoothed_matches_direct_summation(self):
        rng = stream(11, 0)
        logits = rng.standard_normal((6, 4))
        labels = rng.integers(0, 4, size=6)
        s = 0.05
        loss = nn.cross_entropy_smoothed(logits, labels, s)

        # independent brute-force evaluation, element by element
        total = 0.0
        for i in range(6):
            row = logits[i]
            probs = np.exp(row) / np.exp(row).sum()
            for c in range(4):
                target = s / 4 + (1.0 - s if c == labels[i] else 0.0)
                total -= target * np.log(probs[c])
        assert loss == pytest.approx(total / 6, rel=1e-12)

    def test_out_of_range_label_raises(self):
        with pytest.raises(Exception):
            nn.cross_entropy_smoothed(np.zeros((1, 3)), [3], 0.0)

    def test_nonnegative(self):
        rng = stream(12, 0)
        for _ in range(20):
            logits = rng.standard_normal((4, 5)) * 3
            labels = rng.integers(0, 5, size=4)
            assert nn.cross_entropy_smoothed(logits, labels, 0.05) >= 0.0

    def test_vanishing_gradient_biconditional(self):
        # max-abs logit gradient vanishes iff the label probability is
        # within 1e-6 of one; checked on 1000 sampled logit vectors that
        # cover confident, uncertain, and near-threshold regimes.
        rng = stream(13, 0)
        checked_true = checked_false = 0
        for i in range(1000):
            k = int(rng.integers(2, 8))
            logits = rng.standard_normal(k) * 2.0
            label = int(rng.integers(0, k))
            regime = i % 4
            if regime == 1:
                logits[label] += 25.0  # clearly fulfilled
            elif regime == 2:
                logits[label] += 12.0  # near the threshold
            _, grad = nn.cross_entropy_smoothed_grad(logits[None, :], [label], 0.0)
            p = nn.softmax(logits[None, :])[0, label]
            vanished = np.max(np.abs(grad)) <= 1e-6
            fulfilled = p >= 1.0 - 1e-6
            assert vanished == fulfilled
            checked_true += fulfilled
            checked_false += not fulfilled
        assert checked_true > 100 and checked_false > 100

    def test_logit_gradient_is_prob_minus_target(self):
        rng = stream(14, 0)
        logits = rng.standard_normal((3, 4))
        labels = [0, 2, 3]
        _, grad = nn.cross_entropy_smoothed_grad(logits, labels, 0.0)
        probs = nn.softmax(logits)
        onehot = np.zeros((3, 4))
        onehot[np.arange(3), labels] = 1.0
        assert np.allclose(grad, (probs - onehot) / 3, atol=1e-12)
