"""Layer forward/backward tests.

Expected values for the small fixed cases were worked out by hand (the
conv case on paper against the padded 3x3 grid) and are frozen here;
everything else is checked against central finite differences.
"""

import numpy as np
import numpy.testing as npt
import pytest

from depthreid.nn import (
    Conv2d,
    Dense,
    Dropout,
    MaxPool2d,
    Parameter,
    ReLU,
    RngStream,
    Sigmoid,
    Softmax,
    Tanh,
    grad_check,
    softmax,
    softmax_cross_entropy,
)
from depthreid.validation import NonFiniteError, ShapeError


def make_dense_2x2(w, b=(0.0, 0.0)):
    d = Dense("d", 2, 2, RngStream(0))
    d.weight.value[...] = w
    d.bias.value[...] = b
    return d


class TestDense:
    def test_forward_hand_case(self):
        # x @ W with W=[[1,2],[3,4]]: row (1,1) -> (1+3, 2+4)
        d = make_dense_2x2([[1.0, 2.0], [3.0, 4.0]])
        y = d.forward(np.array([[1.0, 1.0]]), mode="eval")
        npt.assert_array_equal(y, [[4.0, 6.0]])

    def test_backward_hand_case(self):
        d = make_dense_2x2([[1.0, 2.0], [3.0, 4.0]])
        d.forward(np.array([[1.0, 1.0]]), mode="eval")
        dx = d.backward(np.array([[1.0, 0.0]]))
        npt.assert_array_equal(dx, [[1.0, 3.0]])
        npt.assert_array_equal(d.weight.grad, [[1.0, 0.0], [1.0, 0.0]])
        npt.assert_array_equal(d.bias.grad, [1.0, 0.0])

    def test_bias_added_per_row(self):
        d = make_dense_2x2(np.zeros((2, 2)), b=(0.5, -1.0))
        y = d.forward(np.zeros((3, 2)), mode="eval")
        npt.assert_array_equal(y, np.tile([0.5, -1.0], (3, 1)))

    def test_rejects_width_mismatch(self):
        d = Dense("d", 3, 2, RngStream(0))
        with pytest.raises(ShapeError):
            d.forward(np.zeros((1, 4)), mode="eval")

    def test_rejects_non_finite(self):
        d = Dense("d", 2, 2, RngStream(0))
        with pytest.raises(NonFiniteError):
            d.forward(np.array([[np.nan, 0.0]]), mode="eval")

    def test_backward_after_update_rejected(self):
        d = Dense("d", 2, 2, RngStream(0))
        d.forward(np.ones((1, 2)), mode="eval")
        d.weight.version += 1  # what an optimizer step does
        with pytest.raises(RuntimeError):
            d.backward(np.ones((1, 2)))


class TestConv2d:
    def test_forward_hand_case(self):
        # 3x3 ones kernel, pad 1, over [[1..9]]; sums read off the padded grid
        conv = Conv2d("c", 1, 1, RngStream(0), kernel=3, stride=1, pad=1)
        conv.weight.value[...] = 1.0
        conv.bias.value[...] = 0.0
        x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
        y = conv.forward(x, mode="eval")
        expected = [[12.0, 21.0, 16.0], [27.0, 45.0, 33.0], [24.0, 39.0, 28.0]]
        npt.assert_array_equal(y[0, 0], expected)

    def test_stride_two_extents(self):
        conv = Conv2d("c", 2, 3, RngStream(0), kernel=3, stride=2, pad=1)
        y = conv.forward(np.zeros((2, 2, 9, 7)), mode="eval")
        assert y.shape == (2, 3, 5, 4)

    def test_rejects_channel_mismatch(self):
        conv = Conv2d("c", 3, 4, RngStream(0))
        with pytest.raises(ShapeError):
            conv.forward(np.zeros((1, 2, 8, 8)), mode="eval")

    def test_bias_broadcast(self):
        conv = Conv2d("c", 1, 2, RngStream(0), kernel=1, pad=0)
        conv.weight.value[...] = 0.0
        conv.bias.value[...] = [1.5, -2.0]
        y = conv.forward(np.zeros((1, 1, 2, 2)), mode="eval")
        npt.assert_array_equal(y[0, 0], np.full((2, 2), 1.5))
        npt.assert_array_equal(y[0, 1], np.full((2, 2), -2.0))


class TestMaxPool:
    def test_forward_and_routing(self):
        pool = MaxPool2d(2)
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        y = pool.forward(x, mode="eval")
        npt.assert_array_equal(y, [[[[4.0]]]])
        dx = pool.backward(np.ones((1, 1, 1, 1)))
        npt.assert_array_equal(dx, [[[[0.0, 0.0], [0.0, 1.0]]]])

    def test_odd_extents_drop_trailing(self):
        pool = MaxPool2d(2)
        x = np.arange(9.0).reshape(1, 1, 3, 3)
        y = pool.forward(x, mode="eval")
        assert y.shape == (1, 1, 1, 1)
        # window is rows 0..1, cols 0..1 -> max of {0,1,3,4}
        assert y[0, 0, 0, 0] == 4.0
        dx = pool.backward(np.ones((1, 1, 1, 1)))
        assert dx[0, 0, 1, 1] == 1.0 and dx.sum() == 1.0

    def test_tie_goes_to_first_index(self):
        pool = MaxPool2d(2)
        pool.forward(np.full((1, 1, 2, 2), 7.0), mode="eval")
        dx = pool.backward(np.ones((1, 1, 1, 1)))
        npt.assert_array_equal(dx, [[[[1.0, 0.0], [0.0, 0.0]]]])


class TestActivations:
    def test_sigmoid_values(self):
        s = Sigmoid()
        y = s.forward(np.array([0.0, -1000.0, 1000.0]), mode="eval")
        npt.assert_allclose(y, [0.5, 0.0, 1.0], atol=1e-12)

    def test_tanh_matches_numpy(self):
        x = RngStream(1).normal((4, 5))
        npt.assert_array_equal(Tanh().forward(x, mode="eval"), np.tanh(x))

    def test_relu_zeroes_negatives(self):
        y = ReLU().forward(np.array([-2.0, 0.0, 3.0]), mode="eval")
        npt.assert_array_equal(y, [0.0, 0.0, 3.0])

    def test_softmax_hand_case(self):
        # exp(0)=1, exp(log 2)=2 -> (1/3, 2/3)
        y = Softmax().forward(np.array([[0.0, np.log(2.0)]]), mode="eval")
        npt.assert_allclose(y, [[1.0 / 3.0, 2.0 / 3.0]], rtol=1e-15)

    def test_softmax_rows_sum_to_one(self):
        y = softmax(RngStream(2).normal((10, 7)) * 50.0)
        npt.assert_allclose(y.sum(axis=1), np.ones(10), rtol=1e-12)
        assert (y >= 0).all()

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            ReLU().forward(np.zeros(3), mode="test")


class TestDropout:
    def test_eval_is_identity(self):
        x = RngStream(3).normal((5, 5))
        npt.assert_array_equal(Dropout(0.4).forward(x, mode="eval"), x)

    def test_train_mean_matches_eval(self):
        # inverted scaling: E[mask/(1-r) * x] == x, checked within 3 s.e.
        rng = RngStream(4)
        drop = Dropout(0.4)
        x = np.full(8, 2.0)
        n = 100_000
        total = np.zeros(8)
        samples = (rng.uniform((n, 8)) >= 0.4) / 0.6
        total = (samples * x).mean(axis=0)
        se = (samples * x[None, :]).std(axis=0) / np.sqrt(n)
        assert (np.abs(total - x) <= 3.0 * se).all()

    def test_zero_rate_is_identity_in_train(self):
        x = RngStream(5).normal((3, 3))
        npt.assert_array_equal(Dropout(0.0).forward(x, mode="train"), x)

    def test_train_requires_rng(self):
        with pytest.raises(ValueError):
            Dropout(0.5).forward(np.zeros(3), mode="train")

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            Dropout(1.0)


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss, dl = softmax_cross_entropy(np.zeros((2, 4)), np.array([0, 3]))
        npt.assert_allclose(loss, np.log(4.0), rtol=1e-12)
        # gradient is (p - onehot)/batch
        npt.assert_allclose(dl[0], (np.full(4, 0.25) - np.eye(4)[0]) / 2.0, rtol=1e-12)

    def test_mask_drops_rows(self):
        logits = np.array([[10.0, 0.0], [0.0, 10.0]])
        loss, dl = softmax_cross_entropy(logits, np.array([0, 0]), mask=[1.0, 0.0])
        assert loss < 1e-4
        npt.assert_array_equal(dl[1], [0.0, 0.0])

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.zeros((2, 2)), np.array([0, 1]), mask=[0.0, 0.0])


def check_layer_gradients(build, seeds=20, entries=None):
    """Finite-difference sweep shared by all layer kinds.

    ``build(rng)`` returns (layer, params-to-check, input Parameter, mode,
    loss rng seed). The loss is 0.5 * sum((y - t)^2) against a fixed random
    target so every output element receives a distinct upstream gradient.
    """
    worst = 0.0
    for seed in range(seeds):
        rng = RngStream(1000 + seed)
        layer, params, xp, mode, mask_seed = build(rng)
        probe = layer.forward(xp.value, mode=mode, rng=RngStream(mask_seed))
        target = RngStream(7 * seed + 3).normal(probe.shape)

        def loss_fn():
            y = layer.forward(xp.value, mode=mode, rng=RngStream(mask_seed))
            return 0.5 * float(((y - target) ** 2).sum())

        def backward_fn():
            y = layer.forward(xp.value, mode=mode, rng=RngStream(mask_seed))
            xp.grad += layer.backward(y - target)

        worst = max(worst, grad_check(params + [xp], loss_fn, backward_fn,
                                      entries_per_param=entries,
                                      rng=RngStream(seed)))
    return worst


def away_from_zero(x, margin=0.05):
    """Keep finite-difference probes clear of the relu kink."""
    return np.sign(x) * (np.abs(x) + margin)


def distinct_grid(rng, shape, step=0.1):
    """Values with pairwise gaps >= step, so pooling argmaxes cannot flip."""
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) * step).astype(np.float64)


class TestLayerGradients:
    def test_dense(self):
        def build(rng):
            layer = Dense("d", 3, 4, rng)
            xp = Parameter("x", rng.normal((2, 3)))
            return layer, layer.params(), xp, "eval", 0
        assert check_layer_gradients(build) < 1e-4

    def test_conv(self):
        def build(rng):
            c_in = int(rng.integers(1, 4))
            c_out = int(rng.integers(1, 4))
            layer = Conv2d("c", c_in, c_out, rng, kernel=3, stride=1, pad=1)
            xp = Parameter("x", rng.normal((2, c_in, 5, 4)))
            return layer, layer.params(), xp, "eval", 0
        assert check_layer_gradients(build) < 1e-4

    def test_conv_strided(self):
        def build(rng):
            layer = Conv2d("c", 2, 2, rng, kernel=3, stride=2, pad=1)
            xp = Parameter("x", rng.normal((1, 2, 7, 6)))
            return layer, layer.params(), xp, "eval", 0
        assert check_layer_gradients(build) < 1e-4

    def test_maxpool(self):
        def build(rng):
            layer = MaxPool2d(2)
            xp = Parameter("x", distinct_grid(rng, (2, 2, 4, 6)))
            return layer, [], xp, "eval", 0
        assert check_layer_gradients(build) < 1e-4

    def test_relu(self):
        def build(rng):
            layer = ReLU()
            xp = Parameter("x", away_from_zero(rng.normal((3, 5))))
            return layer, [], xp, "eval", 0
        assert check_layer_gradients(build) < 1e-4

    def test_sigmoid(self):
        def build(rng):
            layer = Sigmoid()
            xp = Parameter("x", rng.normal((3, 5)))
            return layer, [], xp, "eval", 0
        assert check_layer_gradients(build) < 1e-4

    def test_tanh(self):
        def build(rng):
            layer = Tanh()
            xp = Parameter("x", rng.normal((3, 5)))
            return layer, [], xp, "eval", 0
        assert check_layer_gradients(build) < 1e-4

    def test_softmax(self):
        def build(rng):
            layer = Softmax()
            xp = Parameter("x", rng.normal((4, 6)))
            return layer, [], xp, "eval", 0
        assert check_layer_gradients(build) < 1e-4

    def test_dropout_fixed_mask(self):
        # train mode with the mask pinned by reseeding inside the closure
        def build(rng):
            layer = Dropout(0.4)
            xp = Parameter("x", rng.normal((3, 5)))
            return layer, [], xp, "train", 42
        assert check_layer_gradients(build) < 1e-4
