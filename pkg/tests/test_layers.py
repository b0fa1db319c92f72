import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from _gradcheck import ACTS, H, max_rel_error
from dnnfault import objectives
from dnnfault.errors import ContractError, ProtocolError, ShapeError
from dnnfault.layers import Activation, Conv2D, Dense, Dropout, Flatten, MaxPool2D, chain_shapes
from dnnfault.tensor import Rng


def surrogate_check(layer, x, rng_seed=0):
    """Check dx and parameter grads of ``sum(w * layer(x))`` for a fixed random ``w``."""
    out = layer.forward(x, True, Rng(rng_seed))
    w = Rng(123).normal(out.shape)
    dx, _, grads = layer.backward(w, None)

    def f():
        return float(np.sum(w * layer.forward(x, True, Rng(rng_seed))))

    errs = []
    for target, analytic in [(x, dx)] + list(zip(layer.params, grads)):
        numeric = np.zeros_like(target)
        for i in np.ndindex(target.shape):
            old = target[i]
            target[i] = old + H
            up = f()
            target[i] = old - H
            down = f()
            target[i] = old
            numeric[i] = (up - down) / (2 * H)
        errs.append(max_rel_error(analytic, numeric))
    return max(errs)


def test_dense_forward_identity():
    d = Dense(2).set_params(np.eye(2), np.zeros(2))
    assert d.forward(np.array([[3.0, 4.0]])).tolist() == [[3.0, 4.0]]


def test_activation_examples():
    assert Activation("relu").forward(np.array([[-1.0, 2.0]])).tolist() == [[0.0, 2.0]]
    assert Activation("softmax").forward(np.array([[0.0, 0.0]])).tolist() == [[0.5, 0.5]]


def test_conv_example():
    conv = Conv2D(1, 2).set_params(np.ones((2, 2, 1, 1)), np.zeros(1))
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    assert conv.forward(x).reshape(-1).tolist() == [10.0]


def test_maxpool_example():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    assert MaxPool2D(2, 2).forward(x).reshape(-1).tolist() == [4.0]


def test_dense_backward_example():
    d = Dense(1).set_params(np.array([[2.0]]), np.array([0.0]))
    d.forward(np.array([[3.0]]))
    dx, params, grads = d.backward(np.array([[1.0]]), objectives.SGD(lr=0.0))
    assert dx.tolist() == [[2.0]]
    assert params[0].tolist() == [[2.0]]
    assert grads[0].tolist() == [[3.0]]


def test_relu_and_dropout_backward_examples():
    r = Activation("relu")
    r.forward(np.array([[-1.0, 2.0]]))
    assert r.backward(np.array([[5.0, 5.0]]))[0].tolist() == [[0.0, 5.0]]
    d = Dropout(0.0)
    d.forward(np.array([[1.0]]), True, Rng(0))
    assert d.backward(np.array([[7.0]]))[0].tolist() == [[7.0]]


def test_backward_before_forward():
    with pytest.raises(ProtocolError):
        Activation("tanh").backward(np.zeros((1, 1)))
    with pytest.raises(ProtocolError):
        Dense(2).set_params(np.eye(2), np.zeros(2)).backward(np.zeros((1, 2)))


def test_shape_errors_name_the_layer():
    d = Dense(3).set_params(np.ones((2, 3)), np.zeros(3))
    d.user_index = 4
    with pytest.raises(ShapeError, match="layer 4"):
        d.forward(np.ones((1, 5)))
    d.forward(np.ones((1, 2)))
    with pytest.raises(ShapeError):
        d.backward(np.ones((1, 2)))
    with pytest.raises(ShapeError):
        Conv2D(1, 2).set_params(np.ones((2, 2, 1, 1)), np.zeros(1)).forward(np.ones((1, 4, 4)))
    with pytest.raises(ShapeError):
        MaxPool2D(2).forward(np.ones((2, 4)))


def test_layer_contracts():
    with pytest.raises(ContractError):
        Dropout(1.0)
    with pytest.raises(ContractError):
        Activation("swish")
    with pytest.raises(ContractError):
        Conv2D(1, 2, padding="full")
    with pytest.raises(ContractError):
        Dense(0)


@pytest.mark.parametrize("act", ACTS)
@pytest.mark.parametrize("seed", range(4))
def test_activation_gradients(act, seed):
    x = Rng(seed).normal((1 + seed % 4, 5))
    assert surrogate_check(Activation(act), x) <= 1e-4


@pytest.mark.parametrize("seed", range(6))
def test_dense_gradients(seed):
    rng = Rng(seed)
    d = Dense(1 + seed % 6).set_params(rng.normal((3, 1 + seed % 6)), rng.normal((1 + seed % 6,)))
    assert surrogate_check(d, rng.normal((1 + seed % 4, 3))) <= 1e-4


@pytest.mark.parametrize("padding", ["valid", "same"])
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("kernel", [(2, 2), (3, 2), (1, 3)])
def test_conv_gradients(padding, stride, kernel):
    rng = Rng(stride * 10 + kernel[0])
    conv = Conv2D(2, kernel, stride, padding).set_params(rng.normal(kernel + (2, 2)), rng.normal((2,)))
    assert surrogate_check(conv, rng.normal((2, 5, 4, 2))) <= 1e-4


def test_conv_same_output_shape_and_padding_split():
    conv = Conv2D(1, 2, 1, "same")
    assert conv.output_shape((4, 4, 1)) == (4, 4, 1)
    # Even kernels pad 0 before and 1 after, so the last row/col sees zeros.
    conv.set_params(np.ones((2, 2, 1, 1)), np.zeros(1))
    x = np.arange(1.0, 5.0).reshape(1, 2, 2, 1)
    assert conv.forward(x).reshape(2, 2).tolist() == [[10.0, 6.0], [7.0, 4.0]]
    assert Conv2D(1, 3, 2, "same").output_shape((5, 5, 1)) == (3, 3, 1)


def test_maxpool_and_flatten_gradients():
    x = Rng(3).normal((2, 4, 6, 2))
    assert surrogate_check(MaxPool2D(2), x) <= 1e-4
    assert surrogate_check(MaxPool2D((2, 3), 1), x) <= 1e-4
    assert surrogate_check(Flatten(), x) <= 1e-4


@given(st.integers(0, 10_000), st.integers(1, 3))
def test_maxpool_routes_each_gradient_once(seed, pool):
    rng = Rng(seed)
    x = rng.normal((2, 6, 6, 2))
    layer = MaxPool2D(pool)
    out = layer.forward(x)
    dy = rng.normal(out.shape)
    dx = layer.backward(dy)[0]
    assert np.abs(dx).sum() == pytest.approx(np.abs(dy).sum(), rel=1e-12)
    assert np.count_nonzero(dx) == np.count_nonzero(dy)


def test_maxpool_ties_and_nan():
    x = np.array([[5.0, 5.0], [1.0, 5.0]]).reshape(1, 2, 2, 1)
    layer = MaxPool2D(2)
    layer.forward(x)
    assert layer.backward(np.ones((1, 1, 1, 1)))[0].reshape(-1).tolist() == [1.0, 0.0, 0.0, 0.0]
    y = np.array([[1.0, math.nan], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    assert math.isnan(MaxPool2D(2).forward(y).item())


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)),
                  elements=st.floats(-700, 700)))
def test_softmax_rows_are_distributions(z):
    p = Activation("softmax").forward(z)
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all((p >= 0) & (p <= 1))


def test_softmax_entries_strictly_inside_unit_interval_for_moderate_inputs():
    p = Activation("softmax").forward(Rng(1).normal((50, 6), stddev=3.0))
    assert np.all((p > 0) & (p < 1))


def test_dropout_statistics():
    n = 100_000
    rate = 0.3
    x = np.full((1, n), 2.0)
    out = Dropout(rate).forward(x, True, Rng(17))
    sigma = 2.0 * math.sqrt(rate / (1 - rate)) / math.sqrt(n)
    assert abs(out.mean() - 2.0) <= 3 * sigma
    assert set(np.unique(out)) <= {0.0, 2.0 / (1 - rate)}
    inference = Dropout(rate).forward(x, False, None)
    assert inference.tobytes() == x.tobytes()


def test_dropout_backward_uses_the_forward_mask():
    d = Dropout(0.5)
    x = Rng(8).normal((3, 4))
    out = d.forward(x, True, Rng(2))
    dx = d.backward(np.ones_like(x))[0]
    assert np.array_equal(dx == 0, out == 0)
    assert np.allclose(dx[dx != 0], 2.0)


def test_forward_is_deterministic():
    layer = Dropout(0.5)
    x = Rng(0).normal((4, 4))
    assert np.array_equal(layer.forward(x, True, Rng(5)), layer.forward(x, True, Rng(5)))


def test_chain_shapes():
    layers = [Conv2D(3, 3, 1, "same"), MaxPool2D(2), Flatten(), Dense(4)]
    assert chain_shapes(layers, (8, 8, 1))[-1] == (4,)
    with pytest.raises(ShapeError):
        chain_shapes([Flatten(), Conv2D(1, 2)], (4, 4, 1))


def test_flat_params_is_kernel_then_bias():
    d = Dense(2).set_params(np.array([[1.0, 2.0]]), np.array([3.0, 4.0]))
    assert d.flat_params().tolist() == [1.0, 2.0, 3.0, 4.0]
    assert Flatten().flat_params().size == 0
