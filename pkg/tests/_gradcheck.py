"""Central-difference gradient checking through the real engine code paths."""

import numpy as np

from dnnfault import objectives
from dnnfault.engine import Model, _backward, _forward
from dnnfault.layers import Activation, Conv2D, Dense, Dropout, Flatten, MaxPool2D
from dnnfault.probes import SnapshotRecorder
from dnnfault.tensor import Rng

H = 1e-5
KINDS = ("Dense", "Conv2D", "MaxPool2D", "Flatten", "Dropout")
ACTS = ("relu", "sigmoid", "tanh", "softmax", "linear")


def max_rel_error(analytic, numeric, floor=1e-6):
    """Largest |a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dominating."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def build_case(kind, act, loss, seed):
    """A small model exercising ``kind`` and ending in ``act``, plus inputs and targets."""
    rng = Rng(seed)
    batch = 1 + seed % 4
    bias = objectives.RandomNormal(stddev=0.5)
    if kind == "Dense":
        in_shape = (2 + seed % 5,)
        layers = [Dense(1 + seed % 6, bias_initializer=bias), Activation(act)]
    elif kind == "Conv2D":
        in_shape = (4, 5, 1 + seed % 2)
        pad = ("valid", "same")[seed % 2]
        stride = 1 + (seed // 2) % 2
        layers = [Conv2D(2, (2, 3), stride, pad, bias_initializer=bias), Activation(act), Flatten()]
    elif kind == "MaxPool2D":
        in_shape = (4, 4, 1)
        layers = [Conv2D(2, 2, 1, "same", bias_initializer=bias), MaxPool2D(2), Flatten(),
                  Dense(3, bias_initializer=bias), Activation(act)]
    elif kind == "Flatten":
        in_shape = (2, 3, 2)
        layers = [Flatten(), Dense(3, bias_initializer=bias), Activation(act)]
    else:
        in_shape = (4,)
        layers = [Dense(5, bias_initializer=bias), Dropout(0.4), Activation(act)]
    model = Model.build(layers, in_shape, loss, None, "none", seed)
    x = rng.normal((batch,) + in_shape)
    out_shape = (batch,) + tuple(model.output_shape)
    if loss in ("mse", "mae"):
        y = rng.normal(out_shape)
    elif loss == "binary_crossentropy":
        y = (rng.uniform(out_shape) > 0.5).astype(float)
    else:
        flat = int(np.prod(out_shape[1:]))
        y = np.eye(flat)[np.arange(batch) % flat].reshape(out_shape)
    return model, x, y


def check(model, x, y, seed):
    """Return the max relative error over d loss / d input and every parameter."""
    train_rng = Rng(seed + 99)  # dropout masks; copied so every evaluation sees the same mask

    def loss_at():
        out = _forward(model, x, True, train_rng.copy(), None)
        return objectives.loss_value(model.loss, out, y)

    out = _forward(model, x, True, train_rng.copy(), None)
    layers = model.layers
    # Gradient with respect to the raw input: run the backward chain by hand to the bottom.
    fused = model._fused_tail()
    if fused is not None:
        dy = objectives.fused_output_grad(model.loss, fused, out, y)
        chain = layers[:-1]
    else:
        dy = objectives.loss_grad(model.loss, out, y)
        chain = layers
    grads = {}
    for idx in range(len(chain) - 1, -1, -1):
        dy, _, g = chain[idx].backward(dy, None)
        if g:
            grads[idx] = g
    errors = [max_rel_error(dy, _numeric(loss_at, x))]
    for idx, g in grads.items():
        for p, gp in zip(layers[idx].params, g):
            errors.append(max_rel_error(gp, _numeric(loss_at, p)))
    # The engine's own backward must agree with the hand-run chain.
    rec2 = SnapshotRecorder(0, 0, 0)
    out2 = _forward(model, x, True, train_rng.copy(), rec2)
    _backward(model, out2, y, rec2)
    snap = rec2.build(0.0, None)
    by_layer = {r.user_index: r for r in snap.backward}
    for idx, g in grads.items():
        flat = np.concatenate([t.reshape(-1) for t in g])
        assert np.array_equal(by_layer[layers[idx].user_index].delta_params_flat, flat)
    return max(errors)


def _numeric(f, arr):
    g = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + H
        up = f()
        arr[i] = old - H
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * H)
    return g
