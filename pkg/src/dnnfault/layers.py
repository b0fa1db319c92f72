"""White-box layers whose pre- and post-activation values stay observable.

Every layer works on a leading batch axis. Parameterized layers (Dense,
Conv2D) apply their optimizer update inside :meth:`Layer.backward` and
hand back both the post-update parameters and the raw gradients, so a probe
placed right after the backward call sees the weights the next batch will
use.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import objectives
from .errors import ContractError, ProtocolError, ShapeError
from .tensor import Rng, Tensor

ACTIVATIONS = ("relu", "sigmoid", "tanh", "softmax", "linear")

Shape = tuple


def _sigmoid(z: Tensor) -> Tensor:
    out = np.empty_like(z)
    pos = z >= 0
    neg = ~pos
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[neg])
    out[neg] = ez / (1.0 + ez)
    return out


def _softmax(z: Tensor) -> Tensor:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def apply_activation(fn: str, z: Tensor) -> Tensor:
    with np.errstate(all="ignore"):
        if fn == "relu":
            return np.maximum(z, 0.0)
        if fn == "sigmoid":
            return _sigmoid(z)
        if fn == "tanh":
            return np.tanh(z)
        if fn == "softmax":
            return _softmax(z)
        if fn == "linear":
            return z.copy()
    raise ContractError(f"unknown activation {fn!r}; expected one of {ACTIVATIONS}")


class Layer:
    """Base class. Subclasses set ``kind`` and implement the hooks below."""

    kind = "Layer"
    parameterized = False

    def __init__(self):
        self.user_index = 0
        self.input_shape: Optional[Shape] = None
        self.params: tuple = ()
        self.slots: list = []
        self._cache: Optional[dict] = None

    def __repr__(self) -> str:
        return f"{type(self).__name__}(user_index={self.user_index})"

    # Per-sample shapes (no batch axis).
    def output_shape(self, input_shape: Shape) -> Shape:
        return tuple(input_shape)

    def build(self, input_shape: Shape, rng: Optional[Rng] = None) -> Shape:
        out = self.output_shape(tuple(input_shape))
        self.input_shape = tuple(input_shape)
        return out

    def set_params(self, *params: Tensor) -> "Layer":
        """Install explicit parameters (kernel, bias) and reset optimizer state."""
        self.params = tuple(np.array(p, dtype=np.float64) for p in params)
        self.slots = []
        return self

    def _check_input(self, x: Tensor) -> None:
        if x.ndim < 2 or x.shape[0] == 0:
            raise ShapeError(f"layer {self.user_index} ({self.kind}) needs a non-empty batch, got {x.shape}")
        expected = self.input_shape
        if expected is None:
            expected = self._expected_from_params()
        if expected is not None and tuple(x.shape[1:]) != tuple(expected):
            raise ShapeError(
                f"layer {self.user_index} ({self.kind}) expects per-sample shape {tuple(expected)}, "
                f"got batch of shape {x.shape}"
            )

    def _expected_from_params(self):
        return None

    def _cached(self) -> dict:
        if self._cache is None:
            raise ProtocolError(f"layer {self.user_index} ({self.kind}): backward called before forward")
        return self._cache

    def _check_dy(self, dy: Tensor, expected: tuple) -> None:
        if dy.shape != expected:
            raise ShapeError(
                f"layer {self.user_index} ({self.kind}): upstream gradient shape {dy.shape}, expected {expected}"
            )

    def forward(self, x: Tensor, training: bool = False, rng: Optional[Rng] = None) -> Tensor:
        raise NotImplementedError

    def backward(self, dy: Tensor, optimizer=None):
        """Return ``(dx, updated_params, delta_params)``."""
        raise NotImplementedError

    def _update(self, grads: tuple, optimizer) -> tuple:
        if optimizer is None:
            return self.params
        if not self.slots:
            self.slots = [optimizer.new_slot(p.shape) for p in self.params]
        self.params = tuple(optimizer.step(p, g, s) for p, g, s in zip(self.params, grads, self.slots))
        return self.params

    def flat_params(self) -> Tensor:
        """Kernel then bias, flattened into one vector (empty when parameterless)."""
        if not self.params:
            return np.zeros(0)
        return np.concatenate([p.reshape(-1) for p in self.params])


class Dense(Layer):
    kind = "Dense"
    parameterized = True

    def __init__(self, units: int, input_dim: Optional[int] = None,
                 kernel_initializer=None, bias_initializer=None):
        super().__init__()
        if units < 1:
            raise ContractError(f"Dense units must be >= 1, got {units}")
        self.units = int(units)
        self.input_dim = input_dim
        self.kernel_initializer = kernel_initializer or objectives.GlorotUniform()
        self.bias_initializer = bias_initializer or objectives.Zeros()

    def output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ShapeError(f"Dense layer {self.user_index} needs flat inputs, got per-sample shape {input_shape}")
        if self.input_dim is not None and input_shape[0] != self.input_dim:
            raise ShapeError(f"Dense layer {self.user_index} declares input_dim {self.input_dim}, got {input_shape[0]}")
        return (self.units,)

    def build(self, input_shape, rng=None):
        out = super().build(input_shape, rng)
        rng = rng or Rng(0)
        kernel = objectives.initialize(self.kernel_initializer, (input_shape[0], self.units), rng)
        bias = objectives.initialize(self.bias_initializer, (self.units,), rng)
        self.params = (kernel, bias)
        self.slots = []
        return out

    def _expected_from_params(self):
        return (self.params[0].shape[0],) if self.params else None

    def forward(self, x, training=False, rng=None):
        self._check_input(x)
        if not self.params:
            raise ProtocolError(f"Dense layer {self.user_index} has no parameters; build it first")
        kernel, bias = self.params
        with np.errstate(all="ignore"):
            out = x @ kernel + bias
        self._cache = {"x": x, "out_shape": out.shape}
        return out

    def backward(self, dy, optimizer=None):
        cache = self._cached()
        self._check_dy(dy, cache["out_shape"])
        kernel, _ = self.params
        x = cache["x"]
        with np.errstate(all="ignore"):
            d_kernel = x.T @ dy
            d_bias = np.sum(dy, axis=0)
            dx = dy @ kernel.T
        grads = (d_kernel, d_bias)
        return dx, self._update(grads, optimizer), grads


def _pair(v) -> tuple:
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ContractError(f"expected an int or a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


class Conv2D(Layer):
    """2-D cross-correlation over NHWC inputs; kernel is [kh, kw, in_ch, filters]."""

    kind = "Conv2D"
    parameterized = True

    def __init__(self, filters: int, kernel_size=3, stride: int = 1, padding: str = "valid",
                 kernel_initializer=None, bias_initializer=None):
        super().__init__()
        if filters < 1:
            raise ContractError(f"Conv2D filters must be >= 1, got {filters}")
        if padding not in ("valid", "same"):
            raise ContractError(f"Conv2D padding must be 'valid' or 'same', got {padding!r}")
        self.filters = int(filters)
        self.kernel_h, self.kernel_w = _pair(kernel_size)
        self.stride = int(stride)
        if self.stride < 1 or self.kernel_h < 1 or self.kernel_w < 1:
            raise ContractError("Conv2D kernel size and stride must be >= 1")
        self.padding = padding
        self.kernel_initializer = kernel_initializer or objectives.GlorotUniform()
        self.bias_initializer = bias_initializer or objectives.Zeros()

    def _geometry(self, h: int, w: int):
        s = self.stride
        if self.padding == "valid":
            oh = (h - self.kernel_h) // s + 1
            ow = (w - self.kernel_w) // s + 1
            return oh, ow, (0, 0), (0, 0)
        oh = -(-h // s)
        ow = -(-w // s)
        ph = max((oh - 1) * s + self.kernel_h - h, 0)
        pw = max((ow - 1) * s + self.kernel_w - w, 0)
        return oh, ow, (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"Conv2D layer {self.user_index} needs HWC inputs, got per-sample shape {input_shape}")
        h, w, _ = input_shape
        oh, ow, _, _ = self._geometry(h, w)
        if oh < 1 or ow < 1:
            raise ShapeError(f"Conv2D layer {self.user_index}: kernel larger than input {input_shape}")
        return (oh, ow, self.filters)

    def build(self, input_shape, rng=None):
        out = super().build(input_shape, rng)
        rng = rng or Rng(0)
        shape = (self.kernel_h, self.kernel_w, input_shape[2], self.filters)
        kernel = objectives.initialize(self.kernel_initializer, shape, rng)
        bias = objectives.initialize(self.bias_initializer, (self.filters,), rng)
        self.params = (kernel, bias)
        self.slots = []
        return out

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4:
            raise ShapeError(f"Conv2D layer {self.user_index} needs rank-4 NHWC input, got {x.shape}")
        self._check_input(x)
        if not self.params:
            raise ProtocolError(f"Conv2D layer {self.user_index} has no parameters; build it first")
        kernel, bias = self.params
        if x.shape[3] != kernel.shape[2]:
            raise ShapeError(f"Conv2D layer {self.user_index}: input has {x.shape[3]} channels, kernel expects {kernel.shape[2]}")
        n, h, w, _ = x.shape
        oh, ow, (pt, pb), (pl, pr) = self._geometry(h, w)
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x
        s = self.stride
        out = np.zeros((n, oh, ow, self.filters))
        with np.errstate(all="ignore"):
            for a in range(self.kernel_h):
                for b in range(self.kernel_w):
                    patch = xp[:, a:a + s * (oh - 1) + 1:s, b:b + s * (ow - 1) + 1:s, :]
                    out += np.tensordot(patch, kernel[a, b], axes=([3], [0]))
            out += bias
        self._cache = {"xp": xp, "x_shape": x.shape, "pads": (pt, pl), "out_shape": out.shape}
        return out

    def backward(self, dy, optimizer=None):
        cache = self._cached()
        self._check_dy(dy, cache["out_shape"])
        kernel, _ = self.params
        xp = cache["xp"]
        _, oh, ow, _ = dy.shape
        s = self.stride
        d_kernel = np.zeros_like(kernel)
        dxp = np.zeros_like(xp)
        with np.errstate(all="ignore"):
            for a in range(self.kernel_h):
                for b in range(self.kernel_w):
                    rows = slice(a, a + s * (oh - 1) + 1, s)
                    cols = slice(b, b + s * (ow - 1) + 1, s)
                    d_kernel[a, b] = np.tensordot(xp[:, rows, cols, :], dy, axes=([0, 1, 2], [0, 1, 2]))
                    dxp[:, rows, cols, :] += np.tensordot(dy, kernel[a, b], axes=([3], [1]))
            d_bias = np.sum(dy, axis=(0, 1, 2))
        _, h, w, _ = cache["x_shape"]
        pt, pl = cache["pads"]
        dx = dxp[:, pt:pt + h, pl:pl + w, :]
        grads = (d_kernel, d_bias)
        return np.ascontiguousarray(dx), self._update(grads, optimizer), grads


class MaxPool2D(Layer):
    kind = "MaxPool2D"

    def __init__(self, pool_size=2, stride: Optional[int] = None):
        super().__init__()
        self.pool_h, self.pool_w = _pair(pool_size)
        self.stride = int(stride) if stride is not None else self.pool_h
        if self.pool_h < 1 or self.pool_w < 1 or self.stride < 1:
            raise ContractError("MaxPool2D pool size and stride must be >= 1")

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"MaxPool2D needs HWC inputs, got per-sample shape {input_shape}")
        h, w, c = input_shape
        oh = (h - self.pool_h) // self.stride + 1
        ow = (w - self.pool_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"MaxPool2D window {self.pool_h}x{self.pool_w} larger than input {input_shape}")
        return (oh, ow, c)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4:
            raise ShapeError(f"MaxPool2D needs rank-4 NHWC input, got {x.shape}")
        self._check_input(x)
        oh, ow, _ = self.output_shape(x.shape[1:])
        s = self.stride
        best = None
        argmax = None
        for k, (a, b) in enumerate((a, b) for a in range(self.pool_h) for b in range(self.pool_w)):
            window = x[:, a:a + s * (oh - 1) + 1:s, b:b + s * (ow - 1) + 1:s, :]
            if best is None:
                best = window.copy()
                argmax = np.zeros(window.shape, dtype=np.int64)
                continue
            # First maximum wins ties; a NaN anywhere in the window takes over so it propagates.
            take = (window > best) | (np.isnan(window) & ~np.isnan(best))
            best = np.where(take, window, best)
            argmax = np.where(take, k, argmax)
        self._cache = {"argmax": argmax, "x_shape": x.shape, "out_shape": best.shape}
        return best

    def backward(self, dy, optimizer=None):
        cache = self._cached()
        self._check_dy(dy, cache["out_shape"])
        argmax = cache["argmax"]
        _, oh, ow, _ = dy.shape
        s = self.stride
        dx = np.zeros(cache["x_shape"])
        for k, (a, b) in enumerate((a, b) for a in range(self.pool_h) for b in range(self.pool_w)):
            dx[:, a:a + s * (oh - 1) + 1:s, b:b + s * (ow - 1) + 1:s, :] += np.where(argmax == k, dy, 0.0)
        return dx, (), ()


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, training=False, rng=None):
        self._check_input(x)
        self._cache = {"x_shape": x.shape}
        return x.reshape(x.shape[0], -1).copy()

    def backward(self, dy, optimizer=None):
        cache = self._cached()
        shape = cache["x_shape"]
        self._check_dy(dy, (shape[0], int(np.prod(shape[1:]))))
        return dy.reshape(shape).copy(), (), ()


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by ``1 / (1 - rate)`` at train time."""

    kind = "Dropout"

    def __init__(self, rate: float):
        super().__init__()
        if not 0 <= rate < 1:
            raise ContractError(f"Dropout rate must lie in [0, 1), got {rate}")
        self.rate = float(rate)

    def forward(self, x, training=False, rng=None):
        self._check_input(x)
        if not training:
            self._cache = {"scale": None, "out_shape": x.shape}
            return x.copy()
        if rng is None:
            raise ContractError("Dropout needs an Rng in training mode")
        keep = rng.uniform(x.shape) < 1.0 - self.rate
        scale = keep / (1.0 - self.rate)
        self._cache = {"scale": scale, "out_shape": x.shape}
        with np.errstate(all="ignore"):
            return x * scale

    def backward(self, dy, optimizer=None):
        cache = self._cached()
        self._check_dy(dy, cache["out_shape"])
        if cache["scale"] is None:
            return dy.copy(), (), ()
        with np.errstate(all="ignore"):
            return dy * cache["scale"], (), ()


class Activation(Layer):
    kind = "Activation"

    def __init__(self, fn: str):
        super().__init__()
        if fn not in ACTIVATIONS:
            raise ContractError(f"unknown activation {fn!r}; expected one of {ACTIVATIONS}")
        self.fn = fn

    def __repr__(self) -> str:
        return f"Activation({self.fn!r}, user_index={self.user_index})"

    def forward(self, x, training=False, rng=None):
        self._check_input(x)
        out = apply_activation(self.fn, x)
        self._cache = {"z": x, "out": out}
        return out

    def backward(self, dy, optimizer=None):
        cache = self._cached()
        z, out = cache["z"], cache["out"]
        self._check_dy(dy, out.shape)
        with np.errstate(all="ignore"):
            if self.fn == "relu":
                dx = dy * (z > 0)
            elif self.fn == "sigmoid":
                dx = dy * out * (1.0 - out)
            elif self.fn == "tanh":
                dx = dy * (1.0 - out * out)
            elif self.fn == "softmax":
                dx = out * (dy - np.sum(dy * out, axis=-1, keepdims=True))
            else:
                dx = dy.copy()
        return dx, (), ()


LAYER_TYPES = {
    "Dense": Dense,
    "Conv2D": Conv2D,
    "MaxPool2D": MaxPool2D,
    "Flatten": Flatten,
    "Dropout": Dropout,
    "Activation": Activation,
}


def forward(layer: Layer, x: Tensor, training: bool = False, rng: Optional[Rng] = None) -> Tensor:
    return layer.forward(x, training, rng)


def backward(layer: Layer, dy: Tensor, optimizer=None):
    return layer.backward(dy, optimizer)


def chain_shapes(layers: Sequence[Layer], input_shape: Shape) -> list[Shape]:
    """Per-sample output shape of every layer; raises ShapeError at the first mismatch."""
    shapes = []
    shape = tuple(input_shape)
    for layer in layers:
        shape = layer.output_shape(shape)
        shapes.append(shape)
    return shapes
