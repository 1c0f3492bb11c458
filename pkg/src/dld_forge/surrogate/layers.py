"""Differentiable layers in plain numpy.

Every layer keeps what it needs for the backward pass from its last
``forward`` call.  Image tensors are ``(batch, height, width, channels)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(z, g, kind):
    if kind == "relu":
        return g * (z > 0)
    return g


class Layer:
    kind = "layer"
    act = "linear"

    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def describe(self) -> list[dict]:
        return [{"type": self.kind}]

    def config(self) -> dict:
        return {"type": self.kind}

    def output_shape(self, shape: tuple) -> tuple:
        return shape


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, act: str = "relu", rng=None):
        self.n_in, self.n_out, self.act = n_in, n_out, act
        self.W = np.zeros((n_in, n_out))
        self.b = np.zeros(n_out)
        if rng is not None:
            self.W = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out))
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def forward(self, x):
        self._x = x
        self._z = x @ self.W + self.b
        return _act(self._z, self.act)

    def backward(self, g):
        g = _act_grad(self._z, g, self.act)
        self.dW = self._x.T @ g
        self.db = g.sum(axis=0)
        return g @ self.W.T

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def describe(self):
        return [{"type": "dense", "in": self.n_in, "out": self.n_out, "act": self.act}]

    def config(self):
        return {"type": "dense", "n_in": self.n_in, "n_out": self.n_out, "act": self.act}

    def output_shape(self, shape):
        if shape != (self.n_in,):
            raise ValueError(f"dense expects ({self.n_in},), got {shape}")
        return (self.n_out,)


class PerInputDense(Layer):
    """One small dense layer per scalar input, outputs concatenated."""

    kind = "per_input_dense"

    def __init__(self, n_inputs: int, width: int, act: str = "relu", rng=None):
        self.n_inputs, self.width, self.act = n_inputs, width, act
        self.W = np.zeros((n_inputs, width))
        self.b = np.zeros((n_inputs, width))
        if rng is not None:
            self.W = rng.normal(0.0, np.sqrt(2.0), (n_inputs, width))
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def forward(self, x):
        self._x = x
        self._z = x[:, :, None] * self.W + self.b
        return _act(self._z, self.act).reshape(x.shape[0], -1)

    def backward(self, g):
        g = _act_grad(self._z, g.reshape(self._z.shape), self.act)
        self.dW = (g * self._x[:, :, None]).sum(axis=0)
        self.db = g.sum(axis=0)
        return (g * self.W).sum(axis=2)

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def describe(self):
        rows = [{"type": "dense", "in": 1, "out": self.width, "act": self.act} for _ in range(self.n_inputs)]
        rows.append({"type": "concatenate", "out": self.n_inputs * self.width})
        return rows

    def config(self):
        return {"type": self.kind, "n_inputs": self.n_inputs, "width": self.width, "act": self.act}

    def output_shape(self, shape):
        if shape != (self.n_inputs,):
            raise ValueError(f"per-input dense expects ({self.n_inputs},), got {shape}")
        return (self.n_inputs * self.width,)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape: tuple[int, ...]):
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x):
        self._in = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, g):
        return g.reshape(self._in)

    def describe(self):
        return [{"type": "reshape", "out": list(self.shape)}]

    def config(self):
        return {"type": "reshape", "shape": list(self.shape)}

    def output_shape(self, shape):
        if int(np.prod(shape)) != int(np.prod(self.shape)):
            raise ValueError(f"cannot reshape {shape} to {self.shape}")
        return self.shape


class Upsample2(Layer):
    """Nearest-neighbour 2x2 upsampling."""

    kind = "upsample"

    def forward(self, x):
        return x.repeat(2, axis=1).repeat(2, axis=2)

    def backward(self, g):
        b, h, w, c = g.shape
        return g.reshape(b, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))

    def describe(self):
        return [{"type": "upsample", "size": 2}]

    def output_shape(self, shape):
        h, w, c = shape
        return (2 * h, 2 * w, c)


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero 'same' padding."""

    kind = "conv"

    def __init__(self, c_in: int, c_out: int, act: str = "relu", rng=None):
        self.c_in, self.c_out, self.act = c_in, c_out, act
        self.W = np.zeros((9 * c_in, c_out))
        self.b = np.zeros(c_out)
        if rng is not None:
            self.W = rng.normal(0.0, np.sqrt(2.0 / (9 * c_in)), (9 * c_in, c_out))
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def forward(self, x):
        b, h, w, c = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        # windows: (b, h, w, c, 3, 3) -> (b, h, w, 3, 3, c)
        cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
        self._cols = cols.reshape(b * h * w, 9 * c)
        self._shape = x.shape
        z = self._cols @ self.W + self.b
        self._z = z
        return _act(z, self.act).reshape(b, h, w, self.c_out)

    def backward(self, g):
        b, h, w, c = self._shape
        g = _act_grad(self._z, g.reshape(-1, self.c_out), self.act)
        self.dW = self._cols.T @ g
        self.db = g.sum(axis=0)
        dcols = (g @ self.W.T).reshape(b, h, w, 3, 3, c)
        dxp = np.zeros((b, h + 2, w + 2, c))
        for di in range(3):
            for dj in range(3):
                dxp[:, di : di + h, dj : dj + w, :] += dcols[:, :, :, di, dj, :]
        return dxp[:, 1:-1, 1:-1, :]

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def describe(self):
        return [{"type": "conv", "kernel": 3, "stride": 1, "pad": "same", "filters": self.c_out, "act": self.act}]

    def config(self):
        return {"type": "conv", "c_in": self.c_in, "c_out": self.c_out, "act": self.act}

    def output_shape(self, shape):
        if len(shape) != 3 or shape[2] != self.c_in:
            raise ValueError(f"conv expects (h, w, {self.c_in}), got {shape}")
        return shape[:2] + (self.c_out,)


def layer_from_config(cfg: dict) -> Layer:
    t = cfg["type"]
    if t == "dense":
        return Dense(cfg["n_in"], cfg["n_out"], cfg["act"])
    if t == "per_input_dense":
        return PerInputDense(cfg["n_inputs"], cfg["width"], cfg["act"])
    if t == "reshape":
        return Reshape(tuple(cfg["shape"]))
    if t == "upsample":
        return Upsample2()
    if t == "conv":
        return Conv3x3(cfg["c_in"], cfg["c_out"], cfg["act"])
    raise ValueError(f"unknown layer type {t!r}")
