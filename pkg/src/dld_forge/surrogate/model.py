"""Network container, builders and the model file format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import F_MAX, F_MIN, N_MAX, N_MIN, RE_MAX, RE_MIN
from .layers import Conv3x3, Dense, Layer, PerInputDense, Reshape, Upsample2, layer_from_config

# Per-feature (min, max) of the dataset hull, in the order f, N, Re.
HULL = ((F_MIN, F_MAX), (float(N_MIN), float(N_MAX)), (RE_MIN, RE_MAX))

MAGIC = "dld-forge-net/1"


class ExtrapolationError(ValueError):
    """Inputs fall outside the hull the network was normalised on."""


class ShapeError(ValueError):
    """Layer shapes do not fit together."""


@dataclass
class NetParams:
    """Layered network: one or more parallel branches fed by the same inputs.

    Each branch maps the normalised ``(f, N, Re)`` triple to one output; the
    direct predictor has a single branch returning ``d_c``, the field
    generator one branch per velocity plane.
    """

    kind: str
    branches: list[list[Layer]]
    input_normalization: list[tuple[float, float]] = field(default_factory=lambda: [tuple(h) for h in HULL])
    output_scale: list[float] = field(default_factory=lambda: [1.0])
    training_meta: dict = field(default_factory=dict)
    shared_trunk: int = 0  # leading layers of branch 0 reused by every branch

    # -- normalisation ----------------------------------------------------
    def normalize(self, x, check: bool = True) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo = np.array([a for a, _ in self.input_normalization])
        hi = np.array([b for _, b in self.input_normalization])
        if check:
            bad = (x < lo - 1e-9) | (x > hi + 1e-9)
            if bad.any():
                raise ExtrapolationError(f"inputs {x[bad.any(axis=1)][0].tolist()} outside hull {self.input_normalization}")
        return (x - lo) / (hi - lo)

    def denormalize(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        lo = np.array([a for a, _ in self.input_normalization])
        hi = np.array([b for _, b in self.input_normalization])
        return lo + z * (hi - lo)

    # -- evaluation ---------------------------------------------------------
    def _branch_layers(self, k: int) -> list[Layer]:
        if k == 0 or not self.shared_trunk:
            return self.branches[k]
        return self.branches[0][: self.shared_trunk] + self.branches[k]

    def forward(self, z: np.ndarray) -> list[np.ndarray]:
        """Raw (scaled) outputs of every branch for normalised inputs ``z``."""
        outs = []
        trunk = None
        for k in range(len(self.branches)):
            layers = self.branches[k]
            if self.shared_trunk and k > 0:
                h = trunk
            else:
                h = z
            for i, layer in enumerate(layers):
                h = layer.forward(h)
                if self.shared_trunk and k == 0 and i == self.shared_trunk - 1:
                    trunk = h
            outs.append(h)
        return outs

    def backward(self, grads: list[np.ndarray]) -> None:
        trunk_grad = None
        for k in reversed(range(len(self.branches))):
            g = grads[k]
            layers = self.branches[k]
            if self.shared_trunk and k > 0:
                for layer in reversed(layers):
                    g = layer.backward(g)
                trunk_grad = g if trunk_grad is None else trunk_grad + g
                continue
            for i in reversed(range(len(layers))):
                if self.shared_trunk and i == self.shared_trunk - 1 and trunk_grad is not None:
                    g = g + trunk_grad
                g = layers[i].backward(g)

    def predict_raw(self, x, check: bool = True) -> list[np.ndarray]:
        outs = self.forward(self.normalize(x, check))
        return [o * s for o, s in zip(outs, self.output_scale)]

    # -- bookkeeping ----------------------------------------------------------
    def layers(self):
        for br in self.branches:
            yield from br

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers() for p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers() for g in layer.grads()]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params()))

    def describe(self) -> list[list[dict]]:
        return [[row for layer in br for row in layer.describe()] for br in self.branches]

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())


# ---------------------------------------------------------------------------
# builders


def fcnn_build(hidden_layers: int = 8, width: int = 128, seed: int | None = 0) -> NetParams:
    """Direct predictor ``(f, N, Re) -> d_c`` with ReLU hidden layers."""
    if hidden_layers < 1 or width < 1:
        raise ValueError("hidden_layers and width must be >= 1")
    rng = None if seed is None else np.random.default_rng(seed)
    layers: list[Layer] = []
    n_in = 3
    for _ in range(hidden_layers):
        layers.append(Dense(n_in, width, "relu", rng))
        n_in = width
    out = Dense(n_in, 1, "linear", rng)
    if rng is not None:
        out.W *= 0.1
    layers.append(out)
    return NetParams("fcnn", [layers], training_meta={"hidden_layers": hidden_layers, "width": width})


def fcnn_param_count(hidden_layers: int, width: int) -> int:
    return 3 * width + width + (hidden_layers - 1) * (width * width + width) + width + 1


def _decoder(res: int, conv_filters, dense_width: int, rng) -> list[Layer]:
    s = res // 8
    layers: list[Layer] = [
        PerInputDense(3, 16, "relu", rng),
        Dense(48, dense_width, "relu", rng),
        Dense(dense_width, dense_width, "relu", rng),
        Dense(dense_width, s * s * 64, "relu", rng),
        Reshape((s, s, 64)),
        Conv3x3(64, 64, "relu", rng),
    ]
    c = 64
    filters = list(conv_filters)
    for i in range(3):
        layers.append(Upsample2())
        if i < len(filters):
            layers.append(Conv3x3(c, filters[i], "relu", rng))
            c = filters[i]
    for nf in filters[3:]:
        layers.append(Conv3x3(c, nf, "relu", rng))
        c = nf
    layers.append(Conv3x3(c, 64, "relu", rng))
    last = Conv3x3(64, 1, "linear", rng)
    if rng is not None:
        last.W *= 0.1
    layers.append(last)
    return layers


def cnn_build(
    res: int = 32,
    base_filters: int = 64,
    n_convs: int = 2,
    dense_width: int = 256,
    shared_trunk: bool = False,
    seed: int | None = 0,
) -> NetParams:
    """Field generator: ``(f, N, Re)`` to ``res x res`` planes of ``u`` and ``v``.

    Three scalar inputs pass width-16 dense layers, are concatenated, go
    through two dense layers and a dense layer of ``(res/8)^2 * 64`` units,
    then a reshape, a fixed 64-filter convolution, three 2x upsamplings with
    ``n_convs`` convolutions of ``base_filters`` interleaved, a second fixed
    64-filter convolution and a 1-channel output convolution.

    By default the two branches (u and v) are fully separate networks; with
    ``shared_trunk`` the dense layers up to the reshape are shared.
    """
    if res not in (32, 64, 128):
        raise ShapeError(f"res must be 32, 64 or 128, got {res}")
    if base_filters < 16:
        raise ValueError("base_filters must be >= 16")
    rng = None if seed is None else np.random.default_rng(seed)
    filters = [base_filters] * n_convs
    b0 = _decoder(res, filters, dense_width, rng)
    if shared_trunk:
        b1 = _decoder(res, filters, dense_width, rng)[5:]
        trunk = 5
    else:
        b1 = _decoder(res, filters, dense_width, rng)
        trunk = 0
    meta = {"res": res, "base_filters": base_filters, "n_convs": n_convs, "dense_width": dense_width}
    net = NetParams("cnn", [b0, b1], output_scale=[1.0, 1.0], training_meta=meta, shared_trunk=trunk)
    check_shapes(net)
    return net


def cnn_preset_full() -> NetParams:
    """Full-size field generator: res 128, two 256-filter convolutions."""
    return cnn_build(res=128, base_filters=256, n_convs=2, seed=None)


def cnn_param_counts(net: NetParams) -> dict:
    """Parameter count for one branch and for the whole two-branch network."""
    one = sum(p.size for layer in net.branches[0] for p in layer.params())
    return {"per_branch": int(one), "both_branches": net.param_count()}


def check_shapes(net: NetParams) -> None:
    """Propagate shapes through every branch; raises :class:`ShapeError` on mismatch."""
    for k in range(len(net.branches)):
        shape: tuple = (3,)
        try:
            for layer in net._branch_layers(k):
                shape = layer.output_shape(shape)
        except ValueError as exc:
            raise ShapeError(f"branch {k}: {exc}") from exc
        if net.kind == "cnn":
            res = net.training_meta["res"]
            if shape != (res, res, 1):
                raise ShapeError(f"branch {k} ends in {shape}, expected {(res, res, 1)}")


# ---------------------------------------------------------------------------
# model file: one JSON header line, then raw little-endian float64 weights


def save_net(net: NetParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": MAGIC,
        "kind": net.kind,
        "shared_trunk": net.shared_trunk,
        "branches": [[layer.config() for layer in br] for br in net.branches],
        "input_normalization": [list(map(float, p)) for p in net.input_normalization],
        "output_scale": [float(s) for s in net.output_scale],
        "training_meta": net.training_meta,
        "shapes": [list(p.shape) for p in net.params()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    payload = np.concatenate([p.ravel() for p in net.params()]) if net.params() else np.zeros(0)
    with path.open("wb") as fh:
        fh.write(blob + b"\n")
        fh.write(payload.astype("<f8").tobytes())
    return path


def load_net(path) -> NetParams:
    raw = Path(path).read_bytes()
    cut = raw.index(b"\n")
    header = json.loads(raw[:cut])
    if header.get("format") != MAGIC:
        raise ValueError(f"{path}: not a network file")
    data = np.frombuffer(raw[cut + 1 :], dtype="<f8")
    branches = [[layer_from_config(c) for c in br] for br in header["branches"]]
    net = NetParams(
        header["kind"],
        branches,
        [tuple(p) for p in header["input_normalization"]],
        list(header["output_scale"]),
        header["training_meta"],
        header.get("shared_trunk", 0),
    )
    offset = 0
    for p, shape in zip(net.params(), header["shapes"]):
        n = math.prod(shape)
        p[...] = data[offset : offset + n].reshape(shape)
        offset += n
    if offset != data.size:
        raise ValueError(f"{path}: payload has {data.size} values, header describes {offset}")
    return net
