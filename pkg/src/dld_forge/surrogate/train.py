"""Training loops, Adam, gradient checks and prediction helpers."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..flow import FlowField, measure_reynolds
from ..geometry import DldParams
from .model import NetParams

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss {loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainConfig:
    batch_size: int = 64
    schedule: list[tuple[int, float]] = field(default_factory=lambda: [(100, 2e-3), (100, 2e-4), (100, 2e-5)])
    seed: int = 0
    target_loss: float | None = None  # stop early once the train loss drops below this
    log_every: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for n, lr in self.schedule:
            if n < 0 or not lr > 0:
                raise ValueError(f"bad schedule entry ({n}, {lr})")

    @property
    def epochs(self) -> int:
        return sum(n for n, _ in self.schedule)

    def rate(self, epoch: int) -> float:
        for n, lr in self.schedule:
            if epoch < n:
                return lr
            epoch -= n
        return self.schedule[-1][1]


# Learning-rate schedules used for the two networks.
CNN_SCHEDULE = [(100, 2e-3), (100, 2e-4), (100, 2e-5)]
FCNN_SCHEDULE = [(1000, 1e-4)]


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, grads, lr):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# loss


def mse_loss(net: NetParams, z, targets) -> tuple[float, list[np.ndarray]]:
    """Mean squared error over every output of every branch, with its gradient."""
    outs = net.forward(z)
    total = sum(o.size for o in outs)
    loss = sum(float(((o - t) ** 2).sum()) for o, t in zip(outs, targets)) / total
    grads = [2.0 * (o - t) / total for o, t in zip(outs, targets)]
    return loss, grads


def loss_and_grad(net: NetParams, z, targets) -> float:
    loss, g = mse_loss(net, z, targets)
    net.backward(g)
    return loss


def _extended_copy(net: NetParams) -> NetParams:
    """Deep copy with every weight in extended precision (for finite differences)."""
    hp = copy.deepcopy(net)
    for layer in hp.layers():
        for name in ("W", "b"):
            if hasattr(layer, name):
                setattr(layer, name, getattr(layer, name).astype(np.longdouble))
    return hp


def gradient_check(net: NetParams, z, targets, n_coords: int = 100, eps: float = 1e-6, seed: int = 0):
    """Largest relative gap between backprop and central differences.

    Coordinates are drawn uniformly over all weights and biases.  The
    differences are taken in extended precision so that round-off does not
    swamp small gradient entries.  Returns ``(max_rel_error, rows)`` with
    rows ``(flat_index, analytic, numeric, rel_error)``.
    """
    rng = np.random.default_rng(seed)
    loss_and_grad(net, z, targets)
    grads = [g.copy() for g in net.grads()]
    hp = _extended_copy(net)
    params = hp.params()
    zl = np.asarray(z, dtype=np.longdouble)
    tl = [np.asarray(t, dtype=np.longdouble) for t in targets]
    sizes = np.array([p.size for p in params])
    picks = rng.choice(int(sizes.sum()), size=min(n_coords, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    rows = []
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(flat - offsets[k], params[k].shape)
        p = params[k]
        old = p[idx]
        p[idx] = old + eps
        lp = _hp_loss(hp, zl, tl)
        p[idx] = old - eps
        lm = _hp_loss(hp, zl, tl)
        p[idx] = old
        num = float((lp - lm) / (2 * eps))
        ana = float(grads[k][idx])
        scale = max(abs(num), abs(ana), 1e-12)
        rel = abs(num - ana) / scale
        rows.append((int(flat), ana, num, rel))
        worst = max(worst, rel)
    return worst, rows


def _hp_loss(net, z, targets):
    outs = net.forward(z)
    total = sum(o.size for o in outs)
    return sum(((o - t) ** 2).sum() for o, t in zip(outs, targets)) / total


# ---------------------------------------------------------------------------
# generic fit


def fit(net: NetParams, x, targets, cfg: TrainConfig, x_dev=None, targets_dev=None) -> NetParams:
    """Minimise MSE of ``net`` on normalised targets; records losses in raw units."""
    rng = np.random.default_rng(cfg.seed)
    z = net.normalize(x)
    scale = net.output_scale
    t_norm = [t / s for t, s in zip(targets, scale)]
    zd = net.normalize(x_dev) if x_dev is not None and len(x_dev) else None
    td = [t / s for t, s in zip(targets_dev, scale)] if zd is not None else None
    # Raw-unit loss = normalised loss weighted by each branch's squared scale.
    weights = np.array([s * s for s in scale])
    opt = Adam(net.params())
    n = len(z)
    history = []
    for epoch in range(cfg.epochs):
        lr = cfg.rate(epoch)
        order = rng.permutation(n)
        acc = 0.0
        for start in range(0, n, cfg.batch_size):
            b = order[start : start + cfg.batch_size]
            loss = loss_and_grad(net, z[b], [t[b] for t in t_norm])
            opt.step(net.grads(), lr)
            acc += loss * len(b)
        train = _raw_loss(net, z, t_norm, weights)
        if not np.isfinite(train) or not net.all_finite():
            raise TrainingError(epoch, train)
        dev = _raw_loss(net, zd, td, weights) if zd is not None else float("nan")
        history.append((epoch, train, dev))
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("epoch %d lr %.1e train %.3e dev %.3e", epoch, lr, train, dev)
        if cfg.target_loss is not None and train < cfg.target_loss:
            break
    net.training_meta.update(
        {
            "epochs": len(history),
            "seed": cfg.seed,
            "batch_size": cfg.batch_size,
            "schedule": [list(s) for s in cfg.schedule],
            "losses": [[e, tr, dv] for e, tr, dv in history],
        }
    )
    return net


def _raw_loss(net, z, t_norm, weights, chunk: int = 64) -> float:
    if z is None:
        return float("nan")
    sq = np.zeros(len(weights))
    count = np.zeros(len(weights))
    for start in range(0, len(z), chunk):
        outs = net.forward(z[start : start + chunk])
        for k, (o, t) in enumerate(zip(outs, t_norm)):
            d = o - t[start : start + chunk]
            sq[k] += float((d * d).sum())
            count[k] += d.size
    return float((sq * weights).sum() / count.sum())


def write_loss_csv(net: NetParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train", "dev"])
        for e, tr, dv in net.training_meta.get("losses", []):
            w.writerow([int(e), f"{tr:.17g}", f"{dv:.17g}"])
    return path


# ---------------------------------------------------------------------------
# direct predictor


def _as_arrays(data, kind: str, split: str, **kw):
    if isinstance(data, tuple):
        return data
    getter = getattr(data, f"{kind}_arrays")
    return getter(split, **kw)


def fcnn_train(net: NetParams, data, cfg: TrainConfig, dev=None) -> NetParams:
    """Fit the direct predictor.

    ``data`` is a dataset manifest (records without a critical diameter are
    skipped) or an ``(X, y)`` pair; ``dev`` likewise or ``None`` to use the
    manifest's dev split.
    """
    x, y = _as_arrays(data, "direct", "train")
    if dev is None and not isinstance(data, tuple):
        dev = _as_arrays(data, "direct", "dev")
    xd, yd = dev if dev is not None else (None, None)
    y = np.asarray(y, dtype=float).reshape(-1, 1)
    if len(y) == 0:
        raise ValueError("no labelled records to train on")
    net.output_scale = [float(np.abs(y).max()) or 1.0]
    yd = None if yd is None else np.asarray(yd, dtype=float).reshape(-1, 1)
    return fit(net, x, [y], cfg, xd, None if yd is None else [yd])


def fcnn_predict_batch(net: NetParams, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    raw = net.predict_raw(x)[0][:, 0]
    g = 1.0 - x[:, 0]
    margin = 1e-6 * g
    return np.clip(raw, margin, g - margin)


def fcnn_predict(net: NetParams, params: DldParams) -> float:
    """Nondimensional ``d_c`` clamped into ``(0, 1 - f)``."""
    return float(fcnn_predict_batch(net, [[params.f, params.N, params.Re]])[0])


# ---------------------------------------------------------------------------
# field generator


def cnn_train(net: NetParams, data, cfg: TrainConfig, dev=None) -> NetParams:
    """Fit both velocity planes jointly.

    ``data`` is a manifest (fields resampled to the network resolution) or an
    ``(X, U, V)`` triple with planes shaped ``(n, res, res)``.
    """
    res = net.training_meta["res"]
    x, u, v = _as_arrays(data, "field", "train", res=res)
    if dev is None and not isinstance(data, tuple):
        dev = _as_arrays(data, "field", "dev", res=res)
    xd, ud, vd = dev if dev is not None else (None, None, None)
    net.output_scale = [float(np.abs(u).max()) or 1.0, float(np.abs(v).max()) or 1.0]
    net.training_meta["train_max_speed"] = float(np.sqrt(u**2 + v**2).max())
    targets = [u[..., None], v[..., None]]
    targets_dev = None if xd is None else [ud[..., None], vd[..., None]]
    return fit(net, x, targets, cfg, xd, targets_dev)


def cnn_predict_planes(net: NetParams, x) -> tuple[np.ndarray, np.ndarray]:
    u, v = net.predict_raw(x)
    return u[..., 0], v[..., 0]


def cnn_predict_field(net: NetParams, params: DldParams) -> FlowField:
    """Predicted velocity planes wrapped as a field usable by the tracer."""
    u, v = cnn_predict_planes(net, [[params.f, params.N, params.Re]])
    nu = params.g / params.Re
    fld = FlowField(u[0], v[0], params, nu)
    return FlowField(u[0], v[0], params, nu, achieved_re=measure_reynolds(fld))
