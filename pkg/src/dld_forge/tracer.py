"""Finite-size particle tracing with specular pillar contact.

Particles are massless: their centre follows the local fluid velocity,
advanced with classical RK4.  A particle of radius ``a`` touches a pillar when
the wall distance at its centre drops to ``a``; the step is then redone with
the normal velocity component reflected, and the centre is projected back
onto the contact surface if it still overlaps.

Positions are integrated in unwrapped physical coordinates (x along the
flow, y lateral, pitch 1) and stored in unwrapped mapped coordinates
``(x, y - x/N)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from numba import njit

from .flow import FlowField
from .geometry import CellGeometry
from .walls import WallField

STEP_CAP = 5_000_000
RELEASE_CLEARANCE = 1e-3
_CHUNK = 200_000


class Mode(IntEnum):
    BUMPED = 1
    ZIGZAG = -1
    UNDETERMINED = 0


class ContractError(ValueError):
    """Inputs violate a documented precondition."""


class PlacementError(ValueError):
    """The particle cannot be released at the requested point."""


class StallError(RuntimeError):
    """The step cap was hit before the particle left the device section."""


class SpanError(ValueError):
    """The trajectory is too short to classify."""


@dataclass
class Trajectory:
    points: np.ndarray = field(repr=False)  # (k, 3): t, x', y' in mapped coordinates
    contacts: np.ndarray = field(repr=False)  # indices of points reached by a contact step
    particle_diameter: float
    N: int
    mode: Mode = Mode.UNDETERMINED

    @property
    def physical(self) -> np.ndarray:
        """Unwrapped physical ``(x, y)`` of every stored point."""
        x = self.points[:, 1]
        return np.column_stack([x, self.points[:, 2] + x / self.N])


@dataclass
class RecurrenceMap:
    """Lateral position at the entry and exit of each period.

    ``rows`` hold positions in ``[0, 1)`` (fraction of the row pitch);
    ``advance`` holds the unwrapped lateral displacement over each period,
    in rows, which separates bumping (one row per period) from zigzag (zero).
    """

    rows: list[tuple[int, float, float]]
    advance: list[float]


def reflect(v, n, t, tol: float = 1e-9) -> np.ndarray:
    """Flip the normal velocity component, keep the tangential one."""
    v = np.asarray(v, dtype=float)
    n = np.asarray(n, dtype=float)
    t = np.asarray(t, dtype=float)
    if abs(np.hypot(*n) - 1.0) > tol or abs(np.hypot(*t) - 1.0) > tol:
        raise ContractError("n and t must be unit vectors")
    if abs(n @ t) > tol:
        raise ContractError("n and t must be orthogonal")
    return -(n @ v) * n + (t @ v) * t


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, inline="always")
def _bilinear(g, xm, ym):
    res = g.shape[0]
    fx = (xm - math.floor(xm)) * res
    fy = (ym - math.floor(ym)) * res
    i0 = int(math.floor(fx))
    j0 = int(math.floor(fy))
    tx = fx - i0
    ty = fy - j0
    i0 %= res
    j0 %= res
    i1 = (i0 + 1) % res
    j1 = (j0 + 1) % res
    return (
        g[j0, i0] * (1 - tx) * (1 - ty)
        + g[j0, i1] * tx * (1 - ty)
        + g[j1, i0] * (1 - tx) * ty
        + g[j1, i1] * tx * ty
    )


@njit(cache=True)
def _vel(u, v, inv_n, x, y):
    ym = y - x * inv_n
    return _bilinear(u, x, ym), _bilinear(v, x, ym)


@njit(cache=True)
def _rk4(u, v, inv_n, x, y, dt):
    k1x, k1y = _vel(u, v, inv_n, x, y)
    k2x, k2y = _vel(u, v, inv_n, x + 0.5 * dt * k1x, y + 0.5 * dt * k1y)
    k3x, k3y = _vel(u, v, inv_n, x + 0.5 * dt * k2x, y + 0.5 * dt * k2y)
    k4x, k4y = _vel(u, v, inv_n, x + dt * k3x, y + dt * k3y)
    return (
        x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
        y + dt / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y),
    )


@njit(cache=True)
def _wall(dist, wnx, wny, inv_n, x, y):
    ym = y - x * inv_n
    d = _bilinear(dist, x, ym)
    nx = _bilinear(wnx, x, ym)
    ny = _bilinear(wny, x, ym)
    m = math.sqrt(nx * nx + ny * ny)
    if m > 0:
        nx /= m
        ny /= m
    return d, nx, ny


@njit(cache=True)
def _trace_chunk(u, v, dist, wnx, wny, inv_n, x, y, t, radius, dt, x_end, n_steps, out, flags):
    """Advance up to ``n_steps``; returns the count written and the final state."""
    k = 0
    while k < n_steps:
        if x >= x_end:
            break
        xn, yn = _rk4(u, v, inv_n, x, y, dt)
        d, nx, ny = _wall(dist, wnx, wny, inv_n, xn, yn)
        hit = 0
        if d <= radius:
            hit = 1
            # Effective step velocity, reflected if it points into the wall.
            vx = (xn - x) / dt
            vy = (yn - y) / dt
            vn = vx * nx + vy * ny
            if vn < 0:
                vx -= 2 * vn * nx
                vy -= 2 * vn * ny
                xn = x + dt * vx
                yn = y + dt * vy
                d, nx, ny = _wall(dist, wnx, wny, inv_n, xn, yn)
            if d < radius:
                xn += (radius - d) * nx
                yn += (radius - d) * ny
        x, y = xn, yn
        t += dt
        out[k, 0] = t
        out[k, 1] = x
        out[k, 2] = y
        flags[k] = hit
        k += 1
    return k, x, y, t


# ---------------------------------------------------------------------------
# python API


def step_rk4(field: FlowField, p, dt: float) -> np.ndarray:
    """One RK4 step of ``dx/dt = u(x)`` from physical point ``p``."""
    if not dt > 0:
        raise ContractError("dt must be positive")
    x, y = _rk4(field.u, field.v, 1.0 / field.params.N, float(p[0]), float(p[1]), float(dt))
    return np.array([x, y])


def default_dt(field: FlowField) -> float:
    speed = field.max_speed
    if speed == 0:
        raise ValueError("zero velocity field")
    return 0.1 / field.res / speed


def release_point(geom: CellGeometry, diameter: float) -> np.ndarray:
    """Inlet seed just above the tangent line of the pillar row at ``x = 0``.

    The row through the central pillar has centre height ``cy - cx/N`` at
    ``x = 0``; its tangent line sits one radius higher.
    """
    cx, cy = geom.center
    r = geom.pillar_radius_unit
    return np.array([0.0, cy - cx / geom.N + r + 0.5 * diameter + RELEASE_CLEARANCE])


def trace(
    field: FlowField,
    wf: WallField,
    start,
    diameter: float,
    n_periods: int = 1,
    dt: float | None = None,
    step_cap: int = STEP_CAP,
) -> Trajectory:
    """Trace one particle from physical ``start`` across ``n_periods * N`` columns."""
    N = field.params.N
    g = wf.geometry.gap
    if not 0 < diameter < g:
        raise PlacementError(f"diameter {diameter} must lie in (0, {g})")
    if wf.geometry.N != N:
        raise ContractError("wall field and flow field disagree on N")
    radius = 0.5 * diameter
    x, y = float(start[0]), float(start[1])
    inv_n = 1.0 / N
    d0, _, _ = _wall(wf.dist, wf.normal_x, wf.normal_y, inv_n, x, y)
    if d0 < radius:
        raise PlacementError(f"start clearance {d0:.4g} is below the particle radius {radius:.4g}")
    dt = dt or default_dt(field)
    x_end = x + n_periods * N
    chunks = [np.array([[0.0, x, y]])]
    hits = [np.zeros(1, dtype=np.int8)]
    t = 0.0
    taken = 0
    while x < x_end:
        if taken >= step_cap:
            raise StallError(f"step cap {step_cap} reached at x={x:.4f} (target {x_end:.4f})")
        n = min(_CHUNK, step_cap - taken)
        out = np.empty((n, 3))
        flags = np.empty(n, dtype=np.int8)
        k, x, y, t = _trace_chunk(
            field.u, field.v, wf.dist, wf.normal_x, wf.normal_y, inv_n, x, y, t, radius, dt, x_end, n, out, flags
        )
        chunks.append(out[:k])
        hits.append(flags[:k])
        taken += k
    pts = np.concatenate(chunks)
    pts[:, 2] -= pts[:, 1] * inv_n
    contacts = np.flatnonzero(np.concatenate(hits))
    traj = Trajectory(pts, contacts, float(diameter), N)
    traj.mode = classify_mode(traj, N)
    return traj


def classify_mode(traj: Trajectory, N: int) -> Mode:
    """Bumped when the mean lateral drift per column exceeds half the array slope."""
    phys = traj.physical if traj.N == N else _physical(traj.points, N)
    span = phys[-1, 0] - phys[0, 0]
    if span < N - 1e-9:
        raise SpanError(f"trajectory spans {span:.3f} columns, need {N}")
    drift = (phys[-1, 1] - phys[0, 1]) / span
    return Mode.BUMPED if drift > 0.5 / N else Mode.ZIGZAG


def _physical(points, N):
    x = points[:, 1]
    return np.column_stack([x, points[:, 2] + x / N])


def recurrence_map(traj: Trajectory) -> RecurrenceMap:
    """Lateral position where the path crosses each period boundary ``x = k N``."""
    phys = traj.physical
    N = traj.N
    x, y = phys[:, 0], phys[:, 1]
    k0 = math.ceil(x[0] / N - 1e-12)
    k1 = math.floor(x[-1] / N + 1e-12)
    bounds = np.arange(k0, k1 + 1) * N
    if bounds.size < 2:
        raise SpanError("trajectory spans less than one period")
    lateral = np.interp(bounds, x, y)
    rows = []
    advance = []
    for k in range(bounds.size - 1):
        a, b = lateral[k], lateral[k + 1]
        rows.append((k, float(a - math.floor(a)), float(b - math.floor(b))))
        advance.append(float(b - a))
    return RecurrenceMap(rows, advance)


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flag = np.zeros(len(traj.points), dtype=int)
    flag[traj.contacts] = 1
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "contact"])
        for (t, x, y), c in zip(traj.points, flag):
            w.writerow([f"{t:.17g}", f"{x:.17g}", f"{y:.17g}", int(c)])
    return path


def write_recurrence_csv(rm: RecurrenceMap, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "entry", "exit", "advance"])
        for (k, a, b), adv in zip(rm.rows, rm.advance):
            w.writerow([k, f"{a:.17g}", f"{b:.17g}", f"{adv:.17g}"])
    return path
