"""Wall distance function and contact normals for one unit cell.

The grid shares the node layout of :class:`~dld_forge.flow.FlowField`:
``res x res`` nodes on the mapped unit square, arrays indexed ``[y', x']``.
Distances are evaluated analytically from the circle geometry, so the grid
only serves as the lookup table used during tracing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flow import _bilinear_periodic, node_positions
from .geometry import CellGeometry, map_to_unit, nearest_pillar_offset


class DegenerateNormalError(ValueError):
    """The interpolated wall gradient vanishes (pillar centre or medial axis)."""


@dataclass(frozen=True)
class WallField:
    dist: np.ndarray = field(repr=False)
    normal_x: np.ndarray = field(repr=False)
    normal_y: np.ndarray = field(repr=False)
    geometry: CellGeometry

    @property
    def res(self) -> int:
        return self.dist.shape[0]

    @property
    def tangent_x(self) -> np.ndarray:
        return -self.normal_y

    @property
    def tangent_y(self) -> np.ndarray:
        return self.normal_x


def wall_distance_field(geom: CellGeometry, res: int = 256) -> WallField:
    """Signed distance and outward radial normals at every grid node."""
    if res < 32:
        raise ValueError(f"res must be >= 32, got {res}")
    x, y = node_positions(res, geom.N)
    bx, by = nearest_pillar_offset(geom, x, y)
    rho = np.hypot(bx, by)
    safe = np.where(rho > 0, rho, 1.0)
    nx = np.where(rho > 0, bx / safe, 0.0)
    ny = np.where(rho > 0, by / safe, 0.0)
    arrays = [rho - geom.pillar_radius_unit, nx, ny]
    for a in arrays:
        a.setflags(write=False)
    return WallField(*arrays, geometry=geom)


def _lookup(wf: WallField, grids, p):
    m = map_to_unit(p, wf.geometry.N)
    xi = m[..., 0] * wf.res
    yj = m[..., 1] * wf.res
    return [_bilinear_periodic(g, xi, yj) for g in grids]


def wall_distance(wf: WallField, p) -> np.ndarray:
    """Interpolated wall distance at physical point(s)."""
    return _lookup(wf, [wf.dist], p)[0]


def wall_normal_tangent(wf: WallField, p) -> tuple[np.ndarray, np.ndarray]:
    """Unit normal and tangent (normal rotated by +90 degrees) at physical point ``p``."""
    gx, gy = _lookup(wf, [wf.normal_x, wf.normal_y], np.asarray(p, dtype=float))
    mag = float(np.hypot(gx, gy))
    if mag < 1e-6:
        raise DegenerateNormalError(f"wall normal undefined at {tuple(np.asarray(p))}")
    n = np.array([gx / mag, gy / mag])
    t = np.array([-n[1], n[0]])
    return n, t


def dump_wall_field(wf: WallField, path) -> Path:
    """Write the distance plane as raw little-endian float64 plus a JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(wf.dist, dtype="<f8").tobytes())
    geom = wf.geometry
    meta = {"kind": "wall_distance", "f": geom.f, "N": geom.N, "res": wf.res}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path
