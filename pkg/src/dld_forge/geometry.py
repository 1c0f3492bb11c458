"""Unit-cell geometry of a circular-pillar DLD array and its shear mapping.

Lengths are normalised by the array pitch ``L = 2R + G``, so one unit cell
has side 1 and the pillar radius is ``f / 2``.  Columns of pillars are
tilted upward: moving one column to the right (+x) raises the pillar by
``1/N``.  The lattice is therefore spanned by ``a1 = (1, 1/N)`` and
``a2 = (0, 1)``, and the shear map sends both onto the unit axes, which
makes every field doubly periodic on the mapped unit square.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

F_MIN, F_MAX = 0.25, 0.75
N_MIN, N_MAX = 3, 10
RE_MIN, RE_MAX = 0.01, 25.0

# Pillar centre in mapped coordinates.
PILLAR_CENTER_MAPPED = (0.5, 0.5)


class RangeError(ValueError):
    """A design parameter lies outside the supported dataset hull."""


class DomainError(ValueError):
    """A mapping was requested with a non-positive length scale."""


@dataclass(frozen=True)
class DldParams:
    """Design point ``(f, N, Re)`` with an optional physical gap ``G`` in µm."""

    f: float
    N: int
    Re: float
    G: float | None = None

    def __post_init__(self) -> None:
        if not F_MIN - 1e-12 <= self.f <= F_MAX + 1e-12:
            raise RangeError(f"f={self.f} outside [{F_MIN}, {F_MAX}]")
        if int(self.N) != self.N or not N_MIN <= self.N <= N_MAX:
            raise RangeError(f"N={self.N} must be an integer in [{N_MIN}, {N_MAX}]")
        if not RE_MIN - 1e-12 <= self.Re <= RE_MAX + 1e-12:
            raise RangeError(f"Re={self.Re} outside [{RE_MIN}, {RE_MAX}]")
        if self.G is not None and not self.G > 0:
            raise RangeError(f"G={self.G} must be positive")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "f", float(self.f))
        object.__setattr__(self, "Re", float(self.Re))

    @property
    def g(self) -> float:
        """Gap as a fraction of the pitch."""
        return 1.0 - self.f

    def with_gap(self, G: float | None) -> "DldParams":
        return DldParams(self.f, self.N, self.Re, G)


@dataclass(frozen=True)
class CellGeometry:
    pillar_radius_unit: float
    N: int
    lattice_vectors: tuple[tuple[float, float], tuple[float, float]]
    pillar_centers: np.ndarray = field(repr=False)

    @property
    def f(self) -> float:
        return 2.0 * self.pillar_radius_unit

    @property
    def gap(self) -> float:
        return 1.0 - self.f

    @property
    def center(self) -> np.ndarray:
        """Physical position of the central pillar."""
        return self.pillar_centers[0]


def unit_cell(params: DldParams) -> CellGeometry:
    """Build the normalised unit cell for ``params``.

    ``pillar_centers[0]`` is the central pillar; the remaining eight rows are
    its nearest periodic images, so distance queries for any point of the
    cell never need wrapping.
    """
    r = params.f / 2.0
    n = params.N
    a1 = np.array([1.0, 1.0 / n])
    a2 = np.array([0.0, 1.0])
    c0 = map_from_unit(PILLAR_CENTER_MAPPED, n, 1.0)
    offsets = [(0, 0)] + [(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1) if (i, j) != (0, 0)]
    centers = np.array([c0 + i * a1 + j * a2 for i, j in offsets])
    centers.setflags(write=False)
    return CellGeometry(
        pillar_radius_unit=r,
        N=n,
        lattice_vectors=(tuple(a1), tuple(a2)),
        pillar_centers=centers,
    )


def _shear_matrix(N: float, L: float) -> np.ndarray:
    if not L > 0:
        raise DomainError(f"length scale must be positive, got {L}")
    if N < 1:
        raise DomainError(f"period number must be >= 1, got {N}")
    return np.array([[1.0, 0.0], [-1.0 / N, 1.0]]) / L


def map_to_unit(point, N: float, L: float = 1.0) -> np.ndarray:
    """Scale by ``1/L`` then shear in y: ``(x/L, -x/(N L) + y/L)``.

    Accepts a single point or an array of shape ``(..., 2)``.
    """
    m = _shear_matrix(N, L)
    p = np.asarray(point, dtype=float)
    return p @ m.T


def map_from_unit(point, N: float, L: float = 1.0) -> np.ndarray:
    """Inverse of :func:`map_to_unit`."""
    _shear_matrix(N, L)
    p = np.asarray(point, dtype=float)
    x = p[..., 0] * L
    y = (p[..., 1] + p[..., 0] / N) * L
    return np.stack([x, y], axis=-1)


def gap_section(geom: CellGeometry, n_samples: int) -> np.ndarray:
    """Physical points evenly spaced across the open gap above the pillar.

    The section is the vertical segment between the top of the central pillar
    and the bottom of its image one row up; endpoints are excluded.
    """
    cx, cy = geom.center
    r = geom.pillar_radius_unit
    s = (np.arange(n_samples) + 0.5) / n_samples
    y = cy + r + s * geom.gap
    return np.column_stack([np.full(n_samples, cx), y])


def _reduce(geom: CellGeometry, x, y):
    """Offsets from the central pillar after folding into its mapped cell."""
    cx, cy = geom.center
    n = geom.N
    xm = np.asarray(x, dtype=float) - cx
    ym = (np.asarray(y, dtype=float) - cy) - xm / n
    xm = xm - np.round(xm)
    ym = ym - np.round(ym)
    return xm, ym + xm / n


def nearest_pillar_offset(geom: CellGeometry, x, y):
    """Vector from the nearest pillar centre (any periodic image) to each point."""
    px, py = _reduce(geom, x, y)
    n = geom.N
    best = np.full(np.shape(px), np.inf)
    bx = np.zeros(np.shape(px))
    by = np.zeros(np.shape(px))
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            dx = px - i
            dy = py - (i / n + j)
            d = np.hypot(dx, dy)
            closer = d < best
            best = np.where(closer, d, best)
            bx = np.where(closer, dx, bx)
            by = np.where(closer, dy, by)
    return bx, by


def signed_distance(geom: CellGeometry, x, y) -> np.ndarray:
    """Distance from physical points to the nearest pillar surface, negative inside."""
    bx, by = nearest_pillar_offset(geom, x, y)
    return np.hypot(bx, by) - geom.pillar_radius_unit
