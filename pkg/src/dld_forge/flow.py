"""Steady incompressible flow in one shifted-periodic DLD unit cell.

The solve happens on a staggered (MAC) grid laid over the physical cell
``[0, 1) x [0, 1)``.  Leaving through the right edge at height ``y`` re-enters
the left edge at ``y - 1/N``; the grid height is a multiple of ``N`` so this
shift is a whole number of cells.  Cells whose centre lies inside a pillar are
solid (staircase walls).  Steady Navier-Stokes is solved with Newton's method
and a sparse direct factorisation, while an outer loop tunes the uniform
body force until the gap Reynolds number matches the request.

The force has a small lateral component chosen so the cell-averaged lateral
velocity vanishes.  A tilted array is anisotropic, so a purely axial force
would push the mean flow off the channel axis; in a device the side walls
forbid that net lateral flux.

Solver units: pitch ``L = 1``, density 1, viscosity ``nu = g / Re`` so the
target mean gap velocity is 1.  The converged field is resampled onto the
shear-mapped unit square (``res x res`` nodes at ``k / res``) and then
projected onto the discretely divergence-free subspace of that grid.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import DldParams, gap_section, map_from_unit, map_to_unit, signed_distance, unit_cell

log = logging.getLogger(__name__)

MIN_GAP_CELLS = 4


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


class ResolutionError(ValueError):
    """The grid cannot resolve the gap between pillars."""


@dataclass(frozen=True)
class SolverConfig:
    res: int = 128
    max_iters: int = 60
    residual_tol: float = 1e-7
    drive_gain: float = 1.0
    re_tol: float = 1e-4
    lateral_tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.res < 32:
            raise ValueError(f"res must be >= 32, got {self.res}")
        if not self.residual_tol > 0:
            raise ValueError("residual_tol must be positive")


@dataclass(frozen=True)
class FlowField:
    """Velocity planes on the mapped unit square, indexed ``[y', x']``."""

    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    params: DldParams
    nu: float
    achieved_re: float = float("nan")
    force: float = float("nan")
    force_y: float = 0.0

    @property
    def res(self) -> int:
        return self.u.shape[0]

    @property
    def max_speed(self) -> float:
        return float(np.sqrt(self.u**2 + self.v**2).max())

    def negated(self) -> "FlowField":
        return FlowField(-self.u, -self.v, self.params, self.nu, self.achieved_re, -self.force, -self.force_y)


# ---------------------------------------------------------------------------
# sampling


def _bilinear_periodic(grid: np.ndarray, xi: np.ndarray, yj: np.ndarray) -> np.ndarray:
    """Bilinear lookup in a doubly periodic grid at fractional indices."""
    ny, nx = grid.shape
    i0 = np.floor(xi)
    j0 = np.floor(yj)
    tx = xi - i0
    ty = yj - j0
    i0 = i0.astype(np.int64) % nx
    j0 = j0.astype(np.int64) % ny
    i1 = (i0 + 1) % nx
    j1 = (j0 + 1) % ny
    return (
        grid[j0, i0] * (1 - tx) * (1 - ty)
        + grid[j0, i1] * tx * (1 - ty)
        + grid[j1, i0] * (1 - tx) * ty
        + grid[j1, i1] * tx * ty
    )


def interpolate_velocity(field: FlowField, p) -> np.ndarray:
    """Velocity at mapped point(s) ``p`` by bilinear interpolation.

    The mapped field is periodic with period 1 in both directions: the image
    of lattice vector ``a1`` is ``(1, 0)`` and of ``a2`` is ``(0, 1)``.
    """
    p = np.asarray(p, dtype=float)
    res = field.res
    xi = p[..., 0] * res
    yj = p[..., 1] * res
    return np.stack([_bilinear_periodic(field.u, xi, yj), _bilinear_periodic(field.v, xi, yj)], axis=-1)


def velocity_at_physical(field: FlowField, p) -> np.ndarray:
    return interpolate_velocity(field, map_to_unit(p, field.params.N))


def measure_reynolds(field: FlowField, params: DldParams | None = None, n_samples: int | None = None) -> float:
    """Gap Reynolds number ``mean(u across gap) * g / nu``."""
    params = params or field.params
    geom = unit_cell(params)
    n = n_samples or 4 * field.res
    pts = gap_section(geom, n)
    u = velocity_at_physical(field, pts)[:, 0]
    return float(u.mean() * geom.gap / field.nu)


def node_positions(res: int, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Physical coordinates of the mapped grid nodes, each shaped ``(res, res)``."""
    s = np.arange(res) / res
    xm, ym = np.meshgrid(s, s)
    phys = map_from_unit(np.stack([xm, ym], axis=-1), N)
    return phys[..., 0], phys[..., 1]



# ---------------------------------------------------------------------------
# discrete divergence on the mapped grid


def _divergence_operator(res: int, N: int) -> sp.csr_matrix:
    """Cell-flux divergence of nodal velocities on the mapped grid.

    With contravariant components ``U = u`` and ``V = v - u/N`` the physical
    divergence is ``dU/dx' + dV/dy'``.  Each cell's value is the trapezoidal
    net outflow through its four edges divided by the cell area, which equals
    the exact mean divergence of the bilinear interpolant over that cell.
    Columns are ``[u.ravel(), v.ravel()]`` with ``[j, i]`` row-major order.
    """
    n = res * res
    h = 1.0 / res
    j, i = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")

    def node(jj, ii):
        return ((jj % res) * res + (ii % res)).ravel()

    rows = np.arange(n)
    n00, n10, n01, n11 = node(j, i), node(j, i + 1), node(j + 1, i), node(j + 1, i + 1)
    # dU/dx': edge averages on the right minus the left.
    cu = [(n10, 0.5 / h), (n11, 0.5 / h), (n00, -0.5 / h), (n01, -0.5 / h)]
    # dV/dy' with V = v - u/N.
    cv = [(n01, 0.5 / h), (n11, 0.5 / h), (n00, -0.5 / h), (n10, -0.5 / h)]
    r_list, c_list, d_list = [], [], []
    for cols, w in cu:
        r_list.append(rows)
        c_list.append(cols)
        d_list.append(np.full(n, w))
    for cols, w in cv:
        r_list += [rows, rows]
        c_list += [cols + n, cols]
        d_list += [np.full(n, w), np.full(n, -w / N)]
    return sp.csr_matrix(
        (np.concatenate(d_list), (np.concatenate(r_list), np.concatenate(c_list))), shape=(n, 2 * n)
    )


def discrete_divergence(field: FlowField) -> np.ndarray:
    """Per-cell mean divergence of the stored field, shaped ``(res, res)``."""
    res = field.res
    d = _divergence_operator(res, field.params.N)
    return (d @ np.concatenate([field.u.ravel(), field.v.ravel()])).reshape(res, res)


def divergence_ratio(field: FlowField) -> float:
    """``max|div| / (max speed / cell size)``; the solver keeps this below 1e-3."""
    speed = field.max_speed
    if speed == 0:
        return 0.0
    return float(np.abs(discrete_divergence(field)).max() / (speed * field.res))


def project_divergence_free(u: np.ndarray, v: np.ndarray, fluid: np.ndarray, N: int, tol: float = 1e-12):
    """Smallest correction of fluid-node values making every cell flux balance.

    Nodes outside ``fluid`` keep their values (zero inside pillars).
    """
    res = u.shape[0]
    d = _divergence_operator(res, N)
    free = np.concatenate([fluid.ravel(), fluid.ravel()])
    df = d[:, free]
    rhs = -(d @ np.concatenate([u.ravel(), v.ravel()]))
    # Minimal-norm solution of df x = rhs through the normal equations.
    a = (df @ df.T).tocsr()
    lam, info = spla.minres(a, rhs, rtol=tol, maxiter=20000)
    x = np.concatenate([u.ravel(), v.ravel()])
    x[free] += df.T @ lam
    n = res * res
    return x[:n].reshape(res, res), x[n:].reshape(res, res)


# ---------------------------------------------------------------------------
# MAC solver


class _MacGrid:
    """Operators for a staggered grid on a shifted-periodic unit rectangle.

    Leaving through the right edge re-enters the left edge ``shift`` cells
    lower.  ``solid(x, y)`` flags cells by their centre.
    """

    def __init__(self, nx: int, ny: int, shift: int, solid):
        self.nx, self.ny, self.shift = nx, ny, shift
        self.dx = 1.0 / nx
        self.dy = 1.0 / ny
        self.n = n = nx * ny

        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")

        def flat(ii, jj):
            q = np.floor_divide(ii, nx)
            return ((ii - q * nx) * ny + np.mod(jj - q * shift, ny)).ravel()

        self.E, self.W = flat(i + 1, j), flat(i - 1, j)
        self.N_, self.S = flat(i, j + 1), flat(i, j - 1)

        self.solid_cell = np.asarray(solid((i + 0.5) * self.dx, (j + 0.5) * self.dy), dtype=bool).ravel()
        self.solid_u = self.solid_cell | self.solid_cell[self.W]
        self.solid_v = self.solid_cell | self.solid_cell[self.S]

        def perm(idx):
            return sp.csr_matrix((np.ones(n), (np.arange(n), idx)), shape=(n, n))

        I = sp.identity(n, format="csr")
        PE, PW, PN, PS = perm(self.E), perm(self.W), perm(self.N_), perm(self.S)
        dx2, dy2 = self.dx**2, self.dy**2
        lap = (PE + PW - 2 * I) / dx2 + (PN + PS - 2 * I) / dy2
        # Walls between u-faces in y (and v-faces in x) sit half a cell away:
        # reflect the ghost value so the velocity vanishes on the wall.
        ghost_u = (self.solid_u[self.N_].astype(float) + self.solid_u[self.S]) / dy2
        ghost_v = (self.solid_v[self.E].astype(float) + self.solid_v[self.W]) / dx2
        self.lap_u = (lap - sp.diags(ghost_u)).tocsr()
        self.lap_v = (lap - sp.diags(ghost_v)).tocsr()
        self.grad_x = ((I - PW) / self.dx).tocsr()
        self.grad_y = ((I - PS) / self.dy).tocsr()
        self.div_u = ((PE - I) / self.dx).tocsr()
        self.div_v = ((PN - I) / self.dy).tocsr()

        h = 0.5
        self.A1, self.A2 = h * (I + PE), h * (PW + I)
        self.A3, self.B3 = h * (I + PN), h * (PN + PN @ PW)
        self.A4, self.B4 = h * (I + PS), h * (I + PW)
        self.C1, self.D1 = h * (I + PE), h * (PE + PS @ PE)
        self.C2, self.D2 = h * (I + PW), h * (I + PS)
        self.C3, self.C4 = h * (I + PN), h * (PS + I)

        self.fluid_u = ~self.solid_u
        self.fluid_v = ~self.solid_v
        fluid_cells = np.flatnonzero(~self.solid_cell)
        self.pin = int(fluid_cells[0])
        self.fluid_p = ~self.solid_cell
        self.fluid_p[self.pin] = False
        self.row_keep = sp.diags(np.concatenate([self.fluid_u, self.fluid_v, self.fluid_p]).astype(float))
        self.row_ident = sp.diags(np.concatenate([~self.fluid_u, ~self.fluid_v, ~self.fluid_p]).astype(float))

    def split(self, x):
        n = self.n
        return x[:n], x[n : 2 * n], x[2 * n :]

    def convection(self, u, v):
        dx, dy = self.dx, self.dy
        a1, a2, a3, a4 = self.A1 @ u, self.A2 @ u, self.A3 @ u, self.A4 @ u
        b3, b4 = self.B3 @ v, self.B4 @ v
        c1, c2, c3, c4 = self.C1 @ v, self.C2 @ v, self.C3 @ v, self.C4 @ v
        d1, d2 = self.D1 @ u, self.D2 @ u
        cu = (a1 * a1 - a2 * a2) / dx + (a3 * b3 - a4 * b4) / dy
        cv = (d1 * c1 - d2 * c2) / dx + (c3 * c3 - c4 * c4) / dy
        return cu, cv, (a1, a2, a3, a4, b3, b4, c1, c2, c3, c4, d1, d2)

    def residual(self, x, force, nu, inertia=True):
        u, v, p = self.split(x)
        fu, fv = force
        ru = -nu * (self.lap_u @ u) + self.grad_x @ p - fu
        rv = -nu * (self.lap_v @ v) + self.grad_y @ p - fv
        if inertia:
            cu, cv, _ = self.convection(u, v)
            ru += cu
            rv += cv
        rp = self.div_u @ u + self.div_v @ v
        r = np.concatenate([ru, rv, rp])
        keep = np.concatenate([self.fluid_u, self.fluid_v, self.fluid_p])
        return np.where(keep, r, x)

    def jacobian(self, x, nu, inertia=True):
        u, v, _ = self.split(x)
        juu = -nu * self.lap_u
        jvv = -nu * self.lap_v
        juv = None
        jvu = None
        if inertia:
            dx, dy = self.dx, self.dy
            _, _, (a1, a2, a3, a4, b3, b4, c1, c2, c3, c4, d1, d2) = self.convection(u, v)
            dg = sp.diags
            juu = juu + dg(2 * a1 / dx) @ self.A1 - dg(2 * a2 / dx) @ self.A2 + dg(b3 / dy) @ self.A3 - dg(b4 / dy) @ self.A4
            juv = dg(a3 / dy) @ self.B3 - dg(a4 / dy) @ self.B4
            jvu = dg(c1 / dx) @ self.D1 - dg(c2 / dx) @ self.D2
            jvv = jvv + dg(d1 / dx) @ self.C1 - dg(d2 / dx) @ self.C2 + dg(2 * c3 / dy) @ self.C3 - dg(2 * c4 / dy) @ self.C4
        j = sp.bmat(
            [
                [juu, juv, self.grad_x],
                [jvu, jvv, self.grad_y],
                [self.div_u, self.div_v, None],
            ],
            format="csr",
        )
        return (self.row_keep @ j + self.row_ident).tocsc()

    def force_vector(self, force) -> tuple[np.ndarray, np.ndarray]:
        fx, fy = (force, 0.0) if np.isscalar(force) else force
        return np.where(self.fluid_u, fx, 0.0), np.where(self.fluid_v, fy, 0.0)

    def mean_velocity(self, x) -> tuple[float, float]:
        u, v, _ = self.split(x)
        return float(u.mean()), float(v.mean())

    def face_grids(self, x):
        u, v, _ = self.split(x)
        return u.reshape(self.nx, self.ny), v.reshape(self.nx, self.ny)

    def sample_u(self, x, px, py):
        """Bilinear ``u`` at physical points from the face values in ``x``."""
        return self._sample(self.face_grids(x)[0], px / self.dx, py / self.dy - 0.5)

    def sample_v(self, x, px, py):
        return self._sample(self.face_grids(x)[1], px / self.dx - 0.5, py / self.dy)

    def _sample(self, g, fi, fj):
        i0 = np.floor(fi).astype(np.int64)
        j0 = np.floor(fj).astype(np.int64)
        tx = fi - i0
        ty = fj - j0

        def at(ii, jj):
            q = np.floor_divide(ii, self.nx)
            return g[ii - q * self.nx, np.mod(jj - q * self.shift, self.ny)]

        return (
            at(i0, j0) * (1 - tx) * (1 - ty)
            + at(i0 + 1, j0) * tx * (1 - ty)
            + at(i0, j0 + 1) * (1 - tx) * ty
            + at(i0 + 1, j0 + 1) * tx * ty
        )


def _factor(grid: _MacGrid, jac: sp.csc_matrix, nu: float):
    """Sparse LU of a saddle-point matrix.

    A tiny negative shift on the pressure block lets SuperLU use a symmetric
    fill-reducing ordering without pivoting; callers refine against the
    exact matrix, which removes the bias the shift introduces.
    """
    shift = np.concatenate([np.zeros(2 * grid.n), -1e-8 / nu * grid.fluid_p])
    return spla.splu(
        (jac + sp.diags(shift)).tocsc(),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options=dict(SymmetricMode=True),
    )


def _linear_solve(jac, rhs, lu, tol=1e-12) -> np.ndarray:
    """Solve ``jac x = rhs`` with ``lu`` (of ``jac`` or a nearby matrix) as preconditioner."""
    scale = np.linalg.norm(rhs)
    if scale == 0:
        return np.zeros_like(rhs)
    prec = spla.LinearOperator(jac.shape, matvec=lu.solve, dtype=float)
    x, info = spla.gmres(jac, rhs, x0=lu.solve(rhs), M=prec, rtol=tol, atol=0.0, restart=80, maxiter=3)
    err = np.linalg.norm(rhs - jac @ x) / scale
    if err > 1e3 * tol:
        raise ConvergenceError("preconditioned linear solve stagnated", float(err))
    return x


class _Newton:
    """Newton iteration preconditioned by a single Stokes factorisation."""

    def __init__(self, grid: _MacGrid, nu: float):
        self.grid = grid
        self.nu = nu
        self.stokes_jac = grid.jacobian(np.zeros(3 * grid.n), nu, inertia=False)
        self.stokes_lu = _factor(grid, self.stokes_jac, nu)

    def step(self, x, force, inertia=True):
        grid = self.grid
        r = grid.residual(x, grid.force_vector(force), self.nu, inertia)
        if not inertia:
            return x - _linear_solve(self.stokes_jac, r, self.stokes_lu)
        jac = grid.jacobian(x, self.nu)
        try:
            dx = _linear_solve(jac, r, self.stokes_lu)
        except ConvergenceError:
            log.debug("refactorising the full Jacobian")
            dx = _linear_solve(jac, r, _factor(grid, jac, self.nu))
        return x - dx

    def run(self, x, force, cfg: SolverConfig, inertia=True):
        n2 = 2 * self.grid.n
        rel = np.inf
        for it in range(cfg.max_iters):
            x_new = self.step(x, force, inertia)
            dx = x_new - x
            x = x_new
            scale = np.abs(x[:n2]).max()
            rel = np.abs(dx[:n2]).max() / scale if scale > 0 else 0.0
            if not np.isfinite(rel):
                break
            if rel < cfg.residual_tol:
                return x, it + 1
        raise ConvergenceError(f"Newton iteration did not converge in {cfg.max_iters} iterations", rel)


class FlowSolver:
    """Reusable solver for one geometry at one resolution."""

    def __init__(self, params: DldParams, cfg: SolverConfig | None = None):
        self.params = params
        self.cfg = cfg or SolverConfig()
        self.geom = geom = unit_cell(params)
        res = self.cfg.res
        ny = params.N * math.ceil(res / params.N)
        gap_cells = geom.gap * res
        if gap_cells < MIN_GAP_CELLS:
            raise ResolutionError(f"gap spans {gap_cells:.2f} cells, need at least {MIN_GAP_CELLS}")
        self.grid = _MacGrid(res, ny, ny // params.N, lambda x, y: signed_distance(geom, x, y) < 0)
        px, py = node_positions(self.cfg.res, params.N)
        self.fluid_nodes = signed_distance(self.geom, px, py) >= 0
        self.nu = self.geom.gap / params.Re
        self.newton = _Newton(self.grid, self.nu)
        self.iterations = 0
        self._mobility = None

    def _field(self, x, force) -> FlowField:
        fx, fy = force
        res = self.cfg.res
        px, py = node_positions(res, self.params.N)
        u = np.where(self.fluid_nodes, self.grid.sample_u(x, px, py), 0.0)
        v = np.where(self.fluid_nodes, self.grid.sample_v(x, px, py), 0.0)
        u, v = project_divergence_free(u, v, self.fluid_nodes, self.params.N)
        fld = FlowField(u, v, self.params, self.nu, force=fx, force_y=fy)
        return FlowField(u, v, self.params, self.nu, achieved_re=measure_reynolds(fld), force=fx, force_y=fy)

    def _stokes_mobility(self):
        """Mean velocities of the Stokes responses to unit axial and lateral forces."""
        if self._mobility is None:
            z = np.zeros(3 * self.grid.n)
            xs = [self.newton.step(z, f, inertia=False) for f in ((1.0, 0.0), (0.0, 1.0))]
            m = np.array([self.grid.mean_velocity(x) for x in xs]).T
            self._mobility = (m, xs)
        return self._mobility

    @property
    def lateral_ratio(self) -> float:
        """Lateral-to-axial force ratio giving zero mean lateral Stokes flow."""
        m, _ = self._stokes_mobility()
        return -m[1, 0] / m[1, 1]

    def solve_at_force(self, force: float, inertia: bool = True) -> FlowField:
        """Steady field for a fixed axial force, without the drive loop.

        The lateral component keeps the Stokes ratio, so the field is exactly
        linear in ``force`` when inertia is negligible.
        """
        drive = (force, force * self.lateral_ratio)
        x = np.zeros(3 * self.grid.n)
        x, its = self.newton.run(x, drive, self.cfg, inertia)
        self.iterations = its
        return self._field(x, drive)

    def _flux_re(self, x) -> float:
        """Reynolds number from the exact MAC flux through one column of faces."""
        u = x[: self.grid.n].reshape(self.grid.nx, self.grid.ny)
        return float(u[0].sum() * self.grid.dy / self.nu)

    def solve(self) -> FlowField:
        cfg = self.cfg
        n2 = 2 * self.grid.n
        target = self.params.Re
        m, (x_ax, x_lat) = self._stokes_mobility()
        ratio = self.lateral_ratio
        # Stokes flow under unit axial drive sets the initial force and calibrates
        # the cheap flux-based Reynolds estimate against the gap-section value.
        x = x_ax + ratio * x_lat
        re1 = measure_reynolds(self._field(x, (1.0, ratio)))
        calib = re1 / self._flux_re(x)
        fx = target / re1
        fy = ratio * fx
        x = x * fx
        rel = np.inf
        for it in range(cfg.max_iters):
            x_new = self.newton.step(x, (fx, fy))
            rel = np.abs(x_new[:n2] - x[:n2]).max() / np.abs(x_new[:n2]).max()
            x = x_new
            if not np.isfinite(rel):
                break
            mu, mv = self.grid.mean_velocity(x)
            est = calib * self._flux_re(x)
            balanced = abs(mv) < cfg.lateral_tol * abs(mu)
            if rel < cfg.residual_tol and balanced and abs(est / target - 1.0) < cfg.re_tol:
                fld = self._field(x, (fx, fy))
                if abs(fld.achieved_re / target - 1.0) < cfg.re_tol:
                    self.iterations = it + 1
                    return fld
                calib = fld.achieved_re / self._flux_re(x)
                est = fld.achieved_re
            scale = (target / est) ** cfg.drive_gain
            fy = fy * scale - mv / m[1, 1]
            fx *= scale
        raise ConvergenceError("flow solve did not converge", rel)


def solve_channel(res: int, lower: float = 0.25, upper: float = 0.75, force: float = 1.0, nu: float = 1.0):
    """Plane Poiseuille self-test: fluid between two solid horizontal strips.

    Uses the same discretisation as :class:`FlowSolver` without the row
    shift.  Returns the cell-centre heights and the ``u`` profile on the
    column of faces at ``x = 0``.
    """
    grid = _MacGrid(res, res, 0, lambda x, y: (y < lower) | (y > upper))
    cfg = SolverConfig(res=max(res, 32))
    newton = _Newton(grid, nu)
    x, _ = newton.run(np.zeros(3 * grid.n), force, cfg)
    u = grid.face_grids(x)[0][0]
    return (np.arange(res) + 0.5) / res, u


def solve_flow(params: DldParams, cfg: SolverConfig | None = None) -> FlowField:
    """Converged steady field at ``params.Re`` on the mapped unit square."""
    return FlowSolver(params, cfg).solve()


# ---------------------------------------------------------------------------
# field files

# Stored in the sidecar when a configuration has no critical diameter.
NO_CRITICAL = None


def save_field(fld: FlowField, path, d_c=NO_CRITICAL, extra: dict | None = None) -> Path:
    """Raw little-endian float64 ``u`` plane then ``v`` plane, plus a JSON sidecar.

    ``d_c`` is always written; ``null`` marks a configuration without a
    critical diameter.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.concatenate([fld.u.ravel(), fld.v.ravel()]).astype("<f8")
    path.write_bytes(data.tobytes())
    p = fld.params
    meta = {
        "f": p.f,
        "N": p.N,
        "Re": p.Re,
        "res": fld.res,
        "achieved_re": fld.achieved_re,
        "nu": fld.nu,
        "force": fld.force,
        "force_y": fld.force_y,
        "d_c": None if d_c is None else float(d_c),
    }
    if extra:
        meta.update(extra)
    sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".json")


def load_field(path) -> tuple[FlowField, dict]:
    path = Path(path)
    meta = json.loads(sidecar(path).read_text())
    res = int(meta["res"])
    data = np.frombuffer(path.read_bytes(), dtype="<f8").astype(float)
    if data.size != 2 * res * res:
        raise ValueError(f"{path}: expected {2 * res * res} values, found {data.size}")
    params = DldParams(meta["f"], meta["N"], meta["Re"])
    nu = meta.get("nu") or params.g / params.Re
    fld = FlowField(
        data[: res * res].reshape(res, res),
        data[res * res :].reshape(res, res),
        params,
        nu,
        achieved_re=float(meta.get("achieved_re", float("nan"))),
        force=float(meta.get("force", float("nan"))),
        force_y=float(meta.get("force_y", 0.0)),
    )
    return fld, meta
