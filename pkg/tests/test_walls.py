import numpy as np
import pytest

from dld_forge.geometry import DldParams, signed_distance, unit_cell
from dld_forge.walls import DegenerateNormalError, dump_wall_field, wall_distance, wall_distance_field, wall_normal_tangent


@pytest.fixture(scope="module")
def wf():
    return wall_distance_field(unit_cell(DldParams(0.5, 5, 1)), 256)


def test_analytic_examples(wf):
    g = wf.geometry
    cx, cy = g.center
    assert signed_distance(g, cx, cy) == pytest.approx(-0.25)
    assert wall_distance(wf, (cx, cy)) == pytest.approx(-0.25, abs=2 / wf.res)
    p = (cx + 0.4 * np.cos(0.3), cy + 0.4 * np.sin(0.3))
    assert signed_distance(g, *p) == pytest.approx(0.15, abs=1e-12)
    n, _ = wall_normal_tangent(wf, p)
    assert np.allclose(n, (np.cos(0.3), np.sin(0.3)), atol=5e-3)


def test_normals_right_and_above(wf):
    cx, cy = wf.geometry.center
    n, t = wall_normal_tangent(wf, (cx + 0.3, cy))
    assert np.allclose(n, (1, 0), atol=1e-3) and np.allclose(t, (0, 1), atol=1e-3)
    n, t = wall_normal_tangent(wf, (cx, cy + 0.3))
    assert np.allclose(n, (0, 1), atol=1e-3) and np.allclose(t, (-1, 0), atol=1e-3)
    assert n @ t == 0.0


def test_brute_force_boundary_sampling(rng):
    g = unit_cell(DldParams(0.4, 4, 1))
    theta = np.linspace(0, 2 * np.pi, 3600, endpoint=False)
    ring = np.concatenate([c + g.pillar_radius_unit * np.column_stack([np.cos(theta), np.sin(theta)]) for c in g.pillar_centers])
    pts = g.center + rng.uniform(-0.5, 0.5, (1000, 2))
    brute = np.min(np.linalg.norm(pts[:, None, :] - ring[None, :, :], axis=2), axis=1)
    ours = signed_distance(g, pts[:, 0], pts[:, 1])
    outside = ours > 0
    assert np.abs(ours[outside] - brute[outside]).max() < 1e-3


def test_unit_normals_and_eikonal(wf):
    fluid = wf.dist > 2 / wf.res
    mag = np.hypot(wf.normal_x, wf.normal_y)
    assert np.abs(mag[fluid] - 1).max() < 1e-6
    # finite-difference gradient of dist in physical coordinates away from the medial axis
    h = 1.0 / wf.res
    d = wf.dist
    dx_m = (np.roll(d, -1, 1) - np.roll(d, 1, 1)) / (2 * h)
    dy_m = (np.roll(d, -1, 0) - np.roll(d, 1, 0)) / (2 * h)
    N = wf.geometry.N
    gx, gy = dx_m - dy_m / N, dy_m  # chain rule through the shear map
    grad = np.hypot(gx, gy)
    near = (d > 0.01) & (d < 0.12)
    assert np.abs(grad[near] - 1).max() < 0.05


def test_surface_zero_level(wf):
    cx, cy = wf.geometry.center
    r = wf.geometry.pillar_radius_unit
    theta = np.linspace(0, 2 * np.pi, 50)
    pts = np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta)])
    assert np.abs(wall_distance(wf, pts)).max() < 1.0 / wf.res


def test_periodicity_and_symmetry(wf, rng):
    g = wf.geometry
    pts = rng.uniform(0, 1, (500, 2))
    d0 = wall_distance(wf, pts)
    for a in g.lattice_vectors:
        assert np.abs(wall_distance(wf, pts + np.array(a)) - d0).max() < 1e-12
    c = g.center
    s = signed_distance(g, pts[:, 0], pts[:, 1])
    m = 2 * c - pts
    assert np.abs(signed_distance(g, m[:, 0], m[:, 1]) - s).max() < 1e-12


def test_degenerate_normal(wf):
    with pytest.raises(DegenerateNormalError):
        wall_normal_tangent(wf, wf.geometry.center)


def test_dump(tmp_path, wf):
    path = dump_wall_field(wf, tmp_path / "w.bin")
    assert np.array_equal(np.frombuffer(path.read_bytes(), "<f8").reshape(wf.res, wf.res), wf.dist)
