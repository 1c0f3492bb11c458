import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dld_forge.geometry import (
    DldParams,
    DomainError,
    RangeError,
    map_from_unit,
    map_to_unit,
    signed_distance,
    unit_cell,
)

coord = st.floats(-10, 10, allow_nan=False)
lengths = st.floats(0.1, 10)
periods = st.integers(1, 12)


def test_unit_cell_radius_and_lattice():
    assert unit_cell(DldParams(0.5, 5, 1)).pillar_radius_unit == 0.25
    g = unit_cell(DldParams(0.25, 10, 1))
    assert g.pillar_radius_unit == 0.125
    assert g.lattice_vectors[0] == pytest.approx((1.0, 0.1))
    assert g.lattice_vectors[1] == (0.0, 1.0)
    assert unit_cell(DldParams(0.75, 3, 1)).gap == pytest.approx(0.25)


def test_pillar_images():
    g = unit_cell(DldParams(0.4, 4, 1))
    assert g.pillar_centers.shape == (9, 2)
    a1, a2 = (np.array(v) for v in g.lattice_vectors)
    assert np.allclose(g.pillar_centers[1:] - g.center, [i * a1 + j * a2 for i in (-1, 0, 1) for j in (-1, 0, 1) if (i, j) != (0, 0)])


@pytest.mark.parametrize(
    "kw",
    [dict(f=0.2, N=5, Re=1), dict(f=0.8, N=5, Re=1), dict(f=0.5, N=2, Re=1), dict(f=0.5, N=11, Re=1),
     dict(f=0.5, N=4.5, Re=1), dict(f=0.5, N=5, Re=0.001), dict(f=0.5, N=5, Re=30), dict(f=0.5, N=5, Re=1, G=0)],
)
def test_params_out_of_range(kw):
    with pytest.raises(RangeError):
        DldParams(**kw)


def test_map_examples():
    assert np.allclose(map_to_unit((0, 0), 7, 3.0), (0, 0))
    L = 2.0
    assert np.allclose(map_to_unit((L, 0), 5, L), (1, -0.2))
    assert np.allclose(map_to_unit((L, L / 5), 5, L), (1, 0))
    assert np.allclose(map_from_unit((1, -0.2), 5, 1), (1, 0))
    assert np.allclose(map_from_unit((0, 0), 5, 1), (0, 0))


def test_map_rejects_bad_length():
    with pytest.raises(DomainError):
        map_to_unit((1, 1), 5, 0.0)
    with pytest.raises(DomainError):
        map_from_unit((1, 1), 5, -1.0)


def test_round_trip_many_points(rng):
    L = 1.7
    p = rng.uniform(-10 * L, 10 * L, (1000, 2))
    back = map_from_unit(map_to_unit(p, 6, L), 6, L)
    assert np.abs(back - p).max() < 1e-12


@given(coord, coord, periods, lengths)
def test_round_trip_property(x, y, n, L):
    p = np.array([x * L, y * L])
    assert np.allclose(map_from_unit(map_to_unit(p, n, L), n, L), p, rtol=0, atol=1e-12 * max(1, L))


@given(coord, coord, coord, coord, st.floats(-3, 3), periods, lengths)
def test_map_is_affine(x1, y1, x2, y2, a, n, L):
    p, q = np.array([x1, y1]), np.array([x2, y2])
    lhs = map_to_unit(a * p + (1 - a) * q, n, L)
    rhs = a * map_to_unit(p, n, L) + (1 - a) * map_to_unit(q, n, L)
    assert np.allclose(lhs, rhs, atol=1e-9)


@given(periods, lengths)
def test_map_determinant(n, L):
    m = np.column_stack([map_to_unit((1, 0), n, L), map_to_unit((0, 1), n, L)])
    assert np.linalg.det(m) == pytest.approx(1 / L**2, rel=1e-12)


@settings(max_examples=50)
@given(st.floats(0.25, 0.75), st.integers(3, 10), coord, coord)
def test_signed_distance_is_lattice_periodic(f, n, x, y):
    g = unit_cell(DldParams(f, n, 1))
    d0 = signed_distance(g, x, y)
    for a in g.lattice_vectors:
        assert signed_distance(g, x + a[0], y + a[1]) == pytest.approx(d0, abs=1e-12)
