import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dld_forge.automation import (
    DesignRequest,
    DesignResult,
    Directive,
    InfeasibleError,
    RequestError,
    bandwidth,
    bw_grid,
    design,
    physical_dc,
    simulate_device,
    stability,
    verify,
    write_report,
)
from dld_forge.critical import critical_from_field
from dld_forge.surrogate import Dense, NetParams
from dld_forge.tracer import Mode, PlacementError


def linear_net(a, b_re=0.0, b_f=0.0):
    """Surrogate with d_c = a + b_f * f + b_re * Re exactly (inside the hull)."""
    layer = Dense(3, 1, "linear")
    layer.W[:, 0] = [b_f * 0.5, 0.0, b_re * (25 - 0.01)]
    layer.b[0] = a + b_f * 0.25 + b_re * 0.01
    return NetParams("fcnn", [[layer]])


def test_bandwidth_grid():
    g = bw_grid()
    assert len(g) == 50 and g[0] == 0.01 and g[-1] == 25


def test_constant_surrogate_is_flat():
    net = linear_net(0.1)
    assert bandwidth(net, 0.5, 5, 10.0) == 0
    assert stability(net, 0.5, 5, 10.0, 10.0) == 0


fs = st.floats(0.25, 0.75)
Ns = st.integers(3, 10)
Gs = st.floats(5, 40)


@settings(max_examples=50)
@given(fs, Ns, Gs, st.floats(-0.004, 0.004), st.floats(0.3, 24.7))
def test_linear_surrogate_figures(f, N, G, b, Re):
    net = linear_net(0.12, b)
    assert bandwidth(net, f, N, G) == pytest.approx(abs(b) * 24.99 * G / (1 - f), rel=1e-9, abs=1e-12)
    assert stability(net, f, N, Re, G) == pytest.approx(abs(b) * G / (1 - f), rel=1e-6, abs=1e-12)


def test_stability_edges_are_one_sided():
    net = linear_net(0.12, 0.003)
    for Re in (0.01, 0.2, 24.9, 25.0):
        s, flag = stability(net, 0.5, 5, Re, 10.0, with_flag=True)
        assert flag and s == pytest.approx(0.003 * 20, rel=1e-6)
    assert stability(net, 0.5, 5, 12.0, 10.0, with_flag=True)[1] is False


@settings(max_examples=30, deadline=None)
@given(fs, Ns, st.floats(0.01, 25), Gs, st.floats(0.1, 4))
def test_scale_equivariance(dnet, f, N, Re, G, k):
    assert physical_dc(0.2, f, k * G) == pytest.approx(k * physical_dc(0.2, f, G), rel=1e-12)
    assert bandwidth(dnet, f, N, k * G) == pytest.approx(k * bandwidth(dnet, f, N, G), rel=1e-12, abs=1e-300)
    assert stability(dnet, f, N, Re, k * G) == pytest.approx(k * stability(dnet, f, N, Re, G), rel=1e-12, abs=1e-300)


def test_stability_trend(dnet):
    # plateau (mid f, high N) is flatter than a high-f, low-N device at mid-range Re
    assert stability(dnet, 0.5, 9, 12.5, 10.0) < stability(dnet, 0.75, 3, 12.5, 10.0)


def test_request_validation():
    with pytest.raises(RequestError):
        DesignRequest(5, 5)
    with pytest.raises(RequestError):
        DesignRequest(5, 8, phi=1.5)
    with pytest.raises(RequestError):
        DesignRequest(5, 8, constraints={"G": "min"})
    with pytest.raises(RequestError):
        DesignRequest(5, 8, constraints={"f": 0.9})
    with pytest.raises(RequestError):
        DesignRequest(5, 8, constraints={"N": 4.5})
    with pytest.raises(RequestError):
        Directive.parse("largest")
    req = DesignRequest(5, 8, 1.0, {"f": "min", "N": 4, "Re": "fixed:2.5"})
    assert DesignRequest.from_dict(json.loads(json.dumps(req.to_dict()))) == req


@pytest.mark.parametrize("cons,check", [
    ({"f": "min"}, lambda r: r.f == 0.25),
    ({"f": "max"}, lambda r: r.f == 0.75),
    ({"N": "min"}, lambda r: r.N == 3),
    ({"Re": "max"}, lambda r: r.Re == 25),
    ({"N": 6, "Re": 3.0}, lambda r: r.N == 6 and r.Re == 3.0),
])
def test_design_with_synthetic_surrogate(cons, check):
    net = linear_net(0.1, 0.002, 0.05)
    req = DesignRequest(5, 8, 0.0, cons)
    res = design(req, net, pop_size=40, generations=10, seed=1)
    assert req.D1 < res.D_c < req.D2
    assert check(res)
    assert 5 <= res.G <= 40
    assert res.D_c == pytest.approx(physical_dc(res.d_c, res.f, res.G))
    assert all(req.D1 < a["D_c"] < req.D2 for a in res.archive)


def test_design_is_seed_deterministic():
    net = linear_net(0.1, 0.002, 0.05)
    req = DesignRequest(5, 8, 0.5)
    a = design(req, net, pop_size=24, generations=5, seed=3)
    b = design(req, net, pop_size=24, generations=5, seed=3)
    assert a.to_dict() == b.to_dict()


def test_infeasible_request():
    net = linear_net(0.01)  # at most 0.01 * 40 / 0.25 = 1.6 µm
    with pytest.raises(InfeasibleError) as info:
        design(DesignRequest(5, 8), net, pop_size=24, generations=3)
    assert info.value.best_dc < 5


def _hand_made(fld, G=10.0):
    p = fld.params
    res = critical_from_field(fld)
    D = float(physical_dc(res.d_c, p.f, G))
    return DesignResult(p.f, p.N, p.Re, G, D, 0.0, 0.0, False, res.d_c, [0.0, 0.0])


def test_verify_exact_copy_gives_zero(field_f05_n5):
    r = _hand_made(field_f05_n5)
    assert verify(r, field=field_f05_n5) == 0.0
    assert r.D_c_solver == r.D_c
    r.D_c *= 1.05
    assert verify(r, field=field_f05_n5) == pytest.approx(5.0, rel=1e-9)


def test_simulate_device_modes(field_f05_n5):
    r = _hand_made(field_f05_n5)
    big, small = 0.9 * r.G, 0.1 * r.G  # 0.9 and 0.1 of the gap
    runs = simulate_device(r, [big, small], periods=3, field=field_f05_n5)
    assert runs[0].mode == Mode.BUMPED and runs[1].mode == Mode.ZIGZAG
    # the first period settles the release transient
    assert np.allclose(runs[0].recurrence.advance[1:], 1.0, atol=1e-3)
    assert np.allclose(runs[1].recurrence.advance[1:], 0.0, atol=1e-3)
    with pytest.raises(PlacementError):
        simulate_device(r, [1.1 * r.G], periods=1, field=field_f05_n5)
    with pytest.raises(RequestError):
        simulate_device(r, [big], periods=0, field=field_f05_n5)


def test_report_bundle(tmp_path, field_f05_n5):
    r = _hand_made(field_f05_n5)
    r.archive = [{"f": r.f, "N": r.N, "Re": r.Re, "G": r.G, "D_c": r.D_c, "BW": 0.0, "stability": 0.0, "objectives": [0.0, 0.0]}]
    runs = simulate_device(r, [0.9 * r.G], periods=1, field=field_f05_n5)
    write_report(r, tmp_path, net=linear_net(0.2, 0.001), runs=runs)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"result.json", "pareto.csv", "dc_vs_re.csv", "dc_vs_re.svg", "trajectories.svg"} <= names
    assert any(n.startswith("trajectory_D") for n in names) and any(n.startswith("recurrence_") for n in names)
    back = DesignResult.from_dict(json.loads((tmp_path / "result.json").read_text()))
    assert back.D_c == r.D_c
    rows = list(csv.reader((tmp_path / "dc_vs_re.csv").open()))
    assert len(rows) == 51
    assert (tmp_path / "dc_vs_re.svg").read_text().startswith("<svg")
