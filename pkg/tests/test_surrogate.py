import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dld_forge.geometry import DldParams
from dld_forge.surrogate import (
    FCNN_SCHEDULE,
    Conv3x3,
    Dense,
    ExtrapolationError,
    NetParams,
    PerInputDense,
    Reshape,
    ShapeError,
    TrainConfig,
    TrainingError,
    Upsample2,
    cnn_build,
    cnn_param_counts,
    cnn_predict_field,
    cnn_predict_planes,
    fcnn_build,
    fcnn_param_count,
    fcnn_predict,
    fcnn_predict_batch,
    fcnn_train,
    gradient_check,
    load_net,
    save_net,
)
from dld_forge.surrogate.model import HULL


def test_fcnn_parameter_counts():
    assert fcnn_param_count(4, 10) == 381
    assert fcnn_build(4, 10).param_count() == 381
    assert fcnn_build().param_count() == fcnn_param_count(8, 128) == 116225
    desc = fcnn_build().describe()[0]
    assert [d["out"] for d in desc] == [128] * 8 + [1]
    assert desc[-1]["act"] == "linear" and desc[0]["act"] == "relu"
    with pytest.raises(ValueError):
        fcnn_build(0, 10)


def test_zero_weights_give_biases():
    net = fcnn_build(3, 8, seed=None)
    net.branches[0][-1].b[:] = 0.3
    z = np.random.default_rng(0).random((5, 3))
    assert np.array_equal(net.forward(z)[0], np.full((5, 1), 0.3))
    cnn = cnn_build(32, 16, seed=None)
    cnn.branches[0][-1].b[:] = 0.5
    u, v = cnn.forward(z)
    assert np.all(u == 0.5) and np.all(v == 0.0) and u.shape == (5, 32, 32, 1)


def test_cnn_shapes_and_counts():
    for res in (32, 64, 128):
        net = cnn_build(res, 16, dense_width=32)
        u, v = cnn_predict_planes(net, [[0.5, 5, 1.0], [0.3, 4, 2.0]])
        assert u.shape == v.shape == (2, res, res)
    with pytest.raises(ShapeError):
        cnn_build(48)
    net = cnn_build(32)
    counts = cnn_param_counts(net)
    assert counts["both_branches"] == 2 * counts["per_branch"]
    shared = cnn_build(32, shared_trunk=True)
    assert cnn_param_counts(shared)["both_branches"] < counts["both_branches"]
    desc = net.describe()[0]
    assert [d["type"] for d in desc[:4]] == ["dense"] * 3 + ["concatenate"]
    assert desc[3]["out"] == 48
    assert {"type": "reshape", "out": [4, 4, 64]} in desc
    assert sum(d["type"] == "upsample" for d in desc) == 3


def _tiny_net(shared=False):
    rng = np.random.default_rng(1)

    def branch():
        return [PerInputDense(3, 4, "relu", rng), Dense(12, 8, "relu", rng), Reshape((2, 2, 2)),
                Conv3x3(2, 3, "relu", rng), Upsample2(), Conv3x3(3, 1, "linear", rng)]

    b0 = branch()
    b1 = branch()[2:] if shared else branch()
    for layer in b0 + b1:  # keep ReLUs away from their kinks
        if hasattr(layer, "b"):
            layer.b += 0.1
    return NetParams("test", [b0, b1], output_scale=[1.0, 1.0], shared_trunk=2 if shared else 0)


@pytest.mark.parametrize("shared", [False, True])
def test_gradient_check_every_layer_type(shared):
    net = _tiny_net(shared)
    rng = np.random.default_rng(2)
    z = rng.random((4, 3))
    t = [rng.normal(size=(4, 4, 4, 1)) for _ in range(2)]
    worst, rows = gradient_check(net, z, t, n_coords=net.param_count())
    assert worst < 1e-5
    assert len(rows) == net.param_count()


def test_gradient_check_fcnn():
    net = fcnn_build(3, 16, seed=4)
    rng = np.random.default_rng(5)
    worst, _ = gradient_check(net, rng.random((12, 3)), [rng.random((12, 1))], n_coords=100)
    assert worst < 1e-5


hull_point = st.tuples(*(st.floats(a, b) for a, b in HULL))


@given(hull_point)
def test_normalisation_round_trip(x):
    net = fcnn_build(1, 2)
    z = net.normalize([x])
    assert np.all((z >= 0) & (z <= 1))
    assert np.allclose(net.denormalize(z)[0], x, rtol=0, atol=1e-12)


def test_extrapolation_error():
    net = fcnn_build(1, 2)
    with pytest.raises(ExtrapolationError):
        net.normalize([[0.9, 5, 1]])
    with pytest.raises(ExtrapolationError):
        fcnn_predict_batch(net, [[0.5, 5, 40.0]])


@given(st.floats(-5, 5), hull_point)
def test_prediction_clamped_into_gap(bias, x):
    net = fcnn_build(1, 2, seed=None)
    net.branches[0][-1].b[:] = bias
    d = fcnn_predict_batch(net, [x])[0]
    assert 0 < d < 1 - x[0]


def test_save_load_bit_identical(tmp_path):
    for net in (fcnn_build(2, 8, seed=3), cnn_build(32, 16, dense_width=16, seed=3)):
        net.output_scale = [0.7] * len(net.branches)
        path = save_net(net, tmp_path / f"{net.kind}.net")
        header = json.loads(path.read_bytes().split(b"\n", 1)[0])
        assert header["format"] == "dld-forge-net/1" and header["kind"] == net.kind
        back = load_net(path)
        x = [[0.4, 6, 3.0]]
        for a, b in zip(net.predict_raw(x), back.predict_raw(x)):
            assert np.array_equal(a, b)


def test_seeded_training_is_reproducible(rng):
    x = np.column_stack([rng.uniform(0.25, 0.75, 20), rng.integers(3, 11, 20), rng.uniform(0.01, 25, 20)])
    y = 0.3 * (1 - x[:, 0])
    cfg = TrainConfig(8, [(20, 1e-3)], seed=11)
    a = fcnn_train(fcnn_build(2, 16, seed=0), (x, y), cfg)
    b = fcnn_train(fcnn_build(2, 16, seed=0), (x, y), cfg)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
    assert np.array_equal(a.training_meta["losses"], b.training_meta["losses"], equal_nan=True)


def test_divergence_raises_training_error():
    x = np.array([[0.5, 5, 1.0], [0.4, 4, 2.0]])
    with pytest.raises(TrainingError) as info:
        fcnn_train(fcnn_build(1, 4), (x, np.array([np.nan, 0.1])), TrainConfig(2, [(3, 1e-3)]))
    assert info.value.epoch == 0


def test_ten_record_overfit(desk):
    x, y = desk.direct_arrays("train")
    x, y = x[:10], y[:10]
    net = fcnn_train(fcnn_build(), (x, y), TrainConfig(10, [(5000, FCNN_SCHEDULE[0][1])], target_loss=1e-5))
    assert net.training_meta["losses"][-1][1] < 1e-5
    assert net.training_meta["epochs"] <= 5000


def test_trained_direct_net(dnet, desk):
    x, y = desk.direct_arrays("train")
    pred = fcnn_predict_batch(dnet, x)
    assert np.mean((pred - y) ** 2) < 1e-3
    p = DldParams(*x[0])
    assert fcnn_predict(dnet, p) == pytest.approx(pred[0], rel=1e-12)


def test_direct_net_dev_within_ten_times_train(dnet):
    last = dnet.training_meta["losses"][-1]
    assert last[2] < 10 * last[1]


def test_direct_net_f_trend(dnet):
    # at N=3, Re=1 the gap-relative critical diameter grows from f=0.3 to f=0.7
    lo = fcnn_predict(dnet, DldParams(0.3, 3, 1.0)) / 0.7
    hi = fcnn_predict(dnet, DldParams(0.7, 3, 1.0)) / 0.3
    assert hi > lo


def test_field_net_prediction_is_deterministic(fnet):
    p = DldParams(0.5, 5, 1.0)
    a, b = cnn_predict_field(fnet, p), cnn_predict_field(fnet, p)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)
    assert a.params == p and np.isfinite(a.achieved_re)
