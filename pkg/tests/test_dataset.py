import csv
from types import SimpleNamespace

import numpy as np
import pytest

from dld_forge import surrogate
from dld_forge.dataset import (
    FULL_FINE_RE_STEP,
    ArgumentError,
    BuildConfig,
    DatasetManifest,
    DataRecord,
    Span,
    augment,
    build_dataset,
    desk_grid,
    fine_re_values,
    full_grid,
    generate_grid,
    merge,
    split,
    test_grid as held_out_grid,
)
from dld_forge.flow import FlowField, SolverConfig
from dld_forge.geometry import DldParams


def test_grid_counts():
    assert len(Span(0.25, 0.75, 0.02).values()) == 26
    assert len(full_grid()) == 2080
    assert len(held_out_grid()) == 216
    assert len(desk_grid()) == 288
    assert len(fine_re_values(FULL_FINE_RE_STEP)) == 50
    assert 26 * 8 * len(fine_re_values(FULL_FINE_RE_STEP)) == 10400


def test_grid_order_and_errors():
    g = generate_grid([0.3, 0.4], [3, 4], [1, 2])
    assert [(p.f, p.N, p.Re) for p in g[:3]] == [(0.3, 3, 1), (0.3, 3, 2), (0.3, 4, 1)]
    assert generate_grid("0.25:0.75:0.25", [5], [1])[-1].f == 0.75
    with pytest.raises(ArgumentError):
        generate_grid([], [3], [1])
    with pytest.raises(ArgumentError):
        generate_grid(None, [3], [1])


def _fake_manifest(n):
    return DatasetManifest([DataRecord(0.5, 5, 1.0 + i * 0.01, None, 0.2) for i in range(n)])


def test_split_sizes_and_determinism():
    m = split(_fake_manifest(10))
    assert m.counts()["dev"] == 2 and m.counts()["train"] == 8
    a = split(_fake_manifest(2080), seed=7)
    b = split(_fake_manifest(2080), seed=7)
    assert a.counts()["dev"] == 416
    assert [r.split for r in a.records] == [r.split for r in b.records]
    c = _fake_manifest(5)
    c.records[0].split = "test"
    split(c, 0.5)
    assert c.records[0].split == "test"
    with pytest.raises(ArgumentError):
        split(_fake_manifest(3), 1.0)


def test_empty_build(tmp_path):
    m = build_dataset([], tmp_path / "empty")
    assert len(m) == 0 and not m.failures


CFG = BuildConfig(solver=SolverConfig(res=64))


def test_single_config_build_round_trip(tmp_path):
    p = DldParams(0.5, 5, 1.0)
    m = build_dataset([p], tmp_path / "a", CFG)
    assert len(m) == 1 and not m.failures
    rec = m.records[0]
    assert rec.d_c is not None and 0.1 * p.g < rec.d_c < 0.95 * p.g
    back = DatasetManifest.load_file(tmp_path / "a" / "manifest.json")
    assert back.records == m.records
    fld = back.load(back.records[0])
    assert fld.params == p and abs(fld.achieved_re / 1.0 - 1) < 0.01
    # a second build of the same configuration is byte-identical
    build_dataset([p], tmp_path / "b", CFG)
    name = rec.field
    assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_failures_are_recorded(tmp_path):
    bad = BuildConfig(solver=SolverConfig(res=32, max_iters=1))
    m = build_dataset([DldParams(0.5, 4, 20.0)], tmp_path, bad)
    assert len(m) == 0 and len(m.failures) == 1
    rows = list(csv.reader((tmp_path / "failures.csv").open()))
    assert rows[0] == ["f", "N", "Re", "reason"] and "ConvergenceError" in rows[1][3]


def test_merge_keeps_everything():
    a, b = _fake_manifest(3), _fake_manifest(4)
    b.failures.append({"f": 0.5, "N": 5, "Re": 1, "reason": "x"})
    m = merge(a, b)
    assert len(m) == 7 and len(m.failures) == 1


def test_augment_single_pair(monkeypatch, field_f05_n5):
    base = field_f05_n5

    def fake(net, p):
        return FlowField(base.u, base.v, p, p.g / p.Re)

    monkeypatch.setattr(surrogate, "cnn_predict_field", fake)
    net = SimpleNamespace(training_meta={"train_max_speed": base.max_speed})
    m = augment(net, [(0.5, 5), (0.5, 5)], fine_re_step=5.0)
    assert len(m) == 5 and not m.failures
    assert {r.source for r in m.records} == {"augmented"}
    assert np.allclose([r.Re for r in m.records], np.linspace(0.01, 25, 5))
    assert len({r.d_c for r in m.records}) == 1

    def wild(net, p):
        return FlowField(100 * base.u, 100 * base.v, p, p.g / p.Re)

    monkeypatch.setattr(surrogate, "cnn_predict_field", wild)
    m = augment(net, [DldParams(0.5, 5, 3.0)], fine_re_step=5.0)
    assert len(m) == 0 and len(m.failures) == 5
    assert all("AugmentationRejected" in f["reason"] for f in m.failures)
