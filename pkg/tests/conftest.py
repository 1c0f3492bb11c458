"""Shared fixtures.

The desk dataset (288 solver runs at res 64) and the trained networks are
expensive, so they are built once and cached under ``.cache/`` in the
repository root (override with ``DLD_FORGE_CACHE``).  Delete the directory to
force a rebuild.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from dld_forge.dataset import DatasetManifest, build_dataset, desk_grid, split
from dld_forge.flow import SolverConfig, solve_flow
from dld_forge.geometry import DldParams
from dld_forge.surrogate import (
    FCNN_SCHEDULE,
    TrainConfig,
    cnn_build,
    cnn_train,
    fcnn_build,
    fcnn_train,
    load_net,
    save_net,
)

CACHE = Path(os.environ.get("DLD_FORGE_CACHE", Path(__file__).resolve().parents[1] / ".cache"))

# Field network used by the acceptance suite: res 32, 64 filters.
FIELD_NET_SCHEDULE = [(40, 2e-3), (20, 2e-4)]


def desk_manifest() -> DatasetManifest:
    path = CACHE / "desk-r64" / "manifest.json"
    if path.exists():
        return DatasetManifest.load_file(path)
    man = build_dataset(desk_grid(), path.parent, jobs=os.cpu_count())
    split(man, 0.2, seed=0)
    man.save()
    return man


def direct_net():
    path = CACHE / "direct.net"
    if path.exists():
        return load_net(path)
    net = fcnn_build(seed=0)
    fcnn_train(net, desk_manifest(), TrainConfig(64, FCNN_SCHEDULE, seed=0))
    save_net(net, path)
    return net


def field_net():
    path = CACHE / "field.net"
    if path.exists():
        return load_net(path)
    net = cnn_build(res=32, base_filters=64, seed=0)
    cnn_train(net, desk_manifest(), TrainConfig(64, FIELD_NET_SCHEDULE, seed=0))
    save_net(net, path)
    return net


@pytest.fixture(scope="session")
def desk():
    return desk_manifest()


@pytest.fixture(scope="session")
def dnet(desk):
    return direct_net()


@pytest.fixture(scope="session")
def fnet(desk):
    return field_net()


@pytest.fixture(scope="session")
def field_f05_n5():
    """Converged field at f=0.5, N=5, Re=0.1 (res 64)."""
    return solve_flow(DldParams(0.5, 5, 0.1), SolverConfig(res=64))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# one pass/fail line per acceptance criterion at the end of the run

_CRITERIA: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        _CRITERIA[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_CRITERIA):
        name = nodeid.split("::test_criterion_")[1]
        number, _, title = name.partition("_")
        verdict = "PASS" if _CRITERIA[nodeid] == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {int(number):2d} {title.replace('_', ' '):<24} {verdict}")
