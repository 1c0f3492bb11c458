"""Configuration sweeps, labelled datasets, splits and augmentation.

A dataset lives in one directory: ``manifest.json``, a ``fields/`` folder of
raw velocity files with JSON sidecars, and ``failures.csv`` listing every
configuration that could not be processed.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .critical import DEFAULT_PERIODS, DEFAULT_TOL, critical_from_field
from .walls import wall_distance_field
from .flow import FlowField, SolverConfig, interpolate_velocity, load_field, save_field, solve_flow
from .geometry import RE_MAX, RE_MIN, DldParams, unit_cell

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


class ArgumentError(ValueError):
    """Empty or malformed sweep grid description."""


@dataclass(frozen=True)
class Span:
    """Inclusive arithmetic range ``start, start + step, ... <= stop``."""

    start: float
    stop: float
    step: float

    def values(self) -> list[float]:
        if not self.step > 0:
            raise ArgumentError("step must be positive")
        n = int(np.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [round(self.start + k * self.step, 10) for k in range(max(n, 0))]


# Sweep values.
FULL_F = Span(0.25, 0.75, 0.02)
FULL_N = (3, 4, 5, 6, 7, 8, 9, 10)
FULL_RE = (0.01, 0.1, 1, 2.5, 5, 7.5, 10, 15, 20, 25)
TEST_F = Span(0.25, 0.75, 0.06)
TEST_N = (3, 4, 5, 6)
TEST_RE = (0.05, 1.5, 6.5, 8.5, 12.5, 18.5)
FULL_FINE_RE_STEP = 0.499

# Desk-scale sub-grid: 6 f x 8 N x 6 Re = 288 configurations.
DESK_F = (0.25, 0.35, 0.45, 0.55, 0.65, 0.75)
DESK_N = FULL_N
DESK_RE = (0.01, 1, 5, 10, 15, 25)
DESK_SOLVER_RES = 64


@dataclass
class DataRecord:
    f: float
    N: int
    Re: float
    field: str | None
    d_c: float | None
    source: str = "solver"
    split: str = "train"
    achieved_re: float | None = None
    evaluations: int = 0

    @property
    def params(self) -> DldParams:
        return DldParams(self.f, self.N, self.Re)


@dataclass
class DatasetManifest:
    records: list[DataRecord] = field(default_factory=list)
    split_seed: int | None = None
    root: str | None = None
    failures: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def select(self, split: str | None = None, labelled: bool = False) -> list[DataRecord]:
        out = [r for r in self.records if split is None or r.split == split]
        if labelled:
            out = [r for r in out if r.d_c is not None]
        return out

    def direct_arrays(self, split: str = "train"):
        """``(X, d_c)`` for records with a critical diameter."""
        recs = self.select(split, labelled=True)
        x = np.array([[r.f, r.N, r.Re] for r in recs], dtype=float).reshape(-1, 3)
        y = np.array([r.d_c for r in recs], dtype=float)
        return x, y

    def field_arrays(self, split: str = "train", res: int = 32):
        """``(X, U, V)`` with velocity planes resampled to ``res``."""
        recs = [r for r in self.select(split) if r.field]
        x = np.array([[r.f, r.N, r.Re] for r in recs], dtype=float).reshape(-1, 3)
        u = np.zeros((len(recs), res, res))
        v = np.zeros((len(recs), res, res))
        for i, r in enumerate(recs):
            fld = self.load(r)
            u[i], v[i] = resample(fld, res)
        return x, u, v

    def load(self, rec: DataRecord) -> FlowField:
        path = Path(self.root or ".") / rec.field
        return load_field(path)[0]

    # -- persistence ------------------------------------------------------------
    def to_json(self) -> str:
        body = {
            "version": MANIFEST_VERSION,
            "split_seed": self.split_seed,
            "meta": self.meta,
            "counts": self.counts(),
            "records": [asdict(r) for r in self.records],
            "failures": self.failures,
        }
        return json.dumps(body, indent=1, sort_keys=True)

    def save(self, path=None) -> Path:
        path = Path(path) if path else Path(self.root) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load_file(cls, path) -> "DatasetManifest":
        path = Path(path)
        body = json.loads(path.read_text())
        recs = [DataRecord(**r) for r in body["records"]]
        return cls(recs, body.get("split_seed"), str(path.parent), body.get("failures", []), body.get("meta", {}))

    def counts(self) -> dict:
        out: dict = {"total": len(self.records), "labelled": sum(r.d_c is not None for r in self.records)}
        for r in self.records:
            out[r.split] = out.get(r.split, 0) + 1
        out["failures"] = len(self.failures)
        return out


def resample(fld: FlowField, res: int) -> tuple[np.ndarray, np.ndarray]:
    """Velocity planes on a ``res x res`` node grid of the mapped square."""
    if fld.res == res:
        return fld.u, fld.v
    if fld.res % res == 0:
        k = fld.res // res
        return fld.u[::k, ::k].copy(), fld.v[::k, ::k].copy()
    s = np.arange(res) / res
    xm, ym = np.meshgrid(s, s)
    vel = interpolate_velocity(fld, np.stack([xm, ym], axis=-1))
    return vel[..., 0], vel[..., 1]


# ---------------------------------------------------------------------------
# grids


def _values(spec) -> list[float]:
    if spec is None:
        raise ArgumentError("empty grid description")
    if isinstance(spec, Span):
        return spec.values()
    if isinstance(spec, str) and ":" in spec:
        return Span(*(float(t) for t in spec.split(":"))).values()
    return list(spec)


def generate_grid(f_spec, N_set, Re_set) -> list[DldParams]:
    """Cartesian product in f-major, then N, then Re order."""
    fs = _values(f_spec)
    ns = _values(N_set)
    res_ = _values(Re_set)
    if not fs or not ns or not res_:
        raise ArgumentError("every sweep dimension needs at least one value")
    return [DldParams(f, n, re) for f in fs for n in ns for re in res_]


def full_grid() -> list[DldParams]:
    return generate_grid(FULL_F, FULL_N, FULL_RE)


def test_grid() -> list[DldParams]:
    return generate_grid(TEST_F, TEST_N, TEST_RE)


def desk_grid() -> list[DldParams]:
    return generate_grid(DESK_F, DESK_N, DESK_RE)


def fine_re_values(step: float) -> np.ndarray:
    """Evenly spaced Re over the hull with spacing as close to ``step`` as possible."""
    n = max(2, int(round((RE_MAX - RE_MIN) / step)))
    return np.linspace(RE_MIN, RE_MAX, n)


# ---------------------------------------------------------------------------
# building


@dataclass(frozen=True)
class BuildConfig:
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(res=DESK_SOLVER_RES))
    tol: float = DEFAULT_TOL
    n_periods: int = DEFAULT_PERIODS
    wall_res: int = 256


def record_name(p: DldParams) -> str:
    return f"f{p.f:.4f}_N{p.N}_Re{p.Re:.4f}.bin"


def _process(args):
    """Solve, extract ``d_c`` and persist one configuration (runs in a worker)."""
    p, root, cfg = args
    try:
        fld = solve_flow(p, cfg.solver)
        wf = wall_distance_field(unit_cell(p), cfg.wall_res)
        res = critical_from_field(fld, wf, tol=cfg.tol, n_periods=cfg.n_periods)
        rel = Path("fields") / record_name(p)
        save_field(fld, Path(root) / rel, res.d_c, {"evaluations": res.evaluations, "source": "solver"})
        return DataRecord(p.f, p.N, p.Re, str(rel), res.d_c, "solver", "train", fld.achieved_re, res.evaluations), None
    except Exception as exc:  # recorded, never dropped
        reason = f"{type(exc).__name__}: {exc}"
        if hasattr(exc, "diameter"):
            reason += f" (diameter {exc.diameter})"
        return None, {"f": p.f, "N": p.N, "Re": p.Re, "reason": reason}


def worker_count(jobs: int | None) -> int:
    cap = os.environ.get("DLD_FORGE_THREADS")
    n = jobs or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def build_dataset(configs, root, cfg: BuildConfig | None = None, jobs: int | None = 1) -> DatasetManifest:
    """Run the solver and critical-diameter extraction for every configuration."""
    cfg = cfg or BuildConfig()
    root = Path(root)
    configs = list(configs)
    man = DatasetManifest(root=str(root), meta={"solver_res": cfg.solver.res, "tol": cfg.tol, "n_periods": cfg.n_periods})
    if not configs:
        return man
    root.mkdir(parents=True, exist_ok=True)
    tasks = [(p, str(root), cfg) for p in configs]
    n = worker_count(jobs)
    if n == 1:
        results = [_process(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_process, tasks))
    for rec, fail in results:
        if rec is not None:
            man.records.append(rec)
        else:
            man.failures.append(fail)
    write_failures(man, root / "failures.csv")
    man.save()
    return man


def write_failures(man: DatasetManifest, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f", "N", "Re", "reason"])
        for row in man.failures:
            w.writerow([repr(row["f"]), row["N"], repr(row["Re"]), row["reason"]])
    return path


def split(man: DatasetManifest, dev_fraction: float = 0.2, seed: int = 0) -> DatasetManifest:
    """Assign train/dev to every non-test record; exactly ``round(n * dev_fraction)`` go to dev."""
    if not 0 < dev_fraction < 1:
        raise ArgumentError("dev_fraction must lie in (0, 1)")
    pool = [i for i, r in enumerate(man.records) if r.split != "test"]
    n_dev = int(round(len(pool) * dev_fraction))
    rng = np.random.default_rng(seed)
    dev = set(np.array(pool)[rng.permutation(len(pool))[:n_dev]].tolist()) if pool else set()
    for i in pool:
        man.records[i].split = "dev" if i in dev else "train"
    man.split_seed = seed
    return man


def merge(*mans: DatasetManifest, root=None) -> DatasetManifest:
    out = DatasetManifest(root=root or mans[0].root)
    for m in mans:
        out.records.extend(m.records)
        out.failures.extend(m.failures)
    return out


# ---------------------------------------------------------------------------
# augmentation


class AugmentationRejected(RuntimeError):
    """The field network produced an implausible field."""


def augment(field_net, base_pairs, fine_re_step: float = FULL_FINE_RE_STEP, root=None, cfg: BuildConfig | None = None):
    """Label a fine Re grid with ``d_c`` extracted from network-generated fields.

    ``base_pairs`` are ``(f, N)`` tuples (or params, whose Re is ignored).
    Fields faster than ten times the training maximum are rejected.
    """
    from .surrogate import cnn_predict_field

    cfg = cfg or BuildConfig()
    pairs = []
    for item in base_pairs:
        f, n = (item.f, item.N) if isinstance(item, DldParams) else item
        if (f, n) not in pairs:
            pairs.append((f, n))
    limit = 10.0 * field_net.training_meta.get("train_max_speed", np.inf)
    man = DatasetManifest(root=str(root) if root else None, meta={"source": "augmented", "fine_re_step": fine_re_step})
    for f, n in pairs:
        for re in fine_re_values(fine_re_step):
            p = DldParams(f, n, float(re))
            try:
                fld = cnn_predict_field(field_net, p)
                if not np.isfinite(fld.max_speed) or fld.max_speed > limit:
                    raise AugmentationRejected(f"predicted speed {fld.max_speed:.3g} exceeds {limit:.3g}")
                wf = wall_distance_field(unit_cell(p), cfg.wall_res)
                res = critical_from_field(fld, wf, tol=cfg.tol, n_periods=cfg.n_periods)
                rel = None
                if root:
                    rel = str(Path("augmented") / record_name(p))
                    save_field(fld, Path(root) / rel, res.d_c, {"source": "augmented"})
                man.records.append(DataRecord(p.f, p.N, p.Re, rel, res.d_c, "augmented", "train", fld.achieved_re, res.evaluations))
            except Exception as exc:
                man.failures.append({"f": p.f, "N": p.N, "Re": p.Re, "reason": f"{type(exc).__name__}: {exc}"})
    if root:
        write_failures(man, Path(root) / "failures_augmented.csv")
        man.save(Path(root) / "manifest_augmented.json")
    return man
