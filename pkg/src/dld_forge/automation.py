"""Design automation: separation requirements in, device recipe out.

The direct surrogate predicts the nondimensional critical diameter
``d_c(f, N, Re)`` (in pitch units).  A gap ``G`` in µm fixes the pitch at
``G / (1 - f)``, so the physical critical diameter is ``d_c * G / (1 - f)``.
NSGA-III searches ``(f, N, Re, G)`` with three kinds of objective:

1. distance of ``D_c`` from the middle of ``(D1, D2)``;
2. ``phi * (-BW) + (1 - phi) * stability``, trading flexibility (a wide
   bandwidth over the Re range) against stability (a small Re slope);
3. one extra objective per Min/Max directive pushing that parameter to its
   bound.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .critical import DEFAULT_PERIODS, DEFAULT_TOL, critical_from_field
from .flow import FlowField, SolverConfig, solve_flow
from .geometry import F_MAX, F_MIN, N_MAX, N_MIN, RE_MAX, RE_MIN, DldParams, unit_cell
from .optimizer import MooProblem, nsga3_run
from .surrogate import NetParams, cnn_predict_field, fcnn_predict_batch
from .tracer import Trajectory, RecurrenceMap, recurrence_map, release_point, trace, write_recurrence_csv, write_trajectory_csv
from .walls import wall_distance_field

G_MIN, G_MAX = 5.0, 40.0
BW_POINTS = 50
STABILITY_STEP = 0.25
PARAM_BOUNDS = {"f": (F_MIN, F_MAX), "N": (float(N_MIN), float(N_MAX)), "Re": (RE_MIN, RE_MAX)}
GENES = ("f", "N", "Re", "G")
DIRECTIVES = ("free", "min", "max", "fixed")


class RequestError(ValueError):
    """The design request itself is invalid."""


class InfeasibleError(RuntimeError):
    def __init__(self, best_dc: float, D1: float, D2: float):
        super().__init__(f"no candidate with {D1} < D_c < {D2} µm; closest D_c attained was {best_dc:.4g} µm")
        self.best_dc = best_dc


@dataclass(frozen=True)
class Directive:
    kind: str = "free"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in DIRECTIVES:
            raise RequestError(f"unknown directive {self.kind!r}; expected one of {DIRECTIVES}")
        if (self.kind == "fixed") != (self.value is not None):
            raise RequestError("a fixed directive needs exactly one value")

    @classmethod
    def parse(cls, text) -> "Directive":
        """Accepts ``min``, ``max``, ``free``, a number or ``fixed:<number>``."""
        if isinstance(text, Directive):
            return text
        if text is None:
            return cls()
        if isinstance(text, (int, float)):
            return cls("fixed", float(text))
        s = str(text).strip().lower()
        if s.startswith("fixed:"):
            return cls("fixed", float(s[6:]))
        try:
            return cls("fixed", float(s))
        except ValueError:
            return cls(s)

    def __str__(self):
        return f"fixed:{self.value!r}" if self.kind == "fixed" else self.kind


@dataclass
class DesignRequest:
    D1: float
    D2: float
    phi: float = 0.5
    constraints: dict = field(default_factory=dict)
    periods: int = 10

    def __post_init__(self):
        if not 0 < self.D1 < self.D2:
            raise RequestError(f"need 0 < D1 < D2, got D1={self.D1}, D2={self.D2}")
        if not 0 <= self.phi <= 1:
            raise RequestError(f"phi must lie in [0, 1], got {self.phi}")
        if self.periods < 1:
            raise RequestError("periods must be >= 1")
        bad = set(self.constraints) - set(PARAM_BOUNDS)
        if bad:
            raise RequestError(f"constraints only apply to f, N, Re; got {sorted(bad)}")
        self.constraints = {k: Directive.parse(v) for k, v in self.constraints.items()}
        for k, d in self.constraints.items():
            lo, hi = PARAM_BOUNDS[k]
            if d.kind == "fixed" and not lo <= d.value <= hi:
                raise RequestError(f"fixed {k}={d.value} outside [{lo}, {hi}]")
            if d.kind == "fixed" and k == "N" and d.value != int(d.value):
                raise RequestError("fixed N must be an integer")

    @property
    def target(self) -> float:
        return 0.5 * (self.D1 + self.D2)

    def directive(self, name) -> Directive:
        return self.constraints.get(name, Directive())

    def to_dict(self) -> dict:
        return {
            "D1": self.D1,
            "D2": self.D2,
            "phi": self.phi,
            "constraints": {k: str(v) for k, v in sorted(self.constraints.items())},
            "periods": self.periods,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignRequest":
        return cls(float(d["D1"]), float(d["D2"]), float(d.get("phi", 0.5)), dict(d.get("constraints", {})), int(d.get("periods", 10)))


@dataclass
class DesignResult:
    f: float
    N: int
    Re: float
    G: float
    D_c: float
    BW: float
    stability: float
    stability_one_sided: bool
    d_c: float
    objectives: list
    E_pct: float | None = None
    D_c_solver: float | None = None
    archive: list = field(default_factory=list, repr=False)

    @property
    def params(self) -> DldParams:
        return DldParams(self.f, self.N, self.Re, self.G)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DesignResult":
        """Accepts a bare result or the ``{"result": ...}`` body of ``result.json``."""
        d = d.get("result", d)
        keys = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in keys})


# ---------------------------------------------------------------------------
# figures of merit


def physical_dc(d_c, f, G):
    return np.asarray(d_c) * np.asarray(G) / (1.0 - np.asarray(f))


def bw_grid() -> np.ndarray:
    return np.linspace(RE_MIN, RE_MAX, BW_POINTS)


def _predict(net, f, N, Re) -> np.ndarray:
    f, N, Re = np.broadcast_arrays(np.asarray(f, float), np.asarray(N, float), np.asarray(Re, float))
    x = np.column_stack([f.ravel(), N.ravel(), Re.ravel()])
    return fcnn_predict_batch(net, x).reshape(f.shape)


def bandwidth(net: NetParams, f, N, G) -> np.ndarray | float:
    """Spread (max - min) of the physical critical diameter over the Re range, in µm."""
    if np.any(np.asarray(G) <= 0):
        raise RequestError("G must be positive")
    f_a, N_a, G_a = np.broadcast_arrays(np.asarray(f, float), np.asarray(N, float), np.asarray(G, float))
    res = bw_grid()
    dc = _predict(net, f_a.ravel()[:, None], N_a.ravel()[:, None], res[None, :])
    bw = (dc.max(axis=1) - dc.min(axis=1)) * G_a.ravel() / (1.0 - f_a.ravel())
    return float(bw[0]) if np.ndim(f) == 0 and np.ndim(N) == 0 and np.ndim(G) == 0 else bw.reshape(f_a.shape)


def _stability_points(Re):
    Re = np.asarray(Re, float)
    low_edge = Re - STABILITY_STEP < RE_MIN
    high_edge = Re + STABILITY_STEP > RE_MAX
    lo = np.where(low_edge, Re, Re - STABILITY_STEP)
    hi = np.where(high_edge, Re, Re + STABILITY_STEP)
    hi = np.where(low_edge & ~high_edge, Re + STABILITY_STEP, hi)
    return lo, hi, low_edge | high_edge


def stability(net: NetParams, f, N, Re, G, with_flag: bool = False):
    """``|dD_c/dRe|`` in µm per unit Re.

    Central difference with step 0.25; within one step of either end of the
    Re range a one-sided difference is used and ``with_flag`` reports it.
    """
    lo, hi, flag = _stability_points(Re)
    a = _predict(net, f, N, lo)
    b = _predict(net, f, N, hi)
    s = np.abs(b - a) / (hi - lo) * np.asarray(G, float) / (1.0 - np.asarray(f, float))
    if all(np.ndim(v) == 0 for v in (f, N, Re, G)):
        s, flag = float(s), bool(flag)
    return (s, flag) if with_flag else s


# ---------------------------------------------------------------------------
# optimisation


def _gene_bounds(req: DesignRequest):
    lo = np.array([F_MIN, float(N_MIN), RE_MIN, G_MIN])
    hi = np.array([F_MAX, float(N_MAX), RE_MAX, G_MAX])
    for i, name in enumerate(GENES[:3]):
        d = req.directive(name)
        if d.kind == "fixed":
            lo[i] = hi[i] = d.value
    return lo, hi


def _snap(req: DesignRequest, genes: np.ndarray) -> np.ndarray:
    """Apply directives exactly and round N."""
    g = np.array(genes, dtype=float, copy=True)
    for i, name in enumerate(GENES[:3]):
        d = req.directive(name)
        lo, hi = PARAM_BOUNDS[name]
        if d.kind == "min":
            g[..., i] = lo
        elif d.kind == "max":
            g[..., i] = hi
        elif d.kind == "fixed":
            g[..., i] = d.value
    g[..., 1] = np.clip(np.rint(g[..., 1]), N_MIN, N_MAX)
    return g


def evaluate_designs(req: DesignRequest, net: NetParams, X: np.ndarray):
    """Objective matrix and the quantities behind it for gene rows ``X``."""
    X = np.atleast_2d(np.asarray(X, float))
    f, N, Re, G = X[:, 0], np.clip(np.rint(X[:, 1]), N_MIN, N_MAX), X[:, 2], X[:, 3]
    dc = _predict(net, f, N, Re)
    Dc = physical_dc(dc, f, G)
    bw = bandwidth(net, f, N, G)
    st = stability(net, f, N, Re, G)
    cols = [np.abs(Dc - req.target), req.phi * (-bw) + (1 - req.phi) * st]
    for i, name in enumerate(GENES[:3]):
        d = req.directive(name)
        lo, hi = PARAM_BOUNDS[name]
        if d.kind == "min":
            cols.append((X[:, i] - lo) / (hi - lo))
        elif d.kind == "max":
            cols.append((hi - X[:, i]) / (hi - lo))
    return np.column_stack(cols), {"d_c": dc, "D_c": Dc, "BW": bw, "stability": st}


def design_problem(req: DesignRequest, net: NetParams) -> MooProblem:
    n_obj = 2 + sum(req.directive(n).kind in ("min", "max") for n in GENES[:3])
    lo, hi = _gene_bounds(req)
    return MooProblem(4, (lo, hi), n_obj, lambda x: evaluate_designs(req, net, x)[0][0], batch=lambda X: evaluate_designs(req, net, X)[0])


def _retune(req: DesignRequest, net: NetParams, X: np.ndarray) -> np.ndarray:
    """Snap directives, then pick G so the predicted D_c hits the target."""
    X = _snap(req, X)
    dc = _predict(net, X[:, 0], X[:, 1], X[:, 2])
    X[:, 3] = np.clip(req.target * (1 - X[:, 0]) / dc, G_MIN, G_MAX)
    return X


def design(
    req: DesignRequest,
    net: NetParams,
    pop_size: int = 260,
    generations: int = 60,
    directions: int = 5,
    seed: int = 0,
    tie_tol: float = 1e-6,
    archive_csv=None,
) -> DesignResult:
    """Optimise a device for ``req`` with the direct surrogate ``net``.

    Every archive candidate has its Min/Max/Fixed parameters set to the
    directive value, N rounded and G re-solved so that the predicted D_c
    equals ``(D1 + D2) / 2``.  Among candidates with ``D1 < D_c < D2`` the
    smallest objective-1 value wins (within ``tie_tol`` µm), then the
    smallest objective 2.
    """
    problem = design_problem(req, net)
    run = nsga3_run(problem, pop_size, generations, directions, seed=seed, archive_csv=archive_csv)
    cand = np.vstack([run.archive_X, run.X])
    cand = _retune(req, net, cand)
    cand = np.unique(np.round(cand, 12), axis=0)
    F, info = evaluate_designs(req, net, cand)
    ok = (info["D_c"] > req.D1) & (info["D_c"] < req.D2)
    if not ok.any():
        best = int(np.argmin(F[:, 0]))
        raise InfeasibleError(float(info["D_c"][best]), req.D1, req.D2)
    idx = np.flatnonzero(ok)
    o1 = F[idx, 0]
    tied = idx[o1 <= o1.min() + tie_tol]
    order = np.lexsort((tied, F[tied, 1]))
    pick = int(tied[order[0]])
    f, N, Re, G = cand[pick]
    st, flag = stability(net, f, N, Re, G, with_flag=True)
    archive = []
    for k in idx[np.argsort(F[idx, 1], kind="stable")]:
        archive.append(
            {
                "f": float(cand[k, 0]),
                "N": int(cand[k, 1]),
                "Re": float(cand[k, 2]),
                "G": float(cand[k, 3]),
                "D_c": float(info["D_c"][k]),
                "BW": float(info["BW"][k]),
                "stability": float(info["stability"][k]),
                "objectives": [float(v) for v in F[k]],
            }
        )
    return DesignResult(
        f=float(f),
        N=int(N),
        Re=float(Re),
        G=float(G),
        D_c=float(info["D_c"][pick]),
        BW=float(info["BW"][pick]),
        stability=float(st),
        stability_one_sided=bool(flag),
        d_c=float(info["d_c"][pick]),
        objectives=[float(v) for v in F[pick]],
        archive=archive,
    )


# ---------------------------------------------------------------------------
# verification and device simulation


def verify(
    result: DesignResult,
    cfg: SolverConfig | None = None,
    tol: float = DEFAULT_TOL,
    n_periods: int = DEFAULT_PERIODS,
    field: FlowField | None = None,
) -> float:
    """Percent gap between the solver's and the surrogate's critical diameter.

    Solves the flow at the design point (unless ``field`` is given), extracts
    ``d_c`` by bisection and stores the physical value on ``result``.
    """
    params = DldParams(result.f, result.N, result.Re)
    fld = field if field is not None else solve_flow(params, cfg or SolverConfig(res=64))
    res = critical_from_field(fld, tol=tol, n_periods=n_periods)
    if not res.found:
        result.D_c_solver = None
        result.E_pct = math.inf
        return result.E_pct
    D_solver = float(physical_dc(res.d_c, result.f, result.G))
    result.D_c_solver = D_solver
    result.E_pct = 100.0 * abs(D_solver - result.D_c) / D_solver
    return result.E_pct


@dataclass
class DeviceRun:
    diameter_um: float
    diameter: float
    trajectory: Trajectory
    recurrence: RecurrenceMap

    @property
    def mode(self) -> int:
        return int(self.trajectory.mode)


def simulate_device(
    result: DesignResult,
    diameters,
    periods: int = 10,
    field: FlowField | None = None,
    field_net: NetParams | None = None,
    cfg: SolverConfig | None = None,
) -> list[DeviceRun]:
    """Trace each particle (diameters in µm) through ``periods`` array periods.

    The flow comes from ``field``, else from ``field_net``, else from a fresh
    solver run.
    """
    if periods < 1:
        raise RequestError("periods must be >= 1")
    params = DldParams(result.f, result.N, result.Re)
    if field is None:
        field = cnn_predict_field(field_net, params) if field_net is not None else solve_flow(params, cfg or SolverConfig(res=64))
    geom = unit_cell(params)
    wf = wall_distance_field(geom)
    runs = []
    for D in diameters:
        d = float(D) * (1 - result.f) / result.G
        traj = trace(field, wf, release_point(geom, d), d, n_periods=periods)
        runs.append(DeviceRun(float(D), d, traj, recurrence_map(traj)))
    return runs


# ---------------------------------------------------------------------------
# report bundle


def _fmt(v) -> str:
    return f"{v:.17g}"


def write_result_json(result: DesignResult, path, request: DesignRequest | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"result": result.to_dict()}
    if request is not None:
        body["request"] = request.to_dict()
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def write_pareto_csv(result: DesignResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_obj = len(result.objectives)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f", "N", "Re", "G", "D_c", "BW", "stability"] + [f"obj{k + 1}" for k in range(n_obj)])
        for row in result.archive:
            w.writerow(
                [_fmt(row["f"]), row["N"], _fmt(row["Re"]), _fmt(row["G"]), _fmt(row["D_c"]), _fmt(row["BW"]), _fmt(row["stability"])]
                + [_fmt(v) for v in row["objectives"]]
            )
    return path


def svg_plot(series, path, title="", xlabel="", ylabel="", width=640, height=420) -> Path:
    """Minimal line plot: ``series`` is a list of ``(label, xs, ys)``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    m = 60
    sx = lambda x: m + (x - x0) / (x1 - x0) * (width - 2 * m)  # noqa: E731
    sy = lambda y: height - m - (y - y0) / (y1 - y0) * (height - 2 * m)  # noqa: E731
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="{m / 2}" text-anchor="middle">{title}</text>',
        f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle">{xlabel}</text>',
        f'<text x="15" y="{height / 2}" text-anchor="middle" transform="rotate(-90 15 {height / 2})">{ylabel}</text>',
    ]
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{sx(v):.1f}" y="{height - m + 16}" text-anchor="middle">{v:.3g}</text>')
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{m - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    for k, (label, sxs, sys) in enumerate(series):
        c = colours[k % len(colours)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(sxs, sys))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{width - m + 4}" y="{m + 14 * (k + 1)}" fill="{c}">{label}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")
    return path


def write_report(
    result: DesignResult,
    out_dir,
    net: NetParams | None = None,
    runs: list[DeviceRun] | None = None,
    request: DesignRequest | None = None,
    max_points: int = 2000,
) -> list[Path]:
    """Result JSON, Pareto CSV, per-particle CSVs and SVG plots in ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [write_result_json(result, out / "result.json", request), write_pareto_csv(result, out / "pareto.csv")]
    if net is not None:
        res = bw_grid()
        dc = _predict(net, result.f, result.N, res)
        D = physical_dc(dc, result.f, result.G)
        with (out / "dc_vs_re.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["Re", "D_c"])
            for a, b in zip(res, D):
                w.writerow([_fmt(a), _fmt(b)])
        files.append(out / "dc_vs_re.csv")
        files.append(svg_plot([("D_c", res, D)], out / "dc_vs_re.svg", "critical diameter vs Re", "Re", "D_c (µm)"))
    if runs:
        series = []
        for r in runs:
            tag = f"D{r.diameter_um:g}um"
            files.append(write_trajectory_csv(r.trajectory, out / f"trajectory_{tag}.csv"))
            files.append(write_recurrence_csv(r.recurrence, out / f"recurrence_{tag}.csv"))
            phys = r.trajectory.physical
            stride = max(1, len(phys) // max_points)
            series.append((f"{r.diameter_um:g} µm ({'bumped' if r.mode > 0 else 'zigzag'})", phys[::stride, 0], phys[::stride, 1]))
        files.append(svg_plot(series, out / "trajectories.svg", "particle trajectories", "x / pitch", "y / pitch"))
    return files
