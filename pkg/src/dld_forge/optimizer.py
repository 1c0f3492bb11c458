"""NSGA-III for box-bounded real-valued problems (minimisation).

Offspring come from simulated binary crossover and polynomial mutation.
Survival sorts parent+offspring into non-dominated fronts, normalises the
objectives by the ideal point and hyperplane intercepts, associates every
candidate with its nearest reference direction and fills the last front by
niche counts.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np


class EvaluationError(RuntimeError):
    def __init__(self, genes, cause: BaseException):
        super().__init__(f"evaluation failed for genes {np.asarray(genes).tolist()}: {cause}")
        self.genes = np.asarray(genes)


@dataclass
class MooProblem:
    n_vars: int
    bounds: tuple[np.ndarray, np.ndarray]
    n_objectives: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    # optional vectorised form: (n, n_vars) -> (n, n_objectives)
    batch: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        lo, hi = (np.asarray(b, dtype=float) for b in self.bounds)
        if lo.shape != (self.n_vars,) or hi.shape != (self.n_vars,) or np.any(hi < lo):
            raise ValueError("bounds must be two arrays of length n_vars with lo <= hi")
        self.bounds = (lo, hi)


@dataclass
class Individual:
    genes: np.ndarray
    objectives: np.ndarray
    rank: int
    niche: int


@dataclass
class NsgaResult:
    X: np.ndarray
    F: np.ndarray
    rank: np.ndarray
    niche: np.ndarray
    archive_X: np.ndarray
    archive_F: np.ndarray
    directions: np.ndarray
    history: list = field(default_factory=list, repr=False)

    def individuals(self) -> list[Individual]:
        return [Individual(x, f, int(r), int(n)) for x, f, r, n in zip(self.X, self.F, self.rank, self.niche)]

    def front(self) -> np.ndarray:
        """Objectives of the first front of the final population."""
        return self.F[self.rank == 0]


# ---------------------------------------------------------------------------
# reference directions


def das_dennis(n_obj: int, partitions: int) -> np.ndarray:
    """All points of the simplex lattice with ``partitions`` divisions per axis."""
    if partitions < 1 or n_obj < 1:
        raise ValueError("partitions and n_obj must be >= 1")
    rows = []

    def rec(prefix, left, depth):
        if depth == n_obj - 1:
            rows.append(prefix + [left])
            return
        for k in range(left, -1, -1):
            rec(prefix + [k], left - k, depth + 1)

    rec([], partitions, 0)
    return np.array(rows, dtype=float) / partitions


def das_dennis_count(n_obj: int, partitions: int) -> int:
    return math.comb(partitions + n_obj - 1, n_obj - 1)


def reference_directions(n_obj: int, count: int) -> np.ndarray:
    """``count`` well-spread simplex directions.

    A Das-Dennis lattice is used when ``count`` matches one exactly; otherwise
    a finer lattice is thinned by farthest-point selection, starting from the
    axis directions.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    p = 1
    while das_dennis_count(n_obj, p) < count:
        p += 1
    dirs = das_dennis(n_obj, p)
    if len(dirs) == count:
        return dirs
    chosen = [i for i in range(len(dirs)) if np.isclose(dirs[i].max(), 1.0)][: min(count, n_obj)]
    dist = np.full(len(dirs), np.inf)
    for i in chosen:
        dist = np.minimum(dist, np.linalg.norm(dirs - dirs[i], axis=1))
    while len(chosen) < count:
        i = int(np.argmax(dist))
        chosen.append(i)
        dist = np.minimum(dist, np.linalg.norm(dirs - dirs[i], axis=1))
    return dirs[sorted(chosen)]


# ---------------------------------------------------------------------------
# dominance


def dominance_matrix(F: np.ndarray) -> np.ndarray:
    """``D[i, j]`` is true when point i dominates point j."""
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    return le & lt


def non_dominated_sort(F) -> list[list[int]]:
    F = np.asarray(F, dtype=float)
    if F.ndim != 2:
        raise ValueError("objectives must be a 2-D array")
    n = len(F)
    if n == 0:
        return []
    dom = dominance_matrix(F)
    count = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(count == 0)
    while current.size:
        fronts.append(current.tolist())
        count = count - dom[current].sum(axis=0)
        count[current] = -1
        current = np.flatnonzero(count == 0)
    return fronts


def _ranks(fronts, n) -> np.ndarray:
    r = np.empty(n, dtype=int)
    for k, fr in enumerate(fronts):
        r[fr] = k
    return r


# ---------------------------------------------------------------------------
# variation


def sbx(p1, p2, lo, hi, rng, eta: float = 15.0, prob: float = 0.9):
    """Bounded simulated binary crossover; returns two children."""
    c1, c2 = p1.copy(), p2.copy()
    if rng.random() > prob:
        return c1, c2
    n = len(p1)
    for i in range(n):
        if rng.random() > 0.5 or abs(p1[i] - p2[i]) < 1e-14 or hi[i] == lo[i]:
            continue
        y1, y2 = min(p1[i], p2[i]), max(p1[i], p2[i])
        u = rng.random()
        beta = 1.0 + 2.0 * (y1 - lo[i]) / (y2 - y1)
        alpha = 2.0 - beta ** -(eta + 1)
        bq = (u * alpha) ** (1 / (eta + 1)) if u <= 1 / alpha else (1 / (2 - u * alpha)) ** (1 / (eta + 1))
        a = 0.5 * ((y1 + y2) - bq * (y2 - y1))
        beta = 1.0 + 2.0 * (hi[i] - y2) / (y2 - y1)
        alpha = 2.0 - beta ** -(eta + 1)
        bq = (u * alpha) ** (1 / (eta + 1)) if u <= 1 / alpha else (1 / (2 - u * alpha)) ** (1 / (eta + 1))
        b = 0.5 * ((y1 + y2) + bq * (y2 - y1))
        a, b = min(max(a, lo[i]), hi[i]), min(max(b, lo[i]), hi[i])
        if rng.random() < 0.5:
            a, b = b, a
        c1[i], c2[i] = a, b
    return c1, c2


def polynomial_mutation(x, lo, hi, rng, eta: float = 20.0, prob: float | None = None):
    y = x.copy()
    n = len(x)
    prob = 1.0 / n if prob is None else prob
    for i in range(n):
        if rng.random() >= prob or hi[i] == lo[i]:
            continue
        span = hi[i] - lo[i]
        d1 = (y[i] - lo[i]) / span
        d2 = (hi[i] - y[i]) / span
        u = rng.random()
        mp = 1.0 / (eta + 1)
        if u < 0.5:
            val = 2 * u + (1 - 2 * u) * (1 - d1) ** (eta + 1)
            dq = val**mp - 1
        else:
            val = 2 * (1 - u) + 2 * (u - 0.5) * (1 - d2) ** (eta + 1)
            dq = 1 - val**mp
        y[i] = min(max(y[i] + dq * span, lo[i]), hi[i])
    return y


# ---------------------------------------------------------------------------
# normalisation and niching


class _Normaliser:
    """Tracks the ideal point and extreme points across generations."""

    def __init__(self, n_obj):
        self.ideal = np.full(n_obj, np.inf)
        self.extremes = None
        self.worst = np.full(n_obj, -np.inf)

    def update(self, F, front0):
        m = F.shape[1]
        self.ideal = np.minimum(self.ideal, F.min(axis=0))
        self.worst = np.maximum(self.worst, F.max(axis=0))
        pool = F if self.extremes is None else np.vstack([self.extremes, F])
        weights = np.eye(m) + 1e-6
        shifted = pool - self.ideal
        asf = np.max(shifted[:, None, :] / weights[None, :, :], axis=2)
        self.extremes = pool[np.argmin(asf, axis=0)]
        nadir = self._intercepts(F[front0])
        return self.ideal, nadir

    def _intercepts(self, front):
        m = len(self.ideal)
        fallback = front.max(axis=0)
        try:
            shifted = self.extremes - self.ideal
            b = np.ones(m)
            plane = np.linalg.solve(shifted, b)
            intercepts = 1.0 / plane
            nadir = self.ideal + intercepts
            if not np.all(np.isfinite(nadir)) or np.any(intercepts <= 1e-6) or np.any(nadir > self.worst + 1e-12):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            nadir = fallback
        small = nadir - self.ideal <= 1e-6
        nadir = np.where(small, self.worst, nadir)
        nadir = np.where(nadir - self.ideal <= 1e-12, self.ideal + 1.0, nadir)
        return nadir


def perpendicular_distances(Fn: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    unit = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    proj = Fn @ unit.T
    return np.sqrt(np.maximum((Fn**2).sum(axis=1)[:, None] - proj**2, 0.0))


def associate(Fn: np.ndarray, dirs: np.ndarray):
    """Nearest reference line and perpendicular distance for normalised points."""
    perp = perpendicular_distances(Fn, dirs)
    niche = perp.argmin(axis=1)
    return niche, perp[np.arange(len(Fn)), niche]


def _survive(F, n_keep, dirs, norm: _Normaliser, rng):
    fronts = non_dominated_sort(F)
    chosen: list[int] = []
    last = []
    for fr in fronts:
        if len(chosen) + len(fr) > n_keep:
            last = fr
            break
        chosen.extend(fr)
    pool = chosen + last
    ideal, nadir = norm.update(F[pool], list(range(len(fronts[0]))) if fronts else [])
    Fn = (F - ideal) / (nadir - ideal)
    niche = np.zeros(len(F), dtype=int)
    dist = np.zeros(len(F))
    perp = perpendicular_distances(Fn[pool], dirs)
    niche[pool] = perp.argmin(axis=1)
    dist[pool] = perp.min(axis=1)
    if len(chosen) < n_keep:
        # A point equidistant from several lines (e.g. all objectives equal)
        # may fill any of them, so it counts as a member of each.
        tail = perp[len(chosen) :]
        near = tail <= tail.min(axis=1, keepdims=True) + 1e-12
        last_arr = np.asarray(last, dtype=int)
        free = np.ones(len(last_arr), dtype=bool)
        counts = np.bincount(niche[chosen], minlength=len(dirs)) if chosen else np.zeros(len(dirs), dtype=int)
        active = near.any(axis=0)
        while len(chosen) < n_keep:
            masked = np.where(active, counts, np.iinfo(np.int64).max)
            cands = np.flatnonzero(masked == masked.min())
            j = int(rng.choice(cands))
            members = np.flatnonzero(near[:, j] & free)
            if members.size == 0:
                active[j] = False
                continue
            if counts[j] == 0:
                k = members[int(np.argmin(dist[last_arr[members]]))]
            else:
                k = members[int(rng.integers(members.size))]
            pick = int(last_arr[k])
            free[k] = False
            niche[pick] = j
            chosen.append(pick)
            counts[j] += 1
    chosen_arr = np.array(chosen, dtype=int)
    sub_fronts = non_dominated_sort(F[chosen_arr])
    return chosen_arr, _ranks(sub_fronts, len(chosen_arr)), niche[chosen_arr]


# ---------------------------------------------------------------------------
# archive


def _update_archive(AX, AF, X, F, cap):
    if AX is None:
        PX, PF = X, F
    else:
        PX, PF = np.vstack([AX, X]), np.vstack([AF, F])
    PF_round = np.round(PF, 14)
    _, uniq = np.unique(np.hstack([PF_round, np.round(PX, 14)]), axis=0, return_index=True)
    uniq = np.sort(uniq)
    PX, PF = PX[uniq], PF[uniq]
    dom = dominance_matrix(PF)
    keep = ~dom.any(axis=0)
    PX, PF = PX[keep], PF[keep]
    if len(PF) > cap:
        keep = _crowding_keep(PF, cap)
        PX, PF = PX[keep], PF[keep]
    return PX, PF


def _crowding_keep(F, cap):
    """Indices of ``cap`` points by crowding distance; per-objective minima always kept."""
    n, m = F.shape
    cd = np.zeros(n)
    for k in range(m):
        order = np.argsort(F[:, k], kind="stable")
        span = F[order[-1], k] - F[order[0], k] or 1.0
        cd[order[0]] = cd[order[-1]] = np.inf
        cd[order[1:-1]] += (F[order[2:], k] - F[order[:-2], k]) / span
    keep = np.argsort(-cd, kind="stable")[:cap]
    return np.sort(keep)


# ---------------------------------------------------------------------------
# main loop


def _evaluate_all(problem: MooProblem, X):
    if problem.batch is not None:
        try:
            out = np.asarray(problem.batch(X), dtype=float)
        except Exception:
            out = None  # fall through to find the offending row
        if out is not None:
            return out
    out = np.empty((len(X), problem.n_objectives))
    for i, x in enumerate(X):
        try:
            out[i] = problem.evaluate(x)
        except Exception as exc:
            raise EvaluationError(x, exc) from exc
    return out


def nsga3_run(
    problem: MooProblem,
    pop_size: int,
    generations: int,
    directions=None,
    seed: int = 0,
    archive_cap: int | None = None,
    archive_csv=None,
    eta_c: float = 15.0,
    p_c: float = 0.9,
    eta_m: float = 20.0,
) -> NsgaResult:
    """Run NSGA-III; ``directions`` is an array of reference directions or a count."""
    m = problem.n_objectives
    if directions is None:
        directions = pop_size
    dirs = reference_directions(m, int(directions)) if np.isscalar(directions) else np.asarray(directions, float)
    if pop_size < len(dirs):
        raise ValueError(f"pop_size {pop_size} is smaller than the {len(dirs)} reference directions")
    archive_cap = archive_cap or 10 * pop_size
    rng = np.random.default_rng(seed)
    lo, hi = problem.bounds
    X = lo + rng.random((pop_size, problem.n_vars)) * (hi - lo)
    F = _evaluate_all(problem, X)
    norm = _Normaliser(m)
    idx, rank, niche = _survive(F, pop_size, dirs, norm, rng)
    X, F = X[idx], F[idx]
    AX, AF = _update_archive(None, None, X[rank == 0], F[rank == 0], archive_cap)
    history = [F.min(axis=0)]
    writer = None
    fh = None
    if archive_csv:
        path = Path(archive_csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        fh = path.open("w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["generation"] + [f"x{i}" for i in range(problem.n_vars)] + [f"f{k}" for k in range(m)])
    try:
        for gen in range(generations):
            order = rng.permutation(pop_size)
            kids = []
            for a, b in itertools.zip_longest(order[0::2], order[1::2], fillvalue=order[0]):
                c1, c2 = sbx(X[a], X[b], lo, hi, rng, eta_c, p_c)
                kids.append(polynomial_mutation(c1, lo, hi, rng, eta_m))
                kids.append(polynomial_mutation(c2, lo, hi, rng, eta_m))
            Q = np.array(kids[:pop_size])
            FQ = _evaluate_all(problem, Q)
            RX, RF = np.vstack([X, Q]), np.vstack([F, FQ])
            idx, rank, niche = _survive(RF, pop_size, dirs, norm, rng)
            X, F = RX[idx], RF[idx]
            AX, AF = _update_archive(AX, AF, X[rank == 0], F[rank == 0], archive_cap)
            history.append(AF.min(axis=0))
            if writer:
                for x, f in zip(AX, AF):
                    writer.writerow([gen] + [f"{v:.17g}" for v in x] + [f"{v:.17g}" for v in f])
    finally:
        if fh:
            fh.close()
    return NsgaResult(X, F, rank, niche, AX, AF, dirs, history)


# ---------------------------------------------------------------------------
# benchmark


def dtlz2(n_obj: int = 3, n_vars: int = 7) -> MooProblem:
    """DTLZ2; its Pareto front is the unit sphere in the positive orthant."""

    def evaluate(x):
        k = n_vars - n_obj + 1
        g = float(((x[-k:] - 0.5) ** 2).sum())
        f = np.full(n_obj, 1.0 + g)
        for i in range(n_obj):
            f[i] *= np.prod(np.cos(x[: n_obj - 1 - i] * np.pi / 2))
            if i > 0:
                f[i] *= np.sin(x[n_obj - 1 - i] * np.pi / 2)
        return f

    return MooProblem(n_vars, (np.zeros(n_vars), np.ones(n_vars)), n_obj, evaluate)
