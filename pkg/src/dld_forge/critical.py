"""Critical diameter by bracketing and bisection over particle diameter.

The search starts from the bracket ``(0.1 g, 0.95 g)``.  If the small particle
zigzags and the large one bumps, the bracket is halved until it is narrower
than ``tol`` and the last midpoint is reported; otherwise there is no
critical diameter.  Diameters and ``tol`` are in unit-cell lengths.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .flow import FlowField, SolverConfig, solve_flow
from .geometry import DldParams, unit_cell
from .tracer import Mode, release_point, trace
from .walls import WallField, wall_distance_field

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-3
DEFAULT_PERIODS = 2
DEFAULT_WALL_RES = 256


class BracketWarning(UserWarning):
    """Mode evaluations were not monotone in diameter."""


@dataclass
class CriticalResult:
    d_c: float | None
    evaluations: int
    bracket_history: list[tuple[float, float]] = field(default_factory=list)
    modes: list[tuple[float, int]] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.d_c is not None


def max_evaluations(g: float, tol: float) -> int:
    return 2 + math.ceil(math.log2(0.85 * g / tol))


def critical_diameter(
    mode_fn: Callable[[float], int], f: float, tol: float = DEFAULT_TOL, probe: int = 0
) -> CriticalResult:
    """Bisection for the smallest bumping diameter.

    ``mode_fn(d)`` returns +1 (bumped) or -1 (zigzag).  Exceptions raised by it
    propagate with the offending diameter stored on ``exc.diameter``.  With
    ``probe > 0`` that many extra evenly spaced diameters are classified and
    a :class:`BracketWarning` is issued if they contradict monotonicity.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    g = 1.0 - f
    modes: list[tuple[float, int]] = []

    def evaluate(d):
        try:
            m = int(mode_fn(d))
        except Exception as exc:
            exc.diameter = d
            raise
        modes.append((d, m))
        return m

    d1, d2 = 0.1 * g, 0.95 * g
    history = [(d1, d2)]
    v1, v2 = evaluate(d1), evaluate(d2)
    d_c = None
    if v1 == -1 and v2 == 1:
        while (d2 - d1) >= tol:
            d = 0.5 * (d1 + d2)
            if evaluate(d) == 1:
                d2 = d
            else:
                d1 = d
            history.append((d1, d2))
            d_c = d
    evaluations = len(modes)
    if probe:
        for d in np.linspace(0.1 * g, 0.95 * g, probe + 2)[1:-1]:
            evaluate(float(d))
        _check_monotone(modes)
    return CriticalResult(d_c, evaluations, history, modes)


def _check_monotone(modes):
    ordered = sorted(modes)
    seen_bump = None
    for d, m in ordered:
        if m == 1 and seen_bump is None:
            seen_bump = d
        elif m == -1 and seen_bump is not None:
            warnings.warn(
                f"diameter {d:.5g} zigzags although {seen_bump:.5g} bumps; mode is not monotone",
                BracketWarning,
                stacklevel=3,
            )
            return False
    return True


def field_mode_fn(fld: FlowField, wf: WallField | None = None, n_periods: int = DEFAULT_PERIODS):
    """Classifier ``d -> +1/-1`` tracing particles released at the inlet seed."""
    geom = wf.geometry if wf is not None else unit_cell(fld.params)
    wf = wf or wall_distance_field(geom, DEFAULT_WALL_RES)

    def mode(d: float) -> int:
        traj = trace(fld, wf, release_point(geom, d), d, n_periods=n_periods)
        return int(traj.mode)

    return mode


def critical_from_field(
    fld: FlowField,
    wf: WallField | None = None,
    tol: float = DEFAULT_TOL,
    n_periods: int = DEFAULT_PERIODS,
) -> CriticalResult:
    return critical_diameter(field_mode_fn(fld, wf, n_periods), fld.params.f, tol)


def critical_for_params(
    params: DldParams, cfg: SolverConfig | None = None, tol: float = DEFAULT_TOL, n_periods: int = DEFAULT_PERIODS
) -> tuple[CriticalResult, FlowField]:
    fld = solve_flow(params, cfg)
    return critical_from_field(fld, tol=tol, n_periods=n_periods), fld


__all__ = [
    "BracketWarning",
    "CriticalResult",
    "Mode",
    "critical_diameter",
    "critical_for_params",
    "critical_from_field",
    "field_mode_fn",
    "max_evaluations",
]
