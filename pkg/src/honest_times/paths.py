"""Time grids, sample paths, running suprema and path-wise random times.

Everything here is exact on the grid: suprema are running maxima of the
stored values, and attainment of the supremum is tested with exact float
equality. A random time that is not attained on the grid is reported as
infinite (``grid_index is None``, ``exact_time == inf``) instead of being
clamped to the horizon, so that such events can be counted.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Equally spaced grid ``t_k = k * step`` for ``k = 0, ..., point_count - 1``."""

    step: float
    point_count: int

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ValueError(f"step must be positive and finite, got {self.step}")
        if int(self.point_count) != self.point_count or self.point_count < 1:
            raise ValueError(f"point_count must be a positive integer, got {self.point_count}")

    @classmethod
    def from_horizon(cls, step: float, horizon: float) -> "TimeGrid":
        n = horizon / step
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"horizon {horizon} is not a multiple of step {step}")
        return cls(step, int(round(n)) + 1)

    @property
    def t0(self) -> float:
        return 0.0

    @property
    def horizon(self) -> float:
        return self.step * (self.point_count - 1)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.point_count) * self.step

    def time(self, index: int) -> float:
        return index * self.step

    def index_at_or_after(self, t: float) -> int:
        """First grid index whose time is ``>= t`` (up to rounding of ``t / step``)."""
        if t < 0:
            raise ValueError(f"time must be nonnegative, got {t}")
        k = t / self.step
        nearest = round(k)
        idx = nearest if abs(k - nearest) <= 1e-9 * max(1.0, k) else math.ceil(k)
        if idx >= self.point_count:
            raise ValueError(f"time {t} is beyond the horizon {self.horizon}")
        return int(idx)

    def coarsen(self, stride: int) -> "TimeGrid":
        if stride < 1 or (self.point_count - 1) % stride:
            raise ValueError(f"stride {stride} does not divide {self.point_count - 1} intervals")
        return TimeGrid(self.step * stride, (self.point_count - 1) // stride + 1)


@dataclass(frozen=True)
class Jump:
    """A jump of the path at an exact (off-grid) time."""

    time: float
    pre: float
    post: float


@dataclass(frozen=True)
class SamplePath:
    """One trajectory of a nonnegative local martingale sampled on a grid.

    ``analytic_terminal_sup`` carries the exact overall supremum when the
    generator knows it in closed form (e.g. a supremum that is approached
    only as a left limit before a jump and never attained).
    """

    grid: TimeGrid
    values: np.ndarray
    jumps: tuple = ()
    analytic_terminal_sup: Optional[float] = None
    absorbed_index: Optional[int] = None

    def __post_init__(self):
        values = _frozen(self.values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "jumps", tuple(self.jumps))
        if values.ndim != 1 or values.size != self.grid.point_count:
            raise ValueError(
                f"expected {self.grid.point_count} values, got shape {values.shape}"
            )
        if values[0] != 1.0:
            raise ValueError(f"paths start at 1, got {values[0]}")
        if not np.all(values >= 0):
            raise ValueError("path values must be nonnegative")
        if self.absorbed_index is not None:
            k = self.absorbed_index
            if not 0 < k < values.size or np.any(values[k:] != 0):
                raise ValueError(f"path is not absorbed at index {k}")
        if self.analytic_terminal_sup is not None and self.analytic_terminal_sup < values.max():
            raise ValueError("analytic terminal supremum below the grid maximum")

    @property
    def absorbed(self) -> bool:
        return self.absorbed_index is not None

    @property
    def terminal_value(self) -> float:
        return float(self.values[-1])


def subsample(path: SamplePath, stride: int) -> SamplePath:
    """Restrict ``path`` to every ``stride``-th grid point.

    Jumps keep their exact times; absorption is re-located on the coarse grid.
    """
    grid = path.grid.coarsen(stride)
    values = path.values[::stride]
    absorbed = None
    if path.absorbed_index is not None:
        k = -(-path.absorbed_index // stride)
        absorbed = k if k < grid.point_count else None
    return SamplePath(grid, values, path.jumps, path.analytic_terminal_sup, absorbed)


@dataclass(frozen=True)
class SupremumPath:
    """Running supremum ``L*_t`` on the grid plus the terminal supremum ``L*_inf``."""

    grid: TimeGrid
    values: np.ndarray
    terminal: float

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))


def running_supremum(path: SamplePath) -> SupremumPath:
    """Running maximum of the stored values.

    The terminal supremum is the analytic one when the path carries it,
    otherwise the grid maximum.
    """
    values = np.maximum.accumulate(path.values)
    terminal = path.analytic_terminal_sup
    if terminal is None:
        terminal = float(values[-1])
    return SupremumPath(path.grid, values, float(terminal))


class TimeKind(enum.Enum):
    RHO_MIN = "rho_min"
    RHO_MAX = "rho_max"
    HONEST_REP = "honest_rep"
    HITTING_TAU_X = "hitting_tau_x"
    TIME_CHANGE_ETA_U = "time_change_eta_u"
    STOPPING = "stopping"


@dataclass(frozen=True)
class RandomTimeSample:
    """Realised random time: grid index (``None`` when infinite) and exact time."""

    kind: TimeKind
    grid_index: Optional[int]
    exact_time: float
    attained_value: float = math.nan

    def __post_init__(self):
        if (self.grid_index is None) != math.isinf(self.exact_time):
            raise ValueError("grid_index is None exactly when exact_time is infinite")

    @classmethod
    def infinite(cls, kind: TimeKind) -> "RandomTimeSample":
        return cls(kind, None, math.inf)

    @classmethod
    def at(cls, kind: TimeKind, grid: TimeGrid, index: int, value: float) -> "RandomTimeSample":
        return cls(kind, int(index), grid.time(int(index)), float(value))

    @property
    def finite(self) -> bool:
        return self.grid_index is not None


def _attaining(path: SamplePath, sup: SupremumPath) -> np.ndarray:
    return np.flatnonzero(path.values == sup.terminal)


def rho_min(path: SamplePath, sup: SupremumPath) -> RandomTimeSample:
    """First grid time at which the path equals its overall supremum."""
    hits = _attaining(path, sup)
    if hits.size == 0:
        return RandomTimeSample.infinite(TimeKind.RHO_MIN)
    k = hits[0]
    return RandomTimeSample.at(TimeKind.RHO_MIN, path.grid, k, path.values[k])


def rho_max(path: SamplePath, sup: SupremumPath) -> RandomTimeSample:
    """Last grid time at which the path equals its overall supremum."""
    hits = _attaining(path, sup)
    if hits.size == 0:
        return RandomTimeSample.infinite(TimeKind.RHO_MAX)
    k = hits[-1]
    return RandomTimeSample.at(TimeKind.RHO_MAX, path.grid, k, path.values[k])


def honest_representative(path: SamplePath, t_index: int) -> RandomTimeSample:
    """``R_t``: first time in ``[0, t]`` at which the running maximum up to ``t`` is reached.

    Computable from the path up to ``t`` only, and equal to ``rho_min`` on
    the event ``{rho_min <= t}``.
    """
    if not 0 <= t_index < path.grid.point_count:
        raise ValueError(f"t_index {t_index} outside the grid")
    head = path.values[: t_index + 1]
    k = min(int(np.argmax(head)), t_index)
    return RandomTimeSample.at(TimeKind.HONEST_REP, path.grid, k, head[k])


def hitting_time_tau_x(path: SamplePath, x: float) -> RandomTimeSample:
    """First grid time at which the path is strictly above ``x > 1``."""
    if not x > 1:
        raise ValueError(f"level must exceed 1, got {x}")
    above = np.flatnonzero(path.values > x)
    if above.size == 0:
        return RandomTimeSample.infinite(TimeKind.HITTING_TAU_X)
    k = above[0]
    return RandomTimeSample.at(TimeKind.HITTING_TAU_X, path.grid, k, path.values[k])
