"""Seeded samplers of nonnegative local martingales started at 1 and tending to 0.

Three families are provided:

* ``GEOMETRIC_BROWNIAN``: ``L_t = exp(sigma W_t - sigma^2 t / 2)``, sampled
  exactly at grid times.
* ``STOPPED_BROWNIAN``: ``L_t = 1 + W_t`` absorbed at the first grid point
  where it is ``<= 0``.
* ``EXP_JUMP_COUNTEREXAMPLE``: ``L_t = e^t 1{tau > t}`` with ``tau ~ Exp(1)``;
  its supremum ``e^tau`` is a left limit and is never attained.

Every path owns its random streams: a Philox generator keyed by
``(seed, path_index, stream)``. Paths are therefore reproducible one by one
and adding paths to a run never changes the existing ones.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Union

import numba as nb
import numpy as np

from .paths import (
    Jump,
    RandomTimeSample,
    SamplePath,
    SupremumPath,
    TimeGrid,
    TimeKind,
)

# Philox stream ids within one path.
STREAM_INCREMENTS = 0
STREAM_BRIDGE = 1
STREAM_TAIL = 2

# An interval's bridge maximum is only sampled when it exceeds the current
# running supremum with probability above exp(-BRIDGE_SKIP_EXPONENT).
BRIDGE_SKIP_EXPONENT = 40.0


class Family(enum.Enum):
    STOPPED_BROWNIAN = "stopped_brownian"
    GEOMETRIC_BROWNIAN = "geometric_brownian"
    EXP_JUMP_COUNTEREXAMPLE = "exp_jump"

    @property
    def continuous(self) -> bool:
        return self is not Family.EXP_JUMP_COUNTEREXAMPLE


DEFAULT_GRIDS = {
    Family.GEOMETRIC_BROWNIAN: (2.0**-10, 64.0),
    # 1 + W takes a heavy-tailed time to hit 0; P[alive at 2^14] is about 0.6%.
    Family.STOPPED_BROWNIAN: (2.0**-4, 2.0**14),
    Family.EXP_JUMP_COUNTEREXAMPLE: (2.0**-6, 64.0),
}


def default_grid(family: Family) -> TimeGrid:
    step, horizon = DEFAULT_GRIDS[family]
    return TimeGrid.from_horizon(step, horizon)


@dataclass(frozen=True)
class GeneratorSpec:
    family: Family
    grid: TimeGrid
    seed: int = 0
    sigma: float = 1.0
    tail_completion: bool = False
    bridge_max: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.bridge_max and not self.family.continuous:
            raise ValueError("bridge maxima only apply to the Brownian families")

    @property
    def diffusion(self) -> float:
        """Per-unit-time standard deviation of the Brownian driver in the scale the path lives in."""
        return self.sigma if self.family is Family.GEOMETRIC_BROWNIAN else 1.0


def path_rng(seed: int, path_index: int, stream: int = STREAM_INCREMENTS) -> np.random.Generator:
    """Counter-based generator dedicated to one (path, stream) pair."""
    if path_index < 0 or not 0 <= stream < 4:
        raise ValueError("path_index must be >= 0 and stream in [0, 4)")
    key = np.array([seed, (path_index << 2) | stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def generate(spec: GeneratorSpec, path_index: int) -> SamplePath:
    """Sample path number ``path_index``; a pure function of ``(spec, path_index)``."""
    rng = path_rng(spec.seed, path_index)
    grid = spec.grid
    n = grid.point_count
    if spec.family is Family.EXP_JUMP_COUNTEREXAMPLE:
        tau = float(rng.standard_exponential())
        t = grid.times
        alive = t < tau
        values = np.where(alive, np.exp(np.where(alive, t, 0.0)), 0.0)
        dead = np.flatnonzero(~alive)
        absorbed = int(dead[0]) if dead.size else None
        return SamplePath(
            grid,
            values,
            jumps=(Jump(tau, math.exp(tau), 0.0),),
            analytic_terminal_sup=math.exp(tau),
            absorbed_index=absorbed,
        )

    if spec.family is Family.GEOMETRIC_BROWNIAN:
        return SamplePath(grid, _exp(_log_walk(spec, rng)))

    z = rng.standard_normal(n - 1)

    w = np.empty(n)
    w[0] = 1.0
    w[1:] = math.sqrt(grid.step) * z
    np.cumsum(w, out=w)
    hit = np.flatnonzero(w <= 0)
    absorbed = None
    if hit.size:
        absorbed = int(hit[0])
        w[absorbed:] = 0.0
    return SamplePath(grid, w, absorbed_index=absorbed)


def _log_walk(spec: GeneratorSpec, rng: np.random.Generator) -> np.ndarray:
    grid = spec.grid
    sd = spec.sigma * math.sqrt(grid.step)
    drift = 0.5 * spec.sigma * spec.sigma * grid.step
    x = np.empty(grid.point_count)
    x[0] = 0.0
    np.cumsum(sd * rng.standard_normal(grid.point_count - 1) - drift, out=x[1:])
    return x


@nb.njit(cache=True)
def _exp(x):
    # Scalar libm exp, the one the compiled summary kernel uses; np.exp on
    # arrays may take a vectorised path that differs in the last bit.
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = math.exp(x[i])
    return out


def bridge_maximum(a: float, b: float, variance: float, u: float) -> float:
    """Sample the maximum of a Brownian bridge from ``a`` to ``b`` with total variance ``variance``.

    Inverts ``P[max > m] = exp(-2 (m - a)(m - b) / variance)`` at the uniform ``u``.
    """
    return 0.5 * (a + b + math.sqrt((b - a) ** 2 - 2.0 * variance * math.log(u)))


def bridge_supremum(spec: GeneratorSpec, path: SamplePath, path_index: int) -> SupremumPath:
    """Running supremum of the continuous-time path between grid points.

    Each interval's maximum is drawn from the Brownian-bridge law given its
    endpoints (in log scale for the geometric family), which makes the
    supremum exact in law for the continuous process. Intervals that cannot
    beat the current supremum except with probability below
    ``exp(-BRIDGE_SKIP_EXPONENT)`` are not sampled. This is a plain loop and
    serves as the reference for the compiled summary kernel. ``path`` must
    be ``generate(spec, path_index)``.
    """
    if not spec.family.continuous:
        raise ValueError("bridge maxima only apply to the Brownian families")
    rng = path_rng(spec.seed, path_index, STREAM_BRIDGE)
    geometric = spec.family is Family.GEOMETRIC_BROWNIAN
    # Work in the scale where the path is Brownian; for the geometric family
    # the log walk is regenerated rather than recovered through log(exp(.)).
    y = _log_walk(spec, path_rng(spec.seed, path_index)) if geometric else path.values.copy()
    variance = spec.diffusion**2 * path.grid.step
    n = path.grid.point_count
    end = n if path.absorbed_index is None else path.absorbed_index
    out = np.empty(n)
    best = y[0]
    out[0] = best
    for j in range(1, n):
        if j <= end:
            a, b = y[j - 1], y[j]
            top = max(a, b)
            if top > best:
                best = top
            if 2.0 * (best - a) * (best - b) <= BRIDGE_SKIP_EXPONENT * variance:
                m = bridge_maximum(a, b, variance, 1.0 - rng.random())
                if m > best:
                    best = m
        out[j] = best
    values = _exp(out) if geometric else out
    return SupremumPath(path.grid, values, float(values[-1]))


@dataclass(frozen=True)
class TailCompletion:
    """Exact-in-law draw of the supremum after the horizon."""

    applied: bool
    future_sup: float
    completed_terminal_sup: float
    beyond_horizon: bool


def tail_uniform(seed: int, path_index: int) -> float:
    """The uniform draw reserved for completing path ``path_index``; always in (0, 1]."""
    return 1.0 - float(path_rng(seed, path_index, STREAM_TAIL).random())


def complete_supremum(terminal_value: float, current_sup: float, u: float) -> TailCompletion:
    # Given L_T = c, sup_{v >= T} L_v has P[. > x] = c / x for x >= c, i.e. it equals c / U.
    if not 0 < u <= 1:
        raise ValueError(f"uniform draw must lie in (0, 1], got {u}")
    future = terminal_value / u
    return TailCompletion(True, future, max(current_sup, future), future > current_sup)


def tail_complete(path: SamplePath, rng_draw: float, current_sup: Optional[float] = None) -> TailCompletion:
    """Complete the terminal supremum of a continuous-family path beyond its horizon.

    ``current_sup`` defaults to the grid maximum; pass a bridge supremum to
    complete that instead.
    """
    if path.jumps or path.analytic_terminal_sup is not None:
        raise ValueError("tail completion needs a continuous path; the jump counterexample is excluded")
    if path.absorbed or path.terminal_value <= 0:
        raise ValueError("tail completion needs a path that is alive at the horizon")
    sup = float(path.values.max()) if current_sup is None else current_sup
    return complete_supremum(path.terminal_value, sup, rng_draw)


@dataclass(frozen=True)
class Deterministic:
    t: float


@dataclass(frozen=True)
class LevelHit:
    level: float

    def __post_init__(self):
        if not self.level > 0:
            raise ValueError(f"level must be positive, got {self.level}")


StoppingRule = Union[Deterministic, LevelHit]


def sample_stopping_time(path: SamplePath, kind: StoppingRule) -> RandomTimeSample:
    """Evaluate a stopping time on ``path``: a fixed time or the first grid time with ``L >= level``."""
    if isinstance(kind, Deterministic):
        k = path.grid.index_at_or_after(kind.t)
        return RandomTimeSample.at(TimeKind.STOPPING, path.grid, k, path.values[k])
    hit = np.flatnonzero(path.values >= kind.level)
    if hit.size == 0:
        return RandomTimeSample.infinite(TimeKind.STOPPING)
    k = hit[0]
    return RandomTimeSample.at(TimeKind.STOPPING, path.grid, k, path.values[k])
