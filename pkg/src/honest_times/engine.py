"""Compiled per-path summaries for large Monte Carlo runs.

A full path at step 2^-10 over horizon 64 has 65 537 points, so 10^5 paths
cannot be held in memory. ``simulate_summaries`` streams each path through a
numba kernel that draws the same increments as :func:`generators.generate`
(same Philox stream, same order) and keeps only what the statistical tests
consume: suprema and times of maximum on nested sub-grids, stopping-time
hits, values at checkpoints, the bridge-corrected supremum, and both sides of
the time-change identity. The path-object pipeline in ``paths``/``azema``
is the reference these summaries are tested against.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .generators import (
    BRIDGE_SKIP_EXPONENT,
    STREAM_BRIDGE,
    Family,
    GeneratorSpec,
    path_rng,
    tail_uniform,
)

_GEOMETRIC = 0
_STOPPED = 1


@dataclass(frozen=True)
class Probes:
    """What to record along each path.

    ``strides`` are powers of two; stride ``s`` observes the path on the
    coarser grid with step ``s * step`` (nested refinements of one path).
    """

    strides: tuple = (1,)
    checkpoint_times: tuple = ()
    stop_levels: tuple = ()
    eta_us: tuple = ()
    mesh: int = 1024

    def __post_init__(self):
        if 1 not in self.strides:
            raise ValueError("stride 1 must be probed")
        for s in self.strides:
            if s < 1 or s & (s - 1):
                raise ValueError(f"strides must be powers of two, got {s}")
        if any(not 0 <= u < 1 for u in self.eta_us):
            raise ValueError("eta levels u must lie in [0, 1)")
        if any(not a > 0 for a in self.stop_levels):
            raise ValueError("stopping levels must be positive")


@dataclass
class RunSummary:
    """Per-path summaries of one run; row ``i`` is path index ``i``.

    Grid quantities are indexed ``[path, stride]``; ``first``/``last`` are
    sub-grid indices of the first/last attainment of the grid maximum.
    ``stop_hit[path, stride, level]`` is the first sub-grid index with
    ``L >= level`` or -1. Checkpoint arrays are ``[path, checkpoint]``.
    ``bridge_*`` fields are NaN / -1 when bridge maxima are off.
    """

    spec: GeneratorSpec
    probes: Probes
    checkpoint_indices: np.ndarray
    grid_sup: np.ndarray
    first: np.ndarray
    last: np.ndarray
    stop_hit: np.ndarray
    terminal: np.ndarray
    absorbed_index: np.ndarray
    cp_value: np.ndarray
    cp_sup: np.ndarray
    cp_a: np.ndarray
    cp_bridge_sup: np.ndarray
    cp_bridge_a: np.ndarray
    a_end: np.ndarray
    bridge_sup: np.ndarray
    bridge_rho_index: np.ndarray
    bridge_a_end: np.ndarray
    eta_value: np.ndarray
    tc_lhs: np.ndarray
    tc_rhs: np.ndarray
    tail_u: np.ndarray = field(default=None)

    @property
    def n_paths(self) -> int:
        return self.terminal.shape[0]

    def stride_position(self, stride: int) -> int:
        return list(self.probes.strides).index(stride)


@nb.njit(cache=True)
def _value(x, geometric):
    return math.exp(x) if geometric else x


@nb.njit(cache=True)
def _simpson(s0, s1):
    # Same arithmetic as azema.a_process(rule="simpson") for one increment of the sup.
    k0 = 1.0 - 1.0 / s0
    k1 = 1.0 - 1.0 / s1
    mid = 1.0 / (1.0 - 0.5 * (k0 + k1))
    return (s0 + 4.0 * mid + s1) / 6.0 * (k1 - k0)


@nb.njit(cache=True)
def _walk(
    rng, brng, family, n_steps, sd, drift, variance, use_bridge,
    strides, cps, stop_x, eta_levels, mesh_u, mesh_levels,
    grid_sup, first, last, stop_hit, cp_value, cp_sup, cp_a, cp_bsup, cp_ba,
    eta_value, tc,
):
    # Returns (terminal value, absorbed index, A_T, bridge sup, bridge rho index, bridge A_T).
    geometric = family == 0
    x = 0.0 if geometric else 1.0
    n_strides = strides.shape[0]
    n_stop = stop_x.shape[0]
    n_cp = cps.shape[0]
    n_eta = eta_levels.shape[0]
    n_mesh = mesh_u.shape[0]

    for s in range(n_strides):
        grid_sup[s] = x
        first[s] = 0
        last[s] = 0
        for q in range(n_stop):
            stop_hit[s, q] = 0 if x >= stop_x[q] else -1

    gate = x
    for q in range(n_stop):
        if stop_x[q] < gate:
            gate = stop_x[q]
    best = x            # grid running max, path scale
    sv = 1.0            # its natural value
    a_grid = 0.0
    bbest = x           # bridge running sup, path scale
    bprev = x
    bv = 1.0
    a_bridge = 0.0
    brho = 0
    lhs_one = 0.0
    lhs_id = 0.0
    rhs_one = 0.0
    rhs_id = 0.0
    e = 0
    while e < n_eta and eta_levels[e] <= sv:
        eta_value[e] = sv
        e += 1
    qm = 0
    while qm < n_mesh and mesh_levels[qm] <= sv:
        rhs_one += sv
        rhs_id += sv * mesh_u[qm]
        qm += 1
    c = 0
    while c < n_cp and cps[c] == 0:
        cp_value[c] = 1.0
        cp_sup[c] = 1.0
        cp_a[c] = 0.0
        cp_bsup[c] = 1.0
        cp_ba[c] = 0.0
        c += 1

    absorbed = -1
    for k in range(1, n_steps + 1):
        xp = x
        if absorbed < 0:
            x = x + (sd * rng.standard_normal() - drift)
            if not geometric and x <= 0.0:
                x = 0.0
                absorbed = k
            if use_bridge:
                if x > bbest:
                    bbest = x
                    brho = k
                if 2.0 * (bbest - xp) * (bbest - x) <= variance * BRIDGE_SKIP_EXPONENT:
                    u = 1.0 - brng.random()
                    m = 0.5 * (xp + x + math.sqrt((x - xp) ** 2 - 2.0 * variance * math.log(u)))
                    if m > bbest:
                        bbest = m
                        brho = k
                if bbest != bprev:
                    nbv = _value(bbest, geometric)
                    a_bridge += _simpson(bv, nbv)
                    bv = nbv
                    bprev = bbest

            if x > best:
                best = x
                nsv = _value(x, geometric)
                k_old = 1.0 - 1.0 / sv
                k_new = 1.0 - 1.0 / nsv
                da = _simpson(sv, nsv)
                a_grid += da
                lhs_one += da
                lhs_id += 0.5 * (k_old + k_new) * da
                sv = nsv
                while e < n_eta and eta_levels[e] <= sv:
                    eta_value[e] = sv
                    e += 1
                while qm < n_mesh and mesh_levels[qm] <= sv:
                    rhs_one += sv
                    rhs_id += sv * mesh_u[qm]
                    qm += 1

            # Coarse grids only change when x reaches their smallest sup or an unhit level.
            if x >= gate:
                gate = math.inf
                for s in range(n_strides):
                    st = strides[s]
                    if k & (st - 1) == 0:
                        j = k // st
                        if x > grid_sup[s]:
                            grid_sup[s] = x
                            first[s] = j
                            last[s] = j
                        elif x == grid_sup[s]:
                            last[s] = j
                        for q in range(n_stop):
                            if stop_hit[s, q] < 0 and x >= stop_x[q]:
                                stop_hit[s, q] = j
                    gate = min(gate, grid_sup[s])
                    for q in range(n_stop):
                        if stop_hit[s, q] < 0:
                            gate = min(gate, stop_x[q])

        while c < n_cp and cps[c] == k:
            cp_value[c] = _value(x, geometric)
            cp_sup[c] = sv
            cp_a[c] = a_grid
            cp_bsup[c] = bv
            cp_ba[c] = a_bridge
            c += 1

    for s in range(n_strides):
        grid_sup[s] = _value(grid_sup[s], geometric)
    tc[0] = lhs_one
    tc[1] = lhs_id
    tc[2] = rhs_one / n_mesh
    tc[3] = rhs_id / n_mesh
    return _value(x, geometric), absorbed, a_grid, bv, brho, a_bridge


def _simulate_range(spec: GeneratorSpec, probes: Probes, start: int, stop: int) -> dict:
    if not spec.family.continuous:
        raise ValueError("the summary kernel covers the Brownian families only")
    grid = spec.grid
    geometric = spec.family is Family.GEOMETRIC_BROWNIAN
    family = _GEOMETRIC if geometric else _STOPPED
    h = grid.step
    n_steps = grid.point_count - 1
    sd = spec.diffusion * math.sqrt(h)
    drift = 0.5 * spec.sigma**2 * h if geometric else 0.0
    variance = spec.diffusion**2 * h

    strides = np.array(probes.strides, dtype=np.int64)
    if np.any(n_steps % strides):
        raise ValueError("every stride must divide the number of grid intervals")
    cps = np.array([grid.index_at_or_after(t) for t in probes.checkpoint_times], dtype=np.int64)
    levels = np.array(probes.stop_levels, dtype=float)
    stop_x = np.log(levels) if geometric else levels
    eta_levels = 1.0 / (1.0 - np.array(probes.eta_us, dtype=float))
    mesh_u = (np.arange(probes.mesh) + 0.5) / probes.mesh
    mesh_levels = 1.0 / (1.0 - mesh_u)

    n = stop - start
    S, Q, C, E = len(strides), len(levels), len(cps), len(eta_levels)
    out = dict(
        grid_sup=np.empty((n, S)),
        first=np.empty((n, S), dtype=np.int64),
        last=np.empty((n, S), dtype=np.int64),
        stop_hit=np.empty((n, S, Q), dtype=np.int64),
        terminal=np.empty(n),
        absorbed_index=np.empty(n, dtype=np.int64),
        cp_value=np.empty((n, C)),
        cp_sup=np.empty((n, C)),
        cp_a=np.empty((n, C)),
        cp_bridge_sup=np.empty((n, C)),
        cp_bridge_a=np.empty((n, C)),
        a_end=np.empty(n),
        bridge_sup=np.empty(n),
        bridge_rho_index=np.empty(n, dtype=np.int64),
        bridge_a_end=np.empty(n),
        eta_value=np.zeros((n, E)),
        tc=np.empty((n, 4)),
        tail_u=np.empty(n),
    )
    for row, i in enumerate(range(start, stop)):
        rng = path_rng(spec.seed, i)
        brng = path_rng(spec.seed, i, STREAM_BRIDGE)
        term, absorbed, a_end, bsup, brho, ba_end = _walk(
            rng, brng, family, n_steps, sd, drift, variance, spec.bridge_max,
            strides, cps, stop_x, eta_levels, mesh_u, mesh_levels,
            out["grid_sup"][row], out["first"][row], out["last"][row], out["stop_hit"][row],
            out["cp_value"][row], out["cp_sup"][row], out["cp_a"][row],
            out["cp_bridge_sup"][row], out["cp_bridge_a"][row],
            out["eta_value"][row], out["tc"][row],
        )
        out["terminal"][row] = term
        out["absorbed_index"][row] = absorbed
        out["a_end"][row] = a_end
        out["bridge_sup"][row] = bsup
        out["bridge_rho_index"][row] = brho
        out["bridge_a_end"][row] = ba_end
        out["tail_u"][row] = tail_uniform(spec.seed, i)
    return out


def simulate_summaries(
    spec: GeneratorSpec, n_paths: int, probes: Probes = Probes(), workers: int = 1
) -> RunSummary:
    """Stream ``n_paths`` paths of ``spec`` through the kernel.

    With ``workers > 1`` contiguous blocks of path indices run in separate
    processes; each path depends only on its own index, so the result is
    identical to a serial run.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    if workers <= 1:
        parts = [_simulate_range(spec, probes, 0, n_paths)]
    else:
        bounds = np.linspace(0, n_paths, workers + 1).astype(int)
        with ProcessPoolExecutor(workers) as pool:
            futures = [
                pool.submit(_simulate_range, spec, probes, int(a), int(b))
                for a, b in zip(bounds[:-1], bounds[1:])
                if b > a
            ]
            parts = [f.result() for f in futures]
    merged = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    tc = merged.pop("tc")
    if not spec.bridge_max:
        for key in ("bridge_sup", "bridge_a_end", "cp_bridge_sup", "cp_bridge_a"):
            merged[key][:] = np.nan
        merged["bridge_rho_index"][:] = -1
    cps = np.array([spec.grid.index_at_or_after(t) for t in probes.checkpoint_times], dtype=np.int64)
    return RunSummary(
        spec=spec,
        probes=probes,
        checkpoint_indices=cps,
        tc_lhs=tc[:, :2],
        tc_rhs=tc[:, 2:],
        **merged,
    )


@dataclass(frozen=True)
class CompletedSups:
    """Terminal suprema after exact-in-law completion beyond the horizon."""

    completed: np.ndarray
    beyond_horizon: np.ndarray


def complete_tails(summary: RunSummary, use_bridge: bool) -> CompletedSups:
    """Apply tail completion to every path alive at the horizon."""
    base = summary.bridge_sup if use_bridge else summary.grid_sup[:, summary.stride_position(1)]
    alive = (summary.absorbed_index < 0) & (summary.terminal > 0)
    # Same draw as generators.complete_supremum: future sup = L_T / U.
    future = np.where(alive, summary.terminal / summary.tail_u, 0.0)
    return CompletedSups(np.maximum(base, future), alive & (future > base))
