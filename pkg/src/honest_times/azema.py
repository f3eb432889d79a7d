"""Azema supermartingale of the time of maximum and its decompositions.

For ``rho`` the time at which ``L`` reaches its overall supremum, the Azema
supermartingale is ``Z = L / L*``. It factors as ``Z = L (1 - K)`` with the
continuous nondecreasing ``K = 1 - 1/L*``, its Doob-Meyer decomposition is
``Z = M - A`` with ``A = int L dK`` (which equals ``log L*``), and the time
change ``eta_u = inf{t : K_t >= u}`` turns ``int f(K) dA`` into an integral
over ``u``. Everything here is computed from a sample path and its running
supremum; the defining relations are then checkable as numerical identities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .generators import TailCompletion
from .paths import (
    RandomTimeSample,
    SamplePath,
    SupremumPath,
    TimeGrid,
    TimeKind,
    rho_min,
    running_supremum,
)

QUADRATURE_RULES = ("simpson", "trapezoid", "left", "right")

FUNCTIONALS: dict = {
    "one": lambda u: np.ones_like(np.asarray(u, dtype=float)),
    "id": lambda u: np.asarray(u, dtype=float),
    "square": lambda u: np.asarray(u, dtype=float) ** 2,
}


def azema_from_path(path: SamplePath, sup: SupremumPath) -> np.ndarray:
    """``Z_t = L_t / L*_t``; in ``[0, 1]``, equal to 1 at new maxima and 0 after absorption."""
    return path.values / sup.values


def k_process(sup: SupremumPath) -> np.ndarray:
    """``K_t = 1 - 1/L*_t``."""
    return 1.0 - 1.0 / sup.values


def a_process(
    path: SamplePath,
    k: np.ndarray,
    sup: Optional[SupremumPath] = None,
    rule: str = "simpson",
) -> np.ndarray:
    """Stieltjes sums for ``A_t = int_0^t L_s dK_s`` on the grid.

    ``dK`` only charges instants where ``L = L*``, and there
    ``L* = 1/(1 - K)``, so over an interval where ``K`` moves the integrand
    runs through ``L*`` from one end to the other. Available rules, with the
    order of the error in ``max_t |A_t - log L*_t|``:

    ``"simpson"`` (default)
        Simpson's rule in the ``K`` variable: ``L*`` at both ends and
        ``1/(1 - K_mid)`` at the midpoint of the ``K`` increment. ``O(step^2)``.
    ``"trapezoid"``
        Average of ``L*`` at the two ends. ``O(step)``.
    ``"left"`` / ``"right"``
        The path value ``L_{j-1}`` / ``L_j``. ``O(sqrt(step))``.

    Parameters
    ----------
    path : SamplePath
    k : ndarray
        ``K`` on the same grid; increments are taken from these stored values.
    sup : SupremumPath, optional
        Running supremum for the end-point values of the simpson and
        trapezoid rules. Defaults to the grid running maximum of ``path``.
    rule : str
    """
    k = np.asarray(k, dtype=float)
    dk = np.diff(k)
    if rule in ("simpson", "trapezoid"):
        s = np.maximum.accumulate(path.values) if sup is None else sup.values
        if rule == "trapezoid":
            weights = 0.5 * (s[:-1] + s[1:])
        else:
            mid = 1.0 / (1.0 - 0.5 * (k[:-1] + k[1:]))
            weights = (s[:-1] + 4.0 * mid + s[1:]) / 6.0
    elif rule == "left":
        weights = path.values[:-1]
    elif rule == "right":
        weights = path.values[1:]
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}; expected one of {QUADRATURE_RULES}")
    a = np.empty_like(k)
    a[0] = 0.0
    np.cumsum(weights * dk, out=a[1:])
    return a


def m_process(z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Martingale part of the Doob-Meyer decomposition, ``M = Z + A``."""
    return np.asarray(z) + np.asarray(a)


@dataclass(frozen=True)
class DecompositionBundle:
    grid: TimeGrid
    sup: SupremumPath
    z: np.ndarray
    k: np.ndarray
    a: np.ndarray
    m: np.ndarray
    k_at_rho: Optional[float] = None


def k_at_rho(
    bundle: DecompositionBundle,
    path: SamplePath,
    rho: RandomTimeSample,
    completion: Optional[TailCompletion] = None,
) -> float:
    """``K`` at the time of maximum, ``1 - 1/L*_inf``.

    Uses the completed terminal supremum when a tail completion is given.
    An infinite ``rho`` without completion means the supremum is never
    attained (a path outside the class where the time of maximum is
    finite) and raises ``ValueError``.
    """
    if completion is not None and completion.applied:
        s = completion.completed_terminal_sup
    elif rho.finite:
        s = bundle.sup.terminal
    else:
        raise ValueError("time of maximum is infinite and no tail completion was supplied")
    return 1.0 - 1.0 / s


def decompose(
    path: SamplePath,
    sup: Optional[SupremumPath] = None,
    rule: str = "simpson",
    completion: Optional[TailCompletion] = None,
) -> DecompositionBundle:
    """Build ``Z, K, A, M`` for one path (and ``K_rho`` when it is defined)."""
    if sup is None:
        sup = running_supremum(path)
    z = azema_from_path(path, sup)
    k = k_process(sup)
    a = a_process(path, k, sup, rule)
    bundle = DecompositionBundle(path.grid, sup, z, k, a, m_process(z, a))
    rho = rho_min(path, sup)
    if rho.finite or (completion is not None and completion.applied):
        kr = k_at_rho(bundle, path, rho, completion)
        bundle = DecompositionBundle(path.grid, sup, z, k, a, bundle.m, kr)
    return bundle


def time_change_eta(k: np.ndarray, u: float, grid: TimeGrid) -> RandomTimeSample:
    """``eta_u``: first grid time with ``K >= u``."""
    if not 0 <= u < 1:
        raise ValueError(f"u must lie in [0, 1), got {u}")
    hit = np.flatnonzero(np.asarray(k) >= u)
    if hit.size == 0:
        return RandomTimeSample.infinite(TimeKind.TIME_CHANGE_ETA_U)
    j = hit[0]
    return RandomTimeSample.at(TimeKind.TIME_CHANGE_ETA_U, grid, j, k[j])


def stopped_at_eta(path: SamplePath, k: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``L_{eta_u} 1{eta_u < inf}`` for an array of levels ``u`` (grid version)."""
    u = np.asarray(u, dtype=float)
    # K is nondecreasing, so the first index with K >= u is a sorted search.
    idx = np.searchsorted(np.asarray(k), u, side="left")
    out = np.zeros_like(u)
    finite = idx < len(k)
    out[finite] = path.values[idx[finite]]
    return out


def time_change_identity_check(
    path: SamplePath,
    k: np.ndarray,
    a: np.ndarray,
    f: Union[str, Callable] = "one",
    mesh: int = 4096,
) -> tuple:
    """Both sides of ``int f(K_t) dA_t = int_0^1 L_{eta_u} 1{eta_u < inf} f(u) du`` on one path.

    The left side is a trapezoidal Stieltjes sum over the grid, the right
    side a midpoint rule on ``mesh`` equal cells of ``[0, 1)``.
    """
    fn = FUNCTIONALS[f] if isinstance(f, str) else f
    k = np.asarray(k, dtype=float)
    fk = fn(k)
    lhs = float(np.sum(0.5 * (fk[:-1] + fk[1:]) * np.diff(a)))
    u = (np.arange(mesh) + 0.5) / mesh
    rhs = float(np.mean(stopped_at_eta(path, k, u) * fn(u)))
    return lhs, rhs
