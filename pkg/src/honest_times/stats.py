"""Hypothesis tests for the laws satisfied by the time of maximum.

Each test returns a :class:`StatReport` whose ``passed`` flag is exactly
``statistic <= threshold``; the per-level / per-check numbers behind the
statistic go into ``metadata`` so that refinement trends stay visible.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .azema import DecompositionBundle
from .paths import SamplePath, rho_max, rho_min


@dataclass(frozen=True)
class StatReport:
    test_name: str
    sample_size: int
    statistic: float
    threshold: float
    passed: bool
    tail_completion_used: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sample_size <= 0:
            raise ValueError("a report needs a positive sample size")

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _report(name, n, statistic, threshold, completion, metadata) -> StatReport:
    statistic = float(statistic)
    threshold = float(threshold)
    return StatReport(name, int(n), statistic, threshold, statistic <= threshold, completion, metadata)


# ---------------------------------------------------------------------------
# Doob maximal identity
# ---------------------------------------------------------------------------


def doob_tail_test(
    terminal_sups,
    levels: Sequence[float] = (2.0, 4.0, 8.0),
    n_sigma: float = 4.0,
    step: Optional[float] = None,
    tail_completion_used: bool = False,
    allowance_factor: float = 3.0,
) -> StatReport:
    """Compare ``P[L*_inf > x]`` with ``1/x`` at each level.

    A level passes when ``|p_hat - 1/x| <= n_sigma * se + allowance`` with
    ``se = sqrt(p (1 - p) / N)`` at ``p = 1/x`` and
    ``allowance = allowance_factor * sqrt(step)`` (zero without a step). The
    statistic is the worst ``(|p_hat - 1/x| - allowance) / se`` over levels,
    compared with ``n_sigma``.

    Completed suprema are rejected: the completion samples the very law
    under test.
    """
    if tail_completion_used:
        raise ValueError("Doob tail test refuses tail-completed suprema (circular)")
    levels = np.asarray(levels, dtype=float)
    if levels.size == 0 or np.any(levels <= 1):
        raise ValueError("levels must all exceed 1")
    sups = np.asarray(terminal_sups, dtype=float)
    n = sups.size
    if n == 0:
        raise ValueError("no suprema supplied")
    allowance = allowance_factor * math.sqrt(step) if step is not None else 0.0
    freq = np.array([(sups > x).mean() for x in levels])
    target = 1.0 / levels
    se = np.sqrt(target * (1.0 - target) / n)
    excess = (np.abs(freq - target) - allowance) / se
    metadata = dict(
        levels=levels,
        frequencies=freq,
        targets=target,
        standard_errors=se,
        allowance=allowance,
        step=step,
        sigma_excess=excess,
        # one-sided maximal inequality P[L* > x] <= 1/x, within sampling error
        inequality_holds=bool(np.all(freq <= target + n_sigma * se)),
    )
    return _report("doob_tail", n, excess.max(), n_sigma, False, metadata)


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov against Uniform[0, 1]
# ---------------------------------------------------------------------------


def kolmogorov_cdf(t: float, terms: int = 100) -> float:
    """Limiting law of ``sqrt(N) D_N``: ``1 - 2 sum (-1)^(k-1) exp(-2 k^2 t^2)``.

    Below ``t = 1`` the equivalent Jacobi-theta series is used; the
    alternating one converges slowly there.
    """
    if t <= 0:
        return 0.0
    k = np.arange(1, terms + 1)
    if t < 1.0:
        return float(math.sqrt(2 * math.pi) / t * np.sum(np.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8 * t * t))))
    return float(1.0 - 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * t * t)))


def kolmogorov_quantile(p: float) -> float:
    """Inverse of :func:`kolmogorov_cdf`."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    return brentq(lambda t: kolmogorov_cdf(t) - p, 0.05, 10.0, xtol=1e-14)


def ks_statistic(samples) -> float:
    """One-sample ``D_N = sup |F_N - F|`` against Uniform[0, 1]."""
    x = np.sort(np.clip(np.asarray(samples, dtype=float), 0.0, 1.0))
    n = x.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - x), np.max(x - (i - 1) / n)))


def ks_uniform_test(samples, alpha: float = 0.01, inflation: float = 2.0, tail_completion_used: bool = False) -> StatReport:
    """KS test of uniformity with an inflated asymptotic critical value."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty sample set")
    n = samples.size
    d = ks_statistic(samples)
    raw = kolmogorov_quantile(1.0 - alpha) / math.sqrt(n)
    metadata = dict(alpha=alpha, raw_threshold=raw, inflation=inflation, passes_raw=d <= raw)
    return _report("ks_uniform", n, d, inflation * raw, tail_completion_used, metadata)


# ---------------------------------------------------------------------------
# Avoidance of stopping times
# ---------------------------------------------------------------------------


def avoidance_test(rhos: Sequence, taus: Sequence, steps: Sequence[float], fit_factor: float = 2.0) -> StatReport:
    """Grid coincidence frequency ``P[rho = tau]`` under step refinement.

    ``rhos[i]`` and ``taus[i]`` hold grid indices at ``steps[i]`` (``-1`` or
    ``None`` for infinite; infinite never coincides). Passes when the
    frequency strictly decreases along the (decreasing) steps, or is zero
    throughout, and at the finest step is at most ``fit_factor`` times the
    least-squares fit ``c * step`` through the origin. The statistic is the
    ratio of the finest frequency to that fit (``inf`` when not monotone).
    A log-log power-law fit is reported alongside.
    """
    steps = np.asarray(steps, dtype=float)
    if len(rhos) != len(taus) or len(rhos) != steps.size:
        raise ValueError("need one rho and one tau sample per step")
    if np.any(np.diff(steps) >= 0):
        raise ValueError("steps must be strictly decreasing")
    freqs = []
    n = None
    for r, t in zip(rhos, taus):
        r = _as_index(r)
        t = _as_index(t)
        if r.shape != t.shape or (n is not None and r.size != n):
            raise ValueError("mismatched sample counts")
        n = r.size
        freqs.append(np.mean((r == t) & (r >= 0)))
    freqs = np.array(freqs)
    monotone = bool(np.all(np.diff(freqs) < 0) or np.all(freqs == 0))
    c = float(np.dot(steps, freqs) / np.dot(steps, steps))
    fitted = c * steps[-1]
    ratio = freqs[-1] / fitted if fitted > 0 else 0.0
    metadata = dict(
        steps=steps,
        frequencies=freqs,
        counts=np.round(freqs * n).astype(int),
        linear_coefficient=c,
        monotone=monotone,
        ratio_to_linear_fit=ratio,
    )
    positive = freqs > 0
    if positive.sum() >= 2:
        slope, intercept = np.polyfit(np.log(steps[positive]), np.log(freqs[positive]), 1)
        power_fit = math.exp(intercept) * steps[-1] ** slope
        metadata.update(power_exponent=slope, ratio_to_power_fit=freqs[-1] / power_fit)
    statistic = ratio if monotone else math.inf
    return _report("avoidance", n, statistic, fit_factor, False, metadata)


def _as_index(values) -> np.ndarray:
    if isinstance(values, np.ndarray):
        return values.astype(np.int64)
    return np.array([-1 if v is None else int(v) for v in values], dtype=np.int64)


# ---------------------------------------------------------------------------
# Orthogonality of the martingale part and of the optional projection
# ---------------------------------------------------------------------------

H_LIBRARY = {
    "one": lambda l, s: np.ones_like(l),
    "value": lambda l, s: l,
    "sup": lambda l, s: s,
    "sup_above_2": lambda l, s: (s > 2.0).astype(float),
}


@dataclass(frozen=True)
class CheckpointTable:
    """Per-path values at checkpoint times; arrays are ``[path, checkpoint]``.

    ``rho_after[i, c]`` says whether path ``i``'s time of maximum lies strictly
    after checkpoint ``c``.
    """

    times: np.ndarray
    value: np.ndarray
    sup: np.ndarray
    a: np.ndarray
    rho_after: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return self.value / self.sup

    @property
    def m(self) -> np.ndarray:
        return self.z + self.a


def checkpoint_table(paths: Sequence[SamplePath], bundles: Sequence[DecompositionBundle], times: Sequence[float]) -> CheckpointTable:
    """Assemble a :class:`CheckpointTable` from full paths and their decompositions."""
    if not paths:
        raise ValueError("no paths supplied")
    grid = paths[0].grid
    idx = np.array([grid.index_at_or_after(t) for t in times])
    value = np.array([p.values[idx] for p in paths])
    sup = np.array([b.sup.values[idx] for b in bundles])
    a = np.array([b.a[idx] for b in bundles])
    after = []
    for p, b in zip(paths, bundles):
        r = rho_min(p, b.sup)
        after.append(idx < r.grid_index if r.finite else np.ones(idx.size, dtype=bool))
    return CheckpointTable(np.asarray(times, dtype=float), value, sup, a, np.array(after))


def _mean_check(x: np.ndarray) -> tuple:
    n = x.size
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return mean, se


def martingale_orthogonality_test(
    table: CheckpointTable,
    functionals: Sequence[str] = tuple(H_LIBRARY),
    n_sigma: float = 4.0,
    horizon: Optional[float] = None,
    tail_completion_used: bool = False,
) -> StatReport:
    """Monte Carlo orthogonality checks.

    (i) ``E[(M_t - M_s) h_s] = 0`` for checkpoint pairs ``s < t``, with
    ``s = 0`` included (``M_0 = 1`` and ``h_0`` constant), so ``h = 1``
    gives ``E[M_t] = 1``.
    (ii) ``E[(1{rho > t} - Z_t) h_t] = 0``: ``Z`` is the optional
    projection of ``1{rho > t}``.

    ``h`` ranges over ``functionals`` (keys of ``H_LIBRARY``, functions of
    ``L_s`` and ``L*_s``). The statistic is the largest ``|mean| / se``.
    An exactly zero integrand (``se = 0``) counts as zero sigmas.
    """
    times = np.asarray(table.times)
    if horizon is not None and np.any(times > horizon):
        raise ValueError("checkpoints beyond the horizon")
    unknown = set(functionals) - set(H_LIBRARY)
    if unknown:
        raise ValueError(f"unknown functionals {sorted(unknown)}")
    n = table.value.shape[0]
    ones = np.ones((n, 1))
    value = np.hstack([ones, table.value])
    sup = np.hstack([ones, table.sup])
    m = np.hstack([ones, table.m])
    t_all = np.concatenate([[0.0], times])
    checks = []
    for name in functionals:
        h = H_LIBRARY[name]
        for i in range(len(t_all)):
            for j in range(i + 1, len(t_all)):
                x = (m[:, j] - m[:, i]) * h(value[:, i], sup[:, i])
                checks.append(("martingale", name, t_all[i], t_all[j], *_mean_check(x)))
        for c, t in enumerate(times):
            x = (table.rho_after[:, c].astype(float) - table.z[:, c]) * h(table.value[:, c], table.sup[:, c])
            checks.append(("projection", name, t, t, *_mean_check(x)))
    sig = []
    for *_, mean, se in checks:
        sig.append(0.0 if se == 0 and mean == 0 else abs(mean) / se if se > 0 else math.inf)
    metadata = dict(
        checks=[
            dict(family=f, h=h, s=s, t=t, mean=mean, se=se, sigmas=z)
            for (f, h, s, t, mean, se), z in zip(checks, sig)
        ],
        mean_m=dict(zip(times.tolist(), table.m.mean(axis=0).tolist())),
        mean_rho_after=dict(zip(times.tolist(), table.rho_after.mean(axis=0).tolist())),
        mean_z=dict(zip(times.tolist(), table.z.mean(axis=0).tolist())),
    )
    return _report("martingale_orthogonality", n, max(sig), n_sigma, tail_completion_used, metadata)


# ---------------------------------------------------------------------------
# Uniqueness of the time of maximum and Z_rho = 1
# ---------------------------------------------------------------------------


def uniqueness_counts(paths: Iterable[SamplePath], bundles: Iterable[DecompositionBundle], completed=None) -> dict:
    """Count paths with (a) ``rho_min != rho_max``, (b) infinite ``rho_min`` without completion, (c) ``Z_rho != 1``.

    ``paths`` and ``bundles`` may be lazy iterables; ``completed[i]`` flags
    paths whose supremum was completed beyond the horizon.
    """
    n = tie = unattained = z_not_one = 0
    for i, (p, b) in enumerate(zip(paths, bundles)):
        n += 1
        r0 = rho_min(p, b.sup)
        r1 = rho_max(p, b.sup)
        if r0.grid_index != r1.grid_index:
            tie += 1
        if not r0.finite:
            if completed is None or not completed[i]:
                unattained += 1
        elif b.z[r0.grid_index] != 1.0:
            z_not_one += 1
    return dict(paths=n, rho_min_ne_rho_max=tie, unattained=unattained, z_rho_ne_one=z_not_one)


def uniqueness_and_z_one_test(paths, bundles, completed=None) -> StatReport:
    """Pass iff every path has a unique, attained time of maximum with ``Z_rho = 1``."""
    counts = uniqueness_counts(paths, bundles, completed)
    bad = counts["rho_min_ne_rho_max"] + counts["unattained"] + counts["z_rho_ne_one"]
    return _report("uniqueness_and_z_one", counts["paths"], bad, 0, completed is not None, counts)


def counterexample_unattained_test(paths, bundles) -> StatReport:
    """Expected-failure variant for a supremum that is never attained.

    Passes iff *every* path has an infinite first time of maximum (and so
    no ties and no ``Z_rho`` to check). The statistic is the number of paths
    that do attain their supremum.
    """
    counts = uniqueness_counts(paths, bundles)
    attained = counts["paths"] - counts["unattained"]
    return _report("counterexample_unattained", counts["paths"], attained, 0, False, counts)


# ---------------------------------------------------------------------------
# Time change eta_u
# ---------------------------------------------------------------------------


def time_change_test(
    eta_values,
    us: Sequence[float],
    n_sigma: float = 4.0,
    identity_lhs=None,
    identity_rhs=None,
    tail_completion_used: bool = False,
) -> StatReport:
    """``E[L_{eta_u} 1{eta_u < inf}] = 1`` for each ``u``.

    ``eta_values[:, j]`` holds ``L_{eta_u}`` (0 when ``eta_u`` is infinite)
    for ``us[j]``. The statistic is the largest ``|mean - 1| / se``. When
    per-path sides of the time-change identity are given, their means and
    mean absolute gaps are reported (not gated).
    """
    eta = np.asarray(eta_values, dtype=float)
    if eta.ndim != 2 or eta.shape[1] != len(us):
        raise ValueError("eta_values must have one column per u")
    n = eta.shape[0]
    means = eta.mean(axis=0)
    se = eta.std(axis=0, ddof=1) / math.sqrt(n)
    sig = np.abs(means - 1.0) / se
    metadata = dict(us=list(us), means=means, standard_errors=se, sigmas=sig)
    if identity_lhs is not None:
        lhs = np.asarray(identity_lhs, dtype=float)
        rhs = np.asarray(identity_rhs, dtype=float)
        metadata.update(
            identity_lhs_mean=lhs.mean(axis=0),
            identity_rhs_mean=rhs.mean(axis=0),
            identity_mean_abs_gap=np.abs(lhs - rhs).mean(axis=0),
        )
    return _report("time_change", n, sig.max(), n_sigma, tail_completion_used, metadata)
