"""Empirical counterparts of the limit objects, computed from snapshots.

Estimators are pure functions over immutable snapshots.  Empty counts
propagate as -inf, never as floor sentinels.  Aggregation across replicas
is a deterministic fold in replica-id order and distinguishes quenched
batches (shared environment) from annealed batches (fresh environment per
replica).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .analytic import UnsupportedVariantError
from .env_model import (
    EnvRealization,
    Gaussian,
    PointMass,
    QuenchedMoments,
    TwoPoint,
    quenched_moments,
)
from .simulate import GenerationSnapshot

__all__ = [
    "UsageError",
    "MissingPositionsError",
    "DegenerateScaleError",
    "LatticeDisplacementError",
    "free_energy_curve",
    "ldp_interval_rates",
    "quenched_mean_ldp_exact",
    "clt_empirical_cdf",
    "LltGap",
    "llt_gap",
    "fejer_kernel",
    "fejer_smooth",
    "ks_distance",
    "ReplicaSummary",
    "summarize_replica",
    "AggregateReport",
    "aggregate",
]


class UsageError(ValueError):
    """Estimator called with mismatched grids, modes, or replica batches."""


class MissingPositionsError(UsageError):
    """Raw particle positions were not retained for this snapshot."""


class DegenerateScaleError(UsageError):
    """The CLT scale b_n is zero; normalized estimators refuse such input."""


class LatticeDisplacementError(UsageError):
    """A lattice displacement law is present; the local limit needs non-lattice."""


def _positions(snapshot: GenerationSnapshot) -> np.ndarray:
    if snapshot.positions is None:
        raise MissingPositionsError(
            f"snapshot for generation {snapshot.n} has no raw positions "
            "(not retained at this census size / storage policy)"
        )
    return snapshot.positions


def _sorted_positions(snapshot: GenerationSnapshot) -> np.ndarray:
    return np.sort(_positions(snapshot))


# ---------------------------------------------------------------------------
# Free energy and interval counts
# ---------------------------------------------------------------------------


def free_energy_curve(snapshots, t_grid=None):
    """Per-(n, t) free energy values log(partition)/n for generations n >= 1.

    Returns (ns, values) with values[i, j] for generation ns[i] and the
    j-th grid point.  When t_grid is given it must have the same length as
    the stored partition rows (it is the run grid; used for labeling).
    """
    snaps = [s for s in snapshots if s.n >= 1]
    if not snaps:
        raise UsageError("no generations n >= 1 in snapshot list")
    width = snaps[0].log_partition.size
    if t_grid is not None and np.atleast_1d(np.asarray(t_grid)).size != width:
        raise UsageError("t_grid length does not match stored partition columns")
    ns = np.array([s.n for s in snaps])
    values = np.stack([s.log_partition / s.n for s in snaps])
    return ns, values


def grid_index(grid, value: float) -> int:
    """Index of value on a grid, matched to 1e-12; UsageError if absent."""
    grid = np.asarray(grid, dtype=float)
    hits = np.nonzero(np.abs(grid - value) <= 1e-12)[0]
    if hits.size == 0:
        raise UsageError(f"value {value} is not on the grid")
    return int(hits[0])


def ldp_interval_rates(snapshot: GenerationSnapshot, x_grid):
    """Normalized log counts of the half-lines scaled by the generation.

    Returns (upper, lower): upper[j] = log(#{S_u >= n x_j})/n and
    lower[j] = log(#{S_u <= n x_j})/n, with -inf for empty counts.
    """
    pos = _sorted_positions(snapshot)
    n = snapshot.n
    if n < 1:
        raise UsageError("interval rates need a generation n >= 1")
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    thresholds = n * x_grid
    upper_counts = pos.size - np.searchsorted(pos, thresholds, side="left")
    lower_counts = np.searchsorted(pos, thresholds, side="right")
    with np.errstate(divide="ignore"):
        upper = np.where(upper_counts > 0, np.log(np.maximum(upper_counts, 1)), -np.inf) / n
        lower = np.where(lower_counts > 0, np.log(np.maximum(lower_counts, 1)), -np.inf) / n
    return upper, lower


def _discrete_atoms(law):
    if isinstance(law, PointMass):
        return [(law.c, 1.0)]
    if isinstance(law, TwoPoint):
        atoms = []
        if law.p > 0.0:
            atoms.append((law.d, law.p))
        if law.p < 1.0:
            atoms.append((-law.d, 1.0 - law.p))
        return atoms
    raise UnsupportedVariantError(f"no discrete atoms for {type(law).__name__}")


_MAX_SUPPORT = 200_000


def quenched_mean_ldp_exact(realization: EnvRealization, x: float, n: int) -> float:
    """Exact (1/n) log of the conditional-mean tail mass on n[x, inf).

    The conditional mean of the counting measure is P_n times the n-fold
    convolution of the per-generation intensity measures.  For Gaussian /
    point-mass displacements that convolution is a normal law evaluated in
    log space via the complementary error function; for purely discrete
    displacement families it is enumerated exactly up to n <= 30.
    No simulation is involved.
    """
    if n < 1 or n > len(realization):
        raise UsageError(f"n must be in [1, {len(realization)}], got {n}")
    states = realization.states[:n]
    laws = [s.displacement for s in states]
    moments = quenched_moments(EnvRealization(states), [0.0])
    log_p_n = moments.log_p[n]
    threshold = n * x

    if all(isinstance(l, (Gaussian, PointMass)) for l in laws):
        a_n = moments.a[n]
        b_n = moments.b[n]
        if b_n == 0.0:
            log_tail = 0.0 if threshold <= a_n + 1e-12 * max(1.0, abs(a_n)) else -math.inf
        else:
            log_tail = float(norm.logsf((threshold - a_n) / b_n))
        return (log_p_n + log_tail) / n

    if all(isinstance(l, (TwoPoint, PointMass)) for l in laws):
        if n > 30:
            raise UnsupportedVariantError(
                "exact discrete convolution supported only up to n <= 30"
            )
        dist = {0.0: 1.0}
        for law in laws:
            atoms = _discrete_atoms(law)
            new = {}
            for v, w in dist.items():
                for offset, q in atoms:
                    key = round(v + offset, 9)
                    new[key] = new.get(key, 0.0) + w * q
            if len(new) > _MAX_SUPPORT:
                raise UnsupportedVariantError("discrete convolution support too large")
            dist = new
        tail = math.fsum(w for v, w in sorted(dist.items()) if v >= threshold - 1e-9)
        log_tail = math.log(tail) if tail > 0.0 else -math.inf
        return (log_p_n + log_tail) / n

    raise UnsupportedVariantError(
        "exact conditional-mean tails need all-Gaussian/point-mass or "
        "all-discrete displacement laws"
    )


# ---------------------------------------------------------------------------
# CLT / LLT estimators
# ---------------------------------------------------------------------------


def clt_empirical_cdf(
    snapshot: GenerationSnapshot,
    moments: QuenchedMoments | None,
    x_grid,
    *,
    center: float | None = None,
    scale: float | None = None,
) -> np.ndarray:
    """Empirical CDF of normalized positions at the grid points.

    Normalizers default to the cumulative quenched moments (a_n, b_n);
    pass center/scale explicitly for annealed normalizations.  +/- inf
    sentinels in the grid map to CDF values 1 and 0.
    """
    pos = _sorted_positions(snapshot)
    n = snapshot.n
    if center is None or scale is None:
        if moments is None:
            raise UsageError("need either quenched moments or explicit center/scale")
        center = moments.a[n] if center is None else center
        scale = moments.b[n] if scale is None else scale
    if scale <= 0.0:
        raise DegenerateScaleError(f"CLT scale is {scale} at generation {n}")
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    thresholds = scale * x_grid + center
    counts = np.searchsorted(pos, thresholds, side="right")
    return counts / pos.size


@dataclass(frozen=True, eq=False)
class LltGap:
    sup_gap: float
    x_grid: np.ndarray
    gaps: np.ndarray


def llt_gap(
    snapshot: GenerationSnapshot,
    moments: QuenchedMoments,
    h: float,
    x_grid=None,
) -> LltGap:
    """Window-count density gaps against the normal density.

    For each window (x, x+h) the signed gap is
    b_n * count / census - h * phi((x - a_n)/b_n).  The default grid spans
    a_n +/- 4 b_n in steps of 0.1 b_n; beyond that range both terms are
    negligible at desk scale.  Refused for lattice displacement laws.
    """
    if h <= 0.0:
        raise UsageError(f"window width must be > 0, got {h}")
    if moments.lattice:
        raise LatticeDisplacementError(
            "local limit estimators require non-lattice displacement laws "
            "in every generation (lattice law present)"
        )
    pos = _sorted_positions(snapshot)
    n = snapshot.n
    a_n = moments.a[n]
    b_n = moments.b[n]
    if b_n <= 0.0:
        raise DegenerateScaleError(f"CLT scale is {b_n} at generation {n}")
    if x_grid is None:
        x_grid = a_n + b_n * np.arange(-4.0, 4.0 + 1e-12, 0.1)
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    lo = np.searchsorted(pos, x_grid, side="right")
    hi = np.searchsorted(pos, x_grid + h, side="left")
    window_mass = (hi - lo) / pos.size
    gaps = b_n * window_mass - h * norm.pdf((x_grid - a_n) / b_n)
    return LltGap(sup_gap=float(np.abs(gaps).max()), x_grid=x_grid, gaps=gaps)


def fejer_kernel(y):
    """Nonnegative summability kernel with band-limited transform;
    integrates to one, peaks at 1/(2 pi)."""
    y = np.asarray(y, dtype=float)
    out = np.sinc(y / (2.0 * math.pi)) ** 2 / (2.0 * math.pi)
    return out if out.ndim else float(out)


def fejer_smooth(
    snapshot: GenerationSnapshot,
    moments: QuenchedMoments,
    a: float,
    x_grid,
) -> np.ndarray:
    """Kernel-smoothed mean-normalized particle density at the grid points.

    Direct spatial convolution: value(x) = (1/P_n) sum_u K_a(x - S_u),
    computed as W_n times the particle average of K_a.
    """
    if a <= 0.0:
        raise UsageError(f"bandwidth must be > 0, got {a}")
    pos = _positions(snapshot)
    w_n = snapshot.w_n
    if not math.isfinite(w_n):
        w_n = math.exp(math.log(snapshot.count) - moments.log_p[snapshot.n])
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    chunk = max(1, (1 << 22) // max(1, x_grid.size))
    acc = np.zeros(x_grid.size)
    for k in range(0, pos.size, chunk):
        block = pos[k : k + chunk]
        acc += fejer_kernel((x_grid[:, None] - block[None, :]) / a).sum(axis=1)
    return w_n * acc / (a * pos.size)


def ks_distance(empirical, reference) -> float:
    """Max absolute difference between two CDF tables on a shared grid."""
    emp = np.atleast_1d(np.asarray(empirical, dtype=float))
    ref = np.atleast_1d(np.asarray(reference, dtype=float))
    if emp.shape != ref.shape:
        raise UsageError(f"grid mismatch: {emp.shape} vs {ref.shape}")
    for name, arr in (("empirical", emp), ("reference", ref)):
        if (np.diff(arr) < -1e-12).any():
            raise UsageError(f"{name} CDF values are not nondecreasing")
    return float(np.abs(emp - ref).max())


# ---------------------------------------------------------------------------
# Replica summaries and aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReplicaSummary:
    """Per-replica extract of everything the aggregation modes consume."""

    replica_id: int
    environment_id: str
    n: int
    count: int
    log_p: float
    w_n: float
    ns: np.ndarray
    w_trace: np.ndarray
    free_energy: np.ndarray | None = None
    ldp_upper: np.ndarray | None = None
    ldp_lower: np.ndarray | None = None
    clt_cdf: np.ndarray | None = None
    llt_sup_gap: float | None = None
    interval_ratio: np.ndarray | None = None
    ratio_ns: np.ndarray | None = None
    survived: bool = True


def summarize_replica(
    snapshots,
    moments: QuenchedMoments,
    *,
    replica_id: int,
    environment_id: str,
    x_grid=None,
    clt_center: float | None = None,
    clt_scale: float | None = None,
    llt_h: float | None = None,
    ratio_x: float | None = None,
    ratio_ns=None,
) -> ReplicaSummary:
    """Build a ReplicaSummary from one run's snapshots.

    CDF / LLT / ratio blocks are filled only when their inputs (grids,
    window width, tail points) are supplied and the final snapshot retains
    positions.
    """
    final = snapshots[-1]
    body = [s for s in snapshots if s.n >= 1]
    ns = np.array([s.n for s in body])
    w_trace = np.array([s.w_n for s in body])
    fe = np.stack([s.log_partition / s.n for s in body])

    clt = None
    ldp_upper = ldp_lower = None
    llt_sup = None
    if x_grid is not None and final.positions is not None:
        scale = clt_scale if clt_scale is not None else moments.b[final.n]
        if scale > 0.0:
            clt = clt_empirical_cdf(final, moments, x_grid, center=clt_center, scale=clt_scale)
        ldp_upper, ldp_lower = ldp_interval_rates(final, x_grid)
        if llt_h is not None and not moments.lattice and moments.b[final.n] > 0:
            llt_sup = llt_gap(final, moments, llt_h).sup_gap

    ratio = None
    rns = None
    if ratio_x is not None:
        rns = np.array(
            [s.n for s in body if s.positions is not None and (ratio_ns is None or s.n in ratio_ns)]
        )
        vals = []
        for s in body:
            if s.positions is not None and (ratio_ns is None or s.n in ratio_ns):
                vals.append((s.positions >= s.n * ratio_x).sum() / s.count)
        ratio = np.array(vals)

    return ReplicaSummary(
        replica_id=replica_id,
        environment_id=environment_id,
        n=final.n,
        count=final.count,
        log_p=float(moments.log_p[final.n]),
        w_n=final.w_n,
        ns=ns,
        w_trace=w_trace,
        free_energy=fe,
        ldp_upper=ldp_upper,
        ldp_lower=ldp_lower,
        clt_cdf=clt,
        llt_sup_gap=llt_sup,
        interval_ratio=ratio,
        ratio_ns=rns,
    )


@dataclass(frozen=True, eq=False)
class AggregateReport:
    """Cross-replica point estimates, standard errors, and KS distances."""

    mode: str
    n_replicas: int
    environment_ids: tuple
    estimates: dict
    standard_errors: dict
    ks: dict


_MODES = ("quenched-mean", "annealed-mean", "conditioned")


def _check_environments(mode: str, ids) -> None:
    distinct = len(set(ids))
    if mode in ("quenched-mean", "conditioned") and distinct != 1:
        raise UsageError(
            f"{mode} aggregation requires one shared environment, got {distinct}"
        )
    if mode == "annealed-mean" and distinct != len(ids):
        raise UsageError("annealed aggregation requires a fresh environment per replica")


def _mean_se(rows: np.ndarray):
    mean = rows.mean(axis=0)
    if rows.shape[0] > 1:
        se = rows.std(axis=0, ddof=1) / math.sqrt(rows.shape[0])
    else:
        se = np.zeros_like(mean)
    return mean, se


def aggregate(
    mode: str,
    summaries,
    *,
    reference_cdf=None,
    cdf_weighting: str | None = None,
) -> AggregateReport:
    """Fold replica summaries into cross-replica estimates.

    CDF weighting: "uniform" (quenched and conditioned default),
    "count" (census-proportional, the annealed default, estimating the
    mean-measure ratio), or "martingale" (census/mean-census proportional).
    The survival-restricted mode averages over surviving replicas only;
    with the supported laws every replica survives.
    """
    if mode not in _MODES:
        raise UsageError(f"unknown mode {mode!r}; expected one of {_MODES}")
    summaries = sorted(summaries, key=lambda s: s.replica_id)
    if mode == "conditioned":
        summaries = [s for s in summaries if s.survived]
    if len(summaries) < 2:
        raise UsageError("aggregation needs at least 2 replicas")
    ids = [s.environment_id for s in summaries]
    _check_environments(mode, ids)
    if cdf_weighting is None:
        cdf_weighting = "count" if mode == "annealed-mean" else "uniform"
    if cdf_weighting not in ("uniform", "count", "martingale"):
        raise UsageError(f"unknown cdf weighting {cdf_weighting!r}")

    estimates: dict = {}
    ses: dict = {}
    ks: dict = {}

    w_final = np.array([s.w_n for s in summaries])
    estimates["w_mean"], ses["w_mean"] = _mean_se(w_final[:, None])
    estimates["w_mean"] = float(estimates["w_mean"][0])
    ses["w_mean"] = float(ses["w_mean"][0])

    traces = np.stack([s.w_trace for s in summaries])
    estimates["w_trace_mean"], ses["w_trace_mean"] = _mean_se(traces)
    estimates["ns"] = summaries[0].ns

    if all(s.free_energy is not None for s in summaries):
        fe = np.stack([s.free_energy for s in summaries])
        estimates["free_energy_mean"], ses["free_energy_mean"] = _mean_se(fe)
        estimates["free_energy_median"] = np.median(fe, axis=0)

    if all(s.clt_cdf is not None for s in summaries):
        cdfs = np.stack([s.clt_cdf for s in summaries])
        if cdf_weighting == "uniform":
            weights = np.ones(len(summaries))
        elif cdf_weighting == "count":
            weights = np.array([float(s.count) for s in summaries])
        else:
            weights = np.array([s.w_n for s in summaries])
        weights = weights / weights.sum()
        estimates["cdf"] = weights @ cdfs
        if reference_cdf is not None:
            ks["cdf"] = ks_distance(estimates["cdf"], reference_cdf)

    if all(s.ldp_upper is not None for s in summaries):
        ldp = np.stack([s.ldp_upper for s in summaries])
        estimates["ldp_upper_median"] = np.median(ldp, axis=0)
        with np.errstate(invalid="ignore"):
            # -inf tags (empty tails) propagate: mean -inf, SE nan.
            estimates["ldp_upper_mean"], ses["ldp_upper_mean"] = _mean_se(ldp)

    if all(s.llt_sup_gap is not None for s in summaries):
        gaps = np.array([s.llt_sup_gap for s in summaries])
        estimates["llt_sup_gap_median"] = float(np.median(gaps))

    if all(s.interval_ratio is not None for s in summaries):
        ratios = np.stack([s.interval_ratio for s in summaries])
        mean_ratio = ratios.mean(axis=0)
        with np.errstate(divide="ignore"):
            estimates["interval_ratio_log_mean"] = np.where(
                mean_ratio > 0.0, np.log(np.maximum(mean_ratio, 1e-300)), -np.inf
            )
        estimates["ratio_ns"] = summaries[0].ratio_ns

    return AggregateReport(
        mode=mode,
        n_replicas=len(summaries),
        environment_ids=tuple(ids),
        estimates=estimates,
        standard_errors=ses,
        ks=ks,
    )
