"""Theorem-by-theorem verification: analytic prediction vs estimator.

Each check pairs a limit-theorem prediction from the analytic module with
the matching estimator output, applies a fixed tolerance, and records a
verdict.  Checks whose hypotheses the configured model does not satisfy
are reported as SKIP with the violated hypothesis quoted; a population
overflow marks the check ERROR and the suite continues.

Almost-sure limits cannot be certified at a single finite horizon, so
simulation-backed checks use the median over tree replicas at the largest
horizon plus a trend check across increasing horizons (the error may not
grow by more than 20% between successive horizons).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import norm

from . import analytic, estimators
from .env_model import (
    ConstantEnvironment,
    EnvironmentModel,
    EnvRealization,
    Gaussian,
    IIDEnvironment,
    PointMass,
    quenched_moments,
    sample_environment,
)
from .simulate import PopulationOverflowError, SimConfig, run_tree

__all__ = [
    "TheoremCheck",
    "SuiteConfig",
    "SuiteReport",
    "default_suite_config",
    "run_suite",
]

THEOREM_IDS = (
    "T2.1", "T2.2", "T2.3", "T3.1", "T3.2/C3.3", "T3.4", "T5.1",
    "T9.1", "T9.2", "T9.3", "T10.2", "T10.4/C10.5", "T12.1",
)

_X_GRID = tuple(float(v) for v in np.round(np.arange(-4.0, 4.0 + 1e-9, 0.05), 10))


@dataclass
class TheoremCheck:
    theorem: str
    config_id: str
    description: str
    predicted: object = None
    measured: object = None
    tolerance: object = None
    verdict: str = "pass"
    detail: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SuiteConfig:
    """Scenario sizes for one suite run.  Defaults mirror the acceptance
    battery; tolerances are fixed here, not calibrated later."""

    model: EnvironmentModel
    config_id: str
    seed: int
    fe_horizon: int = 20
    fe_replicas: int = 16
    fe_t_checks: tuple = (0.0, 0.5, 1.0, 3.0)
    fe_t_tols: tuple = (0.05, 0.05, 0.05, 0.15)
    ldp_x: float = 0.8
    ldp_tol: float = 0.08
    exact_n: int = 400
    exact_tol: float = 0.01
    annealed_n: int = 400
    annealed_tol: float = 0.02
    speed_tol: float = 0.25
    trend_slack: float = 1.2
    slope_tol: float = 0.1
    clt_horizon: int = 20
    clt_ks_tol: float = 0.05
    llt_h: float = 0.5
    llt_sup_tol: float = 0.05
    llt_window_tol: float = 0.03
    annealed_replicas: int = 500
    annealed_horizon: int = 15
    annealed_ks_tol: float = 0.05
    cap: int = 1 << 24
    x_grid: tuple = _X_GRID


def _projected_census(realization: EnvRealization, horizon: int) -> float:
    size = 1.0
    for state in realization.states[:horizon]:
        size *= state.m0
    return size


def _fit_horizon(realization: EnvRealization, target: int, cap: int, frac: float) -> int:
    h = target
    while h > 2 and _projected_census(realization, h) > frac * cap:
        h -= 1
    return h


def default_suite_config(
    model: EnvironmentModel, config_id: str, seed: int, scale: str = "full"
) -> SuiteConfig:
    """Build the default battery, trimming tree horizons to fit the cap."""
    cfg = SuiteConfig(model=model, config_id=config_id, seed=seed)
    if scale == "smoke":
        cfg = replace(
            cfg,
            fe_horizon=10,
            fe_replicas=4,
            exact_n=120,
            annealed_n=120,
            clt_horizon=10,
            annealed_replicas=24,
            annealed_horizon=8,
        )
    elif scale != "full":
        raise ValueError(f"unknown suite scale {scale!r}")
    probe = sample_environment(model, max(cfg.fe_horizon, cfg.clt_horizon), seed, stream_id=0)
    fe_h = _fit_horizon(probe, cfg.fe_horizon, cfg.cap, 0.5)
    clt_h = _fit_horizon(probe, cfg.clt_horizon, cfg.cap, 0.9)
    ann_h = _fit_horizon(probe, cfg.annealed_horizon, cfg.cap, 0.25)
    cfg = replace(cfg, fe_horizon=fe_h, clt_horizon=clt_h, annealed_horizon=ann_h)
    if not isinstance(model, ConstantEnvironment):
        # A random environment path adds O(n^{-1/2}) fluctuation to the
        # quenched-mean rate; push the horizon out and widen the tolerance.
        cfg = replace(cfg, exact_n=5 * cfg.exact_n, exact_tol=0.05)
    return cfg


# ---------------------------------------------------------------------------
# Verdict helpers
# ---------------------------------------------------------------------------


def _close(measured: float, predicted: float, tol: float) -> bool:
    if math.isinf(predicted) or math.isinf(measured):
        return predicted == measured
    return abs(measured - predicted) <= tol


def _verdict(measured, predicted, tolerance) -> str:
    m = np.atleast_1d(np.asarray(measured, dtype=float))
    p = np.atleast_1d(np.asarray(predicted, dtype=float))
    t = np.broadcast_to(np.atleast_1d(np.asarray(tolerance, dtype=float)), m.shape)
    ok = all(_close(mi, pi, ti) for mi, pi, ti in zip(m, p, t))
    return "pass" if ok else "fail"


def _jsonable(value):
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


@dataclass
class SuiteReport:
    config_id: str
    seed: int
    checks: list

    @property
    def summary(self) -> dict:
        counts = {"pass": 0, "fail": 0, "SKIP": 0, "ERROR": 0}
        for c in self.checks:
            counts[c.verdict] = counts.get(c.verdict, 0) + 1
        return counts

    @property
    def failed(self) -> bool:
        s = self.summary
        return s.get("fail", 0) > 0 or s.get("ERROR", 0) > 0

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "config_id": self.config_id,
            "seed": self.seed,
            "summary": self.summary,
            "checks": [
                {
                    "theorem": c.theorem,
                    "config_id": c.config_id,
                    "description": c.description,
                    "predicted": _jsonable(c.predicted),
                    "measured": _jsonable(c.measured),
                    "tolerance": _jsonable(c.tolerance),
                    "verdict": c.verdict,
                    "detail": _jsonable(c.detail),
                }
                for c in self.checks
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"suite: {self.config_id}  seed={self.seed}"]
        for c in self.checks:
            lines.append(f"[{c.verdict:>5}] {c.theorem:<12} {c.description}")
            if c.verdict in ("pass", "fail"):
                lines.append(
                    f"        predicted={_fmt(c.predicted)} measured={_fmt(c.measured)} "
                    f"tol={_fmt(c.tolerance)}"
                )
            elif c.detail.get("reason"):
                lines.append(f"        reason: {c.detail['reason']}")
        s = self.summary
        lines.append(
            f"summary: {s.get('pass', 0)} pass, {s.get('fail', 0)} fail, "
            f"{s.get('SKIP', 0)} skip, {s.get('ERROR', 0)} error"
        )
        return "\n".join(lines)


def _fmt(value) -> str:
    if value is None:
        return "-"
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return f"{arr[0]:.6g}"
    return "[" + ", ".join(f"{v:.6g}" for v in arr) + "]"


def _skip(theorem, cfg, description, reason) -> TheoremCheck:
    return TheoremCheck(
        theorem=theorem,
        config_id=cfg.config_id,
        description=description,
        verdict="SKIP",
        detail={"reason": reason},
    )


# ---------------------------------------------------------------------------
# Exact annealed mean tails (finite-state i.i.d. environments)
# ---------------------------------------------------------------------------


def _annealed_tail_log(model: EnvironmentModel, n: int, x: float, normalized: bool) -> float:
    """(1/n) log of the environment-averaged mean tail mass on n[x, inf).

    Exact: conditional on the state-count composition of the path, the mean
    measure is a normal law (Gaussian/point-mass displacements), so the
    average reduces to a multinomial mixture with at most C(n+K-1, K-1)
    terms.  ``normalized`` divides each path's measure by its total mass.
    """
    w = model.marginal()
    states = model.states
    k_states = len(states)
    if k_states > 3:
        raise analytic.UnsupportedVariantError(
            "annealed tail enumeration supports at most 3 states"
        )
    if not all(isinstance(s.displacement, (Gaussian, PointMass)) for s in states):
        raise analytic.UnsupportedVariantError(
            "annealed tail enumeration needs Gaussian/point-mass displacements"
        )
    log_pi = np.log(np.where(w > 0, w, 1.0))
    mu = np.array([s.mu for s in states])
    sig2 = np.array([s.sigma2 for s in states])
    log_m0 = np.array([math.log(s.m0) for s in states])

    if k_states == 1:
        comps = np.array([[n]])
    elif k_states == 2:
        k = np.arange(n + 1)
        comps = np.stack([k, n - k], axis=1)
    else:
        rows = []
        for k0 in range(n + 1):
            k1 = np.arange(n - k0 + 1)
            rows.append(np.stack([np.full_like(k1, k0), k1, n - k0 - k1], axis=1))
        comps = np.concatenate(rows)
    comps = comps.astype(float)

    log_weight = gammaln(n + 1) - gammaln(comps + 1).sum(axis=1) + comps @ log_pi
    a = comps @ mu
    b = np.sqrt(comps @ sig2)
    threshold = n * x
    log_tail = np.where(
        b > 0.0,
        norm.logsf(np.divide(threshold - a, np.where(b > 0.0, b, 1.0))),
        np.where(threshold <= a + 1e-12 * np.maximum(1.0, np.abs(a)), 0.0, -np.inf),
    )
    log_mass = 0.0 if normalized else comps @ log_m0
    return float(logsumexp(log_weight + log_mass + log_tail)) / n


def _fd_slope(f, t: float) -> float:
    h = 1e-6 * max(1.0, abs(t))
    return (f(t + h) - f(t - h)) / (2.0 * h)


def _pick_x(slope_at_zero: float, slope_hi: float, prefer: float) -> float:
    """A tail point inside the attained-slope range (degenerate range -> its
    single point, where the large-deviation limit still holds)."""
    if slope_hi <= slope_at_zero + 1e-12:
        return slope_at_zero
    if slope_at_zero + 1e-9 < prefer < slope_hi - 1e-9:
        return prefer
    return slope_at_zero + 0.6 * (min(slope_hi, slope_at_zero + 4.0) - slope_at_zero)


# ---------------------------------------------------------------------------
# Suite runner
# ---------------------------------------------------------------------------


def run_suite(cfg: SuiteConfig) -> SuiteReport:
    """Execute every theorem check (or SKIP) and assemble the report.

    Deterministic for a fixed SuiteConfig: environments and trees derive
    from cfg.seed through fixed stream ids, and the report carries no
    wall-clock state.
    """
    model = cfg.model
    table = analytic.rate_function_table(model, np.linspace(-4.0, 4.0, 33))
    x_grid = np.asarray(cfg.x_grid, dtype=float)
    ref_cdf = norm.cdf(x_grid)
    checks: list = []

    is_iid = isinstance(model, (IIDEnvironment, ConstantEnvironment))
    gaussian_family = all(isinstance(s.displacement, (Gaussian, PointMass)) for s in model.states)
    non_lattice = not any(s.displacement.lattice for s in model.states)
    min_offspring = min(s.offspring.min_value for s in model.states)

    x_ldp = _pick_x(table.lam_prime_fn(0.0), table.speed_right, cfg.ldp_x)

    # Shared quenched environment and tree batch.
    env_q = sample_environment(model, max(cfg.fe_horizon, cfg.clt_horizon), cfg.seed, stream_id=0)
    base_grid = {-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0}
    t_grid = tuple(sorted(base_grid | {float(t) for t in cfg.fe_t_checks}))
    sim_cfg = SimConfig(
        horizon=cfg.fe_horizon, master_seed=cfg.seed, cap=cfg.cap, t_grid=t_grid,
        replicas=cfg.fe_replicas, store_positions="all",
    )
    moments_q = quenched_moments(EnvRealization(env_q.states[: cfg.fe_horizon]), t_grid)

    batch_error: PopulationOverflowError | None = None
    summaries = []
    fe_stack = []
    r_traces = []
    l_traces = []
    ratio_ns = tuple(range(max(2, cfg.fe_horizon - 8), cfg.fe_horizon + 1))
    try:
        for r in range(cfg.fe_replicas):
            snaps = run_tree(
                EnvRealization(env_q.states[: cfg.fe_horizon]), sim_cfg, replica_id=r,
                moments=moments_q,
            )
            summaries.append(
                estimators.summarize_replica(
                    snaps, moments_q, replica_id=r, environment_id="env-q",
                    x_grid=x_grid, ratio_x=x_ldp, ratio_ns=ratio_ns,
                )
            )
            fe_stack.append(np.stack([s.log_partition / s.n for s in snaps[1:]]))
            r_traces.append([s.r_n for s in snaps])
            l_traces.append([s.l_n for s in snaps])
    except PopulationOverflowError as err:
        batch_error = err

    def batch_check(theorem, description, fn) -> TheoremCheck:
        if batch_error is not None:
            return TheoremCheck(
                theorem=theorem, config_id=cfg.config_id, description=description,
                verdict="ERROR", detail={"reason": str(batch_error)},
            )
        try:
            return fn()
        except PopulationOverflowError as err:
            return TheoremCheck(
                theorem=theorem, config_id=cfg.config_id, description=description,
                verdict="ERROR", detail={"reason": str(err)},
            )

    # T2.1 quenched-mean large deviations (exact, no simulation).
    def t21():
        n = cfg.exact_n
        env = sample_environment(model, n, cfg.seed, stream_id=1)
        measured = estimators.quenched_mean_ldp_exact(env, x_ldp, n)
        predicted = -analytic.rate_function(table, x_ldp)
        return TheoremCheck(
            "T2.1", cfg.config_id,
            f"quenched-mean tail rate at x={x_ldp:.3g}, n={n}",
            predicted=predicted, measured=measured, tolerance=cfg.exact_tol,
            verdict=_verdict(measured, predicted, cfg.exact_tol),
            detail={"x": x_ldp, "n": n, "env_stream": 1},
        )

    checks.append(t21())

    # T2.2 / T2.3 annealed large deviations (exact enumeration; i.i.d. only).
    for theorem, normalized in (("T2.2", False), ("T2.3", True)):
        desc = ("annealed-mean tail rate" if not normalized
                else "mean normalized-measure tail rate")
        if not is_iid:
            checks.append(_skip(theorem, cfg, desc,
                                "requires i.i.d. environment letters (assume xi_n i.i.d.)"))
            continue
        if not gaussian_family or len(model.states) > 3:
            checks.append(_skip(theorem, cfg, desc,
                                "exact enumeration needs <=3 states with "
                                "Gaussian/point-mass displacements"))
            continue
        params = analytic.annealed_params(model)
        lam_a = params.bar_lambda_a if normalized else params.lambda_a
        slope0 = _fd_slope(lam_a, 0.0)
        slope_hi = _fd_slope(lam_a, table.bracket[1])
        x_a = _pick_x(slope0, slope_hi, cfg.ldp_x)
        predicted = -analytic.legendre(lam_a, x_a, table.bracket)
        measured = _annealed_tail_log(model, cfg.annealed_n, x_a, normalized)
        checks.append(TheoremCheck(
            theorem, cfg.config_id, f"{desc} at x={x_a:.3g}, n={cfg.annealed_n}",
            predicted=predicted, measured=measured, tolerance=cfg.annealed_tol,
            verdict=_verdict(measured, predicted, cfg.annealed_tol),
            detail={"x": x_a, "n": cfg.annealed_n},
        ))

    # T3.1 free-energy convergence (median absolute deviation per t).
    def t31():
        fe = np.stack(fe_stack)  # (replicas, horizon, T)
        t_idx = [t_grid.index(float(t)) for t in cfg.fe_t_checks]
        predicted = [analytic.free_energy_limit(table, float(t)) for t in cfg.fe_t_checks]
        devs = [
            float(np.median(np.abs(fe[:, cfg.fe_horizon - 1, j] - p)))
            for j, p in zip(t_idx, predicted)
        ]
        measured = [float(np.median(fe[:, cfg.fe_horizon - 1, j])) for j in t_idx]
        verdict = ("pass"
                   if all(d <= tol for d, tol in zip(devs, cfg.fe_t_tols)) else "fail")
        return TheoremCheck(
            "T3.1", cfg.config_id,
            f"free energy at t={list(cfg.fe_t_checks)}, n={cfg.fe_horizon}, "
            f"median over {cfg.fe_replicas} replicas",
            predicted=predicted, measured=measured, tolerance=list(cfg.fe_t_tols),
            verdict=verdict,
            detail={"replicas": cfg.fe_replicas, "horizon": cfg.fe_horizon,
                    "median_abs_dev": devs},
        )

    checks.append(batch_check("T3.1", "free-energy convergence", t31))

    # T3.2 / C3.3 tail-count growth rate (median absolute deviation).
    def t32():
        j = int(np.argmin(np.abs(x_grid - x_ldp)))
        x_used = float(x_grid[j])
        rates = np.array([s.ldp_upper[j] for s in summaries])
        predicted = -analytic.clipped_rate_function(table, x_used)
        measured = float(np.median(rates))
        if math.isinf(predicted):
            verdict = "pass" if measured == predicted else "fail"
            dev = 0.0 if measured == predicted else math.inf
        else:
            dev = float(np.median(np.abs(rates - predicted)))
            verdict = "pass" if dev <= cfg.ldp_tol else "fail"
        return TheoremCheck(
            "T3.2/C3.3", cfg.config_id,
            f"tail-count rate at x={x_used:.3g}, n={cfg.fe_horizon}",
            predicted=predicted, measured=measured, tolerance=cfg.ldp_tol,
            verdict=verdict,
            detail={"x": x_used, "replicas": cfg.fe_replicas, "median_abs_dev": dev},
        )

    checks.append(batch_check("T3.2/C3.3", "tail-count growth rate", t32))

    # T3.4 extreme-particle speeds with trend across horizons.
    def t34():
        horizons = sorted({max(2, cfg.fe_horizon // 2), max(2, 3 * cfg.fe_horizon // 4),
                           cfg.fe_horizon})
        r_arr = np.array(r_traces)  # (replicas, horizon+1)
        l_arr = np.array(l_traces)
        gaps_r = [float(np.median(np.abs(r_arr[:, h] / h - table.speed_right))) for h in horizons]
        gaps_l = [float(np.median(np.abs(l_arr[:, h] / h - table.speed_left))) for h in horizons]
        trend_ok = all(b <= a * cfg.trend_slack + 1e-12 for a, b in zip(gaps_r, gaps_r[1:]))
        trend_ok &= all(b <= a * cfg.trend_slack + 1e-12 for a, b in zip(gaps_l, gaps_l[1:]))
        measured = [gaps_r[-1], gaps_l[-1]]
        verdict = _verdict(measured, [0.0, 0.0], cfg.speed_tol)
        if not trend_ok:
            verdict = "fail"
        return TheoremCheck(
            "T3.4", cfg.config_id,
            f"rightmost/leftmost speed gaps at n={cfg.fe_horizon} with trend",
            predicted=[0.0, 0.0], measured=measured, tolerance=cfg.speed_tol,
            verdict=verdict,
            detail={"horizons": horizons, "gaps_right": gaps_r, "gaps_left": gaps_l,
                    "speed_right": table.speed_right, "speed_left": table.speed_left},
        )

    checks.append(batch_check("T3.4", "extreme-particle speeds", t34))

    # T5.1 normalized quenched tail rate (slope over horizons).
    def t51():
        desc = f"normalized tail-ratio slope at x={x_ldp:.3g}"
        if min_offspring < 2:
            return _skip("T5.1", cfg, desc,
                         "requires at least two offspring a.s. (P(N<=1)=0)")
        ratios = np.stack([s.interval_ratio for s in summaries])
        mean_ratio = ratios.mean(axis=0)
        ns = summaries[0].ratio_ns
        mask = mean_ratio > 0.0
        predicted = -analytic.rate_function(table, x_ldp) - table.lam_fn(0.0)
        if mask.sum() < 3:
            measured = -math.inf if not mask.any() else float("nan")
            verdict = "pass" if predicted == -math.inf else "fail"
            return TheoremCheck("T5.1", cfg.config_id, desc, predicted=predicted,
                                measured=measured, tolerance=cfg.slope_tol, verdict=verdict,
                                detail={"note": "tail empty at tested horizons"})
        slope = float(np.polyfit(ns[mask], np.log(mean_ratio[mask]), 1)[0])
        lower = -analytic.clipped_rate_function(table, x_ldp) - table.lam_fn(0.0)
        verdict = ("pass" if (slope >= lower - cfg.slope_tol or lower == -math.inf)
                   and slope <= predicted + cfg.slope_tol else "fail")
        return TheoremCheck(
            "T5.1", cfg.config_id, desc, predicted=predicted, measured=slope,
            tolerance=cfg.slope_tol, verdict=verdict,
            detail={"ns": list(map(int, ns)), "band_lower": lower, "band_upper": predicted},
        )

    checks.append(batch_check("T5.1", "normalized tail-ratio slope", t51))

    # T9.1 quenched-mean CLT wiring (closed-form convolution vs normal CDF).
    def t91_desc():
        return "quenched-mean CDF vs normal (closed-form convolution)"

    if not gaussian_family:
        checks.append(_skip("T9.1", cfg, t91_desc(),
                            "closed-form convolution needs Gaussian/point-mass displacements"))
    elif moments_q.degenerate_scale(cfg.fe_horizon):
        checks.append(_skip("T9.1", cfg, t91_desc(),
                            "requires mean intensity variance in (0, inf); got 0"))
    else:
        n = cfg.fe_horizon
        a_n, b_n = moments_q.a[n], moments_q.b[n]
        thresholds = b_n * x_grid + a_n
        measured_cdf = norm.cdf((thresholds - a_n) / b_n)
        gap = float(np.abs(measured_cdf - ref_cdf).max())
        checks.append(TheoremCheck(
            "T9.1", cfg.config_id, t91_desc(),
            predicted=0.0, measured=gap, tolerance=1e-12,
            verdict=_verdict(gap, 0.0, 1e-12),
            detail={"n": n, "a_n": float(a_n), "b_n": float(b_n)},
        ))

    # T9.2 / T9.3 annealed central limit theorems (fresh environments).
    ann_desc = "annealed CLT, census-weighted CDF vs normal"
    ann_desc_p = "mean normalized-by-P_n CLT, martingale-weighted CDF vs normal"
    if not is_iid:
        checks.append(_skip("T9.2", cfg, ann_desc,
                            "requires i.i.d. environment letters (assume xi_n i.i.d.)"))
        checks.append(_skip("T9.3", cfg, ann_desc_p,
                            "requires i.i.d. environment letters (assume xi_n i.i.d.)"))
    else:
        params = analytic.annealed_params(model)
        if params.sigma2_bar <= 0.0:
            checks.append(_skip("T9.2", cfg, ann_desc,
                                "requires annealed variance in (0, inf); got 0"))
        t92_run = params.sigma2_bar > 0.0
        if params.sigma2_bar_prime <= 0.0:
            checks.append(_skip("T9.3", cfg, ann_desc_p,
                                "requires normalized annealed variance in (0, inf); got 0"))
        t93_run = params.sigma2_bar_prime > 0.0
        if t92_run or t93_run:
            def annealed_checks():
                n = cfg.annealed_horizon
                center92 = n * params.mu_bar
                scale92 = math.sqrt(n * params.sigma2_bar)
                center93 = n * params.mu_bar_prime
                scale93 = math.sqrt(n * params.sigma2_bar_prime)
                sums92, sums93 = [], []
                ann_cfg = SimConfig(horizon=n, master_seed=cfg.seed, cap=cfg.cap,
                                    t_grid=(0.0,), store_positions="last")
                for r in range(cfg.annealed_replicas):
                    env = sample_environment(model, n, cfg.seed, stream_id=1000 + r)
                    mom = quenched_moments(env, (0.0,))
                    snaps = run_tree(env, ann_cfg, replica_id=1000 + r, moments=mom)
                    if t92_run:
                        sums92.append(estimators.summarize_replica(
                            snaps, mom, replica_id=r, environment_id=f"env-a{r}",
                            x_grid=x_grid, clt_center=center92, clt_scale=scale92))
                    if t93_run:
                        sums93.append(estimators.summarize_replica(
                            snaps, mom, replica_id=r, environment_id=f"env-a{r}",
                            x_grid=x_grid, clt_center=center93, clt_scale=scale93))
                out = []
                if t92_run:
                    rep = estimators.aggregate("annealed-mean", sums92,
                                               reference_cdf=ref_cdf, cdf_weighting="count")
                    ks = rep.ks["cdf"]
                    out.append(TheoremCheck(
                        "T9.2", cfg.config_id, ann_desc,
                        predicted=0.0, measured=ks, tolerance=cfg.annealed_ks_tol,
                        verdict=_verdict(ks, 0.0, cfg.annealed_ks_tol),
                        detail={"replicas": cfg.annealed_replicas, "n": n,
                                "mu_bar": params.mu_bar, "sigma2_bar": params.sigma2_bar},
                    ))
                if t93_run:
                    rep = estimators.aggregate("annealed-mean", sums93,
                                               reference_cdf=ref_cdf,
                                               cdf_weighting="martingale")
                    ks = rep.ks["cdf"]
                    out.append(TheoremCheck(
                        "T9.3", cfg.config_id, ann_desc_p,
                        predicted=0.0, measured=ks, tolerance=cfg.annealed_ks_tol,
                        verdict=_verdict(ks, 0.0, cfg.annealed_ks_tol),
                        detail={"replicas": cfg.annealed_replicas, "n": n,
                                "mu_bar_prime": params.mu_bar_prime,
                                "sigma2_bar_prime": params.sigma2_bar_prime},
                    ))
                return out

            try:
                checks.extend(annealed_checks())
            except PopulationOverflowError as err:
                for theorem, run_flag, desc in (("T9.2", t92_run, ann_desc),
                                                ("T9.3", t93_run, ann_desc_p)):
                    if run_flag:
                        checks.append(TheoremCheck(
                            theorem=theorem, config_id=cfg.config_id, description=desc,
                            verdict="ERROR", detail={"reason": str(err)},
                        ))

    # T10.2 main CLT and T10.4/C10.5 local limit, one quenched tree: the
    # first replica of the shared batch (trees truncate consistently in the
    # horizon because streams are keyed per generation).
    clt_desc = f"single-tree normalized CDF vs normal, n={cfg.clt_horizon}"
    llt_desc = f"window-density gaps vs normal density, n={cfg.clt_horizon}, h={cfg.llt_h}"
    clt_realization = EnvRealization(env_q.states[: cfg.clt_horizon])
    clt_moments = quenched_moments(clt_realization, (0.0,))
    clt_ks_value = None
    if clt_moments.degenerate_scale(cfg.clt_horizon):
        checks.append(_skip("T10.2", cfg, clt_desc,
                            "requires mean intensity variance in (0, inf); got 0"))
        checks.append(_skip("T10.4/C10.5", cfg, llt_desc,
                            "requires mean intensity variance in (0, inf); got 0"))
    else:
        def t102_and_t104():
            out = []
            tree_cfg = SimConfig(horizon=cfg.clt_horizon, master_seed=cfg.seed, cap=cfg.cap,
                                 t_grid=(0.0,), store_positions="last")
            snaps = run_tree(clt_realization, tree_cfg, replica_id=0, moments=clt_moments)
            final = snaps[-1]
            cdf = estimators.clt_empirical_cdf(final, clt_moments, x_grid)
            ks = estimators.ks_distance(cdf, ref_cdf)
            out.append(TheoremCheck(
                "T10.2", cfg.config_id, clt_desc,
                predicted=0.0, measured=ks, tolerance=cfg.clt_ks_tol,
                verdict=_verdict(ks, 0.0, cfg.clt_ks_tol),
                detail={"replica": 0, "census": final.count},
            ))
            if not non_lattice:
                out.append(_skip("T10.4/C10.5", cfg, llt_desc,
                                 "requires non-lattice displacement laws "
                                 "(lattice law present)"))
            else:
                gap = estimators.llt_gap(final, clt_moments, cfg.llt_h)
                n = final.n
                a_n, b_n = clt_moments.a[n], clt_moments.b[n]
                pos = np.sort(final.positions)
                lo = np.searchsorted(pos, a_n, side="right")
                hi = np.searchsorted(pos, a_n + cfg.llt_h, side="left")
                window = b_n * (hi - lo) / final.count
                window_target = cfg.llt_h / math.sqrt(2.0 * math.pi)
                measured = [gap.sup_gap, window]
                predicted = [0.0, window_target]
                tol = [cfg.llt_sup_tol, cfg.llt_window_tol]
                out.append(TheoremCheck(
                    "T10.4/C10.5", cfg.config_id, llt_desc,
                    predicted=predicted, measured=measured, tolerance=tol,
                    verdict=_verdict(measured, predicted, tol),
                    detail={"replica": 0, "census": final.count},
                ))
            return out, ks

        def wrapped():
            nonlocal clt_ks_value
            result, ks = t102_and_t104()
            clt_ks_value = ks
            return result

        try:
            checks.extend(wrapped())
        except PopulationOverflowError as err:
            for theorem, desc in (("T10.2", clt_desc), ("T10.4/C10.5", llt_desc)):
                checks.append(TheoremCheck(
                    theorem=theorem, config_id=cfg.config_id, description=desc,
                    verdict="ERROR", detail={"reason": str(err)},
                ))

    # T12.1 conditioned CLTs: with N >= 1 a.s. survival is certain, so the
    # conditioned laws coincide with the unconditioned ones; the report
    # states the identification instead of fabricating a conditioning step.
    t121_desc = "survival-conditioned CLT (coincides with T10.2 under N>=1)"
    t102_check = next((c for c in checks if c.theorem == "T10.2"), None)
    if t102_check is None or t102_check.verdict in ("SKIP", "ERROR"):
        reason = (t102_check.detail.get("reason", "T10.2 unavailable")
                  if t102_check is not None else "T10.2 unavailable")
        checks.append(_skip("T12.1", cfg, t121_desc, reason))
    else:
        checks.append(TheoremCheck(
            "T12.1", cfg.config_id, t121_desc,
            predicted=0.0, measured=clt_ks_value, tolerance=cfg.clt_ks_tol,
            verdict=_verdict(clt_ks_value, 0.0, cfg.clt_ks_tol),
            detail={"note": "survival has probability one for the supported "
                            "offspring laws, so conditioning is vacuous"},
        ))

    order = {tid: i for i, tid in enumerate(THEOREM_IDS)}
    checks.sort(key=lambda c: order[c.theorem])
    return SuiteReport(config_id=cfg.config_id, seed=cfg.seed, checks=checks)
