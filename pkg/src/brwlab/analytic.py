"""Deterministic limit objects for the branching walk in random environment.

Everything here is exact (up to root-finding tolerances): the log-moment
function Lambda(t) = E log m0(t) is a finite weighted sum over environment
states, its convex conjugate is found by monotone root-finding on
Lambda'(t) = x, the critical temperatures t_minus < 0 < t_plus solve
t Lambda'(t) = Lambda(t), and the free-energy limit is linear beyond them.

Infinite values are first-class: conjugates outside the attained-slope
range and critical temperatures beyond the search bracket are returned as
+/- math.inf, never as large sentinels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .env_model import (
    ConfigurationError,
    ConstantEnvironment,
    EnvironmentModel,
    Gaussian,
    IIDEnvironment,
    MarkovEnvironment,
    PointMass,
)

__all__ = [
    "NonConvexError",
    "UnsupportedVariantError",
    "lambda_of_t",
    "lambda_prime_of_t",
    "rho_of_t",
    "legendre",
    "critical_temperatures",
    "RateFunctionTable",
    "rate_function_table",
    "free_energy_limit",
    "speeds",
    "rate_function",
    "clipped_rate_function",
    "AnnealedParams",
    "annealed_params",
]

DEFAULT_BRACKET = (-64.0, 64.0)


class NonConvexError(ValueError):
    """Raised when a conjugate is requested for a non-convex input."""


class UnsupportedVariantError(ValueError):
    """Raised when an operation does not support the environment variant."""


def lambda_of_t(model: EnvironmentModel, t):
    """Log-moment function: marginal-weighted sum of log m0(t) over states."""
    w = model.marginal()
    vals = np.stack([np.atleast_1d(np.asarray(s.log_m(t), dtype=float)) for s in model.states])
    out = w @ vals
    return out if np.ndim(t) else float(out[0])


def lambda_prime_of_t(model: EnvironmentModel, t):
    """Derivative of the log-moment function, from closed-form m0'(t)/m0(t)."""
    w = model.marginal()
    vals = np.stack([np.atleast_1d(np.asarray(s.dlog_m(t), dtype=float)) for s in model.states])
    out = w @ vals
    return out if np.ndim(t) else float(out[0])


def rho_of_t(model: EnvironmentModel, t):
    """rho(t) = t Lambda'(t) - Lambda(t); its roots are the critical temperatures."""
    t_arr = np.asarray(t, dtype=float)
    out = t_arr * lambda_prime_of_t(model, t_arr) - lambda_of_t(model, t_arr)
    return out if np.ndim(t) else float(out)


def _finite_difference(f: Callable[[float], float]) -> Callable[[float], float]:
    def fprime(t: float) -> float:
        h = 1e-6 * max(1.0, abs(t))
        return (f(t + h) - f(t - h)) / (2.0 * h)

    return fprime


def legendre(
    f: Callable[[float], float],
    x: float,
    bracket: tuple = DEFAULT_BRACKET,
    fprime: Callable[[float], float] | None = None,
    *,
    probe_points: int = 65,
    tol_factor: float = 1e-10,
) -> float:
    """Convex conjugate sup_t {x t - f(t)} by root-finding on f'(t) = x.

    Returns math.inf when x lies outside the slope range attained on the
    bracket (the conjugate of f, extended linearly beyond the bracket,
    is infinite there).  The root is refined until
    |f'(t*) - x| <= tol_factor * max(1, |x|).

    Raises NonConvexError if f fails a second-difference convexity probe
    on the bracket.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError(f"invalid bracket {bracket!r}")
    probe_t = np.linspace(lo, hi, probe_points)
    probe_f = np.array([f(t) for t in probe_t])
    d2 = probe_f[2:] - 2.0 * probe_f[1:-1] + probe_f[:-2]
    slack = 1e-9 * max(1.0, float(np.abs(probe_f).max()))
    if (d2 < -slack).any():
        at = probe_t[1:-1][d2 < -slack]
        raise NonConvexError(
            f"input fails convexity probe on {bracket}: negative second "
            f"difference near t = {at[0]:.6g} (min d2 = {d2.min():.3e})"
        )

    if fprime is None:
        fprime = _finite_difference(f)
    tol = tol_factor * max(1.0, abs(x))
    g_lo = fprime(lo) - x
    g_hi = fprime(hi) - x
    if g_lo > tol:
        return math.inf
    if g_hi < -tol:
        return math.inf
    if g_lo >= -tol and g_hi <= tol:
        # Affine stretch: every t is a maximizer.
        t_star = 0.5 * (lo + hi)
        return x * t_star - f(t_star)
    a, b = lo, hi
    t_star = 0.5 * (a + b)
    for _ in range(200):
        t_star = 0.5 * (a + b)
        g = fprime(t_star) - x
        if abs(g) <= tol:
            break
        if g < 0.0:
            a = t_star
        else:
            b = t_star
        if b - a <= 1e-15 * max(1.0, abs(a) + abs(b)):
            break
    return x * t_star - f(t_star)


def critical_temperatures(
    lam: Callable[[float], float],
    lam_prime: Callable[[float], float],
    *,
    t_max: float = 64.0,
    tol: float = 1e-8,
) -> tuple:
    """Solve t Lambda'(t) = Lambda(t) on each side of zero.

    Brackets are doubled out to t_max; if rho stays nonpositive on the
    whole half-bracket the temperature on that side is +/- math.inf.
    """

    def rho(t: float) -> float:
        return t * lam_prime(t) - lam(t)

    rho0 = rho(0.0)
    if rho0 >= 0.0:
        raise ConfigurationError(
            f"supercriticality violated: rho(0) = -Lambda(0) = {rho0:.6g} >= 0"
        )

    def one_side(sign: float) -> float:
        hi = 1.0
        while hi <= t_max and rho(sign * hi) <= 0.0:
            hi *= 2.0
        if hi > t_max:
            if rho(sign * t_max) <= 0.0:
                return sign * math.inf
            hi = t_max
        lo = hi / 2.0 if rho(sign * (hi / 2.0)) <= 0.0 else 0.0
        a, b = lo, hi
        root = b
        for _ in range(200):
            root = 0.5 * (a + b)
            val = rho(sign * root)
            if abs(val) <= tol and b - a <= 1e-12 * max(1.0, b):
                break
            if val <= 0.0:
                a = root
            else:
                b = root
        return sign * root

    return one_side(-1.0), one_side(+1.0)


@dataclass(frozen=True, eq=False)
class RateFunctionTable:
    """Tabulated Lambda, Lambda', rho plus critical temperatures and speeds."""

    t_grid: np.ndarray
    lam: np.ndarray
    lam_prime: np.ndarray
    rho: np.ndarray
    t_minus: float
    t_plus: float
    speed_left: float
    speed_right: float
    quadratic: bool
    bracket: tuple = DEFAULT_BRACKET
    lam_fn: Callable = field(repr=False, default=None)
    lam_prime_fn: Callable = field(repr=False, default=None)


def rate_function_table(
    model: EnvironmentModel, t_grid, *, bracket: tuple = DEFAULT_BRACKET
) -> RateFunctionTable:
    """Build the full analytic table for a finite-state environment model."""
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    lam = np.asarray(lambda_of_t(model, t_grid))
    lam_p = np.asarray(lambda_prime_of_t(model, t_grid))
    rho = t_grid * lam_p - lam

    if t_grid.size >= 3:
        d2 = lam[2:] - 2.0 * lam[1:-1] + lam[:-2]
        if (d2 < -1e-9 * max(1.0, float(np.abs(lam).max()))).any():
            raise NonConvexError("Lambda fails convexity on the requested grid")
    if (np.diff(lam_p) < -1e-9).any():
        raise NonConvexError("Lambda' is not nondecreasing on the requested grid")

    lam_fn = lambda t: lambda_of_t(model, t)
    lam_prime_fn = lambda t: lambda_prime_of_t(model, t)
    t_minus, t_plus = critical_temperatures(lam_fn, lam_prime_fn, t_max=bracket[1])
    speed_left = lam_prime_fn(t_minus if math.isfinite(t_minus) else bracket[0])
    speed_right = lam_prime_fn(t_plus if math.isfinite(t_plus) else bracket[1])
    quadratic = all(
        isinstance(s.displacement, (Gaussian, PointMass)) for s in model.states
    )
    return RateFunctionTable(
        t_grid=t_grid,
        lam=lam,
        lam_prime=lam_p,
        rho=rho,
        t_minus=t_minus,
        t_plus=t_plus,
        speed_left=speed_left,
        speed_right=speed_right,
        quadratic=quadratic,
        bracket=bracket,
        lam_fn=lam_fn,
        lam_prime_fn=lam_prime_fn,
    )


def free_energy_limit(table: RateFunctionTable, t):
    """Limiting free energy: Lambda inside (t_minus, t_plus), linear outside."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.array([table.lam_fn(v) for v in t_arr])
    if math.isfinite(table.t_plus):
        out = np.where(t_arr >= table.t_plus, t_arr * table.speed_right, out)
    if math.isfinite(table.t_minus):
        out = np.where(t_arr <= table.t_minus, t_arr * table.speed_left, out)
    return out if np.ndim(t) else float(out[0])


def speeds(table: RateFunctionTable) -> tuple:
    """Almost-sure limits of L_n/n and R_n/n (leftmost and rightmost speeds)."""
    return table.speed_left, table.speed_right


def rate_function(table: RateFunctionTable, x: float) -> float:
    """Large-deviation rate: the convex conjugate of Lambda at x."""
    return legendre(table.lam_fn, x, table.bracket, fprime=table.lam_prime_fn)


def clipped_rate_function(table: RateFunctionTable, x: float) -> float:
    """Conjugate of the free-energy limit: equals the plain rate on
    [speed_left, speed_right] and is infinite outside."""
    slack = 1e-12 * max(1.0, abs(x))
    if x < table.speed_left - slack or x > table.speed_right + slack:
        return math.inf
    return rate_function(table, x)


@dataclass(frozen=True, eq=False)
class AnnealedParams:
    """Annealed log-moment evaluators and annealed CLT parameters.

    mu_bar / sigma2_bar normalize the environment-averaged counting
    measure by its total mass; mu_bar_prime / sigma2_bar_prime normalize
    per-environment before averaging.
    """

    mu_bar: float
    sigma2_bar: float
    mu_bar_prime: float
    sigma2_bar_prime: float
    lambda_a: Callable = field(repr=False)
    bar_lambda_a: Callable = field(repr=False)


def annealed_params(model: EnvironmentModel) -> AnnealedParams:
    """Exact annealed parameters for i.i.d. (or constant) environments."""
    if isinstance(model, MarkovEnvironment):
        raise UnsupportedVariantError(
            "annealed parameters require i.i.d. environment letters; "
            "got a Markov environment"
        )
    if not isinstance(model, (IIDEnvironment, ConstantEnvironment)):
        raise UnsupportedVariantError(f"unsupported model type {type(model).__name__}")

    w = model.marginal()
    m0 = np.array([s.m0 for s in model.states])
    mu_s = np.array([s.mu for s in model.states])
    sig2_s = np.array([s.sigma2 for s in model.states])
    log_w = np.log(w, where=w > 0, out=np.full_like(w, -np.inf))

    mean_m0 = float(w @ m0)
    mu_bar = float(w @ (m0 * mu_s)) / mean_m0
    sigma2_bar = float(w @ (m0 * (sig2_s + (mu_s - mu_bar) ** 2))) / mean_m0
    mu_bar_prime = float(w @ mu_s)
    sigma2_bar_prime = float(w @ (sig2_s + (mu_s - mu_bar_prime) ** 2))

    states = model.states
    log_m0 = np.log(m0)

    def lambda_a(t):
        vals = np.stack(
            [log_w[i] + np.atleast_1d(np.asarray(s.log_m(t), dtype=float))
             for i, s in enumerate(states)]
        )
        out = logsumexp(vals, axis=0)
        return out if np.ndim(t) else float(out[0])

    def bar_lambda_a(t):
        vals = np.stack(
            [log_w[i] - log_m0[i]
             + np.atleast_1d(np.asarray(s.log_m(t), dtype=float))
             for i, s in enumerate(states)]
        )
        out = logsumexp(vals, axis=0)
        return out if np.ndim(t) else float(out[0])

    return AnnealedParams(
        mu_bar=mu_bar,
        sigma2_bar=sigma2_bar,
        mu_bar_prime=mu_bar_prime,
        sigma2_bar_prime=sigma2_bar_prime,
        lambda_a=lambda_a,
        bar_lambda_a=bar_lambda_a,
    )
