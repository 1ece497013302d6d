"""Environment states, environment laws, and reproduction-law sampling.

An environment state pairs an offspring law (how many children a particle
spawns) with a displacement law (where each child lands relative to its
parent).  All supported laws have closed-form generation Laplace transforms
m0(t) = E[N] * MGF_L(t), which keeps every downstream limit object exactly
computable.  Environment sequences are drawn from finite-state laws
(constant, i.i.d., or irreducible Markov started from its stationary
distribution), all of which are stationary and ergodic.

Randomness comes from counter-based Philox streams keyed by
(master seed, domain, replica, generation) so that any run is replayable
bit-exactly and replicas are independent by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

__all__ = [
    "ConfigurationError",
    "Deterministic",
    "ShiftedGeometric",
    "PoissonPositive",
    "PointMass",
    "Gaussian",
    "TwoPoint",
    "EnvState",
    "ConstantEnvironment",
    "IIDEnvironment",
    "MarkovEnvironment",
    "EnvironmentModel",
    "EnvRealization",
    "QuenchedMoments",
    "stream",
    "sample_environment",
    "sample_point_process",
    "laplace_m",
    "laplace_m_prime",
    "quenched_moments",
]


class ConfigurationError(ValueError):
    """Raised when an environment model violates a structural invariant."""


# Stream domains.  Keeping these fixed is part of the reproducibility
# contract: a (seed, domain, replica, generation) tuple always maps to the
# same Philox stream.
ENV_DOMAIN = 0
OFFSPRING_DOMAIN = 1
DISPLACEMENT_DOMAIN = 2


def stream(master_seed: int, *path: int) -> np.random.Generator:
    """Return the counter-based generator for a (seed, *path) stream key."""
    seq = np.random.SeedSequence(master_seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(seq))


# ---------------------------------------------------------------------------
# Offspring laws (all supported laws satisfy N >= 1 almost surely)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    """Exactly k children, k >= 1."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"offspring count must be >= 1, got {self.k}")

    @property
    def mean(self) -> float:
        return float(self.k)

    @property
    def min_value(self) -> int:
        return self.k

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, self.k, dtype=np.int64)


@dataclass(frozen=True)
class ShiftedGeometric:
    """P(N = k) = p (1-p)^(k-1) on {1, 2, ...}; mean 1/p."""

    p: float

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ConfigurationError(f"geometric parameter must be in (0, 1], got {self.p}")

    @property
    def mean(self) -> float:
        return 1.0 / self.p

    @property
    def min_value(self) -> int:
        return 1

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.geometric(self.p, size).astype(np.int64, copy=False)


@dataclass(frozen=True)
class PoissonPositive:
    """Poisson(lam) conditioned on N >= 1; mean lam / (1 - exp(-lam))."""

    lam: float

    def __post_init__(self):
        if not self.lam > 0.0:
            raise ConfigurationError(f"Poisson rate must be > 0, got {self.lam}")

    @property
    def mean(self) -> float:
        return self.lam / -math.expm1(-self.lam)

    @property
    def min_value(self) -> int:
        return 1

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = rng.poisson(self.lam, size).astype(np.int64, copy=False)
        zero = out == 0
        while zero.any():
            out[zero] = rng.poisson(self.lam, int(zero.sum()))
            zero = out == 0
        return out


OffspringLaw = Union[Deterministic, ShiftedGeometric, PoissonPositive]


# ---------------------------------------------------------------------------
# Displacement laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointMass:
    """Every child lands at parent + c."""

    c: float

    lattice = True

    @property
    def mean(self) -> float:
        return self.c

    @property
    def variance(self) -> float:
        return 0.0

    def log_mgf(self, t):
        return self.c * np.asarray(t, dtype=float) if np.ndim(t) else self.c * t

    def dlog_mgf(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.c) if np.ndim(t) else self.c

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, self.c, dtype=float)


@dataclass(frozen=True)
class Gaussian:
    """Normal displacement with the given mean and (strictly positive) variance."""

    mean: float
    variance: float

    lattice = False

    def __post_init__(self):
        if not self.variance > 0.0:
            raise ConfigurationError(f"Gaussian variance must be > 0, got {self.variance}")

    def log_mgf(self, t):
        t = np.asarray(t, dtype=float) if np.ndim(t) else t
        return self.mean * t + 0.5 * self.variance * t * t

    def dlog_mgf(self, t):
        t = np.asarray(t, dtype=float) if np.ndim(t) else t
        return self.mean + self.variance * t

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.mean + math.sqrt(self.variance) * rng.standard_normal(size)


@dataclass(frozen=True)
class TwoPoint:
    """Child lands at +d with probability p, at -d with probability 1-p."""

    d: float
    p: float

    lattice = True

    def __post_init__(self):
        if not self.d > 0.0:
            raise ConfigurationError(f"two-point step must be > 0, got {self.d}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError(f"two-point probability must be in [0, 1], got {self.p}")

    @property
    def mean(self) -> float:
        return self.d * (2.0 * self.p - 1.0)

    @property
    def variance(self) -> float:
        return 4.0 * self.d * self.d * self.p * (1.0 - self.p)

    def log_mgf(self, t):
        t = np.asarray(t, dtype=float)
        s = t * self.d
        if self.p == 1.0:
            out = s
        elif self.p == 0.0:
            out = -s
        else:
            out = np.logaddexp(math.log(self.p) + s, math.log(1.0 - self.p) - s)
        return out if out.ndim else float(out)

    def dlog_mgf(self, t):
        t = np.asarray(t, dtype=float)
        s = t * self.d
        p, q = self.p, 1.0 - self.p
        # Stable tanh-like form: divide through by the dominant exponential.
        w = np.where(s >= 0.0, q * np.exp(-2.0 * np.abs(s)), p * np.exp(-2.0 * np.abs(s)))
        num = np.where(s >= 0.0, p - w, w - q)
        den = np.where(s >= 0.0, p + w, w + q)
        out = self.d * num / den
        return out if out.ndim else float(out)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.d * np.where(rng.random(size) < self.p, 1.0, -1.0)


DisplacementLaw = Union[PointMass, Gaussian, TwoPoint]


# ---------------------------------------------------------------------------
# Environment state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvState:
    """One environment letter: offspring law x displacement law.

    Children displacements are i.i.d. from the displacement law,
    independent of the offspring count, so the generation Laplace
    transform factorizes: m0(t) = E[N] * MGF_L(t).
    """

    offspring: OffspringLaw
    displacement: DisplacementLaw
    label: str = ""

    @property
    def m0(self) -> float:
        return self.offspring.mean

    def log_m(self, t):
        """log m0(t), finite for all real t for every supported law."""
        return math.log(self.m0) + self.displacement.log_mgf(t)

    def m(self, t):
        return np.exp(self.log_m(t))

    def dlog_m(self, t):
        """m0'(t) / m0(t); equals the displacement MGF log-derivative."""
        return self.displacement.dlog_mgf(t)

    def m_prime(self, t):
        return self.m(t) * self.dlog_m(t)

    @property
    def mu(self) -> float:
        """Mean of the normalized intensity measure (displacement mean)."""
        return self.displacement.mean

    @property
    def sigma2(self) -> float:
        """Variance of the normalized intensity measure."""
        return self.displacement.variance


def laplace_m(state: EnvState, t: float) -> float:
    """Generation Laplace transform m0(t) = E[N] * E[exp(t L)]."""
    return float(state.m(t))


def laplace_m_prime(state: EnvState, t: float) -> float:
    """Closed-form derivative of ``laplace_m`` in t."""
    return float(state.m_prime(t))


def sample_point_process(state: EnvState, rng: np.random.Generator):
    """Draw one reproduction event: (N, array of N displacement offsets)."""
    n = int(state.offspring.sample(rng, 1)[0])
    return n, state.displacement.sample(rng, n)


# ---------------------------------------------------------------------------
# Environment models
# ---------------------------------------------------------------------------


def _check_supercritical(states: Sequence[EnvState], weights: np.ndarray) -> None:
    mean_log_m0 = float(np.dot(weights, [math.log(s.m0) for s in states]))
    if not mean_log_m0 > 0.0:
        raise ConfigurationError(
            f"environment is not supercritical: E[log m0] = {mean_log_m0:.6g} <= 0"
        )


@dataclass(frozen=True)
class ConstantEnvironment:
    """The same state at every generation."""

    state: EnvState

    def __post_init__(self):
        _check_supercritical(self.states, self.marginal())

    @property
    def states(self) -> tuple:
        return (self.state,)

    def marginal(self) -> np.ndarray:
        return np.array([1.0])

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(n, dtype=np.int64)


@dataclass(frozen=True)
class IIDEnvironment:
    """Independent draws from a finite state list with fixed probabilities."""

    states: tuple
    probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.states) != len(self.probs) or not self.states:
            raise ConfigurationError("states and probs must be nonempty and equal-length")
        if any(p < 0.0 for p in self.probs):
            raise ConfigurationError("state probabilities must be nonnegative")
        if abs(sum(self.probs) - 1.0) > 1e-12:
            raise ConfigurationError(f"state probabilities sum to {sum(self.probs)!r}, not 1")
        _check_supercritical(self.states, self.marginal())

    def marginal(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cum = np.cumsum(self.probs)
        cum[-1] = 1.0
        return np.searchsorted(cum, rng.random(n), side="right").astype(np.int64)


def _strongly_connected(adj: np.ndarray) -> bool:
    k = adj.shape[0]

    def reach(mat):
        seen = np.zeros(k, dtype=bool)
        frontier = [0]
        seen[0] = True
        while frontier:
            i = frontier.pop()
            for j in np.nonzero(mat[i])[0]:
                if not seen[j]:
                    seen[j] = True
                    frontier.append(int(j))
        return seen.all()

    return reach(adj) and reach(adj.T)


@dataclass(frozen=True)
class MarkovEnvironment:
    """Irreducible finite Markov chain started from its stationary law."""

    states: tuple
    transition: tuple
    _stationary: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        mat = np.asarray(self.transition, dtype=float)
        object.__setattr__(
            self, "transition", tuple(tuple(float(v) for v in row) for row in mat)
        )
        k = len(self.states)
        if mat.shape != (k, k) or k == 0:
            raise ConfigurationError("transition matrix must be square and match the state list")
        if (mat < 0.0).any():
            raise ConfigurationError("transition probabilities must be nonnegative")
        if np.abs(mat.sum(axis=1) - 1.0).max() > 1e-12:
            raise ConfigurationError("each transition row must sum to 1")
        if not _strongly_connected(mat > 0.0):
            raise ConfigurationError("Markov environment must be irreducible")
        a = np.vstack([mat.T - np.eye(k), np.ones(k)])
        b = np.zeros(k + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        object.__setattr__(self, "_stationary", pi)
        _check_supercritical(self.states, pi)

    def marginal(self) -> np.ndarray:
        return self._stationary.copy()

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        k = len(self.states)
        cum = np.cumsum(np.asarray(self.transition, dtype=float), axis=1)
        cum[:, -1] = 1.0
        start_cum = np.cumsum(self._stationary)
        start_cum[-1] = 1.0
        u = rng.random(n)
        idx = np.empty(n, dtype=np.int64)
        idx[0] = min(int(np.searchsorted(start_cum, u[0], side="right")), k - 1)
        for i in range(1, n):
            idx[i] = min(int(np.searchsorted(cum[idx[i - 1]], u[i], side="right")), k - 1)
        return idx


EnvironmentModel = Union[ConstantEnvironment, IIDEnvironment, MarkovEnvironment]


# ---------------------------------------------------------------------------
# Sampled environment path
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnvRealization:
    """A fixed environment path xi_0 ... xi_{n-1} plus seed provenance."""

    states: tuple
    master_seed: int | None = None
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if not self.states:
            raise ConfigurationError("environment realization must be nonempty")

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]


def sample_environment(
    model: EnvironmentModel, n: int, seed: int, stream_id: int = 0
) -> EnvRealization:
    """Sample an environment path of length n, deterministically in seed."""
    if n < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {n}")
    rng = stream(seed, ENV_DOMAIN, stream_id)
    idx = model.sample_indices(n, rng)
    return EnvRealization(
        states=tuple(model.states[i] for i in idx),
        master_seed=seed,
        stream_id=stream_id,
    )


# ---------------------------------------------------------------------------
# Quenched per-generation moments
# ---------------------------------------------------------------------------


def _prefix_sums(values) -> np.ndarray:
    """Exact-order prefix sums: entry k is fsum of the first k values."""
    values = list(map(float, values))
    out = np.empty(len(values) + 1)
    out[0] = 0.0
    for k in range(1, len(values) + 1):
        out[k] = math.fsum(values[:k])
    return out


@dataclass(frozen=True, eq=False)
class QuenchedMoments:
    """Per-generation transforms and the cumulative normalizing sequences.

    Index convention: per-generation arrays have length n (generation i of
    the path); cumulative arrays have length n+1 with entry k summing
    generations i < k.
    """

    t_grid: np.ndarray
    m: np.ndarray            # per-generation mean offspring m_i
    log_m_t: np.ndarray      # (n, T) log m_i(t) on the grid
    mu: np.ndarray           # per-generation intensity means
    sigma2: np.ndarray       # per-generation intensity variances
    p: np.ndarray            # (n+1,) running products of m_i (may overflow to inf)
    log_p: np.ndarray        # (n+1,) running sums of log m_i
    a: np.ndarray            # (n+1,) CLT centers, prefix sums of mu
    b: np.ndarray            # (n+1,) CLT scales, sqrt of prefix sums of sigma2
    cum_log_m_t: np.ndarray  # (n+1, T) prefix sums of log m_i(t)
    lattice: bool            # True if any generation has a lattice displacement law

    def degenerate_scale(self, n: int | None = None) -> bool:
        """True when b_n = 0; CLT-style estimators must refuse such input."""
        idx = len(self.b) - 1 if n is None else n
        return self.b[idx] == 0.0


def quenched_moments(realization: EnvRealization, t_grid) -> QuenchedMoments:
    """Compute per-generation m_i, log m_i(t), mu_i, sigma_i^2 and the
    cumulative normalizers log P_n, a_n, b_n along a fixed environment path.

    Sums are accumulated in generation order with exact (fsum) prefix
    accumulation, so repeated runs agree bitwise.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    states = realization.states
    n = len(states)
    m = np.array([s.m0 for s in states])
    log_m0 = np.array([math.log(s.m0) for s in states])
    log_m_t = np.empty((n, t_grid.size))
    for i, s in enumerate(states):
        log_m_t[i] = log_m0[i] + np.asarray(s.displacement.log_mgf(t_grid))
    mu = np.array([s.mu for s in states])
    sigma2 = np.array([s.sigma2 for s in states])

    with np.errstate(over="ignore"):
        p = np.concatenate([[1.0], np.multiply.accumulate(m)])
    log_p = _prefix_sums(log_m0)
    a = _prefix_sums(mu)
    b = np.sqrt(_prefix_sums(sigma2))
    cum = np.empty((n + 1, t_grid.size))
    for j in range(t_grid.size):
        cum[:, j] = _prefix_sums(log_m_t[:, j])

    return QuenchedMoments(
        t_grid=t_grid,
        m=m,
        log_m_t=log_m_t,
        mu=mu,
        sigma2=sigma2,
        p=p,
        log_p=log_p,
        a=a,
        b=b,
        cum_log_m_t=cum,
        lattice=any(s.displacement.lattice for s in states),
    )
