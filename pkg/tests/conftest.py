"""Shared model fixtures and the heavy simulation batches reused across
test modules (session-scoped so each batch is grown once)."""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from brwlab import (
    ConstantEnvironment,
    Deterministic,
    EnvRealization,
    EnvState,
    Gaussian,
    IIDEnvironment,
    MarkovEnvironment,
    PointMass,
    SimConfig,
    quenched_moments,
    run_tree,
    sample_environment,
)

MASTER_SEED = 42
T_GRID = (-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0)


@pytest.fixture(scope="session")
def cfg_det():
    return ConstantEnvironment(
        EnvState(Deterministic(2), PointMass(0.0), label="A")
    )


@pytest.fixture(scope="session")
def cfg_g():
    return ConstantEnvironment(
        EnvState(Deterministic(2), Gaussian(0.0, 1.0), label="A")
    )


@pytest.fixture(scope="session")
def cfg_2s():
    return IIDEnvironment(
        states=(
            EnvState(Deterministic(2), Gaussian(1.0, 1.0), label="A"),
            EnvState(Deterministic(3), Gaussian(-1.0, 2.0), label="B"),
        ),
        probs=(0.5, 0.5),
    )


@pytest.fixture(scope="session")
def cfg_markov():
    return MarkovEnvironment(
        states=(
            EnvState(Deterministic(2), Gaussian(1.0, 1.0), label="A"),
            EnvState(Deterministic(3), Gaussian(-1.0, 2.0), label="B"),
        ),
        transition=((0.9, 0.1), (0.1, 0.9)),
    )


@pytest.fixture(scope="session")
def g_batch(cfg_g):
    """16 trees of the Gaussian constant-environment model at horizon 20.

    Returns a lean summary: free-energy stack, extreme traces, tail counts
    at x in {0.0, 0.8}, sorted final positions of replica 0, moments, and
    the wall-clock build time.
    """
    horizon, replicas = 20, 16
    env = sample_environment(cfg_g, horizon, MASTER_SEED, stream_id=0)
    moments = quenched_moments(env, T_GRID)
    sim = SimConfig(horizon=horizon, master_seed=MASTER_SEED, t_grid=T_GRID,
                    replicas=replicas, store_positions="last")
    fe = []
    r_trace = []
    tail_counts = {0.0: [], 0.8: []}
    first_positions = None
    w_final = []
    start = time.monotonic()
    for r in range(replicas):
        snaps = run_tree(env, sim, replica_id=r, moments=moments)
        fe.append(np.stack([s.log_partition / s.n for s in snaps[1:]]))
        r_trace.append([s.r_n for s in snaps])
        w_final.append(snaps[-1].w_n)
        pos = np.sort(snaps[-1].positions)
        for x in tail_counts:
            tail_counts[x].append(pos.size - np.searchsorted(pos, horizon * x, side="left"))
        if r == 0:
            first_positions = pos
    elapsed = time.monotonic() - start
    return {
        "horizon": horizon,
        "replicas": replicas,
        "t_grid": T_GRID,
        "moments": moments,
        "fe": np.stack(fe),
        "r_trace": np.array(r_trace),
        "tail_counts": {x: np.array(v) for x, v in tail_counts.items()},
        "positions0": first_positions,
        "w_final": np.array(w_final),
        "seconds": elapsed,
    }


@pytest.fixture(scope="session")
def s2_tree(cfg_2s):
    """One quenched two-state tree at horizon 18 (canonical seed)."""
    horizon = 18
    env = sample_environment(cfg_2s, horizon, MASTER_SEED, stream_id=0)
    moments = quenched_moments(env, (0.0,))
    sim = SimConfig(horizon=horizon, master_seed=MASTER_SEED, t_grid=(0.0,),
                    store_positions="last")
    start = time.monotonic()
    snaps = run_tree(env, sim, replica_id=0, moments=moments)
    elapsed = time.monotonic() - start
    return {
        "horizon": horizon,
        "env": env,
        "moments": moments,
        "final": snaps[-1],
        "seconds": elapsed,
    }


@pytest.fixture(scope="session")
def annealed_batch(cfg_2s):
    """500 fresh-environment two-state trees at horizon 15, aggregated into
    census-weighted and martingale-weighted CDF tables on the x grid."""
    horizon, replicas = 15, 500
    mu_bar, sigma_bar = -0.2, math.sqrt(2.56)
    mu_bar_p, sigma_bar_p = 0.0, math.sqrt(2.5)
    x_grid = np.round(np.arange(-4.0, 4.0 + 1e-9, 0.05), 10)
    sim = SimConfig(horizon=horizon, master_seed=MASTER_SEED, t_grid=(0.0,),
                    store_positions="last")
    counts92 = np.zeros(x_grid.size)
    total92 = 0.0
    cdf93_num = np.zeros(x_grid.size)
    w_sum = 0.0
    w_list = []
    start = time.monotonic()
    for r in range(replicas):
        env = sample_environment(cfg_2s, horizon, MASTER_SEED, stream_id=1000 + r)
        moments = quenched_moments(env, (0.0,))
        snaps = run_tree(env, sim, replica_id=1000 + r, moments=moments)
        pos = np.sort(snaps[-1].positions)
        n = horizon
        c92 = np.searchsorted(pos, sigma_bar * math.sqrt(n) * x_grid + n * mu_bar, side="right")
        c93 = np.searchsorted(pos, sigma_bar_p * math.sqrt(n) * x_grid + n * mu_bar_p,
                              side="right")
        counts92 += c92
        total92 += pos.size
        w_n = snaps[-1].w_n
        cdf93_num += w_n * (c93 / pos.size)
        w_sum += w_n
        w_list.append(w_n)
    elapsed = time.monotonic() - start
    return {
        "horizon": horizon,
        "replicas": replicas,
        "x_grid": x_grid,
        "cdf_count_weighted": counts92 / total92,
        "cdf_martingale_weighted": cdf93_num / w_sum,
        "w": np.array(w_list),
        "seconds": elapsed,
    }


@pytest.fixture(scope="session")
def martingale_batch(cfg_g):
    """200 Gaussian-model trees at horizon 10: final W and W(0.5) values."""
    horizon, replicas = 10, 200
    env = sample_environment(cfg_g, horizon, MASTER_SEED, stream_id=0)
    moments = quenched_moments(env, T_GRID)
    sim = SimConfig(horizon=horizon, master_seed=MASTER_SEED, t_grid=T_GRID,
                    replicas=replicas, store_positions="none")
    j_half = T_GRID.index(0.5)
    w0, w_half = [], []
    for r in range(replicas):
        snaps = run_tree(env, sim, replica_id=r, moments=moments)
        w0.append(snaps[-1].w_n)
        w_half.append(snaps[-1].w_n_t[j_half])
    return {"w": np.array(w0), "w_half": np.array(w_half), "horizon": horizon}


@pytest.fixture()
def pure_drift_realization():
    """Subcritical single-state path (N = 1, unit drift) built directly;
    usable only through run_tree, not via a validated model."""
    state = EnvState(Deterministic(1), PointMass(1.0), label="drift")
    return EnvRealization(states=(state,) * 7)
