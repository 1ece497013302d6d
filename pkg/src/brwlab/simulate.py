"""Particle-tree growth under a fixed environment path.

Each generation is expanded in one vectorized pass: offspring counts for
every particle are drawn from the generation's offspring stream, child
positions from its displacement stream, both keyed by
(master seed, domain, replica, generation).  The reduction order is fixed
(generation-major, particle-ordinal-minor), so a run is a pure function of
(realization, config, replica_id).

Population growth is guarded by a hard cap: exceeding it raises
PopulationOverflowError naming the generation reached.  There is no
subsampling; every snapshot describes the genuine tree.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from .env_model import (
    DISPLACEMENT_DOMAIN,
    OFFSPRING_DOMAIN,
    EnvRealization,
    QuenchedMoments,
    quenched_moments,
    stream,
)

__all__ = [
    "PopulationOverflowError",
    "SimConfig",
    "GenerationSnapshot",
    "run_tree",
    "partition_function",
    "additive_martingale",
    "snapshots_to_csv",
    "write_positions_dump",
    "read_positions_dump",
]

_CHUNK = 1 << 20

DEFAULT_T_GRID = (-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0)


class PopulationOverflowError(RuntimeError):
    """Population would exceed the configured cap; no silent subsampling."""

    def __init__(self, generation: int, size: int, cap: int):
        self.generation = generation
        self.size = size
        self.cap = cap
        super().__init__(
            f"population overflow at generation {generation}: "
            f"{size} particles exceeds cap {cap}"
        )


@dataclass(frozen=True)
class SimConfig:
    horizon: int
    master_seed: int
    cap: int = 1 << 24
    t_grid: tuple = DEFAULT_T_GRID
    replicas: int = 1
    store_positions: str = "all"  # all | last | none

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.cap < 1:
            raise ValueError(f"cap must be >= 1, got {self.cap}")
        if self.replicas < 1:
            raise ValueError(f"replicas must be >= 1, got {self.replicas}")
        grid = tuple(float(t) for t in self.t_grid)
        if any(not math.isfinite(t) for t in grid):
            raise ValueError("t_grid entries must be finite")
        if list(grid) != sorted(grid):
            raise ValueError("t_grid must be sorted")
        object.__setattr__(self, "t_grid", grid)
        if self.store_positions not in ("all", "last", "none"):
            raise ValueError(f"unknown store_positions mode {self.store_positions!r}")


@dataclass(frozen=True, eq=False)
class GenerationSnapshot:
    """State of generation n: census, extremes, partition values, martingales.

    ``positions`` is None when the run was configured not to retain raw
    positions for this generation; estimators that need them refuse such
    snapshots.  ``log_partition`` and ``w_n_t`` are tabulated on the run's
    t-grid (the grid of the QuenchedMoments used to normalize).
    """

    n: int
    count: int
    positions: np.ndarray | None
    r_n: float
    l_n: float
    log_partition: np.ndarray
    w_n: float
    w_n_t: np.ndarray


def _log_sum_exp_grid(positions: np.ndarray, t_grid: np.ndarray, r_n: float, l_n: float) -> np.ndarray:
    """log sum_u exp(t S_u) per grid point, max-subtracted and chunk-accumulated
    in ordinal order.  Exact at t = 0 and for all-equal positions."""
    out = np.empty(t_grid.size)
    for j, t in enumerate(t_grid):
        if t == 0.0:
            out[j] = math.log(positions.size)
            continue
        shift = t * (r_n if t > 0.0 else l_n)
        parts = [
            float(np.exp(t * positions[k : k + _CHUNK] - shift).sum())
            for k in range(0, positions.size, _CHUNK)
        ]
        out[j] = shift + math.log(math.fsum(parts))
    return out


def partition_function(positions, t: float) -> float:
    """log of the exponentially weighted particle sum at inverse temperature t."""
    positions = np.asarray(positions, dtype=float)
    if positions.size == 0:
        raise ValueError("partition function of an empty generation is undefined")
    return float(
        _log_sum_exp_grid(positions, np.array([float(t)]), positions.max(), positions.min())[0]
    )


def _martingale_values(
    count: int, log_partition: np.ndarray, moments: QuenchedMoments, n: int
) -> tuple:
    """(w_n, w_n_t): the census and tilted martingales at generation n."""
    p_n = float(moments.p[n])
    if math.isfinite(p_n):
        w_n = count / p_n
    else:
        w_n = math.exp(math.log(count) - moments.log_p[n])
    w_n_t = np.exp(log_partition - moments.cum_log_m_t[n])
    return w_n, w_n_t


def run_tree(
    realization: EnvRealization,
    config: SimConfig,
    replica_id: int = 0,
    moments: QuenchedMoments | None = None,
) -> list:
    """Grow one particle tree for config.horizon generations.

    Returns snapshots for generations 0..horizon inclusive.  Generation 0
    is a single particle at the origin.  Bit-exact for fixed
    (realization, config, replica_id).
    """
    if len(realization) < config.horizon:
        raise ValueError(
            f"realization has {len(realization)} states, horizon is {config.horizon}"
        )
    t_grid = np.asarray(config.t_grid, dtype=float)
    if moments is None:
        moments = quenched_moments(realization, t_grid)
    elif not np.array_equal(moments.t_grid, t_grid):
        raise ValueError("moments grid does not match the simulation t-grid")

    def keep(n: int) -> bool:
        if config.store_positions == "all":
            return True
        if config.store_positions == "last":
            return n == config.horizon
        return False

    positions = np.zeros(1)
    zero_grid = np.zeros(t_grid.size)
    snapshots = [
        GenerationSnapshot(
            n=0,
            count=1,
            positions=positions.copy() if keep(0) else None,
            r_n=0.0,
            l_n=0.0,
            log_partition=zero_grid.copy(),
            w_n=1.0,
            w_n_t=np.ones(t_grid.size),
        )
    ]
    seed = config.master_seed
    for g in range(config.horizon):
        state = realization.states[g]
        rng_off = stream(seed, OFFSPRING_DOMAIN, replica_id, g)
        counts = state.offspring.sample(rng_off, positions.size)
        total = int(counts.sum())
        if total > config.cap:
            raise PopulationOverflowError(generation=g + 1, size=total, cap=config.cap)
        rng_disp = stream(seed, DISPLACEMENT_DOMAIN, replica_id, g)
        offsets = state.displacement.sample(rng_disp, total)
        positions = np.repeat(positions, counts) + offsets
        n = g + 1
        r_n = float(positions.max())
        l_n = float(positions.min())
        log_partition = _log_sum_exp_grid(positions, t_grid, r_n, l_n)
        w_n, w_n_t = _martingale_values(total, log_partition, moments, n)
        snapshots.append(
            GenerationSnapshot(
                n=n,
                count=total,
                positions=positions.copy() if keep(n) else None,
                r_n=r_n,
                l_n=l_n,
                log_partition=log_partition,
                w_n=w_n,
                w_n_t=w_n_t,
            )
        )
    return snapshots


def additive_martingale(snapshot: GenerationSnapshot, t: float, moments: QuenchedMoments) -> float:
    """Partition value normalized by its conditional mean, W_n(t).

    t must lie on the moments grid (the grid the snapshot was built with).
    W_n(0) is the census martingale and is returned exactly.
    """
    grid = moments.t_grid
    hits = np.nonzero(np.abs(grid - t) <= 1e-12)[0]
    if hits.size == 0:
        raise ValueError(f"t = {t} is not on the moments grid")
    j = int(hits[0])
    if grid[j] == 0.0:
        return snapshot.w_n
    return float(math.exp(snapshot.log_partition[j] - moments.cum_log_m_t[snapshot.n, j]))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def snapshots_to_csv(snapshots, t_grid) -> str:
    """Columnar CSV: n, count, r_n, l_n, w_n, then one log-partition column
    per t-grid point.  Floats are written with repr for bit-exact round trips."""
    t_grid = [float(t) for t in t_grid]
    header = ["n", "count", "r_n", "l_n", "w_n"] + [f"log_partition[t={t!r}]" for t in t_grid]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for snap in snapshots:
        row = [str(snap.n), str(snap.count), repr(float(snap.r_n)),
               repr(float(snap.l_n)), repr(float(snap.w_n))]
        row += [repr(float(v)) for v in snap.log_partition]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def write_positions_dump(snapshots, fh) -> None:
    """Little-endian binary dump: per stored generation, a uint64 particle
    count followed by count float64 positions.  Generations without stored
    positions are written with count 0."""
    for snap in snapshots:
        if snap.positions is None:
            fh.write(struct.pack("<Q", 0))
        else:
            fh.write(struct.pack("<Q", snap.positions.size))
            fh.write(snap.positions.astype("<f8", copy=False).tobytes())


def read_positions_dump(fh) -> list:
    """Inverse of write_positions_dump; zero-length generations come back None."""
    out = []
    while True:
        head = fh.read(8)
        if not head:
            return out
        (count,) = struct.unpack("<Q", head)
        if count == 0:
            out.append(None)
        else:
            data = fh.read(8 * count)
            out.append(np.frombuffer(data, dtype="<f8").copy())
