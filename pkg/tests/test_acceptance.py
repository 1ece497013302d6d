"""Acceptance battery: twelve criteria with fixed tolerances.

Each criterion prints one PASS/FAIL line (run with `pytest -s` to see them
all).  Tolerances are pinned here exactly as stated; criteria that cannot
be met at desk scale fail honestly rather than being loosened.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import norm

from brwlab import (
    SimConfig,
    critical_temperatures,
    ks_distance,
    lambda_of_t,
    lambda_prime_of_t,
    legendre,
    quenched_mean_ldp_exact,
    quenched_moments,
    rate_function_table,
    run_tree,
    sample_environment,
)
from brwlab.cli import main as cli_main
from brwlab.estimators import llt_gap
from brwlab.verify import default_suite_config, run_suite

LOG2 = math.log(2.0)
T_PLUS_G = math.sqrt(2.0 * LOG2)
T_PLUS_2S = math.sqrt(2.0 / 3.0 * math.log(6.0))
X_GRID = np.round(np.arange(-4.0, 4.0 + 1e-9, 0.05), 10)


def report(cid: str, ok: bool, detail: str) -> None:
    print(f"{cid}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"{cid} failed: {detail}"


def test_c01_legendre_brute_force_equivalence(cfg_g, cfg_2s):
    """Conjugate values agree with a dense-grid maximum to 1e-6 in < 5 s."""
    start = time.monotonic()
    worst = 0.0
    for model in (cfg_g, cfg_2s):
        table = rate_function_table(model, np.linspace(-4, 4, 33))
        grid = np.arange(-8.0, 8.0 + 5e-5, 1e-4)
        lam_dense = np.asarray(lambda_of_t(model, grid))
        lo = lambda_prime_of_t(model, -8.0)
        hi = lambda_prime_of_t(model, 8.0)
        for x in np.linspace(0.95 * lo, 0.95 * hi, 50):
            exact = legendre(table.lam_fn, x, fprime=table.lam_prime_fn)
            brute = float(np.max(x * grid - lam_dense))
            worst = max(worst, abs(exact - brute))
    elapsed = time.monotonic() - start
    report("C1", worst <= 1e-6 and elapsed < 5.0,
           f"max |exact - brute| = {worst:.2e} over 100 points, {elapsed:.2f}s")


def test_c02_critical_temperatures_and_speeds(cfg_g, cfg_2s):
    """t_pm and speeds match the hand-derived quadratic closed forms to 1e-8."""
    worst = 0.0
    for model, t_star, slope in ((cfg_g, T_PLUS_G, 1.0), (cfg_2s, T_PLUS_2S, 1.5)):
        t_minus, t_plus = critical_temperatures(
            lambda t: lambda_of_t(model, t), lambda t: lambda_prime_of_t(model, t)
        )
        table = rate_function_table(model, np.linspace(-4, 4, 33))
        worst = max(
            worst,
            abs(t_plus - t_star),
            abs(t_minus + t_star),
            abs(table.speed_right - slope * t_star),
            abs(table.speed_left + slope * t_star),
        )
    report("C2", worst <= 1e-8, f"max closed-form deviation = {worst:.2e}")


def test_c03_free_energy_convergence(g_batch):
    """Median free-energy error at n=20: <= 0.05 for t in {0, 0.5, 1}, <= 0.15 at t=3."""
    t_grid = g_batch["t_grid"]
    fe = g_batch["fe"]  # (replicas, horizon, T)
    n = g_batch["horizon"]
    checks = []
    for t, tol in ((0.0, 0.05), (0.5, 0.05), (1.0, 0.05), (3.0, 0.15)):
        j = t_grid.index(t)
        target = LOG2 + t * t / 2 if abs(t) < T_PLUS_G else t * T_PLUS_G
        dev = float(np.median(np.abs(fe[:, n - 1, j] - target)))
        checks.append((t, dev, tol, dev <= tol))
    ok = all(c[-1] for c in checks) and g_batch["seconds"] < 120.0
    detail = ", ".join(f"t={t}: dev={d:.4f} (tol {tol})" for t, d, tol, _ in checks)
    report("C3", ok, f"{detail}; sim {g_batch['seconds']:.1f}s")


def test_c04_rightmost_speed(g_batch):
    """Median |R_n/n - speed| <= 0.25 at n=20, nonincreasing over n in {10,15,20}."""
    r = g_batch["r_trace"]
    gaps = [float(np.median(np.abs(r[:, n] / n - T_PLUS_G))) for n in (10, 15, 20)]
    ok = gaps[-1] <= 0.25 and gaps[0] >= gaps[1] >= gaps[2]
    report("C4", ok, f"median gaps at n=10,15,20: {gaps[0]:.4f}, {gaps[1]:.4f}, {gaps[2]:.4f}")


def test_c05_ldp_interval_counts(g_batch):
    """Median |(1/n) log Z_n(n[0.8, inf)) - 0.373147| <= 0.08 at n=20."""
    n = g_batch["horizon"]
    counts = g_batch["tail_counts"][0.8].astype(float)
    with np.errstate(divide="ignore"):
        rates = np.where(counts > 0, np.log(np.maximum(counts, 1.0)) / n, -np.inf)
    target = LOG2 - 0.32
    dev = float(np.median(np.abs(rates - target)))
    report("C5", dev <= 0.08, f"median |rate - {target:.6f}| = {dev:.4f} (tol 0.08)")


def test_c06_quenched_mean_ldp_exact(cfg_g):
    """Analytic tail rate at n=400 within 0.01 of -Lambda*(0.8), in < 1 s."""
    start = time.monotonic()
    env = sample_environment(cfg_g, 400, seed=42)
    value = quenched_mean_ldp_exact(env, 0.8, 400)
    elapsed = time.monotonic() - start
    rate = 0.32 - LOG2  # Lambda*(0.8) for the unit Gaussian family
    dev = abs(value + rate)
    report("C6", dev <= 0.01 and elapsed < 1.0,
           f"|value + Lambda*(0.8)| = {dev:.5f} (tol 0.01), {elapsed:.3f}s")


def test_c07_main_clt(g_batch, s2_tree):
    """Single-tree KS to the normal CDF: <= 0.05 (n=20) and <= 0.06 (two-state, n=18)."""
    ref = norm.cdf(X_GRID)
    pos_g = g_batch["positions0"]
    mom_g = g_batch["moments"]
    n = g_batch["horizon"]
    cdf_g = np.searchsorted(pos_g, mom_g.b[n] * X_GRID + mom_g.a[n], side="right") / pos_g.size
    ks_g = ks_distance(cdf_g, ref)

    final = s2_tree["final"]
    mom_s = s2_tree["moments"]
    m = s2_tree["horizon"]
    pos_s = np.sort(final.positions)
    cdf_s = np.searchsorted(pos_s, mom_s.b[m] * X_GRID + mom_s.a[m], side="right") / pos_s.size
    ks_s = ks_distance(cdf_s, ref)

    per_tree = max(g_batch["seconds"] / g_batch["replicas"], s2_tree["seconds"])
    ok = ks_g <= 0.05 and ks_s <= 0.06 and per_tree < 60.0
    report("C7", ok,
           f"KS={ks_g:.4f} (tol 0.05, census {pos_g.size}); "
           f"two-state KS={ks_s:.4f} (tol 0.06, census {final.count}); "
           f"<= {per_tree:.1f}s per tree")


def test_c08_local_limit(g_batch):
    """Window-density sup-gap <= 0.05; center window within 0.03 of h/sqrt(2 pi)."""
    h = 0.5
    mom = g_batch["moments"]
    n = g_batch["horizon"]
    pos = g_batch["positions0"]
    from brwlab.simulate import GenerationSnapshot

    snap = GenerationSnapshot(
        n=n, count=pos.size, positions=pos, r_n=float(pos[-1]), l_n=float(pos[0]),
        log_partition=np.zeros(1), w_n=1.0, w_n_t=np.ones(1),
    )
    gap = llt_gap(snap, mom, h)
    a_n, b_n = mom.a[n], mom.b[n]
    lo = np.searchsorted(pos, a_n, side="right")
    hi = np.searchsorted(pos, a_n + h, side="left")
    window = b_n * (hi - lo) / pos.size
    target = h / math.sqrt(2 * math.pi)
    ok = gap.sup_gap <= 0.05 and abs(window - target) <= 0.03
    report("C8", ok,
           f"sup-gap={gap.sup_gap:.4f} (tol 0.05); center window "
           f"{window:.4f} vs {target:.6f} (tol 0.03)")


def test_c09_annealed_clt(annealed_batch):
    """Census-weighted cross-replica CDF vs normal: KS <= 0.05 in < 5 min."""
    ks = ks_distance(annealed_batch["cdf_count_weighted"], norm.cdf(annealed_batch["x_grid"]))
    ok = ks <= 0.05 and annealed_batch["seconds"] < 300.0
    report("C9", ok,
           f"KS={ks:.4f} over {annealed_batch['replicas']} fresh environments, "
           f"{annealed_batch['seconds']:.0f}s")


def test_c10_martingale_normalization(martingale_batch):
    """Cross-replica means of W_n and W_n(0.5) within 4 standard errors of 1."""
    w = martingale_batch["w"]
    wh = martingale_batch["w_half"]
    se_w = w.std(ddof=1) / math.sqrt(w.size)
    se_h = wh.std(ddof=1) / math.sqrt(wh.size)
    ok = abs(w.mean() - 1.0) <= 4 * se_w and abs(wh.mean() - 1.0) <= 4 * se_h
    report("C10", ok,
           f"mean W = {w.mean():.6f} (4SE {4 * se_w:.6f}); "
           f"mean W(0.5) = {wh.mean():.4f} (4SE {4 * se_h:.4f})")


def test_c11_verify_determinism(tmp_path, capsys):
    """Repeated `verify` with a fixed seed yields byte-identical JSON reports."""
    cfg = str((tmp_path / "cfg.toml"))
    import shutil
    from pathlib import Path

    shutil.copy(Path(__file__).parent.parent / "configs" / "cfg_det.toml", cfg)
    for sub in ("a", "b"):
        code = cli_main(["verify", "--config", cfg, "--seed", "42",
                         "--out", str(tmp_path / sub)])
        assert code == 0
    capsys.readouterr()
    a = (tmp_path / "a" / "report.json").read_bytes()
    b = (tmp_path / "b" / "report.json").read_bytes()
    report("C11", a == b, f"two verify runs, {len(a)} bytes each, identical={a == b}")


def test_c12_degenerate_exactness(cfg_det):
    """Point-mass tree: free energy, martingales, and extremes carry zero error."""
    env = sample_environment(cfg_det, 12, seed=42)
    t_grid = (-3.0, -1.0, 0.0, 0.5, 2.0)
    mom = quenched_moments(env, t_grid)
    snaps = run_tree(env, SimConfig(horizon=12, master_seed=42, t_grid=t_grid), moments=mom)
    ok = True
    for s in snaps[1:]:
        ok &= bool(np.all(s.log_partition / s.n == LOG2))
        ok &= s.w_n == 1.0 and bool(np.all(s.w_n_t == 1.0))
        ok &= s.r_n == 0.0 and s.l_n == 0.0
        ok &= s.count == 2**s.n
    report("C12", ok, "free energy == log 2, W == 1, R == L == 0, exact census")
