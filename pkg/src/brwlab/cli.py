"""Command-line front end: rates, simulate, estimate, verify, report.

Exit codes: 0 success, 1 verification check failed, 2 malformed
configuration (nothing is written in that case), 3 population overflow.
The output directory comes from --out, else the BRWLAB_OUT environment
variable, else the config's [output] section.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import analytic, estimators
from .config import ConfigError, RunConfig, parse_config, parse_config_text, serialize_config
from .env_model import EnvRealization, quenched_moments, sample_environment
from .simulate import (
    GenerationSnapshot,
    PopulationOverflowError,
    SimConfig,
    read_positions_dump,
    run_tree,
    snapshots_to_csv,
    write_positions_dump,
)
from .verify import SuiteReport, TheoremCheck, default_suite_config, run_suite

__all__ = ["main"]


def _out_dir(args, rc: RunConfig) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get("BRWLAB_OUT")
    if env:
        return Path(env)
    return Path(rc.output_dir)


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


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _cmd_rates(args) -> int:
    rc = parse_config(args.config)
    grid = np.round(
        np.arange(args.t_min, args.t_max + 0.5 * args.t_step, args.t_step), 12
    )
    table = analytic.rate_function_table(rc.model, grid)
    tilde = np.asarray(analytic.free_energy_limit(table, grid))
    out = _out_dir(args, rc)
    out.mkdir(parents=True, exist_ok=True)

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["t", "lambda", "lambda_prime", "rho", "lambda_tilde"])
    for j, t in enumerate(grid):
        writer.writerow(
            [repr(float(t)), repr(float(table.lam[j])), repr(float(table.lam_prime[j])),
             repr(float(table.rho[j])), repr(float(tilde[j]))]
        )
    (out / "rates.csv").write_text(buf.getvalue())

    header = {
        "schema_version": 1,
        "config_id": rc.model_id,
        "t_minus": table.t_minus,
        "t_plus": table.t_plus,
        "speed_left": table.speed_left,
        "speed_right": table.speed_right,
        "quadratic": table.quadratic,
        "grid": {"start": args.t_min, "stop": args.t_max, "step": args.t_step},
    }
    try:
        params = analytic.annealed_params(rc.model)
        header["annealed"] = {
            "mu_bar": params.mu_bar,
            "sigma2_bar": params.sigma2_bar,
            "mu_bar_prime": params.mu_bar_prime,
            "sigma2_bar_prime": params.sigma2_bar_prime,
        }
    except analytic.UnsupportedVariantError:
        header["annealed"] = None
    _write_json(out / "rates.json", header)
    print(f"wrote {out / 'rates.csv'} ({grid.size} rows) and {out / 'rates.json'}")
    return 0


def _state_indices(model, realization) -> list:
    return [model.states.index(s) for s in realization.states]


def _replica_payload(task) -> tuple:
    """Worker for one replica: returns (replica, env indices, csv text,
    positions bytes or None).  Pure in its arguments, so results do not
    depend on pool scheduling."""
    model, sim, replica, fresh_env, dump = task
    stream_id = replica if fresh_env else 0
    env = sample_environment(model, sim.horizon, sim.master_seed, stream_id=stream_id)
    snaps = run_tree(env, sim, replica_id=replica)
    blob = None
    if dump:
        buf = io.BytesIO()
        write_positions_dump(snaps, buf)
        blob = buf.getvalue()
    return replica, _state_indices(model, env), snapshots_to_csv(snaps, sim.t_grid), blob


def _cmd_simulate(args) -> int:
    rc = parse_config(args.config)
    sim = rc.sim
    if args.n is not None:
        sim = dataclasses.replace(sim, horizon=args.n)
    if args.replicas is not None:
        sim = dataclasses.replace(sim, replicas=args.replicas)
    if args.seed is not None:
        sim = dataclasses.replace(sim, master_seed=args.seed)
    out = _out_dir(args, rc)
    out.mkdir(parents=True, exist_ok=True)

    tasks = [(rc.model, sim, r, bool(args.fresh_env), bool(args.dump_positions))
             for r in range(sim.replicas)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            payloads = list(pool.map(_replica_payload, tasks))
    else:
        payloads = [_replica_payload(t) for t in tasks]

    env_indices = {}
    for replica, indices, csv_text, blob in sorted(payloads):
        env_indices[str(replica)] = indices
        (out / f"snapshots_r{replica:03d}.csv").write_text(csv_text)
        if blob is not None:
            (out / f"positions_r{replica:03d}.bin").write_bytes(blob)

    _write_json(out / "run.json", {
        "schema_version": 1,
        "config_id": rc.model_id,
        "config_text": serialize_config(rc),
        "seed": sim.master_seed,
        "horizon": sim.horizon,
        "replicas": sim.replicas,
        "t_grid": list(sim.t_grid),
        "fresh_env": bool(args.fresh_env),
        "positions_dumped": bool(args.dump_positions),
        "environment_indices": env_indices,
    })
    print(f"wrote {sim.replicas} replica snapshot file(s) to {out}")
    return 0


def _load_snapshots(path: Path, t_count: int, positions=None) -> list:
    snaps = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != 5 + t_count:
            raise ConfigError(f"{path}: expected {5 + t_count} columns, got {len(header)}")
        for row in reader:
            n = int(row[0])
            pos = None
            if positions is not None and n < len(positions):
                pos = positions[n]
            snaps.append(GenerationSnapshot(
                n=n,
                count=int(row[1]),
                positions=pos,
                r_n=float(row[2]),
                l_n=float(row[3]),
                log_partition=np.array([float(v) for v in row[5:]]),
                w_n=float(row[4]),
                w_n_t=np.full(t_count, np.nan),
            ))
    return snaps


def _cmd_estimate(args) -> int:
    run_dir = Path(args.run)
    meta_path = run_dir / "run.json"
    if not meta_path.exists():
        raise ConfigError(f"{meta_path}: not found (run `brwlab simulate` first)")
    meta = json.loads(meta_path.read_text())
    rc = parse_config_text(meta["config_text"], source=str(meta_path))
    out = _out_dir(args, rc)
    out.mkdir(parents=True, exist_ok=True)

    t_grid = tuple(float(v) for v in meta["t_grid"])
    x_grid = np.asarray(rc.x_grid)
    replicas = int(meta["replicas"])
    fresh = bool(meta["fresh_env"])
    summaries = []
    fe_rows = []
    llt_rows = None
    fejer_rows = None
    for r in range(replicas):
        indices = meta["environment_indices"][str(r)]
        env = EnvRealization(tuple(rc.model.states[i] for i in indices))
        moments = quenched_moments(env, t_grid)
        positions = None
        bin_path = run_dir / f"positions_r{r:03d}.bin"
        if bin_path.exists():
            with open(bin_path, "rb") as fh:
                positions = read_positions_dump(fh)
        snaps = _load_snapshots(run_dir / f"snapshots_r{r:03d}.csv", len(t_grid), positions)
        summaries.append(estimators.summarize_replica(
            snaps, moments, replica_id=r,
            environment_id=f"env-{r}" if fresh else "env-0",
            x_grid=x_grid,
            llt_h=rc.window,
        ))
        ns, fe = estimators.free_energy_curve(snaps, t_grid)
        for i, n in enumerate(ns):
            for j, t in enumerate(t_grid):
                fe_rows.append((r, int(n), t, fe[i, j]))
        final = snaps[-1]
        if r == 0 and final.positions is not None:
            if not moments.lattice and moments.b[final.n] > 0:
                gap = estimators.llt_gap(final, moments, rc.window)
                llt_rows = list(zip(gap.x_grid, gap.gaps))
            span = abs(final.r_n) + abs(final.l_n) + 20.0 * rc.bandwidth
            fx = np.arange(-span, span + 1e-9, max(rc.bandwidth / 10.0, span / 4000.0))
            dens = estimators.fejer_smooth(final, moments, rc.bandwidth, fx)
            fejer_rows = list(zip(fx, dens))

    with open(out / "free_energy.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replica", "n", "t", "value"])
        for row in fe_rows:
            writer.writerow([row[0], row[1], repr(float(row[2])), repr(float(row[3]))])

    sidecar = {
        "schema_version": 1,
        "config_id": rc.model_id,
        "seed": meta["seed"],
        "replicas": replicas,
        "mode": "annealed-mean" if fresh else "quenched-mean",
        "x_grid": list(map(float, x_grid)),
        "window": rc.window,
        "bandwidth": rc.bandwidth,
    }
    if replicas >= 2:
        ref = norm.cdf(x_grid)
        have_cdfs = all(s.clt_cdf is not None for s in summaries)
        report = estimators.aggregate(sidecar["mode"], summaries,
                                      reference_cdf=ref if have_cdfs else None)
        sidecar["w_mean"] = report.estimates["w_mean"]
        sidecar["w_se"] = report.standard_errors["w_mean"]
        if "cdf" in report.estimates:
            with open(out / "cdf.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["x", "cdf", "normal_cdf"])
                for j, x in enumerate(x_grid):
                    writer.writerow([repr(float(x)), repr(float(report.estimates["cdf"][j])),
                                     repr(float(ref[j]))])
            sidecar["ks_vs_normal"] = report.ks.get("cdf")
        if "ldp_upper_median" in report.estimates:
            with open(out / "ldp.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["x", "upper_rate_median"])
                for j, x in enumerate(x_grid):
                    writer.writerow([repr(float(x)),
                                     repr(float(report.estimates["ldp_upper_median"][j]))])
    if llt_rows is not None:
        with open(out / "llt.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "gap"])
            for x, g in llt_rows:
                writer.writerow([repr(float(x)), repr(float(g))])
    if fejer_rows is not None:
        with open(out / "density.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "smoothed_density"])
            for x, d in fejer_rows:
                writer.writerow([repr(float(x)), repr(float(d))])
    _write_json(out / "estimate.json", sidecar)
    print(f"wrote estimator outputs to {out}")
    return 0


def _cmd_verify(args) -> int:
    rc = parse_config(args.config)
    seed = args.seed if args.seed is not None else rc.sim.master_seed
    cfg = default_suite_config(rc.model, rc.model_id, seed, scale=args.scale)
    report = run_suite(cfg)
    out = _out_dir(args, rc)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    print(report.to_text())
    return 1 if report.failed else 0


def _cmd_report(args) -> int:
    data = json.loads(Path(args.json).read_text())
    checks = [
        TheoremCheck(
            theorem=c["theorem"],
            config_id=c["config_id"],
            description=c["description"],
            predicted=c["predicted"],
            measured=c["measured"],
            tolerance=c["tolerance"],
            verdict=c["verdict"],
            detail=c.get("detail", {}),
        )
        for c in data["checks"]
    ]
    report = SuiteReport(config_id=data["config_id"], seed=data["seed"], checks=checks)
    print(report.to_text())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="brwlab",
        description="branching random walk in random environment: "
                    "limit objects, simulation, verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rates", help="emit the analytic rate-function table")
    p.add_argument("--config", required=True)
    p.add_argument("--t-min", type=float, default=-4.0)
    p.add_argument("--t-max", type=float, default=4.0)
    p.add_argument("--t-step", type=float, default=0.01)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_rates)

    p = sub.add_parser("simulate", help="grow particle trees and write snapshots")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=int, help="override sim horizon")
    p.add_argument("--replicas", type=int, help="override replica count")
    p.add_argument("--seed", type=int, help="override master seed")
    p.add_argument("--fresh-env", action="store_true",
                   help="fresh environment per replica (annealed batch)")
    p.add_argument("--dump-positions", action="store_true")
    p.add_argument("--jobs", type=int, default=1,
                   help="replica worker-pool size (results merge in replica order)")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("estimate", help="run estimators over stored snapshots")
    p.add_argument("--run", required=True, help="directory written by `simulate`")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("verify", help="run the theorem verification suite")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the suite seed")
    p.add_argument("--scale", choices=("full", "smoke"), default="full")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("report", help="render a stored JSON report as text")
    p.add_argument("--json", required=True)
    p.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except PopulationOverflowError as err:
        print(f"overflow: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
