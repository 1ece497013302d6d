"""Run configuration: TOML schema, parsing with field diagnostics, and a
serializer whose output parses back to an identical configuration.

Schema (all sections except [model] optional; seeds are mandatory, there
is no wall-clock default):

    schema_version = 1

    [model]
    id = "cfg_g"
    variant = "constant"          # constant | iid | markov
    probs = [0.5, 0.5]            # iid only
    transition = [[0.9, 0.1], [0.1, 0.9]]   # markov only

    [[model.states]]
    label = "A"
    offspring = { law = "deterministic", k = 2 }
    # laws: deterministic(k) | shifted_geometric(p) | poisson_positive(rate)
    displacement = { law = "gaussian", mean = 0.0, variance = 1.0 }
    # laws: point_mass(c) | gaussian(mean, variance) | two_point(d, p)

    [sim]
    horizon = 20
    seed = 42
    cap = 16777216
    replicas = 16
    t_grid = [-3.0, -1.0, 0.0, 1.0, 3.0]
    store_positions = "all"       # all | last | none

    [estimate]
    x_grid = { start = -4.0, stop = 4.0, step = 0.05 }   # or explicit list
    window = 0.5                  # local-limit window width h
    bandwidth = 0.5               # smoothing kernel bandwidth a

    [output]
    directory = "out"
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib

from .env_model import (
    ConfigurationError,
    ConstantEnvironment,
    Deterministic,
    EnvState,
    EnvironmentModel,
    Gaussian,
    IIDEnvironment,
    MarkovEnvironment,
    PointMass,
    PoissonPositive,
    ShiftedGeometric,
    TwoPoint,
)
from .simulate import DEFAULT_T_GRID, SimConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "parse_config_text", "serialize_config"]


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending field."""


DEFAULT_X_GRID = tuple(float(v) for v in np.round(np.arange(-4.0, 4.0 + 1e-9, 0.05), 10))


@dataclass(frozen=True)
class RunConfig:
    model_id: str
    model: EnvironmentModel
    sim: SimConfig
    x_grid: tuple
    window: float
    bandwidth: float
    output_dir: str


def _need(table: dict, key: str, path: str):
    if key not in table:
        raise ConfigError(f"{path}: missing required field '{key}'")
    return table[key]


def _parse_offspring(table: dict, path: str):
    law = _need(table, "law", path)
    try:
        if law == "deterministic":
            return Deterministic(k=int(_need(table, "k", path)))
        if law == "shifted_geometric":
            return ShiftedGeometric(p=float(_need(table, "p", path)))
        if law == "poisson_positive":
            return PoissonPositive(lam=float(_need(table, "rate", path)))
    except ConfigurationError as err:
        raise ConfigError(f"{path}: {err}") from err
    raise ConfigError(f"{path}.law: unknown offspring law {law!r}")


def _parse_displacement(table: dict, path: str):
    law = _need(table, "law", path)
    try:
        if law == "point_mass":
            return PointMass(c=float(_need(table, "c", path)))
        if law == "gaussian":
            return Gaussian(
                mean=float(_need(table, "mean", path)),
                variance=float(_need(table, "variance", path)),
            )
        if law == "two_point":
            return TwoPoint(d=float(_need(table, "d", path)), p=float(_need(table, "p", path)))
    except ConfigurationError as err:
        raise ConfigError(f"{path}: {err}") from err
    raise ConfigError(f"{path}.law: unknown displacement law {law!r}")


def _parse_model(table: dict) -> tuple:
    model_id = str(_need(table, "id", "model"))
    variant = _need(table, "variant", "model")
    raw_states = _need(table, "states", "model")
    if not isinstance(raw_states, list) or not raw_states:
        raise ConfigError("model.states: need a nonempty array of state tables")
    states = []
    for i, st in enumerate(raw_states):
        path = f"model.states[{i}]"
        states.append(
            EnvState(
                offspring=_parse_offspring(_need(st, "offspring", path), f"{path}.offspring"),
                displacement=_parse_displacement(
                    _need(st, "displacement", path), f"{path}.displacement"
                ),
                label=str(st.get("label", "")),
            )
        )
    try:
        if variant == "constant":
            if len(states) != 1:
                raise ConfigError("model: constant variant needs exactly one state")
            return model_id, ConstantEnvironment(state=states[0])
        if variant == "iid":
            probs = _need(table, "probs", "model")
            return model_id, IIDEnvironment(states=tuple(states), probs=tuple(probs))
        if variant == "markov":
            transition = _need(table, "transition", "model")
            return model_id, MarkovEnvironment(states=tuple(states), transition=transition)
    except ConfigurationError as err:
        raise ConfigError(f"model: {err}") from err
    raise ConfigError(f"model.variant: unknown variant {variant!r}")


def _parse_grid(value, path: str) -> tuple:
    if isinstance(value, dict):
        for key in ("start", "stop", "step"):
            _need(value, key, path)
        start, stop, step = float(value["start"]), float(value["stop"]), float(value["step"])
        if step <= 0 or stop < start:
            raise ConfigError(f"{path}: need step > 0 and stop >= start")
        count = int(round((stop - start) / step)) + 1
        return tuple(float(v) for v in np.round(start + step * np.arange(count), 12))
    if isinstance(value, list):
        grid = tuple(float(v) for v in value)
        if any(not math.isfinite(v) for v in grid):
            raise ConfigError(f"{path}: grid entries must be finite")
        if list(grid) != sorted(grid):
            raise ConfigError(f"{path}: grid must be sorted")
        return grid
    raise ConfigError(f"{path}: expected a list or a {{start, stop, step}} table")


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{source}: TOML syntax error: {err}") from err

    version = data.get("schema_version", 1)
    if version != 1:
        raise ConfigError(f"schema_version: unsupported version {version!r}")
    model_id, model = _parse_model(_need(data, "model", source))

    sim_tab = data.get("sim", {})
    if "seed" not in sim_tab:
        raise ConfigError("sim.seed: a master seed is required (no wall-clock default)")
    try:
        sim = SimConfig(
            horizon=int(sim_tab.get("horizon", 10)),
            master_seed=int(sim_tab["seed"]),
            cap=int(sim_tab.get("cap", 1 << 24)),
            t_grid=_parse_grid(sim_tab.get("t_grid", list(DEFAULT_T_GRID)), "sim.t_grid"),
            replicas=int(sim_tab.get("replicas", 1)),
            store_positions=str(sim_tab.get("store_positions", "all")),
        )
    except ValueError as err:
        raise ConfigError(f"sim: {err}") from err

    est_tab = data.get("estimate", {})
    x_grid = _parse_grid(est_tab.get("x_grid", list(DEFAULT_X_GRID)), "estimate.x_grid")
    window = float(est_tab.get("window", 0.5))
    bandwidth = float(est_tab.get("bandwidth", 0.5))
    if window <= 0:
        raise ConfigError("estimate.window: must be > 0")
    if bandwidth <= 0:
        raise ConfigError("estimate.bandwidth: must be > 0")

    out_tab = data.get("output", {})
    output_dir = str(out_tab.get("directory", "out"))

    return RunConfig(
        model_id=model_id,
        model=model,
        sim=sim,
        x_grid=x_grid,
        window=window,
        bandwidth=bandwidth,
        output_dir=output_dir,
    )


def parse_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"{path}: {err}") from err
    return parse_config_text(text, source=str(path))


# ---------------------------------------------------------------------------
# Serialization (restricted TOML writer; output reparses identically)
# ---------------------------------------------------------------------------


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _law_table(law) -> str:
    if isinstance(law, Deterministic):
        items = [("law", "deterministic"), ("k", law.k)]
    elif isinstance(law, ShiftedGeometric):
        items = [("law", "shifted_geometric"), ("p", law.p)]
    elif isinstance(law, PoissonPositive):
        items = [("law", "poisson_positive"), ("rate", law.lam)]
    elif isinstance(law, PointMass):
        items = [("law", "point_mass"), ("c", law.c)]
    elif isinstance(law, Gaussian):
        items = [("law", "gaussian"), ("mean", law.mean), ("variance", law.variance)]
    elif isinstance(law, TwoPoint):
        items = [("law", "two_point"), ("d", law.d), ("p", law.p)]
    else:
        raise TypeError(f"cannot serialize law {type(law).__name__}")
    return "{ " + ", ".join(f"{k} = {_toml_scalar(v)}" for k, v in items) + " }"


def serialize_config(rc: RunConfig) -> str:
    model = rc.model
    lines = ["schema_version = 1", "", "[model]", f"id = {_toml_scalar(rc.model_id)}"]
    if isinstance(model, ConstantEnvironment):
        lines.append('variant = "constant"')
    elif isinstance(model, IIDEnvironment):
        lines.append('variant = "iid"')
        lines.append(f"probs = {_toml_scalar(list(model.probs))}")
    elif isinstance(model, MarkovEnvironment):
        lines.append('variant = "markov"')
        lines.append(f"transition = {_toml_scalar([list(r) for r in model.transition])}")
    else:
        raise TypeError(f"cannot serialize model {type(model).__name__}")
    for state in model.states:
        lines += [
            "",
            "[[model.states]]",
            f"label = {_toml_scalar(state.label)}",
            f"offspring = {_law_table(state.offspring)}",
            f"displacement = {_law_table(state.displacement)}",
        ]
    sim = rc.sim
    lines += [
        "",
        "[sim]",
        f"horizon = {sim.horizon}",
        f"seed = {sim.master_seed}",
        f"cap = {sim.cap}",
        f"replicas = {sim.replicas}",
        f"t_grid = {_toml_scalar(list(sim.t_grid))}",
        f"store_positions = {_toml_scalar(sim.store_positions)}",
        "",
        "[estimate]",
        f"x_grid = {_toml_scalar(list(rc.x_grid))}",
        f"window = {_toml_scalar(rc.window)}",
        f"bandwidth = {_toml_scalar(rc.bandwidth)}",
        "",
        "[output]",
        f"directory = {_toml_scalar(rc.output_dir)}",
    ]
    return "\n".join(lines) + "\n"
