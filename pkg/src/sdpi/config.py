"""Strict flat key=value configuration with sections.

Unknown sections or keys abort before any computation; every run echoes
its fully-resolved configuration next to its outputs so each number in a
report can be traced to the exact settings that produced it.
"""

import configparser
import io
import os

from .errors import ConfigError

# section -> key -> (type tag, default)
SCHEMA = {
    "run": {
        "env": ("str", "duffing"),
        "seed": ("int", 0),
        "out": ("str", "out"),
    },
    "verify": {
        "seeds": ("int", 20),
        "dims": ("intlist", [1, 2, 3]),
        "grid_n": ("int", 12),
        "tolerance": ("float", 1e-10),
    },
    "sdpi": {
        "h": ("float", 0.05),
        "nu_h": ("float", 0.01),
        "hidden": ("intlist", [64, 64]),
        "kind": ("str", "mlp"),
        "skip": ("bool", False),
        "n_pi": ("int", 4),
        "adam_steps": ("int", 500),
        "lr": ("float", 3e-3),
        "batch_interior": ("int", 4096),
        "batch_initial": ("int", 512),
        "batch_collar": ("int", 512),
        "lambda_ic": ("float", 10.0),
        "lambda_ext": ("float", 10.0),
        "known_dynamics": ("bool", False),
        "representation": ("str", "linear"),
        "rollouts_per_iter": ("int", 20),
        "data_dt": ("float", 0.0),       # 0 means use the env step
        "greedy_budget": ("int", 0),
        "checkpoint_every": ("int", 50),
        "eval_rollouts": ("int", 30),
        "eval_start_scale": ("float", 1.0),
    },
    "oracle": {
        "h": ("float", 0.1),
        "nu_h": ("float", 0.0),          # 0 means monotone default N*h
        "omega_half": ("float", 2.0),
        "n_pi": ("int", 4),
        "n_snapshots": ("int", 51),
        "dtau": ("float", 0.0),          # 0 means the stability-bound default
        "nu_sweep": ("floatlist", [1e-3, 1e-2, 1e-1]),
        "horizon": ("float", 2.0),
    },
    "theorem1": {
        "h": ("float", 0.1),
        "nu_h": ("float", 0.1),
        "omega_half": ("float", 2.0),
        "solver": ("str", "pinn"),
        "eta_sweep": ("floatlist", [0.0, 0.25, 0.5, 1.0]),
        "r_sweep": ("floatlist", [0.0, 0.25, 0.5, 1.0]),
        "b_sweep": ("floatlist", [0.0, 0.25, 0.5, 1.0]),
        "nu_sweep": ("floatlist", [1e-3, 1e-2, 1e-1]),
        "eta_for_nu_sweep": ("float", 0.5),
        "adam_steps": ("int", 400),
        "n_seeds": ("int", 1),
    },
    "optimal_cost": {
        "method": ("str", "direct-trajectory-opt"),
        "n_starts": ("int", 30),
        "start_scale": ("float", 1.0),
        "dt": ("float", 0.0),            # 0 means the env step
    },
}


def _parse_value(tag: str, raw: str):
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if tag == "str":
            return raw
        if tag == "intlist":
            return [int(v) for v in raw.split(",") if v.strip()]
        if tag == "floatlist":
            return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {tag}")
    raise ConfigError(f"unknown type tag {tag!r}")


def default_config() -> dict:
    return {sec: {k: v for k, (_, v) in keys.items()} for sec, keys in SCHEMA.items()}


def load_config(path: str | None) -> dict:
    """Defaults overlaid with the file's values; strict about every key."""
    cfg = default_config()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    parser.optionxform = str
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            cfg[section][key] = _parse_value(SCHEMA[section][key][0], raw)
    return cfg


def render_config(cfg: dict) -> str:
    buf = io.StringIO()
    for section in SCHEMA:
        buf.write(f"[{section}]\n")
        for key in SCHEMA[section]:
            val = cfg[section][key]
            if isinstance(val, list):
                val = ",".join(repr(v) for v in val)
            buf.write(f"{key} = {val}\n")
        buf.write("\n")
    return buf.getvalue()


def echo_config(cfg: dict, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.ini"), "w") as fh:
        fh.write(render_config(cfg))
