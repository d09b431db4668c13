"""Run configuration: defaults, JSON config files and flag overrides.

Precedence is flags > config file > defaults. Unknown keys are rejected at every level.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .flow import CorrectionEstimator
from .models import model_from_dict
from .noise_schedule import NoiseSchedule
from .schedule_learning import ScheduleLearnConfig
from .solvers import DrbeOptions

SOLVER_KINDS = ("rbe", "drbe", "ddim", "ancestral")

DEFAULTS: dict[str, Any] = {
    "model": {"kind": "gaussian", "dim": 256, "var": 4.0},
    "noise_schedule": {"kind": "linear", "T": 1.0, "N": 1000,
                       "params": {"beta_start": 1e-4, "beta_end": 0.02}},
    "solver": {
        "kind": "rbe",
        "K": 20,
        "r": None,
        "schedule_file": None,
        "estimator": "symmetric_jacobian_fd",
        "fd_step_gamma": None,
        "fd_step_x": None,
        "norm": "rms",
        "h_min": 1e-6,
        "first_step_cap": None,
        "ancestral_variance": "small",
    },
    "learn": {"target_K": 10, "n_seeds": 64, "r_init": 1e-2, "r_lo": 1e-6, "r_hi": 1e2,
              "max_bisect_iters": 40},
    "benchmark": {"solvers": list(SOLVER_KINDS), "nfe_list": [8, 10, 12, 15, 20],
                  "oracle_n_fine": 10_000},
    "n_samples": 1000,
    "seed": 0,
    "output": {"dir": "out", "schedule_file": "schedule.sched", "n_trajectories": 4},
}

# sections whose contents are validated by their own parsers
_FREEFORM = {"model", "noise_schedule"}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if key in _FREEFORM and not path:
            if not isinstance(val, dict):
                raise ConfigError(f"{where!r} must be an object")
            out[key] = copy.deepcopy(val)
        elif isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where!r} must be an object")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def resolve(file_config: dict | None = None, overrides: dict | None = None) -> dict:
    cfg = _merge(DEFAULTS, file_config or {})
    cfg = _merge(cfg, overrides or {})
    validate(cfg)
    return cfg


def load_config_file(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def validate(cfg: dict) -> None:
    build_model(cfg)
    build_noise_schedule(cfg)
    solver = cfg["solver"]
    if solver["kind"] not in SOLVER_KINDS:
        raise ConfigError(f"unknown solver {solver['kind']!r}; choose from {SOLVER_KINDS}")
    if solver["r"] is not None and not float(solver["r"]) > 0:
        raise ConfigError("solver.r must be positive")
    if solver["K"] is not None and int(solver["K"]) < 1:
        raise ConfigError("solver.K must be a positive integer")
    build_estimator(cfg)
    build_drbe_options(cfg)
    if solver["ancestral_variance"] not in ("small", "large", "zero"):
        raise ConfigError("solver.ancestral_variance must be small, large or zero")
    build_learn_config(cfg)
    bench = cfg["benchmark"]
    unknown = set(bench["solvers"]) - set(SOLVER_KINDS)
    if unknown:
        raise ConfigError(f"unknown benchmark solvers {sorted(unknown)}")
    if any(int(k) < 1 for k in bench["nfe_list"]):
        raise ConfigError("benchmark.nfe_list entries must be positive")
    if int(cfg["n_samples"]) < 1:
        raise ConfigError("n_samples must be positive")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")


def build_model(cfg: dict):
    return model_from_dict(cfg["model"])


def build_noise_schedule(cfg: dict) -> NoiseSchedule:
    return NoiseSchedule.from_dict(cfg["noise_schedule"])


def build_estimator(cfg: dict) -> CorrectionEstimator:
    s = cfg["solver"]
    try:
        return CorrectionEstimator(s["estimator"], s["fd_step_gamma"], s["fd_step_x"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_drbe_options(cfg: dict) -> DrbeOptions:
    s = cfg["solver"]
    return DrbeOptions(norm=s["norm"], h_min=float(s["h_min"]), first_step_cap=s["first_step_cap"])


def build_learn_config(cfg: dict, **changes) -> ScheduleLearnConfig:
    lr = cfg["learn"]
    params = dict(target_K=int(lr["target_K"]), n_seeds=int(lr["n_seeds"]),
                  r_init=float(lr["r_init"]), r_lo=float(lr["r_lo"]), r_hi=float(lr["r_hi"]),
                  max_bisect_iters=int(lr["max_bisect_iters"]), seed=int(cfg["seed"]),
                  estimator=build_estimator(cfg), drbe=build_drbe_options(cfg))
    params.update(changes)
    return ScheduleLearnConfig(**params)


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"
