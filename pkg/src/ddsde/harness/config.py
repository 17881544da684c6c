"""Experiment configuration files (TOML with dotted sections).

Example::

    experiment = "mfl-sweep"

    [grid]
    horizon = 1.0
    steps = 64

    [drift]
    family = "mean_attraction"
    kappa = 1.0

    [noise]
    process = "brownian"
    sigma = 1.0
    initial.kind = "gaussian"
    initial.mean = [0.0]
    initial.variance = [1.0]

    [run]
    n_schedule = [16, 64, 256, 1024]
    n_ref = 4096
    seeds = [1, 2, 3, 4, 5]

Every key is validated against :data:`SCHEMA`; unknown keys are errors.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..bounds import ModulusSpec
from ..drifts import (AntisymmetricInteraction, ConvolutionKernel, Drift, LinearKernel,
                      MeanAttraction, ModulusKernel, MonotonePower, OsgoodConvolution,
                      PowerKernel, ZeroDrift)
from ..lattice import load_lattice
from ..measures import TimeGrid
from ..noise import InitialLawSpec, NoiseSpec
from ..solver import SolverConfig

EXPERIMENTS = ("mfl-sweep", "tanaka-check", "stability", "density", "bounds-table")


class ConfigError(ValueError):
    pass


# Allowed keys per section with their defaults (None = required or optional).
SCHEMA: dict = {
    "experiment": None,
    "grid": {"horizon": 1.0, "steps": 64},
    "drift": {
        "family": "zero", "dim": 1, "kappa": 1.0, "modulus": "osgood_log", "slope": 1.0,
        "amplitude": 1.0, "direction": None, "lam": 1.0, "gamma": 0.5,
        "interaction_kappa": 0.0, "kernel": "power", "coefficient": -1.0, "power": 1.0,
        "lipschitz": None, "matrix": None, "lattice_file": None,
        "divergence_bound": None, "exponents": None,
    },
    "noise": {
        "process": "zero", "sigma": 0.0, "hurst": 0.5, "theta": 0.0,
        "initial": {"kind": "point", "x0": None, "low": None, "high": None,
                    "mean": None, "variance": None, "density_file": None},
    },
    "solver": {"picard_tol": 1e-8, "picard_max_iter": 100, "weight_factor": 4.0,
               "assignment_cap": 2048, "blowup_cap": 1e8, "p": 1.0, "max_halvings": 4},
    "run": {"n_schedule": [16], "n_ref": None, "seeds": [0], "ref_seed": 10_000,
            "p": 1.0, "dump_ensembles": False},
    "stability": {"delta": 0.1, "perturbation": "brownian", "n": 64,
                  "osgood_kappa": None},
    "tanaka": {"n": 16, "slope_decade": True},
    "density": {"n": 100_000, "samples": 10, "cell_width": 0.1,
                "bandwidth": None, "factor_tolerance": 1.5, "lower_check": False},
    "bounds": {"moduli": ["linear", "osgood_log"], "kappas": [2.0],
               "r_values": [0.0, 1e-8, 1e-4, 0.01, 0.1, 1.0],
               "g_values": [0.0, 0.5, 1.0], "h_values": [0.0, 1.0]},
    "tolerance": {"tanaka_factor": 10.0, "proxy_factor": 2.0, "stability_slack": 1.0},
}


def _validate(raw: dict, schema: dict, prefix: str = "") -> None:
    for key, value in raw.items():
        name = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown configuration key '{name}'")
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{name}' must be a section")
            _validate(value, sub, name + ".")
        elif isinstance(value, dict):
            raise ConfigError(f"'{name}' is a value, not a section")


def _merge(defaults: dict, raw: dict) -> dict:
    out = {}
    for key, dv in defaults.items():
        if isinstance(dv, dict):
            out[key] = _merge(dv, raw.get(key, {}))
        else:
            out[key] = copy.deepcopy(raw.get(key, dv))
    return out


def _vec(value, name: str) -> np.ndarray:
    if value is None:
        raise ConfigError(f"missing '{name}'")
    return np.atleast_1d(np.asarray(value, dtype=float))


def build_modulus(sec: dict) -> ModulusSpec:
    kind = sec["modulus"]
    if kind == "linear":
        return ModulusSpec.linear(sec["slope"])
    if kind == "osgood_log":
        return ModulusSpec.osgood_log()
    raise ConfigError(f"unknown modulus '{kind}'")


def build_drift(sec: dict) -> Drift:
    fam = sec["family"]
    dim = int(sec["dim"])
    if fam == "zero":
        return ZeroDrift(dim)
    if fam == "mean_attraction":
        return MeanAttraction(sec["kappa"], dim)
    if fam == "osgood_convolution":
        direction = sec["direction"] if sec["direction"] is not None else [1.0] + [0.0] * (dim - 1)
        mod = build_modulus(sec)
        return OsgoodConvolution(ModulusKernel(mod, direction), mod, sec["amplitude"])
    if fam == "monotone_power":
        inter = MeanAttraction(sec["interaction_kappa"], dim) if sec["interaction_kappa"] else None
        return MonotonePower(sec["lam"], sec["gamma"], inter, dim)
    if fam == "antisymmetric_interaction":
        if sec["kernel"] != "power":
            raise ConfigError(f"unknown antisymmetric kernel '{sec['kernel']}'")
        kern = PowerKernel(sec["coefficient"], sec["power"], dim)
        lip = sec["lipschitz"]
        if lip is None and sec["power"] == 1.0:
            lip = abs(sec["coefficient"])
        return AntisymmetricInteraction(kern, math.nan if lip is None else lip)
    if fam == "convolution_kernel":
        if sec["matrix"] is not None:
            kern = LinearKernel(sec["matrix"])
        elif sec["lattice_file"] is not None:
            kern = load_lattice(sec["lattice_file"])
        else:
            raise ConfigError("convolution_kernel needs 'matrix' or 'lattice_file'")
        exps = tuple(sec["exponents"]) if sec["exponents"] is not None else (math.inf, math.inf, 1.0)
        return ConvolutionKernel(kern, exps, sec["divergence_bound"])
    raise ConfigError(f"unknown drift family '{fam}'")


def build_noise(sec: dict) -> NoiseSpec:
    ini = sec["initial"]
    kind = ini["kind"]
    if kind == "point":
        law = InitialLawSpec.point(_vec(ini["x0"] if ini["x0"] is not None else [0.0], "x0"))
    elif kind == "uniform":
        law = InitialLawSpec.uniform(_vec(ini["low"], "initial.low"),
                                     _vec(ini["high"], "initial.high"))
    elif kind == "gaussian":
        law = InitialLawSpec.gaussian(_vec(ini["mean"], "initial.mean"),
                                      _vec(ini["variance"], "initial.variance"))
    elif kind == "custom_density":
        if ini["density_file"] is None:
            raise ConfigError("custom_density needs 'initial.density_file'")
        law = InitialLawSpec.custom_density(load_lattice(ini["density_file"]))
    else:
        raise ConfigError(f"unknown initial law '{kind}'")
    return NoiseSpec(law, sec["process"], sec["sigma"], sec["hurst"], sec["theta"])


@dataclass
class ExperimentConfig:
    kind: str
    grid: TimeGrid
    drift: Drift
    noise: NoiseSpec
    solver: SolverConfig
    n_schedule: list
    n_ref: Optional[int]
    seeds: list
    sections: dict = field(repr=False)
    config_hash: str = ""

    def section(self, name: str) -> dict:
        return self.sections[name]


def config_hash(sections: dict) -> str:
    canon = json.dumps(sections, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def parse_config(raw: dict, seed_override: Optional[int] = None,
                 kind: Optional[str] = None) -> ExperimentConfig:
    """Validate a raw mapping and build an :class:`ExperimentConfig`."""
    _validate(raw, SCHEMA)
    sections = _merge({k: v for k, v in SCHEMA.items() if isinstance(v, dict)}, raw)
    sections["experiment"] = raw.get("experiment", kind)
    if kind is not None and sections["experiment"] not in (None, kind):
        raise ConfigError(
            f"config is for '{sections['experiment']}', not '{kind}'"
        )
    if sections["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment '{sections['experiment']}'")
    run = sections["run"]
    if seed_override is not None:
        run["seeds"] = [int(seed_override)]
    try:
        grid = TimeGrid(float(sections["grid"]["horizon"]), int(sections["grid"]["steps"]))
        s = sections["solver"]
        solver = SolverConfig(grid, float(s["picard_tol"]), int(s["picard_max_iter"]),
                              float(s["weight_factor"]), int(s["assignment_cap"]),
                              float(s["blowup_cap"]), float(s["p"]), int(s["max_halvings"]))
        drift = build_drift(sections["drift"])
        noise = build_noise(sections["noise"])
    except ConfigError:
        raise
    except (ValueError, TypeError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
    if drift.dim != noise.dim:
        raise ConfigError(f"drift dimension {drift.dim} differs from noise dimension {noise.dim}")
    sched = [int(n) for n in run["n_schedule"]]
    if not sched or any(b <= a for a, b in zip(sched, sched[1:])) or sched[0] < 1:
        raise ConfigError("run.n_schedule must be a strictly increasing list of positive sizes")
    n_ref = None if run["n_ref"] is None else int(run["n_ref"])
    if n_ref is not None and n_ref <= sched[-1]:
        raise ConfigError("run.n_ref must exceed every entry of run.n_schedule")
    if not run["seeds"]:
        raise ConfigError("run.seeds must be nonempty")
    return ExperimentConfig(sections["experiment"], grid, drift, noise, solver, sched, n_ref,
                            [int(v) for v in run["seeds"]], sections, config_hash(sections))


def load_config(path, seed_override: Optional[int] = None,
                kind: Optional[str] = None) -> ExperimentConfig:
    try:
        raw = tomllib.loads(Path(path).read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(raw, seed_override, kind)
