"""Run configuration: schema validation, YAML round trip and named presets."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

SCHEMA_VERSION = 1

ENGINES = ("meanfield", "selfconsistent", "master", "symmetric", "cumulant", "jump", "qsd")
MODES = ("lattice", "collective", "powerlaw")
SWEEP_AXES = ("W", "f_eff", "theta", "spacing_over_lambda", "alpha", "width", "n")

_SYSTEM = {
    "mode": "collective",
    "n": 10,
    "dim": 1,
    "spacing_over_lambda": 0.1,
    "theta": float(np.arccos(1 / np.sqrt(3))),
    "f_eff": 15.0,
    "g_eff": 0.0,
    "diagonal": "gamma",
    "alpha": 0.0,
    "prefactor": 0.25,
    "gamma": 1.0,
    "W": 1.0,
    "detuning": {"kind": "delta", "width": 0.0, "center": 0.0, "values": None},
    "seed": 0,
    "units": None,
}
_SOLVER = {
    "engine": "meanfield",
    "rtol": 1e-9,
    "atol": 1e-11,
    "t_final": None,
    "n_traj": 100,
    "dt": None,
    "truncation": "u1",
    "t_burn": 5.0,
    "n_records": 20,
    "pair": [0, 1],
    "correlations": False,
    "clusters": None,
    "entrainment": False,
    "dump_state": False,
}
_SWEEP = {"axes": {}}
_OUTPUT = {"directory": "runs", "formats": ["csv", "json"]}
_TOP = {"version": SCHEMA_VERSION, "name": "run", "notes": "", "system": _SYSTEM, "solver": _SOLVER,
        "sweep": _SWEEP, "output": _OUTPUT}
_DET_KINDS = ("delta", "uniform", "lorentzian", "list")


class ConfigError(ValueError):
    pass


def _merge(defaults: dict, given: dict, where: str) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(defaults[k], dict) and k not in ("axes",):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}.{k} must be a mapping")
            out[k] = _merge(defaults[k], v, f"{where}.{k}")
        else:
            out[k] = v
    return out


def _axis_values(spec, name):
    if isinstance(spec, list):
        vals = [float(v) for v in spec]
    elif isinstance(spec, dict):
        extra = set(spec) - {"min", "max", "num", "scale", "values"}
        if extra:
            raise ConfigError(f"unknown key(s) in sweep axis {name}: {sorted(extra)}")
        if "values" in spec:
            vals = [float(v) for v in spec["values"]]
        else:
            try:
                lo, hi, num = float(spec["min"]), float(spec["max"]), int(spec["num"])
            except KeyError as exc:
                raise ConfigError(f"sweep axis {name} needs min/max/num or values") from exc
            scale = spec.get("scale", "lin")
            if scale == "lin":
                vals = list(np.linspace(lo, hi, num))
            elif scale == "log":
                if lo <= 0:
                    raise ConfigError(f"log axis {name} needs positive bounds")
                vals = list(np.geomspace(lo, hi, num))
            else:
                raise ConfigError(f"axis scale must be lin or log, got {scale!r}")
    else:
        raise ConfigError(f"sweep axis {name} must be a list or a mapping")
    if not vals:
        raise ConfigError(f"sweep axis {name} is empty")
    return [float(v) for v in vals]


def validate(cfg: dict) -> dict:
    """Fill defaults and check a configuration mapping; raises :class:`ConfigError`."""
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a mapping")
    out = _merge(_TOP, cfg, "config")
    if out["version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {out['version']}")
    sysc, sol = out["system"], out["solver"]
    if sysc["mode"] not in MODES:
        raise ConfigError(f"system.mode must be one of {MODES}")
    if sol["engine"] not in ENGINES:
        raise ConfigError(f"solver.engine must be one of {ENGINES}")
    if int(sysc["n"]) < 1 or sysc["dim"] not in (1, 2):
        raise ConfigError("system.n must be >= 1 and system.dim 1 or 2")
    for key in ("gamma", "W", "f_eff", "spacing_over_lambda", "prefactor"):
        if float(sysc[key]) < 0:
            raise ConfigError(f"system.{key} must be non-negative")
    if sysc["diagonal"] not in ("gamma", "additive"):
        raise ConfigError("system.diagonal must be 'gamma' or 'additive'")
    det = sysc["detuning"]
    if det["kind"] not in _DET_KINDS:
        raise ConfigError(f"detuning.kind must be one of {_DET_KINDS}")
    if det["kind"] == "list" and not det["values"]:
        raise ConfigError("detuning.kind=list needs values")
    if float(det["width"]) < 0:
        raise ConfigError("detuning.width must be non-negative")
    if sol["engine"] == "symmetric" and sysc["mode"] != "collective":
        raise ConfigError("the symmetric engine requires system.mode=collective")
    if sol["engine"] == "symmetric" and det["kind"] != "delta":
        raise ConfigError("the symmetric engine requires identical (zero) detunings")
    if sol["engine"] == "selfconsistent" and sysc["mode"] != "collective":
        raise ConfigError("the self-consistent solver uses collective couplings (f_eff, g_eff)")
    if sol["truncation"] not in ("u1", "full"):
        raise ConfigError("solver.truncation must be 'u1' or 'full'")
    if int(sol["n_traj"]) < 1:
        raise ConfigError("solver.n_traj must be positive")
    axes = out["sweep"]["axes"] or {}
    if not isinstance(axes, dict):
        raise ConfigError("sweep.axes must be a mapping")
    for name, spec in axes.items():
        if name not in SWEEP_AXES:
            raise ConfigError(f"cannot sweep {name!r}; allowed: {SWEEP_AXES}")
        _axis_values(spec, name)
    fmts = out["output"]["formats"]
    if not set(fmts) <= {"csv", "json"}:
        raise ConfigError("output.formats may contain csv and json")
    return out


def sweep_points(cfg: dict) -> list[dict]:
    """Cartesian product of the sweep axes (first axis slowest)."""
    axes = cfg["sweep"]["axes"] or {}
    names = list(axes)
    grids = [_axis_values(axes[k], k) for k in names]
    if not names:
        return [{}]
    mesh = np.meshgrid(*grids, indexing="ij")
    return [{k: float(m.ravel()[i]) for k, m in zip(names, mesh)} for i in range(mesh[0].size)]


def load(path) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return validate(raw or {})


def dumps(cfg: dict) -> str:
    return yaml.safe_dump(_plain(cfg), sort_keys=True)


def save(cfg: dict, path) -> None:
    Path(path).write_text(dumps(cfg))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(_plain(cfg), sort_keys=True).encode()).hexdigest()


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


# -- presets --------------------------------------------------------------------

MAGIC = float(np.arccos(1 / np.sqrt(3)))

PRESETS = {
    # 87Sr dipoles: Gamma = 290e3 s^-1, lambda = 2.6 um, lattice spacing 0.2 um
    "sr87": {
        "name": "sr87",
        "notes": "Gamma = 290e3 1/s, lambda = 2.6 um, a = 0.2 um; chain at the magic angle",
        "system": {"mode": "lattice", "n": 12, "spacing_over_lambda": 0.2 / 2.6, "theta": MAGIC, "W": 4.0,
                   "units": {"gamma_per_s": 290e3, "wavelength_m": 2.6e-6, "spacing_m": 0.2e-6}},
        "solver": {"engine": "jump", "n_traj": 4, "t_final": 45.0, "t_burn": 5.0, "n_records": 80},
    },
    # fluorescent organic chromophores in low-dimensional aggregates
    "organic_dye": {
        "name": "organic_dye",
        "notes": "a ~ 0.5-2 Angstrom, a/lambda ~ 1e-3, Gamma ~ 0.1-1 GHz; short chain at the magic angle",
        "system": {"mode": "lattice", "n": 8, "spacing_over_lambda": 1e-3, "theta": MAGIC, "W": 1.0,
                   "units": {"gamma_per_s": 1e9, "spacing_m": 1e-10}},
        "solver": {"engine": "master"},
        "sweep": {"axes": {"W": {"min": 0.5, "max": 8.0, "num": 6}}},
    },
    "fig2a": {
        "name": "fig2a",
        "notes": "mean-field phase diagram, all-to-all coupling, N=200",
        "system": {"mode": "collective", "n": 200, "f_eff": 15.0},
        "solver": {"engine": "meanfield"},
        "sweep": {"axes": {"f_eff": {"min": 1.0, "max": 40.0, "num": 20},
                           "W": {"min": 0.1, "max": 40.0, "num": 20, "scale": "log"}}},
    },
    "fig2b": {
        "name": "fig2b",
        "notes": "quantum phase diagram at desk scale, N=30",
        "system": {"mode": "collective", "n": 30, "f_eff": 15.0},
        "solver": {"engine": "symmetric"},
        "sweep": {"axes": {"f_eff": {"min": 1.0, "max": 40.0, "num": 12},
                           "W": {"min": 0.1, "max": 40.0, "num": 12, "scale": "log"}}},
    },
    "fig2cd": {
        "name": "fig2cd",
        "notes": "conditional vs averaged QFI, N=10, f_eff=15, collective channel plus independent decay",
        "system": {"mode": "collective", "n": 10, "f_eff": 15.0, "W": 7.5, "diagonal": "additive"},
        "solver": {"engine": "qsd", "n_traj": 200, "t_final": 1.5, "t_burn": 1.0, "n_records": 3},
    },
    "fig3_powerlaw": {
        "name": "fig3_powerlaw",
        "notes": "power-law couplings at desk scale: N=64 chain instead of N=900",
        "system": {"mode": "powerlaw", "n": 64, "dim": 1, "alpha": 0.25, "W": 4.0},
        "solver": {"engine": "cumulant", "clusters": [2, 4, 8, 16, 32]},
        "sweep": {"axes": {"alpha": {"values": [0.0, 0.25, 0.65, 1.0, 2.0, 3.0]}}},
    },
    "fig3_powerlaw_2d": {
        "name": "fig3_powerlaw_2d",
        "notes": "power-law couplings at desk scale: 8x8 square lattice instead of 30x30",
        "system": {"mode": "powerlaw", "n": 64, "dim": 2, "alpha": 0.25, "W": 4.0},
        "solver": {"engine": "cumulant", "clusters": [2, 4]},
        "sweep": {"axes": {"alpha": {"values": [0.0, 0.25, 0.65, 1.0, 2.0, 3.0]}}},
    },
    "figA1": {
        "name": "figA1",
        "notes": "two-time decay rate gamma(W), N=70 all-to-all, cumulant engine",
        "system": {"mode": "collective", "n": 70, "f_eff": 15.0},
        "solver": {"engine": "cumulant", "correlations": True},
        "sweep": {"axes": {"W": {"min": 0.05, "max": 30.0, "num": 16, "scale": "log"}}},
    },
    "fig4a": {
        "name": "fig4a",
        "notes": "anisotropic chain, N=12, Z_Q over (theta, a/lambda)",
        "system": {"mode": "lattice", "n": 12, "spacing_over_lambda": 0.08, "theta": MAGIC, "W": 4.0},
        "solver": {"engine": "jump", "n_traj": 4, "t_final": 45.0, "t_burn": 5.0, "n_records": 80},
        "sweep": {"axes": {"theta": {"min": 0.0, "max": float(np.pi / 2), "num": 5},
                           "spacing_over_lambda": {"min": 0.02, "max": 0.12, "num": 5}}},
    },
    "fig4b": {
        "name": "fig4b",
        "notes": "chain at the magic angle versus pump rate",
        "system": {"mode": "lattice", "n": 12, "spacing_over_lambda": 0.08, "theta": MAGIC},
        "solver": {"engine": "jump", "n_traj": 4, "t_final": 45.0, "t_burn": 5.0, "n_records": 80},
        "sweep": {"axes": {"W": {"min": 0.5, "max": 20.0, "num": 8, "scale": "log"}}},
    },
}


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return validate(copy.deepcopy(PRESETS[name]))
