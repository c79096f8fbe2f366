"""YAML run configuration with unit-suffixed keys.

Every section has a complete set of defaults; a config file only needs the
keys it changes. Unknown keys are rejected so that typos and sweep axes
naming nonexistent parameters fail before any work is done.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from qdgate.errors import ConfigError

DEFAULT_J_SCALE = 48.2  # calibrated so f(l=20 nm, Omega=0.3 meV, T=4 K) is about 2e-3

DEFAULTS: dict = {
    "seed": 0,
    "gate": {
        "protocol": "adiabatic",
        "omega0_meV": 3.0,
        "tau_omega_ps": 10.0,
        "delta_inf_meV": -3.0,
        "tau_delta_ps": 8.72,
        "t_start_ps": -40.0,
        "t_end_ps": 40.0,
        "epsilon": 0.1,
        "zeeman_meV": -0.5,
        "delta_e_ab_meV": 2.0,
        "omega_pi_meV": 1.0e4,
        "wait_ps": None,
        "method": "DOP853",
        "rtol": 1e-10,
        "atol": 1e-12,
    },
    "bath": {
        "coupling": "deformation",
        "geometry": "spherical",
        "l_nm": 20.0,
        "l_c_nm": None,
        "l_v_nm": None,
        "l_z_nm": 2.0,
        "rho_kg_m3": 5370.0,
        "u_m_s": 5110.0,
        "d_c_eV": -14.6,
        "d_v_eV": -4.8,
        "e14_C_m2": 0.16,
        "eps_r": 12.9,
        "r0_nm": 0.0,
        "scale": DEFAULT_J_SCALE,
    },
    "sweep": {
        "l_nm": [20.0],
        "d_nm": [5.0],
        "T_K": [0.1, 4.0, 20.0],
        "omega_meV": [0.3, 0.06, 0.02],
        "delta_e_ab_meV": [1.0],
        "reference": "vacuum",
        "topology": "common",
        "tau_omega_ps": 1.0,
        "tau_delta_ps": 1.0,
        "delta_inf_meV": -3.0,
        "t_start_ps": -4.0,
        "t_end_ps": 4.0,
    },
    "readout": {
        "omega_meV": 3.0,
        "kappa_per_ns": 1.0,
        "epsilon": 0.1,
        "eta": 0.9,
        "t_max_ns": 100.0,
        "n_times": 1001,
        "n_trajectories": 1000,
        "initial": 1,
        "n_terms": None,
    },
    "spectral": {
        "n_points": 200,
        "l_c_nm": 20.0,
        "l_v_nm": 15.0,
    },
}

SWEEP_AXES = ("l_nm", "d_nm", "T_K", "omega_meV", "delta_e_ab_meV")


def _merge(defaults: dict, given: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in defaults:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def _check_numbers(section: dict, path: str) -> None:
    for key, value in section.items():
        if key.endswith(("_meV", "_ps", "_nm", "_K", "_ns", "_per_ns", "_kg_m3", "_m_s", "_eV", "_C_m2")) or key in (
            "epsilon",
            "eta",
            "eps_r",
            "scale",
            "rtol",
            "atol",
        ):
            items = value if isinstance(value, list) else [value]
            for item in items:
                if item is None:
                    continue
                if isinstance(item, bool) or not isinstance(item, (int, float)):
                    raise ConfigError(f"{path}.{key} must be numeric, got {item!r}")


def resolve(raw: dict | None) -> dict:
    """Merge a parsed config with the defaults and validate shallow types."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    cfg = _merge(DEFAULTS, raw, "")
    for name in ("gate", "bath", "sweep", "readout", "spectral"):
        _check_numbers(cfg[name], name)
    for axis in SWEEP_AXES:
        values = cfg["sweep"][axis]
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{axis} must be a non-empty list")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError("seed must be an integer")
    for key in ("n_times", "n_trajectories", "initial"):
        value = cfg["readout"][key]
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"readout.{key} must be an integer")
    if not isinstance(cfg["spectral"]["n_points"], int) or cfg["spectral"]["n_points"] < 2:
        raise ConfigError("spectral.n_points must be an integer >= 2")
    return cfg


def load(path: str | Path | None) -> dict:
    if path is None:
        return resolve({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return resolve(raw)


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
