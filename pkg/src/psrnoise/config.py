"""
Run configuration.

A run is described by one YAML file.  Every physics default used by the
engine appears in :data:`DEFAULT_CONFIG_YAML`; nothing is hidden in code.
Command-line flags override individual keys with dotted paths
(``drive.C=1000``).
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import numpy as np
import yaml

from .angular import PRESETS
from .dynamics import LOSS_MODES
from .ensemble import GRID_RULES, SHARE_MODES
from .noisespec import ASSEMBLY_MODES

SCAN_KINDS = ("point", "detuning", "noise-frequency", "power-density-2d", "oracle-check")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


DEFAULT_CONFIG_YAML = """\
# psrnoise run configuration.  Frequencies and rates in units of Gamma
# (natural width of the D1 line) unless the key says otherwise.

scheme:
  preset: rb87-d1-Fg1          # rb87-d1-Fg1 | rb87-d1-Fg2 | four-level-toy | custom
  reference: null              # detuning reference: "F'1" (default) or "F'2"
  excited_states: null         # e.g. [1] to keep only F' = 1
  toy_splitting: 50.0          # four-level toy: |e1> - |e2> energy
  custom_file: null            # YAML scheme description for preset: custom

atomic:
  ground_hfs_mhz: 6834.682610904   # 87Rb 5S1/2 hyperfine splitting
  excited_hfs_mhz: 814.5           # 87Rb 5P1/2 hyperfine splitting
  gamma_mhz: 6.0                   # Gamma / 2 pi
  wavelength_m: 7.95e-7            # D1 wavelength
  mass_amu: 86.909180527

drive:
  Omega_f: 30.0                # reduced Rabi frequency of the fine transition
  detuning: 0.0                # pump detuning from the reference transition
  gamma0: 0.01                 # ground-state relaxation (transit) rate, > 0
  C: 100.0                     # cooperativity
  loss_mode: recycle           # recycle | open
  pump_axis_deg: 0.0           # linear pump polarization angle

noise:
  delta: [0.2]                 # sideband frequencies used by point and detuning scans
  assembly: propagated         # propagated | lumped

doppler:
  enabled: false
  temperature_K: 332.15        # sets the width when width is null
  width: null                  # explicit rms Doppler shift k v_rms
  n_classes: 40
  rule: stretched              # stretched | uniform
  stretch: 2.0                 # stretched rule: sampling Gaussian width / thermal width
  span: 6.0                    # uniform rule: grid covers +- span * width
  shares: boltzmann            # boltzmann | uniform

scan:
  detuning: {start: -150.0, stop: 300.0, num: 451}
  delta: {start: 0.01, stop: 2.0, num: 40}
  Omega_f: {start: 2.0, stop: 40.0, num: 20}
  C: {start: 10.0, stop: 400.0, num: 20}

oracle:
  rtol: 1.0e-10
  atol: 1.0e-13
  horizon_factor: 14.0
  decay_tol: 1.0e-6
  tolerance: 1.0e-3

output:
  dir: .
  stem: null                   # default: the scan kind
  formats: [csv, json]

run:
  workers: 1
"""


def default_config() -> dict:
    return yaml.safe_load(DEFAULT_CONFIG_YAML)


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    # nested sections merge key by key; scan grids are replaced whole
    out = copy.deepcopy(base)
    for key, value in extra.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict) and path != "scan.":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} expects a mapping")
            out[key] = _merge(out[key], value, where + ".")
        else:
            out[key] = value
    return out


def parse_override(item: str) -> tuple:
    """``"drive.C=1000"`` -> (["drive", "C"], 1000.0)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key.path=value")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in override {item!r}: {exc}") from exc
    return key.strip().split("."), value


def apply_overrides(cfg: dict, overrides: Iterable[tuple]) -> dict:
    cfg = copy.deepcopy(cfg)
    for keys, value in overrides:
        node = cfg
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ConfigError(f"unknown config key {'.'.join(keys)!r}")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config key {'.'.join(keys)!r}")
        if node is cfg.get("scan") and not isinstance(value, (dict, list)):
            raise ConfigError(f"scan axis {keys[-1]!r} needs a grid mapping or a list of values")
        node[keys[-1]] = value
    return cfg


def load_config(path: Optional[Union[str, Path]] = None, overrides: Iterable[tuple] = ()) -> dict:
    """Defaults, then the file, then overrides; validated and normalized."""
    cfg = default_config()
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
        if data is not None:
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: expected a mapping at top level")
            cfg = _merge(cfg, data)
    cfg = apply_overrides(cfg, overrides)
    return validate_config(cfg)


def grid_values(spec: Any, name: str = "grid") -> np.ndarray:
    """Expand ``{start, stop, num}``, ``{start, stop, step}`` or an explicit list."""
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        vals = np.array([float(spec)])
    elif isinstance(spec, (list, tuple)):
        try:
            vals = np.array([float(v) for v in spec])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: values must be numbers") from exc
    elif isinstance(spec, dict):
        try:
            if "values" in spec:
                return grid_values(list(spec["values"]), name)
            start, stop = float(spec["start"]), float(spec["stop"])
            if "num" in spec:
                num = int(spec["num"])
                if num < 1:
                    raise ConfigError(f"{name}: num must be >= 1")
                vals = np.linspace(start, stop, num)
            elif "step" in spec:
                step = float(spec["step"])
                if step <= 0:
                    raise ConfigError(f"{name}: step must be > 0")
                num = int(np.floor((stop - start) / step + 1e-9)) + 1
                vals = start + step * np.arange(num)
            else:
                raise ConfigError(f"{name}: give num or step")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{name}: malformed grid {spec!r}") from exc
    else:
        raise ConfigError(f"{name}: malformed grid {spec!r}")
    if vals.size == 0:
        raise ConfigError(f"{name}: grid is empty")
    if not np.all(np.isfinite(vals)):
        raise ConfigError(f"{name}: grid has non-finite values")
    if vals.size > 1 and not np.all(np.diff(vals) > 0):
        raise ConfigError(f"{name}: grid must be strictly increasing")
    return vals


def _num(cfg, section, key, *, lo=None, strict=False, allow_none=False):
    v = cfg[section][key]
    if v is None and allow_none:
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {v!r}")
    v = float(v)
    if not np.isfinite(v):
        raise ConfigError(f"{section}.{key} must be finite")
    if lo is not None and (v <= lo if strict else v < lo):
        raise ConfigError(f"{section}.{key} must be {'>' if strict else '>='} {lo}, got {v}")
    cfg[section][key] = v


def validate_config(cfg: dict) -> dict:
    cfg = copy.deepcopy(cfg)
    sc = cfg["scheme"]
    if sc["preset"] not in PRESETS:
        raise ConfigError(f"scheme.preset must be one of {PRESETS}, got {sc['preset']!r}")
    if sc["preset"] == "custom" and not sc.get("custom_file"):
        raise ConfigError("scheme.preset custom needs scheme.custom_file")
    _num(cfg, "scheme", "toy_splitting")
    for key in ("ground_hfs_mhz", "excited_hfs_mhz", "gamma_mhz", "wavelength_m", "mass_amu"):
        _num(cfg, "atomic", key, lo=0, strict=True)
    _num(cfg, "drive", "Omega_f", lo=0)
    _num(cfg, "drive", "detuning")
    _num(cfg, "drive", "gamma0", lo=0, strict=True)
    _num(cfg, "drive", "C", lo=0)
    _num(cfg, "drive", "pump_axis_deg")
    if cfg["drive"]["loss_mode"] not in LOSS_MODES:
        raise ConfigError(f"drive.loss_mode must be one of {LOSS_MODES}")
    d = cfg["noise"]["delta"]
    deltas = grid_values(d if isinstance(d, (list, tuple, dict)) else [d], "noise.delta")
    if np.any(deltas < 0):
        raise ConfigError("noise.delta must be >= 0")
    cfg["noise"]["delta"] = [float(x) for x in deltas]
    if cfg["noise"]["assembly"] not in ASSEMBLY_MODES:
        raise ConfigError(f"noise.assembly must be one of {ASSEMBLY_MODES}")
    dop = cfg["doppler"]
    if not isinstance(dop["enabled"], bool):
        raise ConfigError("doppler.enabled must be true or false")
    _num(cfg, "doppler", "temperature_K", lo=0)
    _num(cfg, "doppler", "width", lo=0, allow_none=True)
    _num(cfg, "doppler", "span", lo=0, strict=True)
    _num(cfg, "doppler", "stretch", lo=1)
    if dop["rule"] not in GRID_RULES:
        raise ConfigError(f"doppler.rule must be one of {GRID_RULES}")
    if isinstance(dop["n_classes"], bool) or not isinstance(dop["n_classes"], int) or dop["n_classes"] < 1:
        raise ConfigError("doppler.n_classes must be a positive integer")
    if dop["shares"] not in SHARE_MODES:
        raise ConfigError(f"doppler.shares must be one of {SHARE_MODES}")
    for axis, spec in cfg["scan"].items():
        grid_values(spec, f"scan.{axis}")
    if np.any(grid_values(cfg["scan"]["delta"]) < 0):
        raise ConfigError("scan.delta must be >= 0")
    if np.any(grid_values(cfg["scan"]["Omega_f"]) < 0):
        raise ConfigError("scan.Omega_f must be >= 0")
    if np.any(grid_values(cfg["scan"]["C"]) < 0):
        raise ConfigError("scan.C must be >= 0")
    for key in ("rtol", "atol", "horizon_factor", "decay_tol", "tolerance"):
        _num(cfg, "oracle", key, lo=0, strict=True)
    fmts = cfg["output"]["formats"]
    if isinstance(fmts, str):
        fmts = [fmts]
    if not fmts or any(f not in ("csv", "json") for f in fmts):
        raise ConfigError("output.formats must be a non-empty subset of [csv, json]")
    cfg["output"]["formats"] = list(fmts)
    w = cfg["run"]["workers"]
    if isinstance(w, bool) or not isinstance(w, int) or w < 1:
        raise ConfigError("run.workers must be a positive integer")
    return cfg


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False)
