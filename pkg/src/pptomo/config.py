"""Run configuration: defaults, file loading, overrides and dry-run validation."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bath import BathError, BathSpec, bath_from_dict
from .constants import CM_TO_RAD_FS, LAMBDA_FLOOR
from .forward import Experiment, ExperimentGrid, Pulse, overlap_warning
from .model import DATA_DIR, EnsembleSpec, ModelError, load_model_file

COMMANDS = ("simulate", "invert-response", "tomography", "feasibility", "species-spectra",
            "reproduce")


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "model": "dimer",
    "bath": None,
    "pump": {"fwhm_fs": 40.0, "center_cm1": 12800.0, "amplitude": 1.0},
    "probe": {"fwhm_fs": 40.0, "center_cm1": 12800.0, "amplitude": 1.0},
    "grid": {"freq_min_cm1": 12500.0, "freq_max_cm1": 13100.0, "n_freq": 181,
             "delay_min_fs": 50.0, "delay_max_fs": 1000.0, "n_delay": 140,
             "rotating_frame_cm1": 12800.0},
    "ensemble": {"n_samples": 200, "orientation_mode": "isotropic-xyz-average"},
    "noise": 0.0,
    "seed": 0,
    "inversion": {"stage1": "tikhonov", "stage2": "tikhonov", "penalty": "D2",
                  "selector": "gcv", "lambda": None},
    "tomography": {"normalization_delay_fs": 10000.0, "n_samples": 10000},
}

BUILTIN_MODELS = {"dimer": DATA_DIR / "dimer.json", "fmo7": DATA_DIR / "fmo7_example.json"}


@dataclass
class RunConfig:
    command: str
    model: Optional[str] = None
    experiment: dict = field(default_factory=dict)
    seed: Optional[int] = None
    output: str = "."
    overrides: list = field(default_factory=list)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")

    def resolved(self) -> dict:
        cfg = resolve(self.experiment, self.overrides)
        if self.model is not None:
            cfg["model"] = self.model
        if self.seed is not None:
            cfg["seed"] = int(self.seed)
        return cfg


def _merge(base, update, path=""):
    for k, v in update.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[k], dict) and v is not None:
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            _merge(base[k], v, where + ".")
        else:
            base[k] = v
    return base


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, item: str):
    """Apply ``a.b.c=value`` (value parsed as JSON when possible)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value")
    key, text = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = _parse_value(text)


def resolve(experiment: Optional[dict] = None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if cfg["bath"] is None:
        cfg["bath"] = {}
    if experiment:
        exp = dict(experiment)
        bath = exp.pop("bath", None)
        _merge(cfg, exp)
        if bath is not None:
            cfg["bath"] = dict(bath)
    for item in overrides:
        if item.split("=", 1)[0].startswith("bath."):
            k, v = item.split("=", 1)
            cfg["bath"][k[5:]] = _parse_value(v)
        else:
            apply_override(cfg, item)
    return cfg


def load_config_file(path) -> dict:
    """Read a JSON config; parse errors report line and column."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def model_path(name) -> Path:
    p = BUILTIN_MODELS.get(str(name))
    return p if p is not None else Path(name)


def load_model(cfg: dict):
    """(SiteModel, BathSpec, path) for a resolved config; config bath keys win."""
    path = model_path(cfg["model"])
    try:
        model, raw = load_model_file(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"model file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    except ModelError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    bath_block = dict(raw.get("bath") or {})
    bath_block.update(cfg.get("bath") or {})
    try:
        bath = bath_from_dict(bath_block)
    except (BathError, TypeError) as exc:
        raise ConfigError(f"bath: {exc}") from exc
    return model, bath, path


def pulse_from(block: dict) -> Pulse:
    return Pulse(float(block["fwhm_fs"]), float(block["center_cm1"]),
                 float(block.get("amplitude", 1.0)))


def grid_from(block: dict) -> ExperimentGrid:
    freqs = np.linspace(block["freq_min_cm1"], block["freq_max_cm1"], int(block["n_freq"]))
    delays = np.linspace(block["delay_min_fs"], block["delay_max_fs"], int(block["n_delay"]))
    return ExperimentGrid(freqs, delays, float(block["rotating_frame_cm1"]))


def build_experiment(cfg: dict) -> Experiment:
    model, bath, _ = load_model(cfg)
    try:
        ens = cfg["ensemble"]
        return Experiment(model, bath, pulse_from(cfg["pump"]), pulse_from(cfg["probe"]),
                          grid_from(cfg["grid"]),
                          EnsembleSpec(int(ens["n_samples"]), int(cfg["seed"]),
                                       ens["orientation_mode"]),
                          float(cfg["noise"]), int(cfg["seed"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment block: {exc}") from exc


def validate(cfg: dict) -> list:
    """Dry-run diagnostics for a resolved config.

    Malformed or unphysical inputs (e.g. a negative temperature) raise
    :class:`ConfigError`; soft problems are returned as messages.
    """
    exp = build_experiment(cfg)
    diags = []
    grid = exp.grid
    msg = overlap_warning(grid, exp.pump, exp.probe)
    if msg:
        diags.append(msg)
    from .model import diagonalize

    eps = diagonalize(exp.model).one_exciton_energies
    rf = grid.rotating_frame_freq
    span = max(np.max(np.abs(eps - rf)), np.ptp(eps))
    if CM_TO_RAD_FS * span * 1.0 >= np.pi:
        diags.append("pump quadrature (1 fs) does not resolve the detuning span")
    dT = np.diff(grid.delays)
    if dT.size and dT.max() > exp.probe.fwhm / 2:
        diags.append(f"delay step {dT.max():g} fs undersamples the probe (fwhm {exp.probe.fwhm:g} fs)")
    if grid.delays.size < 3:
        diags.append("fewer than 3 delays: second-difference penalty undefined")
    band = grid.probe_freqs
    det = CM_TO_RAD_FS * np.abs(band - exp.probe.center_freq)
    a = 4 * np.log(2) / exp.probe.fwhm ** 2
    if np.any(np.exp(-det ** 2 / (4 * a)) < 1e-3):
        diags.append("probe spectrum falls below 1e-3 of its peak inside the frequency grid")
    if eps.min() < band[0] or eps.max() > band[-1]:
        diags.append("exciton energies lie outside the probe frequency grid")
    inv = cfg["inversion"]
    if inv["selector"] == "fixed":
        if inv["lambda"] is None:
            raise ConfigError("selector 'fixed' needs inversion.lambda")
        if float(inv["lambda"]) < LAMBDA_FLOOR:
            diags.append(f"fixed lambda {inv['lambda']} is below the floor {LAMBDA_FLOOR:g}; "
                         "it will be clamped")
    if inv["selector"] not in ("gcv", "ncp", "fixed", "oracle"):
        raise ConfigError(f"unknown selector {inv['selector']!r}")
    if inv["penalty"] not in ("I", "D1", "D2"):
        raise ConfigError(f"unknown penalty {inv['penalty']!r}")
    if not 0 <= float(cfg["noise"]):
        raise ConfigError("noise must be non-negative")
    return diags
