"""Run configuration: a versioned JSON document resolved to a complete parameter set.

Example::

    {
      "config_version": 1,
      "case": 2,
      "grid": {"n_azimuth": 4, "n_polar": 2},
      "solver": {"eps": 2e-4},
      "optimizer": {"budget": 300, "move": 0.1},
      "shape_scale": 1.0
    }

Every section is optional. ``case`` is either a built-in id or an inline
table ``{"poses": [[rho, theta, phi], ...], "kappa": [[kx, ky, kz], ...]}``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .cases import case_study
from .ground_model import GridError, SolverParams, SphericalGrid, build_grid
from .mma import MmaSettings
from .response import MomentCase
from .synthesis import RefineOptions, SynthesisOptions

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending line or field."""


_GRID_KEYS = {"n_azimuth", "n_polar", "phi_p", "theta_t", "block_a"}
_SOLVER_KEYS = {f.name for f in dataclasses.fields(SolverParams)}
_MMA_KEYS = {f.name for f in dataclasses.fields(MmaSettings)}
_SYNTH_KEYS = {"budget", "objective_scale", "full_chain", "stall_window", "stall_tol", "tolerance_factor", "grey_penalty"}
_REFINE_KEYS = {"enabled", "budget", "tolerance_factor", "candidates"}
_TOP_KEYS = {"config_version", "case", "grid", "solver", "optimizer", "refine", "shape_scale", "threshold", "output_dir"}


@dataclasses.dataclass
class RunConfig:
    case: MomentCase
    case_id: int | None
    grid: SphericalGrid
    params: SolverParams
    synthesis: SynthesisOptions
    refine: RefineOptions
    shape_scale: float = 1.0
    threshold: float = 0.5
    output_dir: str | None = None


def _check_keys(section: dict, allowed: set, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}: unknown key")


def _number(value, where, integer=False, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number")
    if integer and not float(value).is_integer():
        raise ConfigError(f"{where}: expected an integer")
    if not math.isfinite(value) or (positive and value <= 0):
        raise ConfigError(f"{where}: must be {'positive and ' if positive else ''}finite")
    return int(value) if integer else float(value)


def _inline_case(data) -> MomentCase:
    _check_keys(data, {"poses", "kappa", "name"}, "case")
    try:
        return MomentCase(np.asarray(data["poses"], dtype=float), np.asarray(data["kappa"], dtype=float), data.get("name", "inline"))
    except KeyError as exc:
        raise ConfigError(f"case.{exc.args[0]}: missing") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"case: {exc}") from None


def resolve(data: dict, case_override: int | None = None) -> RunConfig:
    """Turn a parsed document into a :class:`RunConfig`."""
    _check_keys(data, _TOP_KEYS, "config")
    version = data.get("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config.config_version: unsupported version {version!r} (expected {CONFIG_VERSION})")

    raw_case = case_override if case_override is not None else data.get("case", 2)
    if isinstance(raw_case, dict):
        case, case_id = _inline_case(raw_case), None
    else:
        case_id = _number(raw_case, "case", integer=True)
        try:
            case = case_study(case_id)
        except ValueError as exc:
            raise ConfigError(f"case: {exc}") from None

    grid_cfg = data.get("grid", {})
    _check_keys(grid_cfg, _GRID_KEYS, "grid")
    grid_kw = {}
    for key, value in grid_cfg.items():
        integer = key in ("n_azimuth", "n_polar", "block_a")
        grid_kw[key] = _number(value, f"grid.{key}", integer=integer)
    try:
        grid = build_grid(**grid_kw)
    except GridError as exc:
        raise ConfigError(f"grid: {exc}") from None

    solver_cfg = data.get("solver", {})
    _check_keys(solver_cfg, _SOLVER_KEYS, "solver")
    params = SolverParams(**{k: _number(v, f"solver.{k}") for k, v in solver_cfg.items()})
    default_scale = 0.45 if case_id == 3 else 1.0
    shape_scale = _number(data.get("shape_scale", default_scale), "shape_scale", positive=True)
    params = params.scaled_shape(shape_scale)

    opt_cfg = data.get("optimizer", {})
    _check_keys(opt_cfg, _SYNTH_KEYS | _MMA_KEYS, "optimizer")
    mma_kw, synth_kw = {}, {}
    for key, value in opt_cfg.items():
        where = f"optimizer.{key}"
        if key == "full_chain":
            if not isinstance(value, bool):
                raise ConfigError(f"{where}: expected true or false")
            synth_kw[key] = value
        elif key in _SYNTH_KEYS:
            synth_kw[key] = _number(value, where, integer=key in ("budget", "stall_window"))
        else:
            mma_kw[key] = _number(value, where, integer=key == "max_retries")
    if synth_kw.get("budget", 0) < 0:
        raise ConfigError("optimizer.budget: must be nonnegative")
    synthesis = SynthesisOptions(**synth_kw, mma=MmaSettings(**mma_kw))

    ref_cfg = data.get("refine", {})
    _check_keys(ref_cfg, _REFINE_KEYS, "refine")
    refine = RefineOptions()
    if "enabled" in ref_cfg:
        if not isinstance(ref_cfg["enabled"], bool):
            raise ConfigError("refine.enabled: expected true or false")
        refine.enabled = ref_cfg["enabled"]
    if "budget" in ref_cfg:
        refine.budget = _number(ref_cfg["budget"], "refine.budget", integer=True)
    if "candidates" in ref_cfg:
        refine.candidates = _number(ref_cfg["candidates"], "refine.candidates", integer=True, positive=True)
    if "tolerance_factor" in ref_cfg:
        refine.tolerance_factor = _number(ref_cfg["tolerance_factor"], "refine.tolerance_factor", positive=True)

    threshold = _number(data.get("threshold", 0.5), "threshold")
    if not 0.0 < threshold < 1.0:
        raise ConfigError("threshold: must lie in (0, 1)")
    out = data.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output_dir: expected a string")
    return RunConfig(case, case_id, grid, params, synthesis, refine, shape_scale, threshold, out)


def loads(text: str, case_override: int | None = None) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return resolve(data, case_override)


def load(path, case_override: int | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return loads(text, case_override)


def default_config(case_id: int = 2) -> RunConfig:
    return resolve({"case": case_id})
