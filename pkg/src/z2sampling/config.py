"""Strict JSON experiment configuration.

Every section is a flat dict with an explicit allowed-key set; unknown keys
are rejected loudly (a typo silently falling back to a default is how wrong
experiments get published).  Each subcommand requires only its own sections.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .schedule import Schedule, make_linear_flow, make_linear_vp, vp_to_spherical
from .scorefield import FieldPair, GaussianMixture
from .samplers import SamplerConfig

__all__ = ["ConfigError", "load_config", "build_schedule", "build_field_pair", "build_sampler_config"]


class ConfigError(ValueError):
    """Raised for malformed configuration; maps to the config-error exit code."""


TOP_KEYS = {"schedule", "field", "sampler", "seed", "runs", "sweep", "duality", "collapse", "order_sweep", "bea"}
SCHEDULE_KEYS = {"kind", "T", "alpha_bar_start", "alpha_bar_end", "sigma_max"}
FIELD_KEYS = {"components", "conditional_index"}
COMPONENT_KEYS = {"mean", "variance", "weight"}
SAMPLER_KEYS = {"variant", "gamma1", "gamma2", "warmup", "zigzag_steps"}
SWEEP_KEYS = {"parameter", "values"}
SWEEP_PARAMETERS = {"gamma1", "gamma2", "warmup", "zigzag_steps"}
DUALITY_KEYS = {"num_schedules", "max_T", "tolerance", "fault"}
FAULT_KEYS = {"step", "offset"}
COLLAPSE_KEYS = {"num_cases", "dim", "gamma1_max", "tolerance"}
ORDER_SWEEP_KEYS = {"span", "step_counts", "gamma1", "warmup_frac", "tail_frac", "drop_largest",
                    "min_r_squared", "inject_exact_surrogate"}
BEA_KEYS = {"span", "step_sizes", "gamma1", "form", "x0", "affine", "control", "min_slope",
            "slope_range_control", "min_r_squared", "ref_divisor", "drop_largest"}
AFFINE_KEYS = {"m_uncond", "q_uncond", "m_delta", "r_delta"}


def _require_dict(obj, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object")
    return obj


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}; allowed: {sorted(allowed)}")


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer")
    return value


def _as_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number")
    if not math.isfinite(value):
        raise ConfigError(f"{where} must be finite")
    return float(value)


def load_config(path: str | Path) -> dict:
    """Parse and structurally validate a config file (values checked lazily)."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    cfg = _require_dict(raw, "config")
    _check_keys(cfg, TOP_KEYS, "config")
    for section, keys in (
        ("schedule", SCHEDULE_KEYS),
        ("field", FIELD_KEYS),
        ("sampler", SAMPLER_KEYS),
        ("sweep", SWEEP_KEYS),
        ("duality", DUALITY_KEYS),
        ("collapse", COLLAPSE_KEYS),
        ("order_sweep", ORDER_SWEEP_KEYS),
        ("bea", BEA_KEYS),
    ):
        if section in cfg:
            _check_keys(_require_dict(cfg[section], section), keys, section)
    if "duality" in cfg and "fault" in cfg["duality"]:
        _check_keys(_require_dict(cfg["duality"]["fault"], "duality.fault"), FAULT_KEYS, "duality.fault")
    if "bea" in cfg and "affine" in cfg["bea"]:
        _check_keys(_require_dict(cfg["bea"]["affine"], "bea.affine"), AFFINE_KEYS, "bea.affine")
    if "field" in cfg:
        comps = cfg["field"].get("components")
        if not isinstance(comps, list) or not comps:
            raise ConfigError("field.components must be a non-empty list")
        for i, comp in enumerate(comps):
            _check_keys(_require_dict(comp, f"field.components[{i}]"), COMPONENT_KEYS, f"field.components[{i}]")
    if "seed" in cfg:
        _as_int(cfg["seed"], "seed")
    if "runs" in cfg and _as_int(cfg["runs"], "runs") < 1:
        raise ConfigError("runs must be >= 1")
    return cfg


def require_sections(cfg: dict, sections: tuple[str, ...], command: str) -> None:
    missing = [s for s in sections if s not in cfg]
    if missing:
        raise ConfigError(f"{command} requires config section(s): {missing}")


def build_schedule(cfg: dict) -> Schedule:
    sched = _require_dict(cfg.get("schedule"), "schedule")
    kind = sched.get("kind")
    if kind not in ("vp", "flow", "spherical"):
        raise ConfigError("schedule.kind must be one of vp, flow, spherical")
    T = _as_int(sched.get("T"), "schedule.T")
    if T < 1:
        raise ConfigError("schedule.T must be >= 1 (empty schedules are rejected)")
    try:
        if kind == "flow":
            if "sigma_max" not in sched:
                raise ConfigError("flow schedule requires sigma_max")
            return make_linear_flow(T, _as_number(sched["sigma_max"], "schedule.sigma_max"))
        for key in ("alpha_bar_start", "alpha_bar_end"):
            if key not in sched:
                raise ConfigError(f"{kind} schedule requires {key}")
        vp = make_linear_vp(
            T,
            _as_number(sched["alpha_bar_start"], "schedule.alpha_bar_start"),
            _as_number(sched["alpha_bar_end"], "schedule.alpha_bar_end"),
        )
        return vp if kind == "vp" else vp_to_spherical(vp)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid schedule: {exc}")


def build_field_pair(cfg: dict) -> FieldPair:
    field = _require_dict(cfg.get("field"), "field")
    comps = field["components"]
    means, variances, weights = [], [], []
    for i, comp in enumerate(comps):
        mean = comp.get("mean")
        if not isinstance(mean, list) or not mean:
            raise ConfigError(f"field.components[{i}].mean must be a non-empty list")
        means.append([_as_number(v, f"field.components[{i}].mean") for v in mean])
        variances.append(_as_number(comp.get("variance"), f"field.components[{i}].variance"))
        weights.append(_as_number(comp.get("weight", 1.0), f"field.components[{i}].weight"))
    if len({len(m) for m in means}) != 1:
        raise ConfigError("all component means must share a dimension")
    idx = _as_int(field.get("conditional_index", 0), "field.conditional_index")
    if not 0 <= idx < len(comps):
        raise ConfigError(f"field.conditional_index {idx} outside 0..{len(comps) - 1}")
    try:
        unconditional = GaussianMixture(np.array(means), np.array(variances), np.array(weights))
        conditional = GaussianMixture(np.array([means[idx]]), np.array([variances[idx]]), np.array([1.0]))
        return FieldPair(conditional, unconditional)
    except ValueError as exc:
        raise ConfigError(f"invalid field: {exc}")


def build_sampler_config(cfg: dict) -> SamplerConfig:
    samp = _require_dict(cfg.get("sampler"), "sampler")
    variant = samp.get("variant")
    if variant not in ("standard", "explicit_z", "implicit_z", "z_squared"):
        raise ConfigError("sampler.variant must be one of standard, explicit_z, implicit_z, z_squared")
    try:
        return SamplerConfig(
            variant,
            _as_number(samp.get("gamma1"), "sampler.gamma1"),
            _as_number(samp.get("gamma2", 0.0), "sampler.gamma2"),
            _as_int(samp.get("warmup", 0), "sampler.warmup"),
            _as_int(samp.get("zigzag_steps", 0), "sampler.zigzag_steps"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid sampler: {exc}")
