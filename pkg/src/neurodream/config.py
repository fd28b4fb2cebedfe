"""Flat `key = value` config files, override merging, and TrainConfig assembly."""

from __future__ import annotations

import hashlib
from dataclasses import replace

from .encoding import PopulationCodeConfig
from .pong import PongPhysics
from .substrate import CalibrationConfig, NeuronParams
from .trainer import MODES, TrainConfig


class ConfigError(ValueError):
    """Bad config file, key, or value; maps to exit code 1."""


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment, later keys win."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        mapping[key] = value
    return mapping


def load_config_file(path) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def apply_overrides(base: dict[str, str], pairs) -> dict[str, str]:
    """Merge `key=value` override strings (e.g. from --set) over a base mapping."""
    merged = dict(base)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, value = pair.split("=", 1)
        merged[key.strip()] = value.strip()
    return merged


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_int(s: str) -> int:
    return int(s, 10)


def _parse_mode(s: str) -> str:
    if s not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {s!r}")
    return s


def _parse_optional_float(s: str):
    if s.lower() in ("auto", "none"):
        return None
    return float(s)


# key -> (TrainConfig area, field name, parser). Area "" is a direct field;
# others name the nested dataclass attribute holding the field.
_SCHEMA: dict[str, tuple[str, str, object]] = {
    "mode": ("", "mode", _parse_mode),
    "games": ("", "games", _parse_int),
    "runs": ("", "runs", _parse_int),
    "seed": ("", "master_seed", _parse_int),
    "t_awake": ("", "t_awake", _parse_int),
    "t_dream": ("", "t_dream", _parse_int),
    "gamma": ("", "gamma", float),
    "eta_pi": ("", "eta_pi", _parse_optional_float),
    "eta_state": ("", "eta_state", float),
    "eta_reward": ("", "eta_reward", float),
    "sbar_alpha": ("", "sbar_alpha", float),
    "clamp_dream_reward": ("", "clamp_dream_reward", _parse_bool),
    "absolute_model_targets": ("", "absolute_model_targets", _parse_bool),
    "point_terminal": ("", "point_terminal", _parse_bool),
    "n_agent": ("", "n_agent", _parse_int),
    "n_model": ("", "n_model", _parse_int),
    "env.ball_speed": ("physics", "ball_speed", float),
    "env.paddle_speed": ("physics", "paddle_speed", float),
    "env.paddle_half_height": ("physics", "paddle_half_height", float),
    "env.opp_speed": ("physics", "opp_speed", float),
    "encoding.generators_per_variable": ("encoding", "generators_per_variable", _parse_int),
    "encoding.sigma": ("encoding", "sigma", float),
    "encoding.peak_spikes_per_window": ("encoding", "peak_spikes_per_window", float),
    "encoding.window_us": ("encoding", "window_us", float),
    "substrate.mismatch_cv": ("", "mismatch_cv", float),
    "substrate.sim_dt_us": ("", "sim_dt_us", float),
    "substrate.reset_each_window": ("", "reset_each_window", _parse_bool),
    "substrate.core_efficacy": ("", "fixed_efficacy", _parse_optional_float),
    "neuron.tau_mem_s": ("neuron", "tau_mem_s", float),
    "neuron.tau_syn_s": ("neuron", "tau_syn_s", float),
    "neuron.v_thresh": ("neuron", "v_thresh", float),
    "neuron.v_reset": ("neuron", "v_reset", float),
    "neuron.refractory_s": ("neuron", "refractory_s", float),
    "calibration.target_lo": ("calibration", "target_lo", float),
    "calibration.target_hi": ("calibration", "target_hi", float),
    "calibration.probe_games": ("calibration", "probe_games", _parse_int),
    "calibration.probe_frames_per_game": ("calibration", "probe_frames_per_game", _parse_int),
    "calibration.max_steps": ("calibration", "max_steps", _parse_int),
    "calibration.initial_efficacy": ("calibration", "initial_efficacy", float),
}

_AREA_DEFAULTS = {
    "physics": PongPhysics,
    "encoding": PopulationCodeConfig,
    "neuron": NeuronParams,
    "calibration": CalibrationConfig,
}


def build_train_config(mapping: dict[str, str]) -> TrainConfig:
    """Assemble a validated TrainConfig from a flat string mapping."""
    direct: dict[str, object] = {}
    nested: dict[str, dict[str, object]] = {area: {} for area in _AREA_DEFAULTS}
    for key, raw in mapping.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        area, fieldname, parser = _SCHEMA[key]
        try:
            value = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
        if area:
            nested[area][fieldname] = value
        else:
            direct[fieldname] = value
    try:
        for area, overrides in nested.items():
            if overrides:
                direct[area] = replace(_AREA_DEFAULTS[area](), **overrides)
        return TrainConfig(**direct)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _fmt_value(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg: TrainConfig) -> str:
    """Canonical text for a TrainConfig: every key, sorted, round-trippable."""
    lines = []
    for key in sorted(_SCHEMA):
        area, fieldname, _ = _SCHEMA[key]
        holder = cfg if not area else getattr(cfg, area)
        lines.append(f"{key} = {_fmt_value(getattr(holder, fieldname))}")
    return "\n".join(lines) + "\n"


def config_hash(text: str) -> str:
    """Content hash of a rendered config (identifies an experiment)."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
