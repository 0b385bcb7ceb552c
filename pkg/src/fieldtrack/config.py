"""Scenario configuration files: INI-style sections, fail-fast on unknowns."""

from __future__ import annotations

import configparser

from .simulate import ScenarioConfig


class ConfigError(ValueError):
    """Invalid scenario configuration; carries a file/field diagnostic."""


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("true", "on", "yes", "1"):
        return True
    if value in ("false", "off", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_float_list(raw: str) -> tuple:
    return tuple(float(part) for part in raw.replace(",", " ").split())


def _parse_optional_float(raw: str) -> float | None:
    value = raw.strip().lower()
    if value in ("", "none", "auto"):
        return None
    return float(value)


_SCHEMA: dict[str, dict[str, tuple]] = {
    "path": {
        "kind": ("path_kind", str),
        "radii": ("radii", _parse_float_list),
        "straight_length": ("straight_length", float),
        "spacing": ("spacing", float),
        "start_offset_m": ("start_offset_m", float),
    },
    "run": {
        "duration_s": ("duration_s", _parse_optional_float),
        "dt": ("dt", float),
        "seed": ("seed", int),
        "mode": ("mode", str),
    },
    "plant": {
        "slip": ("slip_true", float),
        "slip_drop_value": ("slip_drop_value", _parse_optional_float),
        "slip_drop_time_s": ("slip_drop_time_s", _parse_optional_float),
        "model": ("plant_model", str),
        "steering_lag_s": ("steering_lag_s", float),
        "speed_lag_s": ("speed_lag_s", float),
        "v_ref": ("v_ref", float),
        "v_initial": ("v_initial", _parse_optional_float),
    },
    "noise": {
        "enabled": ("noise_enabled", _parse_bool),
        "sigma_position": ("sigma_position", float),
        "sigma_beta": ("sigma_beta", float),
        "sigma_speed": ("sigma_speed", float),
        "sigma_steering": ("sigma_steering", float),
        "steering_quantum_deg": ("steering_quantum_deg", float),
    },
    "controller": {
        "horizon": ("nmpc_horizon", int),
        "lookahead_m": ("lookahead_m", float),
        "lookahead_per_mps": ("lookahead_per_mps", _parse_optional_float),
        "tube": ("_tube", _parse_bool),
    },
    "estimator": {
        "horizon": ("nmhe_horizon", int),
        "enabled": ("estimator_enabled", _parse_bool),
        "initial_slip_guess": ("initial_slip_guess", float),
        "slip_process_std": ("slip_process_std", float),
    },
}


def _find_line(file_path: str, needle: str) -> int | None:
    try:
        with open(file_path) as fh:
            for number, line in enumerate(fh, start=1):
                stripped = line.split(";")[0].split("#")[0].strip()
                if stripped.startswith(needle):
                    return number
    except OSError:
        pass
    return None


def load_config(file_path: str) -> ScenarioConfig:
    """Read a scenario configuration, rejecting unknown sections and keys."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(file_path)
    if not read:
        raise ConfigError(f"config file not found or unreadable: {file_path}")

    config = ScenarioConfig()
    tube_flag: bool | None = None
    for section in parser.sections():
        if section not in _SCHEMA:
            line = _find_line(file_path, f"[{section}]")
            raise ConfigError(
                f"{file_path}:{line or '?'}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                line = _find_line(file_path, key)
                raise ConfigError(
                    f"{file_path}:{line or '?'}: unknown key '{key}' "
                    f"in section [{section}]")
            attr, parse = _SCHEMA[section][key]
            try:
                value = parse(raw)
            except ValueError as exc:
                line = _find_line(file_path, key)
                raise ConfigError(
                    f"{file_path}:{line or '?'}: bad value for "
                    f"[{section}] {key}: {exc}") from exc
            if attr == "_tube":
                tube_flag = value
            else:
                setattr(config, attr, value)

    if tube_flag is not None:
        apply_tube_flag(config, tube_flag)
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(f"{file_path}: {exc}") from exc
    return config


def apply_tube_flag(config: ScenarioConfig, tube_on: bool) -> None:
    """Normalize the tube toggle against the controller mode."""
    if config.mode == "cenmpc":
        if tube_on:
            raise ConfigError("the tube layer does not apply to cenmpc mode")
        return
    config.mode = "denmpc-tube" if tube_on else "denmpc"


def write_default_config(file_path: str) -> None:
    """Emit a commented configuration file with the default scenario."""
    config = ScenarioConfig()
    lines = [
        "; fieldtrack scenario configuration",
        "[path]",
        "kind = eights",
        "radii = " + ", ".join(f"{r:g}" for r in config.radii),
        f"straight_length = {config.straight_length:g}",
        f"spacing = {config.spacing:g}",
        f"start_offset_m = {config.start_offset_m:g}",
        "",
        "[run]",
        "duration_s = auto",
        f"dt = {config.dt:g}",
        f"seed = {config.seed}",
        f"mode = {config.mode}",
        "",
        "[plant]",
        f"slip = {config.slip_true:g}",
        f"model = {config.plant_model}",
        f"steering_lag_s = {config.steering_lag_s:g}",
        f"speed_lag_s = {config.speed_lag_s:g}",
        f"v_ref = {config.v_ref:g}",
        "",
        "[noise]",
        "enabled = true",
        f"sigma_position = {config.sigma_position:g}",
        f"sigma_beta = {config.sigma_beta:g}",
        f"sigma_speed = {config.sigma_speed:g}",
        f"sigma_steering = {config.sigma_steering:g}",
        f"steering_quantum_deg = {config.steering_quantum_deg:g}",
        "",
        "[controller]",
        f"horizon = {config.nmpc_horizon}",
        f"lookahead_m = {config.lookahead_m:g}",
        "",
        "[estimator]",
        f"horizon = {config.nmhe_horizon}",
        "enabled = true",
        f"initial_slip_guess = {config.initial_slip_guess:g}",
    ]
    with open(file_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
