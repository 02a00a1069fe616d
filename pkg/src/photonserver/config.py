"""Experiment configuration: one flat text file of dotted keys mapping
onto the module dataclasses, e.g.

    sim.p_gen = 0.09
    schedule.period = 10000
    qualifier.loss_window_ms = 30
    qed.g_mhz = 5.0
    n_runs = 100
    seed = 42

Unknown keys are hard errors (typo protection).  Values are coerced to
the target field's type; window pairs accept "lo,hi".
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .clickstream import PulseSchedule
from .qed import PulseShape, QedParams
from .qualifier import QualifierConfig
from .simulator import SimConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    schedule: PulseSchedule = field(default_factory=PulseSchedule)
    qualifier: QualifierConfig = field(default_factory=QualifierConfig)
    qed: QedParams = field(default_factory=QedParams)
    pulse: PulseShape = field(default_factory=PulseShape)
    n_runs: int = 10
    seed: int = 12345
    out_dir: str = "out"
    format: str = "ptag"

    def __post_init__(self):
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if self.format not in ("ptag", "csv"):
            raise ConfigError(f"unknown format {self.format!r}")


_SECTIONS = {
    "sim": SimConfig,
    "schedule": PulseSchedule,
    "qualifier": QualifierConfig,
    "qed": QedParams,
    "pulse": PulseShape,
}
_TOP_LEVEL = {"n_runs": int, "seed": int, "out_dir": str, "format": str}


def _coerce(text: str, ftype: Any, key: str):
    text = text.strip()
    origin = getattr(ftype, "__origin__", None)
    if origin is tuple:
        parts = text.strip("()[] ").split(",")
        args = ftype.__args__
        if len(parts) != len(args):
            raise ConfigError(f"{key}: expected {len(args)} comma-separated values")
        return tuple(_coerce(p, a, key) for p, a in zip(parts, args))
    if ftype is bool or ftype == "bool":
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: not a boolean: {text!r}")
    if ftype is int or ftype == "int":
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: not an integer: {text!r}") from None
    if ftype is float or ftype == "float":
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: not a number: {text!r}") from None
    return text.strip("'\"")


def _field_types(cls) -> dict[str, Any]:
    return {f.name: f.type for f in dataclasses.fields(cls)}


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse the dotted-key file into {key: raw string}."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value': {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


# tuple field types are stored as strings under `from __future__ annotations`;
# resolve the ones we actually have
_TUPLE_FIELDS = {
    ("schedule", "trigger_window"): tuple[int, int],
    ("schedule", "recycle_window"): tuple[int, int],
    ("qualifier", "level_band"): tuple[float, float],
}


def _resolve_type(section: str, name: str, declared):
    if (section, name) in _TUPLE_FIELDS:
        return _TUPLE_FIELDS[(section, name)]
    if declared in ("int", int):
        return int
    if declared in ("float", float):
        return float
    if declared in ("bool", bool):
        return bool
    if declared in ("str", str):
        return str
    return str


def build_config(entries: dict[str, str],
                 overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Assemble an ExperimentConfig from parsed entries plus programmatic
    overrides (already-typed values, e.g. CLI flags)."""
    section_kwargs: dict[str, dict[str, Any]] = {s: {} for s in _SECTIONS}
    top: dict[str, Any] = {}
    for key, raw in entries.items():
        if "." in key:
            section, name = key.split(".", 1)
            cls = _SECTIONS.get(section)
            if cls is None:
                raise ConfigError(f"unknown section {section!r} in key {key!r}")
            types = _field_types(cls)
            if name not in types:
                raise ConfigError(f"unknown key {key!r}")
            section_kwargs[section][name] = _coerce(
                raw, _resolve_type(section, name, types[name]), key)
        else:
            if key not in _TOP_LEVEL:
                raise ConfigError(f"unknown key {key!r}")
            top[key] = _coerce(raw, _TOP_LEVEL[key], key)

    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            top[key] = value

    try:
        parts = {name: cls(**section_kwargs[name]) for name, cls in _SECTIONS.items()}
        return ExperimentConfig(**parts, **top)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None,
                overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    entries: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        entries = parse_config_text(p.read_text())
    return build_config(entries, overrides)


def as_dotted_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    """Flatten a config back to dotted keys (JSON-friendly snapshot)."""
    out: dict[str, Any] = {}
    for section, cls in _SECTIONS.items():
        sub = getattr(cfg, section)
        for f in dataclasses.fields(cls):
            v = getattr(sub, f.name)
            out[f"{section}.{f.name}"] = list(v) if isinstance(v, tuple) else v
    for key in _TOP_LEVEL:
        out[key] = getattr(cfg, key)
    return out
