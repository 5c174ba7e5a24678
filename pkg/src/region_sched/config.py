"""JSON run configuration: strict parsing, defaults, and field-path errors.

Every validation failure names the exact field that caused it, using dotted
paths like ``sampler.ssd.p_min``.  Unknown keys are rejected at every level;
silent typos in sweep configs are the main operational hazard this guards
against.
"""

from __future__ import annotations

import json
import re
from dataclasses import MISSING, dataclass, fields, is_dataclass

from .complexity import SCORE_VARIANTS
from .core import SigmaSchedule, make_schedule
from .errors import ConfigError, ParameterError
from .oracle import SceneSpec
from .sampler import PARTITIONERS, SamplerConfig

__all__ = [
    "METHODS",
    "DENOISERS",
    "SCHEDULE_KINDS",
    "ScheduleSpec",
    "SweepSpec",
    "RunConfig",
    "parse_config",
    "load_config",
    "resolved_dict",
]

METHODS = ("full", "sdit", "ras", "random")
DENOISERS = ("gmm", "delta")
SCHEDULE_KINDS = ("linear", "cosine")


@dataclass(frozen=True)
class ScheduleSpec:
    """Schedule knobs as they appear in a config file.

    ``steps`` counts denoising transitions, so the sigma ladder has
    steps + 1 nodes.
    """

    kind: str = "linear"
    sigma_max: float = 3.0
    sigma_min: float = 0.0
    steps: int = 30

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ParameterError(f"kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}")
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")

    def build(self) -> SigmaSchedule:
        return make_schedule(self.kind, self.sigma_max, self.sigma_min, self.steps + 1)


@dataclass(frozen=True)
class SweepSpec:
    """Ablation axes: which variants to run and against what grid."""

    partitioners: tuple[str, ...] = ()
    scorers: tuple[str, ...] = ()
    ratios: tuple[float, ...] = ()
    dilations: tuple[int, ...] = ()

    def __post_init__(self):
        for p in self.partitioners:
            if p not in PARTITIONERS:
                raise ParameterError(f"partitioners must draw from {PARTITIONERS}, got {p!r}")
        for v in self.scorers:
            if v not in SCORE_VARIANTS:
                raise ParameterError(f"scorers must draw from {SCORE_VARIANTS}, got {v!r}")
        for r in self.ratios:
            if not 0.0 < r <= 1.0:
                raise ParameterError(f"ratios must lie in (0, 1], got {r}")
        for d in self.dilations:
            if d < 0:
                raise ParameterError(f"dilations must be >= 0, got {d}")

    @property
    def empty(self) -> bool:
        return not (self.partitioners or self.scorers or (self.ratios and self.dilations))


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI invocation needs, defaults filled in."""

    scene: SceneSpec = SceneSpec()
    schedule: ScheduleSpec = ScheduleSpec()
    sampler: SamplerConfig = SamplerConfig()
    method: str = "sdit"
    denoiser: str = "gmm"
    output_dir: str | None = None
    emit_maps: bool = False
    emit_figures: bool = False
    trace_dir: str | None = None
    sweep: SweepSpec = SweepSpec()

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.denoiser not in DENOISERS:
            raise ParameterError(f"denoiser must be one of {DENOISERS}, got {self.denoiser!r}")

    def flat_ratio(self) -> float:
        """The budget handed to the patch baseline: the SSD band midpoint."""
        return 0.5 * (self.sampler.ssd.p_min + self.sampler.ssd.p_max)


def _expect(path: str, value, want: type):
    """Type-check one leaf; bool never passes as a number."""
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {type(value).__name__}")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {type(value).__name__}")
        return value
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {type(value).__name__}")
        return value
    if not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {type(value).__name__}")
    return value


def _seq(value, path: str) -> list:
    if not isinstance(value, list):
        raise ConfigError(path, f"expected a list, got {type(value).__name__}")
    return value


def _leaf_path(cls, path: str, message: str) -> str:
    """Extend ``path`` with the first dataclass field the message mentions."""
    best = None
    for f in fields(cls):
        m = re.search(rf"\b{re.escape(f.name)}\b", message)
        if m and (best is None or m.start() < best[0]):
            best = (m.start(), f.name)
    if best is None:
        return path or "<root>"
    return f"{path}.{best[1]}" if path else best[1]


# Leaf handlers keyed by field name, for the few non-uniform shapes.
def _pair(value, path: str) -> tuple[float, float]:
    items = _seq(value, path)
    if len(items) != 2:
        raise ConfigError(path, f"expected [lo, hi], got {len(items)} items")
    return (_expect(f"{path}[0]", items[0], float), _expect(f"{path}[1]", items[1], float))


_OPTIONAL_FLOATS = ("bandwidth", "max_link_dist")
_OPTIONAL_STRS = ("output_dir", "trace_dir")
_STR_TUPLES = ("partitioners", "scorers")


def _build(cls, raw: dict, path: str):
    """Construct a frozen dataclass from a JSON object, strictly.

    Unknown keys and wrong-typed values raise ConfigError with the full
    dotted path; dataclass __post_init__ violations are re-raised with
    the offending leaf appended so the CLI can always point at a field.
    """
    if not isinstance(raw, dict):
        raise ConfigError(path or "<root>", f"expected an object, got {type(raw).__name__}")
    spec = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        sub = f"{path}.{key}" if path else key
        if key not in spec:
            raise ConfigError(sub, "unknown key")
        f = spec[key]
        default = f.default if f.default is not MISSING else f.default_factory()
        if is_dataclass(default):
            kwargs[key] = _build(type(default), value, sub)
        elif key == "value_range":
            kwargs[key] = _pair(value, sub)
        elif key in _OPTIONAL_FLOATS:
            kwargs[key] = None if value is None else _expect(sub, value, float)
        elif key in _OPTIONAL_STRS:
            kwargs[key] = None if value is None else _expect(sub, value, str)
        elif key in _STR_TUPLES:
            kwargs[key] = tuple(_expect(f"{sub}[{i}]", v, str) for i, v in enumerate(_seq(value, sub)))
        elif key == "ratios":
            kwargs[key] = tuple(_expect(f"{sub}[{i}]", v, float) for i, v in enumerate(_seq(value, sub)))
        elif key == "dilations":
            kwargs[key] = tuple(_expect(f"{sub}[{i}]", v, int) for i, v in enumerate(_seq(value, sub)))
        else:
            kwargs[key] = _expect(sub, value, type(default))
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ParameterError as exc:
        raise ConfigError(_leaf_path(cls, path, str(exc)), str(exc)) from exc


def parse_config(raw: dict) -> RunConfig:
    """Validate a decoded JSON object into a RunConfig."""
    return _build(RunConfig, raw, "")


def load_config(path: str) -> RunConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, "rb") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON in {path}: {exc}") from exc
    return parse_config(raw)


def resolved_dict(cfg: RunConfig) -> dict:
    """The exact resolved config, defaults filled in, as plain JSON types.

    ``output_dir`` is omitted so reports stay byte-identical when the same
    run is pointed at different directories.
    """

    def conv(obj):
        if is_dataclass(obj):
            return {f.name: conv(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, tuple):
            return [conv(v) for v in obj]
        return obj

    out = conv(cfg)
    del out["output_dir"]
    return out
