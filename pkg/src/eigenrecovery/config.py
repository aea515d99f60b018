"""JSON run configuration: strict schema, model construction and number formatting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import jsonschema

from .catalog import CATALOG
from .exprdsl import ParseError, parse
from .integrals import DepthSchedule
from .model import MarketModel, ModelError

__all__ = [
    "ConfigError",
    "Numerics",
    "Simulation",
    "Config",
    "load_config",
    "parse_config",
    "parse_value",
    "format_number",
    "dumps",
]

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_NUMBER_OR_INF = {"anyOf": [{"type": "number"}, {"type": "null"}, {"enum": ["inf", "-inf"]}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "required": ["type"],
            "properties": {"type": {"type": "string"}},
        },
        "numerics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "truncation_log_halfwidth": _POSITIVE,
                "ode_rel_tol": _POSITIVE,
                "bisect_tol_lambda": _POSITIVE,
                "bisect_tol_slope": _POSITIVE,
                "depth_schedule": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"delta": _POSITIVE, "n_max": {"type": "integer", "minimum": 6}},
                },
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_paths": {"type": "integer", "minimum": 2},
                "n_steps": {"type": "integer", "minimum": 100},
                "horizon": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "thresholds": {"type": "array", "items": {"type": "number"}},
            },
        },
    },
}

CUSTOM_MODEL = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type", "b", "sigma", "r", "v", "xi"],
    "properties": {
        "type": {"const": "custom"},
        "b": {"type": ["string", "number"]},
        "sigma": {"type": ["string", "number"]},
        "r": {"type": ["string", "number"]},
        "v": {"type": ["string", "number"]},
        "xi": {"type": "number"},
        "domain": {"type": "array", "items": _NUMBER_OR_INF, "minItems": 2, "maxItems": 2},
        "name": {"type": "string"},
    },
}

CATALOG_MODEL = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type"],
    "properties": {
        "type": {"enum": sorted(CATALOG)},
        "params": {"type": "object", "additionalProperties": {"type": "number"}},
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending entry."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class Numerics:
    truncation_log_halfwidth: float = 20.0
    ode_rel_tol: float = 1e-10
    bisect_tol_lambda: float = 1e-6
    bisect_tol_slope: float = 1e-10
    depth_delta: float = 2.0
    depth_n_max: int = 10

    @property
    def schedule(self) -> DepthSchedule:
        return DepthSchedule(delta=self.depth_delta, n_max=self.depth_n_max)


@dataclass(frozen=True)
class Simulation:
    n_paths: int = 10_000
    n_steps: int = 1000
    horizon: float = 1.0
    seed: int = 0
    thresholds: tuple = ()


@dataclass(frozen=True)
class Config:
    model: MarketModel
    numerics: Numerics = field(default_factory=Numerics)
    simulation: Simulation = field(default_factory=Simulation)
    catalog_name: str | None = None
    catalog_params: dict = field(default_factory=dict)


def parse_value(v):
    """Numbers as written by :func:`dumps`, including the ``inf``/``nan`` spellings."""
    if v is None:
        return None
    if isinstance(v, str):
        if v in ("inf", "-inf", "nan"):
            return float(v)
        raise ValueError(f"not a number: {v!r}")
    return float(v)


def _bound(v, default):
    return default if v is None else parse_value(v)


def _path(error) -> str:
    return ".".join(str(p) for p in error.absolute_path)


def _validate(doc, schema, prefix=""):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        path = ".".join(p for p in (prefix, _path(err)) if p)
        raise ConfigError(path or "<root>", err.message)


def _build_model(spec: dict, numerics: Numerics):
    if spec["type"] == "custom":
        _validate(spec, CUSTOM_MODEL, "model")
        coeffs = {}
        for key in ("b", "sigma", "r", "v"):
            val = spec[key]
            if isinstance(val, str):
                try:
                    coeffs[key] = parse(val)
                except ParseError as exc:
                    raise ConfigError(f"model.{key}", f"parse error: {exc}") from exc
            else:
                coeffs[key] = float(val)
        lo, hi = spec.get("domain", [0.0, None])
        domain = (_bound(lo, -math.inf), _bound(hi, math.inf))
        try:
            model = MarketModel(
                xi=float(spec["xi"]),
                domain=domain,
                truncation=numerics.truncation_log_halfwidth,
                name=spec.get("name", "custom"),
                **coeffs,
            )
        except ModelError as exc:
            raise ConfigError("model", str(exc)) from exc
        return model, None, {}
    _validate(spec, CATALOG_MODEL, "model")
    params = dict(spec.get("params", {}))
    try:
        closed = CATALOG[spec["type"]](**params)
    except TypeError as exc:
        raise ConfigError("model.params", str(exc)) from exc
    except (ValueError, ModelError) as exc:
        raise ConfigError("model.params", str(exc)) from exc
    return closed.model.with_truncation(numerics.truncation_log_halfwidth), spec["type"], params


def parse_config(doc) -> Config:
    _validate(doc, SCHEMA)
    num = doc.get("numerics", {})
    sched = num.get("depth_schedule", {})
    numerics = Numerics(
        truncation_log_halfwidth=float(num.get("truncation_log_halfwidth", 20.0)),
        ode_rel_tol=float(num.get("ode_rel_tol", 1e-10)),
        bisect_tol_lambda=float(num.get("bisect_tol_lambda", 1e-6)),
        bisect_tol_slope=float(num.get("bisect_tol_slope", 1e-10)),
        depth_delta=float(sched.get("delta", 2.0)),
        depth_n_max=int(sched.get("n_max", 10)),
    )
    sim = doc.get("simulation", {})
    simulation = Simulation(
        n_paths=int(sim.get("n_paths", 10_000)),
        n_steps=int(sim.get("n_steps", 1000)),
        horizon=float(sim.get("horizon", 1.0)),
        seed=int(sim.get("seed", 0)),
        thresholds=tuple(float(t) for t in sim.get("thresholds", ())),
    )
    model, name, params = _build_model(doc["model"], numerics)
    return Config(model, numerics, simulation, name, params)


def load_config(path) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_config(doc)


# --------------------------------------------------------------------------- #
# Output formatting
# --------------------------------------------------------------------------- #


def format_number(x) -> str:
    """Seventeen significant digits; non-finite values spelled ``inf``, ``-inf``, ``nan``."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float) or hasattr(obj, "__float__") and not isinstance(obj, str):
        text = format_number(obj)
        return text if math.isfinite(float(obj)) else json.dumps(text)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)) or hasattr(obj, "tolist"):
        seq = obj.tolist() if hasattr(obj, "tolist") else obj
        if not seq:
            return "[]"
        items = [f"{pad}{_encode(v, indent, level + 1)}" for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON with full-precision numbers."""
    return _encode(obj, indent, 0) + "\n"
