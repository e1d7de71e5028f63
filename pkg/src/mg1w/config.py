"""Run configuration: schema, loading, normalization and object builders."""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Callable, Optional

import jsonschema
import numpy as np
import yaml

from .approx_uniform import (
    SampledCost,
    TailEnvelope,
    compile_expression,
    quotient_cost_fn,
    quotient_cost_modulus,
    quotient_tail,
)
from .errors import ConfigError
from .piecewise import PiecewiseCostSpec
from .service_models import QueueSpec, model_from_dict
from .wfunction_core import ExpPolyCost, ExpPolyTerm

_NUM = {"type": "number"}
_CNUM = {
    "oneOf": [
        _NUM,
        {"type": "object", "properties": {"re": _NUM, "im": _NUM}, "required": ["re", "im"], "additionalProperties": False},
    ]
}
_TERM = {
    "type": "object",
    "properties": {"kappa": _CNUM, "m": {"type": "integer", "minimum": 0}, "a": _CNUM},
    "required": ["kappa"],
    "additionalProperties": False,
}
_TERMS = {"type": "array", "items": _TERM}
_MODEL = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "deterministic"}, "d": {"type": "number", "exclusiveMinimum": 0}},
            "required": ["kind", "d"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "exponential"}, "omega": {"type": "number", "exclusiveMinimum": 0}},
            "required": ["kind", "omega"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "erlang"},
                "q": {"type": "integer", "minimum": 1},
                "omega": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind", "q", "omega"],
            "additionalProperties": False,
        },
    ]
}
_QUEUE = {
    "type": "object",
    "properties": {"lambda": {"type": "number", "exclusiveMinimum": 0}, "model": _MODEL, "model0": _MODEL},
    "required": ["lambda", "model"],
    "additionalProperties": False,
}
_GRID = {
    "oneOf": [
        {"type": "string", "pattern": r"^\s*[-+0-9.eE]+\s*:\s*[-+0-9.eE]+\s*:\s*[0-9]+\s*$"},
        {
            "type": "object",
            "properties": {"min": _NUM, "max": _NUM, "steps": {"type": "integer", "minimum": 1}},
            "required": ["min", "max", "steps"],
            "additionalProperties": False,
        },
        {"type": "array", "items": _NUM, "minItems": 1},
    ]
}
_PARAMS = {"type": "object", "additionalProperties": _NUM}
_COST = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"kind": {"const": "exppoly"}, "terms": _TERMS, "c0": _NUM},
            "required": ["kind", "terms"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "exp_decay"}, "a": {"type": "number"}},
            "required": ["kind", "a"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "piecewise"},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "sigma": {"type": "array", "items": _NUM},
                "interior": _TERMS,
                "tail": _TERMS,
                "c0": _NUM,
            },
            "required": ["kind", "tau"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "step"}, "tau": {"type": "number", "exclusiveMinimum": 0}},
            "required": ["kind", "tau"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "sampled"},
                "expression": {"type": "string"},
                "params": _PARAMS,
                "tail": {
                    "type": "object",
                    "properties": {"lower": _TERMS, "upper": _TERMS},
                    "required": ["lower", "upper"],
                    "additionalProperties": False,
                },
            },
            "required": ["kind", "expression"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "example7"}, "a": {"type": "number", "exclusiveMinimum": 0}},
            "required": ["kind", "a"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "periodic"},
                "expression": {"type": "string"},
                "params": _PARAMS,
                "period": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind", "expression", "period"],
            "additionalProperties": False,
        },
    ]
}
_SERVER = {
    "type": "object",
    "properties": {"id": {"type": "string"}, "lambda": {"type": "number", "exclusiveMinimum": 0}, "model": _MODEL, "cost": _COST},
    "required": ["lambda", "model", "cost"],
    "additionalProperties": False,
}
_DISPATCH = {
    "type": "object",
    "properties": {
        "d": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "grid": _GRID,
        "eps0": {"type": "number", "exclusiveMinimum": 0},
        "tmax": {"type": "integer", "minimum": 0},
        "tau_max": {"type": "number", "exclusiveMinimum": 0},
        "n_max": {"type": "integer", "minimum": 1},
        "mode": {"enum": ["coupled", "naive", "w_difference"]},
    },
    "required": ["d", "grid"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "command": {"enum": ["wfn", "bounds", "taylor", "approx", "policy", "simulate", "verify"]},
        "queue": _QUEUE,
        "cost": _COST,
        "grid": _GRID,
        "orders": _GRID,
        "n": {"type": "integer", "minimum": 1},
        "tau": {"type": "number", "exclusiveMinimum": 0},
        "method": {"enum": ["near_best", "bernstein"]},
        "servers": {"type": "array", "items": _SERVER, "minItems": 1},
        "dispatch": _DISPATCH,
        "u0": _GRID,
        "seed": {"type": "integer", "minimum": 0},
        "reps": {"type": "integer", "minimum": 1},
        "quick": {"type": "boolean"},
    },
    "additionalProperties": False,
}

REQUIRED = {
    "wfn": ["queue", "cost", "grid"],
    "bounds": ["queue", "cost", "orders", "grid"],
    "taylor": ["queue", "cost", "n", "grid"],
    "approx": ["cost", "tau", "n"],
    "policy": ["servers", "dispatch"],
    "simulate": ["queue", "cost", "u0"],
    "verify": [],
}


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 wants a dot in floats, so JSON numbers like 1e-18 would load as strings
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)


def parse_text(text: str, source: str = "<config>") -> dict:
    """YAML or JSON text to a plain dict (JSON is valid YAML)."""
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{source}: malformed config{where}: {getattr(exc, 'problem', exc)}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return doc


@lru_cache(maxsize=1)
def _validator():
    cls = jsonschema.validators.validator_for(SCHEMA)
    cls.check_schema(SCHEMA)
    return cls(SCHEMA)


def validate(doc: dict, command: Optional[str] = None, source: str = "<config>") -> dict:
    """Schema check plus per-command required keys; returns a normalized copy."""
    try:
        err = jsonschema.exceptions.best_match(_validator().iter_errors(doc))
        if err is not None:
            raise err
    except jsonschema.ValidationError as exc:
        field = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{source}: field '{field}': {exc.message}") from None
    cmd = command or doc.get("command")
    if cmd is not None:
        missing = [k for k in REQUIRED[cmd] if k not in doc]
        if missing:
            raise ConfigError(f"{source}: command '{cmd}' needs field(s) {', '.join(missing)}")
    return normalize(doc)


def load(path: str, command: Optional[str] = None) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return validate(parse_text(text, path), command, path)


def _norm_grid(g):
    if isinstance(g, str):
        a, b, n = (s.strip() for s in g.split(":"))
        return {"min": float(a), "max": float(b), "steps": int(n)}
    if isinstance(g, dict):
        return {"min": float(g["min"]), "max": float(g["max"]), "steps": int(g["steps"])}
    return [float(x) for x in g]


def normalize(doc: dict) -> dict:
    out = json.loads(json.dumps(doc))
    for key in ("grid", "orders", "u0"):
        if key in out:
            out[key] = _norm_grid(out[key])
    if "dispatch" in out:
        out["dispatch"]["grid"] = _norm_grid(out["dispatch"]["grid"])
    return out


class _Dumper(yaml.SafeDumper):
    pass


def _float_repr(dumper, value: float):
    # PyYAML reads 1e-18 back as a string; YAML 1.1 floats need a dot
    text = repr(value)
    if "e" in text and "." not in text:
        mant, exp = text.split("e")
        text = f"{mant}.0e{exp}"
    if value != value:
        text = ".nan"
    elif value in (float("inf"), float("-inf")):
        text = ".inf" if value > 0 else "-.inf"
    return dumper.represent_scalar("tag:yaml.org,2002:float", text)


_Dumper.add_representer(float, _float_repr)


def dump(doc: dict, fmt: str = "yaml") -> str:
    if fmt == "json":
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    return yaml.dump(doc, Dumper=_Dumper, sort_keys=True)


def spec_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def grid_values(g) -> np.ndarray:
    g = _norm_grid(g)
    if isinstance(g, dict):
        if g["steps"] == 1:
            return np.array([g["min"]])
        return np.linspace(g["min"], g["max"], g["steps"])
    return np.array(g, dtype=float)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def _cnum(v) -> complex:
    if isinstance(v, dict):
        return complex(v["re"], v["im"])
    return complex(v)


def _terms(items) -> list[ExpPolyTerm]:
    return [ExpPolyTerm(_cnum(t["kappa"]), int(t.get("m", 0)), _cnum(t.get("a", 0.0))) for t in items or []]


def build_queue(q: dict) -> QueueSpec:
    m0 = model_from_dict(q["model0"]) if "model0" in q else None
    return QueueSpec(model_from_dict(q["model"]), float(q["lambda"]), m0)


@dataclass
class CostObj:
    """A built cost: ``kind`` plus whichever representation applies."""

    kind: str
    exact: Optional[ExpPolyCost] = None
    piecewise: Optional[PiecewiseCostSpec] = None
    fn: Optional[Callable] = None
    tail: Optional[Callable[[float], TailEnvelope]] = None
    modulus: Optional[Callable[[float, float], float]] = None
    period: Optional[float] = None
    a: Optional[float] = None

    def evaluator(self) -> Callable:
        """Real vectorized c(u) with the value at exactly zero honoured."""
        if self.exact is not None:
            c, c0 = self.exact, self.exact.value_at_zero()
            return lambda u: np.where(np.asarray(u) == 0.0, c0.real, np.real(c(u)))
        if self.piecewise is not None:
            p, c0 = self.piecewise, self.piecewise.value_at_zero()
            return lambda u: np.where(np.asarray(u) == 0.0, c0.real, np.real(p(u)))
        return self.fn


def build_cost(c: dict) -> CostObj:
    kind = c["kind"]
    if kind == "exppoly":
        return CostObj(kind, exact=ExpPolyCost(_terms(c["terms"]), c.get("c0")))
    if kind == "exp_decay":
        a = float(c["a"])
        return CostObj(kind, exact=ExpPolyCost([ExpPolyTerm(1.0, 0, 0.0), ExpPolyTerm(-1.0, 0, a)]), a=a)
    if kind == "piecewise":
        if "sigma" in c and "interior" in c:
            raise ConfigError("piecewise cost: give either 'sigma' or 'interior', not both")
        interior = [ExpPolyTerm(s, j, 0.0) for j, s in enumerate(c.get("sigma", []))] + _terms(c.get("interior"))
        return CostObj(kind, piecewise=PiecewiseCostSpec(float(c["tau"]), tuple(interior), tuple(_terms(c.get("tail"))), c.get("c0")))
    if kind == "step":
        return CostObj(kind, piecewise=PiecewiseCostSpec.from_polynomial([], float(c["tau"]), tail=(1.0, 0, 0.0)))
    if kind == "sampled":
        fn = compile_expression(c["expression"], c.get("params"))
        tail = None
        if "tail" in c:
            env = TailEnvelope(_terms(c["tail"]["lower"]), _terms(c["tail"]["upper"]))
            tail = lambda tau, env=env: env
        return CostObj(kind, fn=fn, tail=tail)
    if kind == "example7":
        a = float(c["a"])
        return CostObj(
            kind,
            fn=quotient_cost_fn(a),
            tail=lambda tau: quotient_tail(a, tau),
            modulus=lambda tau, delta: quotient_cost_modulus(a, tau)(delta),
            a=a,
        )
    if kind == "periodic":
        return CostObj(kind, fn=compile_expression(c["expression"], c.get("params")), period=float(c["period"]))
    raise ConfigError(f"unknown cost kind {kind!r}")
