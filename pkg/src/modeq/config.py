"""Experiment configuration: JSON documents, dotted overrides, schema validation and
construction of the library objects they describe."""
from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .complexity import Regime
from .diffusion import DiffusionSpec, EnvelopeSchedule
from .errors import ConfigError
from .estimators import TARGETS, TestFunction
from .objective import perturbed_quadratic_problem, quadratic_problem

REGIME_NAMES = {
    "first-weak": ("weak", "first", "bounded"),
    "first-strong": ("strong", "first", "bounded"),
    "second-weak-exp": ("weak", "second", "exponential"),
    "second-strong-exp": ("strong", "second", "exponential"),
    "second-weak-poly": ("weak", "second", "polynomial"),
    "second-strong-poly": ("strong", "second", "polynomial"),
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_posvec = {"type": "array", "items": _pos, "minItems": 1}
_count = {"type": "integer", "minimum": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_regime_name = {"enum": sorted(REGIME_NAMES)}

SCHEMA = _obj({
    "description": {"type": "string"},
    "seed": {"type": "integer", "minimum": 0},
    "problem": {"oneOf": [
        _obj({"kind": {"const": "quadratic"}, "diag": _posvec, "shift": _vec},
             ["kind", "diag"]),
        _obj({"kind": {"const": "quadratic"},
              "matrix": {"type": "array", "items": _vec, "minItems": 1}, "shift": _vec},
             ["kind", "matrix"]),
        _obj({"kind": {"const": "perturbed_quadratic"}, "dim": _count,
              "epsilon": {"type": "number", "minimum": 0}}, ["kind", "dim", "epsilon"]),
    ]},
    "diffusion": {"oneOf": [{"type": "null"}, _obj({
        "envelope": _obj({"kind": {"enum": ["constant", "exponential", "polynomial"]},
                          "c": {"type": "number", "minimum": 0}, "nu": _pos, "alpha": _pos},
                         ["kind"]),
        "shape": {"enum": ["scalar_identity", "diagonal", "state_scaled"]},
        "base": _vec,
        "state_gain": {"type": "number", "minimum": 0},
        "center": _vec,
    }, ["envelope"])]},
    "phi": _obj({"kind": {"enum": ["objective_residual", "quadratic_form", "smooth_bounded"]},
                 "Q": {"type": "array", "minItems": 1}}, ["kind"]),
    "scheme": _obj({
        "h": _pos, "n_steps": {"type": "integer", "minimum": 0}, "x0": _vec,
        "noise_mode": {"enum": ["gaussian_iid", "brownian_increments"]},
        "substeps_per_step": _count, "M": _count,
        "checkpoints": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    }, ["h", "n_steps", "x0"]),
    "sweep": _obj({
        "h_grid": {"type": "array", "items": _pos}, "T": _pos, "M": _count, "x0": _vec,
        "target": {"enum": list(TARGETS)}, "S": _count, "coupled": {"type": "boolean"},
        "method": {"enum": ["auto", "euler", "aggregated"]},
    }, ["h_grid", "T", "M", "target", "x0"]),
    "check": _obj({
        "h_grid": {"type": "array", "items": _pos},
        "sample_count": {"type": "integer", "minimum": 2},
        "radius": _pos,
        "tangent": _obj({"T": _pos, "h": _pos, "instances": _count, "ensemble": _count,
                         "fine_substeps": _count, "tol": _pos}),
        "contraction": _obj({"x0": _vec, "T_grid": _posvec, "h_grid": _posvec, "M": _count,
                             "fine_substeps": _count}, ["x0", "T_grid", "h_grid"]),
    }),
    "plan": _obj({
        "regimes": {"type": "array", "items": _regime_name, "minItems": 1},
        "epsilon": {"type": "array", "items": _num, "minItems": 1},
        "mu": _pos, "alpha": _pos, "nu": _pos, "compare": {"type": "boolean"},
    }),
    "validate": _obj({
        "regime": _regime_name, "epsilon": _num, "mu": _pos, "alpha": _pos, "nu": _pos,
        "M": _count, "x0": _vec,
    }, ["regime", "epsilon", "M", "x0"]),
})


def bundled_names():
    root = resources.files("modeq") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _resolve(ref: str) -> str:
    path = Path(ref)
    if path.is_file():
        return path.read_text(encoding="utf-8")
    name = ref[:-5] if ref.endswith(".json") else ref
    if "/" not in name and name in bundled_names():
        return (resources.files("modeq") / "configs" / f"{name}.json").read_text("utf-8")
    raise ConfigError(f"config {ref!r} not found (bundled: {', '.join(bundled_names())})")


def load_config(ref=None) -> dict:
    if ref is None:
        return {}
    try:
        doc = json.loads(_resolve(ref))
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {ref}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def apply_override(cfg: dict, assignment: str) -> dict:
    """Set a leaf addressed by a dotted path; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not KEY=VAL")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"bad override key {key!r}")
    out = copy.deepcopy(cfg)
    node = out
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
        node = nxt
    node[parts[-1]] = value
    return out


def validate(cfg: dict, required=()) -> dict:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as e:
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {e.message}") from None
    missing = [k for k in required if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"config is missing required section(s): {', '.join(missing)}")
    return cfg


def build_problem(rec: dict):
    try:
        if rec["kind"] == "quadratic":
            A = rec["diag"] if "diag" in rec else rec["matrix"]
            return quadratic_problem(A, rec.get("shift"))
        return perturbed_quadratic_problem(rec["dim"], rec["epsilon"])
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"problem: {e}") from None


def build_diffusion(rec, dim: int):
    if rec is None:
        return None
    env = rec["envelope"]
    try:
        schedule = EnvelopeSchedule(env["kind"], env.get("c", 1.0), env.get("nu", 0.0),
                                    env.get("alpha", 0.0))
        return DiffusionSpec(schedule, dim, rec.get("shape", "scalar_identity"),
                             rec.get("base"), rec.get("state_gain", 0.0), rec.get("center"))
    except (ValueError, TypeError) as e:
        raise ConfigError(f"diffusion: {e}") from None


def build_phi(rec) -> TestFunction:
    if rec is None:
        return TestFunction("objective_residual")
    try:
        return TestFunction(rec["kind"], rec.get("Q"))
    except (ValueError, TypeError) as e:
        raise ConfigError(f"phi: {e}") from None


def build_regime(name: str, alpha=None, nu=None) -> Regime:
    if name not in REGIME_NAMES:
        raise ConfigError(f"unknown regime {name!r}; choose from {', '.join(REGIME_NAMES)}")
    kind, order, decay = REGIME_NAMES[name]
    return Regime(kind, order, decay, nu=nu if decay == "exponential" else None,
                  alpha=alpha if decay == "polynomial" else None)
