"""JSON problem files: schema validation and construction of the model objects."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources

import jsonschema

from .bridge import MODES, GridSpec
from .flows import DEFAULT_SUBSTEPS
from .gamespec import (
    OMEGA,
    AuxiliarySystem,
    Controllability,
    Cylinder,
    ExplicitGrid,
    GameProblem,
    TerminalSet,
    sample_control_set,
)
from .vectorfield import FieldSignature, parse_field

SCHEMA_VERSION = 1

_num = {"type": "number"}
_interval = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_control_set = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "interval": _interval,
        "box": {"type": "array", "items": _interval, "minItems": 1},
        "ball": {"type": "number", "minimum": 0},
        "dim": {"type": "integer", "minimum": 1},
        "center": {"type": "array", "items": _num},
        "count": {"oneOf": [{"type": "integer", "minimum": 1},
                            {"type": "array", "items": {"type": "integer", "minimum": 1}}]},
        "points": {"type": "array", "minItems": 1},
    },
    "oneOf": [{"required": ["interval"]}, {"required": ["box"]}, {"required": ["ball"]},
              {"required": ["points"]}],
}
_terminal = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "point": {"type": "array", "items": _num, "minItems": 1},
        "box": {"type": "array", "items": _interval, "minItems": 1},
        "ball": {"type": "object", "additionalProperties": False, "required": ["center", "radius"],
                 "properties": {"center": {"type": "array", "items": _num}, "radius": _num}},
        "empty": {"type": "boolean"},
    },
    "minProperties": 1,
    "maxProperties": 1,
}
_exprs = {"type": "array", "items": {"type": "string"}, "minItems": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "state", "dynamics", "control_sets", "horizon", "target", "grid"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "state": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "dynamics": {
            "type": "object", "additionalProperties": False, "required": ["f"],
            "properties": {"f": _exprs, "u_dim": {"type": "integer", "minimum": 1},
                           "v_dim": {"type": "integer", "minimum": 1}},
        },
        "control_sets": {
            "type": "object", "additionalProperties": False, "required": ["P", "Q"],
            "properties": {"P": _control_set, "Q": _control_set, "Omega": _control_set},
        },
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "auxiliary": {
            "type": "object", "additionalProperties": False, "required": ["g", "F"],
            "properties": {"g": _exprs, "omega_dim": {"type": "integer", "minimum": 1},
                           "F": _terminal},
        },
        "target": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {
                "kind": {"enum": ["cylinder", "controllability", "explicit"]},
                "F": _terminal,
                "path": {"type": "string"},
            },
        },
        "grid": {
            "type": "object", "additionalProperties": False,
            "required": ["bounds", "cells", "time_steps"],
            "properties": {
                "bounds": {"type": "array", "items": _interval, "minItems": 1, "maxItems": 4},
                "cells": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1,
                          "maxItems": 4},
                "time_steps": {"type": "integer", "minimum": 1},
            },
        },
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "max_iter": {"type": "integer", "minimum": 1},
                "mode": {"enum": list(MODES)},
                "substeps": {"type": "integer", "minimum": 1},
                "band": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "isaacs": {
            "type": "object", "additionalProperties": False,
            "properties": {"samples": {"type": "integer", "minimum": 1},
                           "tolerance": {"type": "number", "minimum": 0}},
        },
        "checks": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "commute_samples": {"type": "integer", "minimum": 1},
                "commute_tolerance": {"type": "number", "minimum": 0},
                "tau_max": {"type": "number", "exclusiveMinimum": 0},
                "bracket_samples": {"type": "integer", "minimum": 1},
                "bracket_tolerance": {"type": "number", "minimum": 0},
                "sections_samples": {"type": "integer", "minimum": 1},
                "sections_tolerance": {"type": "integer", "minimum": 0},
                "radius": {"type": "integer", "minimum": 0},
            },
        },
        "simulate": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "starts": {"type": "integer", "minimum": 1},
                "margin": {"type": "integer", "minimum": 0},
                "adversaries": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "fineness": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "eps_diagonals": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

SOLVER_DEFAULTS = {"max_iter": 30, "mode": "interpolate", "substeps": DEFAULT_SUBSTEPS, "band": 2.0}
ISAACS_DEFAULTS = {"samples": 1000}
CHECK_DEFAULTS = {"commute_samples": 100, "commute_tolerance": 1e-6, "tau_max": 1.0,
                  "bracket_samples": 100, "bracket_tolerance": 1e-8, "sections_samples": 20,
                  "sections_tolerance": 1, "radius": 1}
SIMULATE_DEFAULTS = {"starts": 200, "margin": 2, "adversaries": ["const", "lookahead"],
                     "fineness": [50], "eps_diagonals": 1.5}


class ProblemFileError(ValueError):
    pass


@dataclass
class ProblemConfig:
    raw: dict
    problem: GameProblem
    aux: AuxiliarySystem
    spec: GridSpec
    solver: dict
    isaacs: dict
    checks: dict
    simulate: dict
    seed: int = 0
    explicit_aux: bool = True
    source: str | None = None


def _where(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate(doc) -> None:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ProblemFileError("; ".join(f"{_where(e)}: {e.message}" for e in errors[:5]))


def build(doc: dict, base_dir: str | None = None) -> ProblemConfig:
    validate(doc)
    names = tuple(doc["state"])
    n = len(names)
    dyn = doc["dynamics"]
    if len(dyn["f"]) != n:
        raise ProblemFileError(f"dynamics/f: expected {n} components, got {len(dyn['f'])}")
    cs = doc["control_sets"]
    try:
        P = sample_control_set(cs["P"])
        Q = sample_control_set(cs["Q"])
        u_dim, v_dim = dyn.get("u_dim", P.dim), dyn.get("v_dim", Q.dim)
        if (u_dim, v_dim) != (P.dim, Q.dim):
            raise ProblemFileError("dynamics: u_dim/v_dim disagree with the P/Q samples")
        f = parse_field(dyn["f"], FieldSignature(n, (("u", u_dim), ("v", v_dim)), names))
        spec = GridSpec(tuple(map(tuple, doc["grid"]["bounds"])), tuple(doc["grid"]["cells"]),
                        doc["grid"]["time_steps"], doc["horizon"])
        if spec.ndim != n:
            raise ProblemFileError(f"grid: {spec.ndim} axes for a {n}-dimensional state")
        aux_doc = doc.get("auxiliary")
        tgt = doc["target"]
        if aux_doc is not None:
            if "Omega" not in cs:
                raise ProblemFileError("control_sets/Omega is required with an auxiliary section")
            omega = sample_control_set(cs["Omega"])
            w_dim = aux_doc.get("omega_dim", omega.dim)
            if len(aux_doc["g"]) != n:
                raise ProblemFileError(f"auxiliary/g: expected {n} components")
            g = parse_field(aux_doc["g"], FieldSignature(n, ((OMEGA, w_dim),), names))
            aux = AuxiliarySystem(g, omega, TerminalSet.from_descriptor(aux_doc["F"]))
            explicit = True
        else:
            # a cylinder over F is the controllability set of g = 0
            F_doc = tgt.get("F", {"empty": True} if tgt["kind"] == "explicit" else None)
            if F_doc is None:
                raise ProblemFileError("target/F is required without an auxiliary section")
            g = parse_field(["0"] * n, FieldSignature(n, ((OMEGA, 1),), names))
            aux = AuxiliarySystem(g, sample_control_set({"points": [0.0]}),
                                  TerminalSet.from_descriptor(F_doc))
            explicit = False
        kind = tgt["kind"]
        if kind == "cylinder":
            target = Cylinder(TerminalSet.from_descriptor(tgt["F"]) if "F" in tgt else aux.F)
        elif kind == "controllability":
            if aux_doc is None:
                raise ProblemFileError("target kind 'controllability' needs an auxiliary section")
            target = Controllability(aux)
        else:
            if "path" not in tgt:
                raise ProblemFileError("target/path is required for kind 'explicit'")
            from .gridio import load_grid

            path = tgt["path"]
            if base_dir and not os.path.isabs(path):
                path = os.path.join(base_dir, path)
            grid = load_grid(path)
            if grid.spec != spec:
                raise ProblemFileError("target/path: grid does not match the problem grid")
            target = ExplicitGrid(grid)
        problem = GameProblem(f, P, Q, float(doc["horizon"]), target, doc.get("name", ""))
    except ProblemFileError:
        raise
    except (ValueError, KeyError) as exc:
        raise ProblemFileError(str(exc)) from exc
    return ProblemConfig(
        raw=doc, problem=problem, aux=aux, spec=spec,
        solver={**SOLVER_DEFAULTS, **doc.get("solver", {})},
        isaacs={**ISAACS_DEFAULTS, **doc.get("isaacs", {})},
        checks={**CHECK_DEFAULTS, **doc.get("checks", {})},
        simulate={**SIMULATE_DEFAULTS, **doc.get("simulate", {})},
        seed=int(doc.get("seed", 0)), explicit_aux=explicit,
    )


def load(path) -> ProblemConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    except OSError as exc:
        raise ProblemFileError(f"{path}: {exc.strerror}") from None
    cfg = build(doc, os.path.dirname(os.path.abspath(path)))
    cfg.source = os.fspath(path)
    return cfg


def packaged(name: str) -> ProblemConfig:
    """One of the problem files shipped in ``gamebridge/problems``."""
    ref = resources.files("gamebridge") / "problems" / f"{name}.json"
    with resources.as_file(ref) as p:
        return load(p)


def packaged_names() -> list[str]:
    root = resources.files("gamebridge") / "problems"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))
