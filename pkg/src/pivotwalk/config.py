"""Experiment configuration: JSON schema, diagnostics and wiring into model objects."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .contraction import LEDGER_FIELDS, ConstantLedger
from .errors import UsageError
from .space import FreeGroupTree, SpaceBackend, make_backend

EXPERIMENTS = ("calibrate", "schottky", "pivotal-exact", "escape-rate", "lower-tail", "deviation",
               "clt", "berry", "lil", "tracking", "paired-pivot")

_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_NUMBER = {"type": ["number", "string"]}
_INT_LIST = {"type": "array", "items": _NONNEG_INT, "minItems": 1}

EXPERIMENT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name"],
    "properties": {
        "name": {"enum": list(EXPERIMENTS)},
        "n": _NONNEG_INT,
        "n_list": _INT_LIST,
        "horizon": _POS_INT,
        "samples": _POS_INT,
        "L": {"type": "number", "minimum": 0},
        "p": {"type": "number", "exclusiveMinimum": 0},
        "basepoints": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "exact": {"type": "boolean"},
        "two_sided": {"type": "boolean"},
        "instances": {"type": "array", "items": {"type": "object", "additionalProperties": False,
                                                  "properties": {"w": {"type": "array"}, "v": {"type": "array"}}}},
        "seed": _NONNEG_INT,
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["backend", "measure", "experiments", "seed"],
    "properties": {
        "backend": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["tree", "hyperbolic", "tree-x-line"]},
                "rank": _POS_INT,
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "resolution": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "measure": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["simple"],
                 "properties": {"simple": {"type": "object", "additionalProperties": False,
                                           "properties": {"laziness": _NUMBER}}}},
                {"type": "object", "additionalProperties": False, "required": ["table"],
                 "properties": {"table": {"type": "array", "minItems": 1,
                                          "items": {"type": "array", "minItems": 2, "maxItems": 2}}}},
            ],
        },
        "schottky": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "generators": {"type": "array", "minItems": 2, "maxItems": 2},
                "target_size": _POS_INT,
                "M0": _POS_INT,
            },
        },
        "ledger": {
            "oneOf": [
                {"const": "calibrate"},
                {"type": "object", "additionalProperties": False, "required": ["K0"],
                 "properties": {k: {"type": "number"} for k in LEDGER_FIELDS}},
            ],
        },
        "experiments": {"type": "array", "items": EXPERIMENT_SCHEMA},
        "seed": _NONNEG_INT,
        "workers": _POS_INT,
        "output": {"type": "string"},
        "dump_paths": {"type": "boolean"},
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" or "warning"
    where: str
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.where}: {self.message}"


def load_config(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc


def schema_errors(config) -> list[Diagnostic]:
    out = []
    for err in sorted(_VALIDATOR.iter_errors(config), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        out.append(Diagnostic("error", where, err.message))
    return out


def diagnose(config) -> list[Diagnostic]:
    """All schema violations, followed by semantic errors and warnings."""
    out = schema_errors(config)
    if out:
        return out
    try:
        backend = make_backend(config["backend"])
        build_measure(backend, config["measure"])
    except (UsageError, ValueError, TypeError) as exc:
        return [Diagnostic("error", "measure", str(exc))]
    ledger = config.get("ledger")
    if isinstance(ledger, dict):
        try:
            errors, warns = ConstantLedger.from_dict(ledger).problems()
        except (UsageError, TypeError) as exc:
            errors, warns = [str(exc)], []
        out += [Diagnostic("error", "ledger", m) for m in errors]
        out += [Diagnostic("warning", "ledger", m) for m in warns]
    for j, exp in enumerate(config["experiments"]):
        where = f"experiments/{j}"
        name = exp["name"]
        if name in ("deviation", "tracking") and not isinstance(backend, FreeGroupTree):
            out.append(Diagnostic("error", where, f"{name} is implemented for the tree backend only"))
        if name == "pivotal-exact" and exp.get("n", 1) > 3:
            out.append(Diagnostic("warning", where, "exhaustive enumeration beyond n = 3 is very large"))
        if name == "lower-tail" and "L" not in exp:
            out.append(Diagnostic("error", where, "lower-tail needs L"))
        if name in ("escape-rate", "clt", "lil", "berry", "lower-tail", "deviation", "tracking") and "samples" not in exp:
            out.append(Diagnostic("error", where, f"{name} needs samples"))
    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    """Hash of the resolved configuration, ignoring where and how fast it runs."""
    body = {k: v for k, v in resolved(config).items() if k not in ("output", "workers")}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()[:16]


def build_measure(backend: SpaceBackend, spec: dict):
    from .walk import StepMeasure

    if "simple" in spec:
        if not isinstance(backend, FreeGroupTree):
            raise UsageError("the simple measure is defined on the tree backend")
        return StepMeasure.simple(backend, spec["simple"].get("laziness", 0))
    return StepMeasure.from_table(backend, spec["table"])


def resolved(config: dict, output: str | None = None) -> dict:
    """Copy with defaults filled in."""
    cfg = copy.deepcopy(config)
    cfg.setdefault("workers", 1)
    cfg.setdefault("dump_paths", False)
    cfg.setdefault("schottky", {})
    cfg["schottky"].setdefault("generators", ["a", "b"])
    cfg["schottky"].setdefault("target_size", 8)
    cfg.setdefault("ledger", "calibrate")
    if output is not None:
        cfg["output"] = output
    cfg.setdefault("output", "results")
    return cfg
