"""JSON schemas for CLI configs and reports (field presence and types)."""

from __future__ import annotations

import jsonschema

NUM = {"type": "number"}
INT = {"type": "integer"}
STR = {"type": "string"}
BOOL = {"type": "boolean"}
NUM_LIST = {"type": "array", "items": NUM}


def _obj(required, props, extra=True):
    return {"type": "object", "required": list(required), "properties": props,
            "additionalProperties": extra}


BUBBLE = _obj(["lambda", "b", "x"], {
    "lambda": NUM, "b": {"oneOf": [NUM, {"const": "b_c"}]}, "x": NUM}, extra=False)

GRID_CONFIG = _obj(["x_min", "x_max"], {
    "x_min": NUM, "x_max": NUM, "n": INT, "h": NUM}, extra=False)

EVOLVE_CONFIG = _obj(["p", "t_end", "grid", "initial"], {
    "p": NUM,
    "t_end": NUM,
    "grid": GRID_CONFIG,
    "time": _obj([], {"dt": {"type": ["number", "null"]}, "safety": NUM, "cfl": NUM,
                      "dt_max": NUM}, extra=False),
    "stop": _obj([], {"min_scale": {"type": ["number", "null"]},
                      "grad_cap": {"type": ["number", "null"]}, "max_steps": INT},
                 extra=False),
    "sponge": _obj([], {"width": NUM, "strength": NUM}, extra=False),
    "sample_every": INT,
    "initial": {"oneOf": [
        _obj(["type"], {"type": {"const": "soliton"}, "c": NUM, "x0": NUM}, extra=False),
        _obj(["type", "bubbles"], {"type": {"const": "bubbles"},
                                    "bubbles": {"type": "array", "items": BUBBLE,
                                                "minItems": 1}}, extra=False),
        _obj(["type"], {"type": {"const": "airy"}, "amplitude": NUM, "mode": INT},
             extra=False),
    ]},
    "track": _obj([], {"rel_change": NUM, "functionals": BOOL}, extra=False),
}, extra=False)

SYNC_CONFIG = _obj([], {
    "p": NUM, "b": NUM_LIST, "lambda1": NUM, "separation": NUM, "h": NUM, "margin": NUM,
    "collapse": NUM, "model": {"enum": ["formal", "damped"]}, "b_c": NUM, "floor": NUM,
    "rel_tol": NUM, "brackets": {"type": "object",
                                  "additionalProperties": {"type": "array", "items": NUM,
                                                           "minItems": 2, "maxItems": 2}},
}, extra=False)

PLACE_CONFIG = _obj([], {
    "p": NUM, "b": NUM_LIST, "lambda1": NUM, "h": NUM, "margin": NUM, "collapse": NUM,
    "model": {"enum": ["formal", "damped"]}, "b_c": NUM, "floor": NUM, "theta": NUM,
    "max_iter": INT, "tol": NUM, "brackets": SYNC_CONFIG["properties"]["brackets"],
}, extra=False)

DERIVED = {"type": "object", "additionalProperties": _obj(
    ["value", "operation"], {"operation": STR})}

_REPORT_BASE = {"command": STR, "version": STR, "status": STR, "config": {"type": "object"},
                "derived": DERIVED, "files": {"type": "object",
                                              "additionalProperties": STR}}


def _report(command_props, required=()):
    props = dict(_REPORT_BASE)
    props.update(command_props)
    return _obj(["command", "version", "status", "config", "derived", "files", *required],
                props)


REPORTS = {
    "groundstate": _report({"checks": {"type": "object"}}, ["checks"]),
    "profile": _report({"solution": {"type": ["object", "null"]},
                        "curve": {"type": ["object", "null"]}}, ["solution"]),
    "evolve": _report({"run": _obj(["status", "t_final", "steps"], {
        "status": STR, "t_final": NUM, "steps": INT})}, ["run"]),
    "decompose": _report({"decomposition": _obj(["bubbles", "orthogonality"], {
        "bubbles": {"type": "array"}, "orthogonality": NUM_LIST})}, ["decomposition"]),
    "sync": _report({"result": _obj(["scales", "final_class", "history", "runner_calls"], {
        "scales": NUM_LIST, "final_class": STR, "history": {"type": "array"},
        "runner_calls": INT})}, ["result"]),
    "place": _report({"result": _obj(["initial_centers", "blowup_set", "residual",
                                      "iterations", "history"], {
        "initial_centers": NUM_LIST, "blowup_set": NUM_LIST, "residual": NUM,
        "iterations": INT, "history": {"type": "array"}})}, ["result"]),
}

CONFIGS = {"evolve": EVOLVE_CONFIG, "sync": SYNC_CONFIG, "place": PLACE_CONFIG}


def validate_report(command, report):
    jsonschema.validate(report, REPORTS[command])


def validate_config(command, config):
    jsonschema.validate(config, CONFIGS[command])
