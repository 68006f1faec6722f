"""Scenario files (JSON) and their validation."""

from __future__ import annotations

import json
import math
from pathlib import Path

import jsonschema

from qwglab.geometry import shapes_for_graph
from qwglab.graph import CurvatureProfile, Edge, MetricGraph, Vertex, validate_graph
from qwglab.lab import SweepConfig


class ScenarioError(ValueError):
    """Invalid scenario; the message names the offending field path."""


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}

_CURVATURE = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["zero", "constant", "bump"]},
        "value": _NUM,
        "center": _NUM,
        "half_width": _POS,
        "amplitude": _NUM,
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_GRAPH = {
    "type": "object",
    "properties": {
        "vertices": {
            "type": "array",
            "minItems": 2,
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "string"},
                    "pos": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                },
                "required": ["id", "pos"],
                "additionalProperties": False,
            },
        },
        "edges": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "string"},
                    "start": {"type": "string"},
                    "end": {"type": "string"},
                    "length": _POS,
                    "curvature": _CURVATURE,
                },
                "required": ["id", "start", "end", "length"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["vertices", "edges"],
    "additionalProperties": False,
}

_STAR = {
    "type": "object",
    "properties": {
        "lengths": {"type": "array", "items": _POS, "minItems": 2},
        "angles": {"type": "array", "items": _NUM},
    },
    "required": ["lengths"],
    "additionalProperties": False,
}

_SHAPE = {
    "type": "object",
    "properties": {
        "tau": {"type": "number", "minimum": 0},
        "d_attach": {"type": "number", "exclusiveMinimum": 1},
        "r_min": _POS,
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "qwglab scenario",
    "type": "object",
    "properties": {
        "kind": {"enum": ["sweep", "counterexample", "smallness"]},
        "graph": _GRAPH,
        "star": _STAR,
        "shapes": {"type": "object", "additionalProperties": _SHAPE},
        "counterexample": {
            "type": "object",
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": math.pi},
                "ell": _POS,
                "c": _POS,
            },
            "required": ["alpha", "ell", "c"],
            "additionalProperties": False,
        },
        "eps": {"type": "array", "items": _POS, "minItems": 1},
        "h_rule": _POS,
        "k": {"type": "integer", "minimum": 1},
        "tol": _POS,
        "shift": {"enum": ["exact", "mesh"]},
        "seed": {"type": "integer", "minimum": 0},
        "limit_intervals": {"type": "integer", "minimum": 8},
        "richardson": {"type": "boolean"},
        "extrapolate": {"type": "boolean"},
        "smallness_h": _POS,
        "workers": {"type": "integer", "minimum": 1},
    },
    "required": ["kind"],
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"kind": {"const": "sweep"}}}, "then": {"required": ["eps"], "oneOf": [{"required": ["graph"]}, {"required": ["star"]}]}},
        {"if": {"properties": {"kind": {"const": "counterexample"}}}, "then": {"required": ["eps", "counterexample"]}},
        {"if": {"properties": {"kind": {"const": "smallness"}}}, "then": {"oneOf": [{"required": ["graph"]}, {"required": ["star"]}]}},
    ],
}

DEFAULTS = {
    "h_rule": 16.0,
    "k": 3,
    "tol": 1e-8,
    "shift": "mesh",
    "seed": 0,
    "limit_intervals": 2000,
    "richardson": True,
    "extrapolate": False,
    "smallness_h": 0.05,
    "workers": 1,
    "shapes": {},
}


def _path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    return "/".join(parts) if parts else "<root>"


def validate(data: dict) -> dict:
    """Schema check plus the cross-field rules; returns data with defaults filled in."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_path(e)}: {e.message}" for e in errors]
        raise ScenarioError("invalid scenario:\n  " + "\n  ".join(lines))
    out = {**DEFAULTS, **data}
    eps = out.get("eps")
    if eps is not None and any(b >= a for a, b in zip(eps, eps[1:])):
        raise ScenarioError("eps: list must be strictly decreasing")
    return out


def load(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ScenarioError("<root>: scenario must be an object")
    return validate(data)


def curvature_from_dict(d) -> CurvatureProfile:
    if d is None or d["kind"] == "zero":
        return CurvatureProfile.zero()
    if d["kind"] == "constant":
        return CurvatureProfile.constant(d.get("value", 0.0))
    try:
        return CurvatureProfile.bump(d["center"], d["half_width"], d["amplitude"])
    except KeyError as exc:
        raise ScenarioError(f"curvature: bump needs {exc.args[0]}") from exc


def graph_from_scenario(s: dict) -> MetricGraph:
    if "star" in s:
        st = s["star"]
        angles = st.get("angles")
        if angles is not None and len(angles) != len(st["lengths"]):
            raise ScenarioError("star/angles: one angle per length required")
        g = MetricGraph.star(st["lengths"], angles)
    else:
        gd = s["graph"]
        verts = [Vertex(v["id"], tuple(float(x) for x in v["pos"])) for v in gd["vertices"]]
        edges = [
            Edge(e["id"], e["start"], e["end"], float(e["length"]), curvature_from_dict(e.get("curvature")))
            for e in gd["edges"]
        ]
        g = MetricGraph(verts, edges)
    validate_graph(g)
    return g


def sweep_config(s: dict) -> SweepConfig:
    g = graph_from_scenario(s)
    unknown = set(s["shapes"]) - {v.id for v in g.vertices}
    if unknown:
        raise ScenarioError(f"shapes: unknown vertices {sorted(unknown)}")
    shapes = shapes_for_graph(g, s["shapes"])
    return SweepConfig(
        graph=g,
        shapes=shapes,
        eps=list(s.get("eps", [])),
        k=s["k"],
        h_rule=s["h_rule"],
        shift=s["shift"],
        tol=s["tol"],
        seed=s["seed"],
        limit_intervals=s["limit_intervals"],
        richardson=s["richardson"],
        extrapolate=s["extrapolate"],
        smallness_h=s["smallness_h"],
        workers=s["workers"],
    )
