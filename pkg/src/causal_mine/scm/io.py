"""JSON (de)serialization of SCMs."""

from __future__ import annotations

import json

from ..errors import ParseError
from .expr import Add, Categorical, Const, Gate, Gaussian, Linear, Mul, Noise, Parent, Table
from .model import EndogenousVar, ExogenousVar, Scm


def expr_to_dict(e) -> dict:
    if isinstance(e, Const):
        return {"op": "const", "value": e.value}
    if isinstance(e, Parent):
        return {"op": "parent", "index": e.index}
    if isinstance(e, Noise):
        return {"op": "noise"}
    if isinstance(e, Add):
        return {"op": "add", "args": [expr_to_dict(e.left), expr_to_dict(e.right)]}
    if isinstance(e, Mul):
        return {"op": "mul", "args": [expr_to_dict(e.left), expr_to_dict(e.right)]}
    if isinstance(e, Linear):
        return {"op": "linear", "weights": list(e.weights), "bias": e.bias, "noise_coef": e.noise_coef}
    if isinstance(e, Gate):
        return {
            "op": "gate",
            "threshold": e.threshold,
            "args": [expr_to_dict(e.condition), expr_to_dict(e.then), expr_to_dict(e.else_)],
        }
    if isinstance(e, Table):
        return {
            "op": "table",
            "entries": [[list(k), v] for k, v in e.entries],
            "default": e.default,
            "keys": None if e.keys is None else list(e.keys),
        }
    raise TypeError(f"not an expression: {e!r}")


def expr_from_dict(d: dict):
    try:
        op = d["op"]
        if op == "const":
            return Const(float(d["value"]))
        if op == "parent":
            return Parent(int(d["index"]))
        if op == "noise":
            return Noise()
        if op in ("add", "mul"):
            left, right = (expr_from_dict(a) for a in d["args"])
            return Add(left, right) if op == "add" else Mul(left, right)
        if op == "linear":
            return Linear(tuple(d["weights"]), float(d.get("bias", 0.0)), float(d.get("noise_coef", 0.0)))
        if op == "gate":
            cond, then, other = (expr_from_dict(a) for a in d["args"])
            return Gate(cond, float(d["threshold"]), then, other)
        if op == "table":
            keys = d.get("keys")
            return Table(
                tuple((tuple(k), v) for k, v in d["entries"]),
                float(d.get("default", 0.0)),
                None if keys is None else tuple(keys),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed expression {d!r}: {exc}") from exc
    raise ParseError(f"unknown expression op {d.get('op')!r}")


def dist_to_dict(dist) -> dict:
    if isinstance(dist, Gaussian):
        return {"kind": "gaussian", "mean": dist.mean, "variance": dist.variance}
    return {"kind": "categorical", "probabilities": list(dist.probabilities)}


def dist_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "gaussian":
        return Gaussian(float(d["mean"]), float(d["variance"]))
    if kind == "categorical":
        return Categorical(tuple(d["probabilities"]))
    raise ParseError(f"unknown distribution kind {kind!r}")


def scm_to_dict(scm: Scm) -> dict:
    return {
        "exogenous": [{"name": u.name, "dist": dist_to_dict(u.dist)} for u in scm.exogenous],
        "endogenous": [
            {
                "name": v.name,
                "parents": list(v.parents),
                "noise": v.noise,
                "mechanism": expr_to_dict(v.mechanism),
            }
            for v in scm.endogenous
        ],
        "labels": {k: list(v) for k, v in scm.labels.items()},
    }


def scm_from_dict(d: dict) -> Scm:
    try:
        exo = [ExogenousVar(u["name"], dist_from_dict(u["dist"])) for u in d["exogenous"]]
        endo = [
            EndogenousVar(v["name"], tuple(v["parents"]), expr_from_dict(v["mechanism"]), v["noise"])
            for v in d["endogenous"]
        ]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed SCM document: {exc}") from exc
    return Scm(exo, endo, d.get("labels") or {})


def dumps(scm: Scm, indent: int | None = None) -> str:
    return json.dumps(scm_to_dict(scm), indent=indent, sort_keys=True)


def loads(text: str) -> Scm:
    try:
        return scm_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
