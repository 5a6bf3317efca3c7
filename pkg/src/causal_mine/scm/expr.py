"""Noise distributions and the structural-mechanism expression grammar.

Mechanisms are small expression trees rather than arbitrary callables so that
models can be serialized, compared structurally, and analysed for
invertibility in their noise term (needed for exact abduction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from ..errors import ValidationError

PROB_TOL = 1e-9


# --------------------------------------------------------------------------
# Noise distributions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    mean: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if not (self.variance >= 0.0) or not math.isfinite(self.variance):
            raise ValidationError(f"Gaussian variance must be >= 0, got {self.variance}")
        if not math.isfinite(self.mean):
            raise ValidationError("Gaussian mean must be finite")

    @property
    def degenerate(self) -> bool:
        return self.variance == 0.0

    def draw(self, rng: np.random.Generator) -> float:
        if self.variance == 0.0:
            return float(self.mean)
        return float(self.mean + math.sqrt(self.variance) * rng.standard_normal())

    def logpdf(self, x: float) -> float:
        if self.variance == 0.0:
            return 0.0 if x == self.mean else -math.inf
        z = x - self.mean
        return -0.5 * (z * z / self.variance + math.log(2.0 * math.pi * self.variance))


@dataclass(frozen=True)
class Categorical:
    """Distribution over the integers ``0 .. len(probabilities) - 1``."""

    probabilities: tuple[float, ...]
    _cdf: np.ndarray = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probabilities)
        object.__setattr__(self, "probabilities", probs)
        if not probs:
            raise ValidationError("Categorical needs at least one outcome")
        if any(p < 0.0 or p > 1.0 for p in probs):
            raise ValidationError(f"Categorical probabilities out of [0,1]: {probs}")
        if abs(math.fsum(probs) - 1.0) > PROB_TOL:
            raise ValidationError(f"Categorical probabilities sum to {math.fsum(probs)}")
        object.__setattr__(self, "_cdf", np.cumsum(probs))

    @property
    def degenerate(self) -> bool:
        return sum(1 for p in self.probabilities if p > 0.0) == 1

    @property
    def mean(self) -> float:
        return float(sum(i * p for i, p in enumerate(self.probabilities)))

    def support(self) -> list[tuple[float, float]]:
        """(value, probability) pairs with positive probability."""
        return [(float(i), p) for i, p in enumerate(self.probabilities) if p > 0.0]

    def draw(self, rng: np.random.Generator) -> float:
        idx = int(np.searchsorted(self._cdf, rng.random() * self._cdf[-1], side="right"))
        idx = min(idx, len(self.probabilities) - 1)
        while self.probabilities[idx] == 0.0:  # guard against landing on a zero bin edge
            idx -= 1
        return float(idx)

    def logpmf(self, x: float) -> float:
        i = int(round(x))
        if i != x or i < 0 or i >= len(self.probabilities) or self.probabilities[i] == 0.0:
            return -math.inf
        return math.log(self.probabilities[i])


NoiseDistribution = Union[Gaussian, Categorical]


# --------------------------------------------------------------------------
# Expressions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Parent:
    index: int


@dataclass(frozen=True)
class Noise:
    pass


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Mul:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Linear:
    weights: tuple[float, ...]
    bias: float = 0.0
    noise_coef: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))


@dataclass(frozen=True)
class Gate:
    """``then`` when ``condition > threshold`` else ``else_``."""

    condition: "Expr"
    threshold: float
    then: "Expr"
    else_: "Expr"


@dataclass(frozen=True)
class Table:
    """Lookup on a tuple of parent values.

    ``keys`` lists the parent indices forming the lookup key (all parents when
    None). Missing keys evaluate to ``default``.
    """

    entries: tuple[tuple[tuple[float, ...], float], ...]
    default: float = 0.0
    keys: tuple[int, ...] | None = None
    _lookup: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        entries = tuple(
            (tuple(float(k) for k in key), float(val)) for key, val in self.entries
        )
        object.__setattr__(self, "entries", entries)
        if self.keys is not None:
            object.__setattr__(self, "keys", tuple(int(k) for k in self.keys))
        lookup = dict(entries)
        if len(lookup) != len(entries):
            raise ValidationError("Table has duplicate keys")
        object.__setattr__(self, "_lookup", lookup)

    @classmethod
    def from_dict(cls, mapping: Mapping, default: float = 0.0, keys: Sequence[int] | None = None):
        items = []
        for key, val in mapping.items():
            if not isinstance(key, tuple):
                key = (key,)
            items.append((key, val))
        items.sort()
        return cls(tuple(items), default, None if keys is None else tuple(keys))

    def lookup(self, key: tuple) -> float:
        return self._lookup.get(key, self.default)


Expr = Union[Const, Parent, Noise, Add, Mul, Linear, Gate, Table]


def children(expr: Expr) -> tuple:
    if isinstance(expr, (Add, Mul)):
        return (expr.left, expr.right)
    if isinstance(expr, Gate):
        return (expr.condition, expr.then, expr.else_)
    return ()


def uses_noise(expr: Expr) -> bool:
    if isinstance(expr, Noise):
        return True
    if isinstance(expr, Linear):
        return expr.noise_coef != 0.0
    return any(uses_noise(c) for c in children(expr))


def parent_indices(expr: Expr, n_parents: int) -> set[int]:
    if isinstance(expr, Parent):
        return {expr.index}
    if isinstance(expr, Linear):
        return set(range(len(expr.weights)))
    if isinstance(expr, Table):
        return set(expr.keys) if expr.keys is not None else set(range(n_parents))
    out: set[int] = set()
    for c in children(expr):
        out |= parent_indices(c, n_parents)
    return out


def noise_role(expr: Expr) -> str:
    """Classify how the own-noise input enters: 'none', 'affine' or 'nonlinear'.

    'affine' is structural: a Mul by a parent value may still have a zero
    coefficient at evaluation time.
    """
    if not uses_noise(expr):
        return "none"
    if isinstance(expr, (Noise, Linear)):
        return "affine"
    if isinstance(expr, Add):
        roles = {noise_role(expr.left), noise_role(expr.right)}
        return "nonlinear" if "nonlinear" in roles else "affine"
    if isinstance(expr, Mul):
        if uses_noise(expr.left) and uses_noise(expr.right):
            return "nonlinear"
        inner = expr.left if uses_noise(expr.left) else expr.right
        return noise_role(inner)
    if isinstance(expr, Gate):
        if uses_noise(expr.condition):
            return "nonlinear"
        roles = {noise_role(expr.then), noise_role(expr.else_)}
        return "nonlinear" if "nonlinear" in roles else "affine"
    return "nonlinear"


def validate_expr(expr: Expr, n_parents: int, owner: str) -> None:
    stack = [expr]
    while stack:
        e = stack.pop()
        if isinstance(e, Parent):
            if not 0 <= e.index < n_parents:
                raise ValidationError(f"{owner}: Parent({e.index}) out of range")
        elif isinstance(e, Linear):
            if len(e.weights) != n_parents:
                raise ValidationError(
                    f"{owner}: Linear has {len(e.weights)} weights for {n_parents} parents"
                )
        elif isinstance(e, Table):
            idx = e.keys if e.keys is not None else tuple(range(n_parents))
            if any(not 0 <= i < n_parents for i in idx):
                raise ValidationError(f"{owner}: Table key index out of range")
            if any(len(k) != len(idx) for k, _ in e.entries):
                raise ValidationError(f"{owner}: Table key arity mismatch")
        elif not isinstance(e, (Const, Noise, Add, Mul, Gate)):
            raise ValidationError(f"{owner}: unknown expression node {e!r}")
        stack.extend(children(e))


# --------------------------------------------------------------------------
# Compilation to closures
# --------------------------------------------------------------------------

Compiled = Callable[[tuple, float], float]


def compile_expr(expr: Expr) -> Compiled:
    """Compile an expression into ``f(parent_values, noise) -> float``."""
    if isinstance(expr, Const):
        v = float(expr.value)
        return lambda p, u: v
    if isinstance(expr, Parent):
        i = expr.index
        return lambda p, u: p[i]
    if isinstance(expr, Noise):
        return lambda p, u: u
    if isinstance(expr, Add):
        fl, fr = compile_expr(expr.left), compile_expr(expr.right)
        return lambda p, u: fl(p, u) + fr(p, u)
    if isinstance(expr, Mul):
        fl, fr = compile_expr(expr.left), compile_expr(expr.right)
        return lambda p, u: fl(p, u) * fr(p, u)
    if isinstance(expr, Linear):
        w, b, c = expr.weights, expr.bias, expr.noise_coef
        if c == 0.0:
            return lambda p, u: b + sum(wi * pi for wi, pi in zip(w, p))
        return lambda p, u: b + c * u + sum(wi * pi for wi, pi in zip(w, p))
    if isinstance(expr, Gate):
        fc, ft, fe = compile_expr(expr.condition), compile_expr(expr.then), compile_expr(expr.else_)
        thr = float(expr.threshold)
        return lambda p, u: ft(p, u) if fc(p, u) > thr else fe(p, u)
    if isinstance(expr, Table):
        lookup, default = expr._lookup, expr.default
        if expr.keys is None:
            return lambda p, u: lookup.get(tuple(p), default)
        keys = expr.keys
        if len(keys) == 1:
            k0 = keys[0]
            return lambda p, u: lookup.get((p[k0],), default)
        return lambda p, u: lookup.get(tuple(p[k] for k in keys), default)
    raise ValidationError(f"cannot compile {expr!r}")


# --------------------------------------------------------------------------
# Affine forms over unknown Gaussian noise symbols
# --------------------------------------------------------------------------


class NonAffine(Exception):
    """Raised when an expression is not affine in the unknown symbols."""


class Aff:
    """``const + sum(coef[s] * s)`` over named noise symbols."""

    __slots__ = ("const", "coefs")

    def __init__(self, const: float = 0.0, coefs: dict | None = None):
        self.const = float(const)
        self.coefs = coefs or {}

    @property
    def is_const(self) -> bool:
        return not self.coefs

    def __add__(self, other: "Aff") -> "Aff":
        coefs = dict(self.coefs)
        for k, v in other.coefs.items():
            coefs[k] = coefs.get(k, 0.0) + v
        return Aff(self.const + other.const, {k: v for k, v in coefs.items() if v != 0.0})

    def scale(self, s: float) -> "Aff":
        if s == 0.0:
            return Aff(0.0)
        return Aff(self.const * s, {k: v * s for k, v in self.coefs.items()})


def affine(expr: Expr, parents: Sequence[Aff], noise: Aff) -> Aff:
    if isinstance(expr, Const):
        return Aff(expr.value)
    if isinstance(expr, Parent):
        return parents[expr.index]
    if isinstance(expr, Noise):
        return noise
    if isinstance(expr, Add):
        return affine(expr.left, parents, noise) + affine(expr.right, parents, noise)
    if isinstance(expr, Mul):
        left = affine(expr.left, parents, noise)
        right = affine(expr.right, parents, noise)
        if left.is_const:
            return right.scale(left.const)
        if right.is_const:
            return left.scale(right.const)
        raise NonAffine("product of two unknowns")
    if isinstance(expr, Linear):
        out = Aff(expr.bias)
        for w, pf in zip(expr.weights, parents):
            if w != 0.0:
                out = out + pf.scale(w)
        if expr.noise_coef != 0.0:
            out = out + noise.scale(expr.noise_coef)
        return out
    if isinstance(expr, Gate):
        cond = affine(expr.condition, parents, noise)
        if not cond.is_const:
            raise NonAffine("gate on an unknown")
        branch = expr.then if cond.const > expr.threshold else expr.else_
        return affine(branch, parents, noise)
    if isinstance(expr, Table):
        idx = expr.keys if expr.keys is not None else range(len(parents))
        key = []
        for i in idx:
            if not parents[i].is_const:
                raise NonAffine("table lookup on an unknown")
            key.append(parents[i].const)
        return Aff(expr.lookup(tuple(key)))
    raise NonAffine(f"unsupported node {expr!r}")


def is_discrete_expr(expr: Expr, parent_discrete: Sequence[bool], noise_discrete: bool) -> bool:
    """True when the expression can only produce values from a finite set."""
    if isinstance(expr, (Const, Table)):
        return True
    if isinstance(expr, Parent):
        return parent_discrete[expr.index]
    if isinstance(expr, Noise):
        return noise_discrete
    if isinstance(expr, (Add, Mul)):
        return is_discrete_expr(expr.left, parent_discrete, noise_discrete) and is_discrete_expr(
            expr.right, parent_discrete, noise_discrete
        )
    if isinstance(expr, Linear):
        ok = all(d or w == 0.0 for d, w in zip(parent_discrete, expr.weights))
        return ok and (expr.noise_coef == 0.0 or noise_discrete)
    if isinstance(expr, Gate):
        return is_discrete_expr(expr.then, parent_discrete, noise_discrete) and is_discrete_expr(
            expr.else_, parent_discrete, noise_discrete
        )
    return False


def value_set(expr: Expr, parent_sets: Sequence[set | None], noise_set: set | None, cap: int = 256):
    """Finite set of values the expression can take, or None if unbounded."""
    if isinstance(expr, Const):
        return {float(expr.value)}
    if isinstance(expr, Parent):
        return parent_sets[expr.index]
    if isinstance(expr, Noise):
        return noise_set
    if isinstance(expr, Table):
        return {v for _, v in expr.entries} | {float(expr.default)}
    if isinstance(expr, Gate):
        a = value_set(expr.then, parent_sets, noise_set, cap)
        b = value_set(expr.else_, parent_sets, noise_set, cap)
        return None if a is None or b is None else a | b
    if isinstance(expr, (Add, Mul)):
        a = value_set(expr.left, parent_sets, noise_set, cap)
        b = value_set(expr.right, parent_sets, noise_set, cap)
        if a is None or b is None or len(a) * len(b) > cap:
            return None
        if isinstance(expr, Add):
            return {x + y for x in a for y in b}
        return {x * y for x in a for y in b}
    if isinstance(expr, Linear):
        out = {float(expr.bias)}
        terms = [(w, parent_sets[i]) for i, w in enumerate(expr.weights) if w != 0.0]
        if expr.noise_coef != 0.0:
            terms.append((expr.noise_coef, noise_set))
        for w, s in terms:
            if s is None or len(out) * len(s) > cap:
                return None
            out = {o + w * x for o in out for x in s}
        return out
    return None
