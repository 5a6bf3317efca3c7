"""Structural causal model container, topological ordering, forward sampling."""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import CycleDetected, UnknownVariable, ValidationError
from .expr import (
    Categorical,
    Expr,
    NoiseDistribution,
    compile_expr,
    is_discrete_expr,
    noise_role,
    parent_indices,
    uses_noise,
    validate_expr,
    value_set,
)

LABEL_TAGS = frozenset(
    {"state", "next_state", "action", "observation", "reward", "confounder", "terminal", "explain"}
)

Assignment = dict  # variable name -> float
Intervention = Mapping  # endogenous name -> forced value


@dataclass(frozen=True)
class ExogenousVar:
    name: str
    dist: NoiseDistribution


@dataclass(frozen=True)
class EndogenousVar:
    """Endogenous variable ``name := mechanism(parents, noise)``.

    ``noise`` names the exogenous variable feeding the ``Noise`` node; every
    endogenous variable owns exactly one.
    """

    name: str
    parents: tuple[str, ...]
    mechanism: Expr
    noise: str

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))


def topo_order(endogenous: Sequence[EndogenousVar]) -> list[str]:
    """Topological order with ties broken by declaration order.

    Raises:
        CycleDetected: if the parent graph has a cycle.
    """
    index = {v.name: i for i, v in enumerate(endogenous)}
    indeg = [0] * len(endogenous)
    kids: list[list[int]] = [[] for _ in endogenous]
    for i, v in enumerate(endogenous):
        for p in set(v.parents):
            if p in index:
                indeg[i] += 1
                kids[index[p]].append(i)
    heap = [i for i, d in enumerate(indeg) if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(endogenous[i].name)
        for k in kids[i]:
            indeg[k] -= 1
            if indeg[k] == 0:
                heapq.heappush(heap, k)
    if len(order) < len(endogenous):
        raise CycleDetected(_find_cycle(endogenous, set(order)))
    return order


def _find_cycle(endogenous, done: set) -> list[str]:
    parents = {v.name: [p for p in v.parents if p not in done] for v in endogenous if v.name not in done}
    start = next(iter(parents))
    seen: dict[str, int] = {}
    path = []
    node = start
    while node not in seen:
        seen[node] = len(path)
        path.append(node)
        node = next(p for p in parents[node] if p in parents)
    cyc = path[seen[node]:] + [node]
    return list(reversed(cyc))


def _as_floats(obj):
    """Numbers compare by value, so ``Gaussian(0, 1)`` matches ``Gaussian(0.0, 1.0)``."""
    if isinstance(obj, dict):
        return {k: _as_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_as_floats(v) for v in obj]
    if isinstance(obj, int) and not isinstance(obj, bool):
        return float(obj)
    return obj


class Scm:
    """Immutable structural causal model ⟨U, V, F, P(U)⟩.

    Args:
        exogenous: noise variables with their distributions.
        endogenous: variables with parents and mechanisms, in declaration order.
        labels: optional tags per variable name (see ``LABEL_TAGS``).
    """

    def __init__(
        self,
        exogenous: Iterable[ExogenousVar],
        endogenous: Iterable[EndogenousVar],
        labels: Mapping[str, Iterable[str]] | None = None,
    ):
        self.exogenous = tuple(exogenous)
        self.endogenous = tuple(endogenous)
        self.labels = {k: tuple(v) for k, v in (labels or {}).items()}
        self._validate()
        self.order = topo_order(self.endogenous)
        self._endo = {v.name: v for v in self.endogenous}
        self._exo = {u.name: u for u in self.exogenous}
        self._pos = {n: i for i, n in enumerate(self.order)}
        self._fn = {v.name: compile_expr(v.mechanism) for v in self.endogenous}
        self._dist = {v.name: self._exo[v.noise].dist for v in self.endogenous}
        self._cache: dict = {}

    # -- structure ---------------------------------------------------------

    def _validate(self):
        names = [u.name for u in self.exogenous] + [v.name for v in self.endogenous]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValidationError(f"duplicate variable names: {dup}")
        exo_names = {u.name for u in self.exogenous}
        endo_names = {v.name for v in self.endogenous}
        owners: dict[str, str] = {}
        for v in self.endogenous:
            if v.noise not in exo_names:
                raise ValidationError(f"{v.name}: noise {v.noise!r} is not an exogenous variable")
            if v.noise in owners:
                raise ValidationError(f"noise {v.noise!r} shared by {owners[v.noise]} and {v.name}")
            owners[v.noise] = v.name
            for p in v.parents:
                if p not in endo_names:
                    raise ValidationError(f"{v.name}: parent {p!r} is not an endogenous variable")
            validate_expr(v.mechanism, len(v.parents), v.name)
        orphans = exo_names - set(owners)
        if orphans:
            raise ValidationError(f"exogenous variables without an owner: {sorted(orphans)}")
        for name, tags in self.labels.items():
            if name not in endo_names:
                raise ValidationError(f"label on unknown endogenous variable {name!r}")
            bad = set(tags) - LABEL_TAGS
            if bad:
                raise ValidationError(f"unknown label tags {sorted(bad)} on {name}")

    def var(self, name: str) -> EndogenousVar:
        try:
            return self._endo[name]
        except KeyError:
            raise UnknownVariable(f"unknown endogenous variable {name!r}") from None

    def exo(self, name: str) -> ExogenousVar:
        try:
            return self._exo[name]
        except KeyError:
            raise UnknownVariable(f"unknown exogenous variable {name!r}") from None

    def is_endogenous(self, name: str) -> bool:
        return name in self._endo

    def noise_dist(self, name: str) -> NoiseDistribution:
        return self._dist[name]

    def with_label(self, tag: str) -> list[str]:
        return [v.name for v in self.endogenous if tag in self.labels.get(v.name, ())]

    def effective_parents(self, name: str) -> tuple[str, ...]:
        """Parents actually referenced by the mechanism."""
        key = ("eff_parents", name)
        if key not in self._cache:
            v = self._endo[name]
            idx = sorted(parent_indices(v.mechanism, len(v.parents)))
            self._cache[key] = tuple(dict.fromkeys(v.parents[i] for i in idx))
        return self._cache[key]

    def children_map(self) -> dict[str, list[str]]:
        key = ("children",)
        if key not in self._cache:
            kids: dict[str, list[str]] = {n: [] for n in self.order}
            for n in self.order:
                for p in self.effective_parents(n):
                    kids[p].append(n)
            self._cache[key] = kids
        return self._cache[key]

    def ancestors(self, targets: Iterable[str], cut: Iterable[str] = ()) -> set[str]:
        """Targets plus their ancestors, not expanding past ``cut`` variables."""
        cut = set(cut)
        out: set[str] = set()
        stack = list(targets)
        while stack:
            n = stack.pop()
            if n in out:
                continue
            out.add(n)
            if n not in cut:
                stack.extend(self.effective_parents(n))
        return out

    def descendants(self, source: str) -> set[str]:
        kids = self.children_map()
        out: set[str] = set()
        stack = [source]
        while stack:
            n = stack.pop()
            for k in kids[n]:
                if k not in out:
                    out.add(k)
                    stack.append(k)
        return out

    def has_path(self, source: str, target: str) -> bool:
        return source == target or target in self.descendants(source)

    def noise_role(self, name: str) -> str:
        key = ("role", name)
        if key not in self._cache:
            self._cache[key] = noise_role(self._endo[name].mechanism)
        return self._cache[key]

    def uses_noise(self, name: str) -> bool:
        return self.noise_role(name) != "none"

    def is_discrete(self, name: str) -> bool:
        key = ("discrete",)
        if key not in self._cache:
            flags: dict[str, bool] = {}
            for n in self.order:
                v = self._endo[n]
                flags[n] = is_discrete_expr(
                    v.mechanism,
                    [flags[p] for p in v.parents],
                    isinstance(self._dist[n], Categorical),
                )
            self._cache[key] = flags
        return self._cache[key][name]

    def domain(self, name: str) -> list[float] | None:
        """Finite value set of a discrete variable, or None."""
        key = ("domains",)
        if key not in self._cache:
            sets: dict[str, set | None] = {}
            for n in self.order:
                v = self._endo[n]
                dist = self._dist[n]
                nset = {x for x, _ in dist.support()} if isinstance(dist, Categorical) else None
                if not uses_noise(v.mechanism):
                    nset = set()
                sets[n] = value_set(v.mechanism, [sets[p] for p in v.parents], nset)
            self._cache[key] = sets
        s = self._cache[key][name]
        return None if s is None else sorted(s)

    # -- identity ----------------------------------------------------------

    def to_dict(self) -> dict:
        from .io import scm_to_dict

        return scm_to_dict(self)

    @property
    def fingerprint(self) -> str:
        key = ("fingerprint",)
        if key not in self._cache:
            blob = json.dumps(_as_floats(self.to_dict()), sort_keys=True, separators=(",", ":"))
            self._cache[key] = hashlib.sha256(blob.encode()).hexdigest()[:16]
        return self._cache[key]

    def __eq__(self, other):
        return isinstance(other, Scm) and self.fingerprint == other.fingerprint

    def __hash__(self):
        return hash(self.fingerprint)

    def __repr__(self):
        return f"Scm(|U|={len(self.exogenous)}, |V|={len(self.endogenous)}, id={self.fingerprint})"

    # -- evaluation --------------------------------------------------------

    def check_intervention(self, intervention: Intervention | None) -> dict:
        if not intervention:
            return {}
        out = {}
        for name, value in intervention.items():
            if name not in self._endo:
                raise UnknownVariable(f"intervention target {name!r} is not endogenous")
            out[name] = float(value)
        return out

    def program(self, targets: Iterable[str] | None, fixed: Iterable[str]) -> tuple:
        """Ordered (name, fn, parents, noise) steps needed for ``targets``.

        Variables in ``fixed`` are treated as given and not computed.
        """
        fixed = frozenset(fixed)
        tkey = None if targets is None else frozenset(targets)
        key = ("program", tkey, fixed)
        prog = self._cache.get(key)
        if prog is None:
            need = set(self.order) if tkey is None else self.ancestors(tkey, cut=fixed)
            prog = tuple(
                (n, self._fn[n], self._endo[n].parents, self._endo[n].noise)
                for n in self.order
                if n in need and n not in fixed
            )
            self._cache[key] = prog
        return prog

    def evaluate(
        self,
        noise: Mapping[str, float],
        intervention: Intervention | None = None,
        targets: Iterable[str] | None = None,
    ) -> dict:
        """Deterministically propagate exogenous values through the mechanisms.

        Intervened variables take their forced value; their mechanisms are
        not evaluated (graph mutilation).
        """
        values = dict(intervention) if intervention else {}
        for name, fn, parents, nz in self.program(targets, values.keys()):
            values[name] = fn(tuple(values[p] for p in parents), noise.get(nz, 0.0))
        return values

    def draw_noise(self, rng: np.random.Generator) -> dict:
        return {u.name: u.dist.draw(rng) for u in self.exogenous}

    def sample(self, rng: np.random.Generator, intervention: Intervention | None = None) -> Assignment:
        do = self.check_intervention(intervention)
        noise = self.draw_noise(rng)
        out = dict(noise)
        out.update(self.evaluate(noise, do))
        return out

    def intervene(self, intervention: Intervention) -> "Scm":
        """Mutilated copy: targets become constants with no parents."""
        from .expr import Const

        do = self.check_intervention(intervention)
        endo = [
            EndogenousVar(v.name, (), Const(do[v.name]), v.noise) if v.name in do else v
            for v in self.endogenous
        ]
        return Scm(self.exogenous, endo, self.labels)


def sample(scm: Scm, rng: np.random.Generator, intervention: Intervention | None = None) -> Assignment:
    return scm.sample(rng, intervention)
