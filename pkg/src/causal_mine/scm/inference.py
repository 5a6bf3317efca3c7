"""Likelihood evaluation, abduction and twin-world counterfactuals.

Evidence is split into independent components: unobserved variables are
grouped by the observed variables whose values they jointly influence,
with observed and intervened variables acting as cuts. Each component is
handled exactly when possible (enumeration of categorical noises combined
with closed-form Gaussian conditioning over affine mechanisms) and
otherwise by likelihood-weighted importance sampling from the prior.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.special import logsumexp

from ..errors import DegenerateEvidence, UnknownVariable
from .expr import Aff, Categorical, Gaussian, NonAffine, affine
from .model import Scm

DEFAULT_BANDWIDTH = 0.1
ENUM_LIMIT = 4096
LOG_2PI = math.log(2.0 * math.pi)


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-9 * max(1.0, abs(b))


def _default_rng(rng):
    return rng if rng is not None else np.random.default_rng(0)


# --------------------------------------------------------------------------
# Evidence plan
# --------------------------------------------------------------------------


@dataclass
class _Component:
    unknown: list[str]
    observed: list[str]
    order: list[str]


@dataclass
class _Plan:
    evidence: dict
    do: dict
    known: dict
    components: list[_Component]
    free: list[str]  # variables whose noise keeps its prior
    impossible: bool = False


def _placeholder(dist) -> float:
    if isinstance(dist, Gaussian):
        return float(dist.mean)
    return dist.support()[0][0]


def _is_fixed_noise(scm: Scm, name: str, do: Mapping) -> bool:
    dist = scm.noise_dist(name)
    return name in do or not scm.uses_noise(name) or dist.degenerate


def _build_plan(scm: Scm, evidence: Mapping, intervention: Mapping | None) -> _Plan:
    do = scm.check_intervention(intervention)
    ev = {}
    impossible = False
    for name, value in evidence.items():
        if not scm.is_endogenous(name):
            raise UnknownVariable(f"evidence on {name!r}: not an endogenous variable")
        value = float(value)
        if name in do:
            impossible |= not _close(do[name], value)
            continue
        ev[name] = value

    cache_key = ("plan", frozenset(ev), frozenset(do))
    skeleton = scm._cache.get(cache_key)
    if skeleton is None:
        skeleton = _plan_skeleton(scm, set(ev), set(do))
        scm._cache[cache_key] = skeleton
    determined_order, components, free = skeleton

    known = dict(do)
    known.update(ev)
    for n in determined_order:
        v = scm.var(n)
        pv = tuple(known.get(p, 0.0) for p in v.parents)
        val = scm._fn[n](pv, _placeholder(scm.noise_dist(n)))
        if n in ev:
            if not _close(val, ev[n]):
                impossible = True
        else:
            known[n] = val
    return _Plan(ev, do, known, components, free, impossible)


def _plan_skeleton(scm: Scm, ev: set, do: set):
    relevant = scm.ancestors(ev, cut=do)
    known = set(ev) | set(do)
    determined_order = []
    for n in scm.order:
        if n not in relevant or n in do:
            continue
        if not scm.uses_noise(n) or scm.noise_dist(n).degenerate:
            if all(p in known for p in scm.effective_parents(n)):
                determined_order.append(n)
                known.add(n)
    unknown = [n for n in scm.order if n in relevant and n not in known]
    unknown_set = set(unknown)

    # observed vars that are not fully determined by known parents and noise
    closed = {n for n in determined_order if n in ev}
    parent_uf = {n: n for n in unknown}

    def find(x):
        while parent_uf[x] != x:
            parent_uf[x] = parent_uf[parent_uf[x]]
            x = parent_uf[x]
        return x

    obs_reach: dict[str, set] = {}
    for n in scm.order:
        if n not in ev or n in closed:
            continue
        reach: set = set()
        stack = [p for p in scm.effective_parents(n) if p in unknown_set]
        while stack:
            m = stack.pop()
            if m in reach:
                continue
            reach.add(m)
            stack.extend(p for p in scm.effective_parents(m) if p in unknown_set)
        obs_reach[n] = reach
        members = list(reach)
        for m in members[1:]:
            ra, rb = find(members[0]), find(m)
            if ra != rb:
                parent_uf[rb] = ra

    groups: dict[str, _Component] = {}
    components: list[_Component] = []
    for n in unknown:
        root = find(n)
        if root not in groups:
            groups[root] = _Component([], [], [])
            components.append(groups[root])
        groups[root].unknown.append(n)
    for n, reach in obs_reach.items():
        if reach:
            groups[find(next(iter(reach)))].observed.append(n)
        else:
            components.append(_Component([], [n], []))
    pos = scm._pos
    for c in components:
        c.order = sorted(c.unknown + c.observed, key=pos.__getitem__)
        c.observed.sort(key=pos.__getitem__)
    in_comp = {n for c in components for n in c.order}
    free = [n for n in scm.order if n not in in_comp]
    return determined_order, components, free


# --------------------------------------------------------------------------
# Exact component evaluation
# --------------------------------------------------------------------------


@dataclass
class _Combo:
    logw: float
    fixed: dict  # noise name -> value (enumerated categoricals)
    cat_post: dict  # noise name -> list[(value, prob)] for observed categoricals
    symbols: list
    mean: np.ndarray
    cov: np.ndarray

    @property
    def n_support(self) -> int:
        out = 1
        for lst in self.cat_post.values():
            out *= len(lst)
        return out

    @property
    def has_variance(self) -> bool:
        return self.cov.size > 0 and float(np.max(np.abs(self.cov))) > 1e-12


@dataclass
class _ExactResult:
    combos: list
    log_z: float

    @property
    def probs(self) -> np.ndarray:
        lw = np.array([c.logw for c in self.combos])
        return np.exp(lw - self.log_z)


def _gaussian_rows(rows, symbols):
    """Log density of row values and Gaussian posterior over symbols."""
    names = list(symbols)
    m = np.array([symbols[s][0] for s in names])
    s = np.array([symbols[s][1] for s in names])
    if not rows:
        return 0.0, names, m, np.diag(s)
    idx = {n: i for i, n in enumerate(names)}
    W = np.zeros((len(rows), len(names)))
    c = np.empty(len(rows))
    y = np.empty(len(rows))
    for r, (form, val) in enumerate(rows):
        c[r] = form.const
        y[r] = val
        for k, coef in form.coefs.items():
            W[r, idx[k]] = coef
    S = np.diag(s)
    C = W @ S @ W.T
    resid = y - (c + W @ m)
    lam, Q = np.linalg.eigh(C)
    tol = 1e-12 * max(1.0, float(lam.max(initial=0.0)))
    keep = lam > tol
    proj = Q.T @ resid
    scale = 1.0 + float(np.max(np.abs(y)))
    if np.any(np.abs(proj[~keep]) > 1e-8 * scale):
        return -math.inf, names, m, S
    logdens = -0.5 * float(np.sum(proj[keep] ** 2 / lam[keep])) - 0.5 * float(
        np.sum(np.log(lam[keep]) + LOG_2PI)
    )
    inv = (Q[:, keep] / lam[keep]) @ Q[:, keep].T
    K = S @ W.T @ inv
    mean = m + K @ resid
    cov = S - K @ W @ S
    cov = 0.5 * (cov + cov.T)
    return logdens, names, mean, cov


def _exact_component(scm: Scm, comp: _Component, plan: _Plan, enum_limit: int):
    ev, known = plan.evidence, plan.known
    enum_vars = [
        n
        for n in comp.unknown
        if isinstance(scm.noise_dist(n), Categorical)
        and scm.uses_noise(n)
        and not scm.noise_dist(n).degenerate
    ]
    supports = [scm.noise_dist(n).support() for n in enum_vars]
    size = 1
    for s in supports:
        size *= len(s)
        if size > enum_limit:
            return None
    combos = []
    for choice in itertools.product(*supports):
        fixed = {scm.var(n).noise: val for n, (val, _) in zip(enum_vars, choice)}
        logp = sum(math.log(p) for _, p in choice)
        forms: dict[str, Aff] = {}
        rows = []
        symbols: dict[str, tuple] = {}
        cat_post = {}
        dead = False
        try:
            for n in comp.order:
                v = scm.var(n)
                dist = scm.noise_dist(n)
                pforms = [forms[p] if p in forms else Aff(known.get(p, 0.0)) for p in v.parents]
                nz = v.noise
                if nz in fixed:
                    nform = Aff(fixed[nz])
                elif isinstance(dist, Gaussian):
                    if dist.degenerate or not scm.uses_noise(n):
                        nform = Aff(dist.mean)
                    else:
                        nform = Aff(0.0, {nz: 1.0})
                        symbols[nz] = (dist.mean, dist.variance)
                elif dist.degenerate or not scm.uses_noise(n):
                    nform = Aff(_placeholder(dist))
                else:
                    nform = None
                if n not in ev:
                    forms[n] = affine(v.mechanism, pforms, nform)
                    continue
                y = ev[n]
                if nform is None:
                    if not all(pf.is_const for pf in pforms):
                        raise NonAffine("categorical observation with unknown parents")
                    pv = tuple(pf.const for pf in pforms)
                    fn = scm._fn[n]
                    matches = [(u, p) for u, p in dist.support() if _close(fn(pv, u), y)]
                    mass = sum(p for _, p in matches)
                    if mass <= 0.0:
                        dead = True
                        break
                    logp += math.log(mass)
                    cat_post[nz] = [(u, p / mass) for u, p in matches]
                else:
                    form = affine(v.mechanism, pforms, nform)
                    if form.is_const:
                        if not _close(form.const, y):
                            dead = True
                            break
                    else:
                        rows.append((form, y))
        except NonAffine:
            return None
        if dead:
            continue
        logdens, names, mean, cov = _gaussian_rows(rows, symbols)
        if logdens == -math.inf:
            continue
        combos.append(_Combo(logp + logdens, fixed, cat_post, names, mean, cov))
    if not combos:
        return _ExactResult([], -math.inf)
    log_z = float(logsumexp([c.logw for c in combos]))
    return _ExactResult(combos, log_z)


# --------------------------------------------------------------------------
# Likelihood-weighted sampling for a component
# --------------------------------------------------------------------------


@dataclass
class _LwResult:
    noises: dict  # noise name -> np.ndarray of samples
    logw: np.ndarray

    @property
    def log_z(self) -> float:
        return float(logsumexp(self.logw) - math.log(len(self.logw)))

    @property
    def se_log_z(self) -> float:
        if not np.isfinite(self.logw).any():
            return math.inf
        w = np.exp(self.logw - self.logw.max())
        n = len(w)
        if n < 2:
            return math.inf
        return float(w.std(ddof=1) / math.sqrt(n) / w.mean())


def _lw_component(scm, comp, plan, n, rng, bandwidth):
    ev, known = plan.evidence, plan.known
    noises = {scm.var(name).noise: np.empty(n) for name in comp.order}
    logw = np.zeros(n)
    kernel_var = bandwidth * bandwidth
    steps = []
    for name in comp.order:
        v = scm.var(name)
        steps.append(
            (
                name,
                v.parents,
                v.noise,
                scm._fn[name],
                scm.noise_dist(name),
                scm.noise_role(name),
                scm.is_discrete(name),
                ev.get(name),
            )
        )

    def mismatch(val, y, discrete):
        if discrete:
            return 0.0 if _close(val, y) else -math.inf
        z = y - val
        return -0.5 * (z * z / kernel_var + math.log(2.0 * math.pi * kernel_var))

    for i in range(n):
        vals = {}
        lw = 0.0
        for name, parents, nz, fn, dist, role, discrete, y in steps:
            pv = tuple(vals[p] if p in vals else known.get(p, 0.0) for p in parents)
            if y is None:
                u = dist.draw(rng)
                vals[name] = fn(pv, u)
            elif isinstance(dist, Categorical):
                support = dist.support()
                matches = [(u, p) for u, p in support if _close(fn(pv, u), y)]
                mass = sum(p for _, p in matches)
                if mass <= 0.0:
                    lw = -math.inf
                    u = support[0][0]
                else:
                    lw += math.log(mass)
                    r = rng.random() * mass
                    acc = 0.0
                    u = matches[-1][0]
                    for val, p in matches:
                        acc += p
                        if r < acc:
                            u = val
                            break
                vals[name] = y
            else:
                if dist.degenerate or role == "none":
                    u = float(dist.mean)
                    lw += mismatch(fn(pv, u), y, discrete)
                elif role == "affine":
                    a = fn(pv, 0.0)
                    b = fn(pv, 1.0) - a
                    if abs(b) > 1e-12:
                        u = (y - a) / b
                        lw += dist.logpdf(u) - math.log(abs(b))
                    else:
                        u = dist.draw(rng)
                        lw += mismatch(a, y, discrete)
                else:
                    u = dist.draw(rng)
                    lw += mismatch(fn(pv, u), y, discrete)
                vals[name] = y
            noises[nz][i] = u
        logw[i] = lw
    return _LwResult(noises, logw)


# --------------------------------------------------------------------------
# Public API
# --------------------------------------------------------------------------


@dataclass
class LikelihoodEstimate:
    value: float
    se: float
    exact: bool


def log_likelihood_estimate(
    scm: Scm,
    evidence: Mapping[str, float],
    n_samples: int = 1000,
    rng: np.random.Generator | None = None,
    intervention: Mapping[str, float] | None = None,
    bandwidth: float = DEFAULT_BANDWIDTH,
    method: str = "auto",
    enum_limit: int = ENUM_LIMIT,
) -> LikelihoodEstimate:
    """Log density/mass of ``evidence`` with a Monte Carlo standard error.

    ``method`` is ``"auto"`` (exact per component where possible), ``"exact"``
    (raise if any component needs sampling) or ``"mc"`` (sampling only).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = _default_rng(rng)
    plan = _build_plan(scm, evidence, intervention)
    if plan.impossible:
        return LikelihoodEstimate(-math.inf, 0.0, True)
    total, var, exact = 0.0, 0.0, True
    for comp in plan.components:
        res = None
        if method != "mc":
            res = _exact_component(scm, comp, plan, enum_limit)
            if res is None and method == "exact":
                raise NotImplementedError("evidence component has no closed form")
        if res is not None:
            total += res.log_z
        else:
            lw = _lw_component(scm, comp, plan, n_samples, rng, bandwidth)
            total += lw.log_z
            var += lw.se_log_z**2
            exact = False
        if total == -math.inf:
            return LikelihoodEstimate(-math.inf, 0.0, exact)
    return LikelihoodEstimate(total, math.sqrt(var), exact)


def log_likelihood(
    scm: Scm,
    evidence: Mapping[str, float],
    n_samples: int = 1000,
    rng: np.random.Generator | None = None,
    intervention: Mapping[str, float] | None = None,
    bandwidth: float = DEFAULT_BANDWIDTH,
    method: str = "auto",
) -> float:
    """Log density (continuous) / log mass (discrete) of the evidence."""
    return log_likelihood_estimate(
        scm, evidence, n_samples, rng, intervention, bandwidth, method
    ).value


@dataclass
class ParticleSet:
    """Weighted exogenous assignments approximating ``P(U | evidence)``.

    ``exact`` marks a set that is the full posterior support with exact
    weights (no Monte Carlo error).
    """

    particles: list
    weights: np.ndarray
    exact: bool = False
    log_evidence: float = 0.0

    def __len__(self):
        return len(self.particles)

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))


def _sample_gaussian(mean, cov, rng):
    lam, Q = np.linalg.eigh(cov)
    return mean + Q @ (np.sqrt(np.clip(lam, 0.0, None)) * rng.standard_normal(len(mean)))


def abduct(
    scm: Scm,
    evidence: Mapping[str, float],
    n_particles: int = 1000,
    rng: np.random.Generator | None = None,
    intervention: Mapping[str, float] | None = None,
    bandwidth: float = DEFAULT_BANDWIDTH,
    method: str = "auto",
    enum_limit: int = ENUM_LIMIT,
) -> ParticleSet:
    """Posterior over exogenous noise given evidence.

    Returns a single weight-1 particle when the evidence pins every noise
    that matters, the exact finite posterior when it has at most
    ``n_particles`` support points, and otherwise ``n_particles`` weighted
    samples.

    Raises:
        DegenerateEvidence: the evidence has zero probability.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    rng = _default_rng(rng)
    plan = _build_plan(scm, evidence, intervention)
    if plan.impossible:
        raise DegenerateEvidence("evidence contradicts a deterministic mechanism")

    exact_parts, lw_parts = [], []
    for comp in plan.components:
        res = _exact_component(scm, comp, plan, enum_limit) if method != "mc" else None
        if res is None:
            res = _lw_component(scm, comp, plan, n_particles, rng, bandwidth)
            if not np.isfinite(res.logw).any():
                raise DegenerateEvidence("all particle weights are zero")
            lw_parts.append(res)
        else:
            if not res.combos:
                raise DegenerateEvidence("evidence has zero probability")
            exact_parts.append(res)

    base = {}
    random_free = []
    for n in scm.order:
        nz = scm.var(n).noise
        base[nz] = _placeholder(scm.noise_dist(n))
    for n in plan.free:
        if not _is_fixed_noise(scm, n, plan.do):
            random_free.append(n)
    log_ev = sum(r.log_z for r in exact_parts) + sum(r.log_z for r in lw_parts)

    gaussian_uncertain = any(c.has_variance for r in exact_parts for c in r.combos)
    free_categorical = all(isinstance(scm.noise_dist(n), Categorical) for n in random_free)
    if not lw_parts and not gaussian_uncertain and free_categorical:
        support = 1
        for r in exact_parts:
            support *= sum(c.n_support for c in r.combos)
        for n in random_free:
            support *= len(scm.noise_dist(n).support())
        if support <= n_particles:
            particles, weights = _enumerate_posterior(scm, base, exact_parts, random_free)
            return ParticleSet(particles, weights, True, log_ev)

    particles = []
    logw = np.zeros(n_particles)
    choosers = [(r, r.probs) for r in exact_parts]
    for i in range(n_particles):
        p = dict(base)
        for r, probs in choosers:
            combo = r.combos[int(rng.choice(len(r.combos), p=probs))] if len(r.combos) > 1 else r.combos[0]
            p.update(combo.fixed)
            for nz, lst in combo.cat_post.items():
                if len(lst) == 1:
                    p[nz] = lst[0][0]
                else:
                    k = int(rng.choice(len(lst), p=[q for _, q in lst]))
                    p[nz] = lst[k][0]
            if combo.symbols:
                draw = _sample_gaussian(combo.mean, combo.cov, rng) if combo.has_variance else combo.mean
                for nz, val in zip(combo.symbols, draw):
                    p[nz] = float(val)
        for r in lw_parts:
            for nz, arr in r.noises.items():
                p[nz] = float(arr[i])
            logw[i] += r.logw[i]
        for n in random_free:
            p[scm.var(n).noise] = scm.noise_dist(n).draw(rng)
        particles.append(p)
    w = np.exp(logw - logw.max())
    return ParticleSet(particles, w / w.sum(), False, log_ev)


def _enumerate_posterior(scm, base, exact_parts, random_free):
    options = []  # one list of (noise-dict, prob) per independent factor
    for r in exact_parts:
        probs = r.probs
        opts = []
        for combo, pc in zip(r.combos, probs):
            common = dict(combo.fixed)
            for nz, val in zip(combo.symbols, combo.mean):
                common[nz] = float(val)
            keys = list(combo.cat_post)
            for pick in itertools.product(*(combo.cat_post[k] for k in keys)):
                d = dict(common)
                q = pc
                for k, (val, pk) in zip(keys, pick):
                    d[k] = val
                    q *= pk
                opts.append((d, q))
        options.append(opts)
    for n in random_free:
        nz = scm.var(n).noise
        options.append([({nz: val}, p) for val, p in scm.noise_dist(n).support()])
    particles, weights = [], []
    for pick in itertools.product(*options):
        p = dict(base)
        w = 1.0
        for d, q in pick:
            p.update(d)
            w *= q
        particles.append(p)
        weights.append(w)
    weights = np.array(weights)
    return particles, weights / weights.sum()


@dataclass
class CounterfactualResult:
    mean: float
    variance: float
    se: float
    table: dict | None = None
    n_particles: int = 0
    exact: bool = False
    values: np.ndarray = field(default=None, repr=False)
    weights: np.ndarray = field(default=None, repr=False)


def twin_values(scm: Scm, particles: ParticleSet, intervention: Mapping, query: str) -> np.ndarray:
    do = scm.check_intervention(intervention)
    return np.array([scm.evaluate(p, do, targets=(query,))[query] for p in particles.particles])


def summarize(values: np.ndarray, weights: np.ndarray, discrete: bool, exact: bool) -> CounterfactualResult:
    mean = float(np.dot(weights, values))
    var = float(np.dot(weights, (values - mean) ** 2))
    se = 0.0 if exact else float(math.sqrt(np.sum(weights**2 * (values - mean) ** 2)))
    table = None
    if discrete:
        table = {}
        for v, w in zip(values, weights):
            table[float(v)] = table.get(float(v), 0.0) + float(w)
        table = dict(sorted(table.items()))
    return CounterfactualResult(mean, var, se, table, len(values), exact, values, weights)


def counterfactual(
    scm: Scm,
    evidence: Mapping[str, float],
    intervention: Mapping[str, float] | None,
    query: str,
    n_particles: int = 1000,
    rng: np.random.Generator | None = None,
    bandwidth: float = DEFAULT_BANDWIDTH,
) -> CounterfactualResult:
    """Abduction-action-prediction estimate of ``query`` in the twin world."""
    scm.var(query)
    ps = abduct(scm, evidence, n_particles, rng, bandwidth=bandwidth)
    vals = twin_values(scm, ps, intervention or {}, query)
    return summarize(vals, ps.weights, scm.is_discrete(query), ps.exact)


def particles_iter(ps: ParticleSet) -> Iterable:
    return zip(ps.particles, ps.weights)
