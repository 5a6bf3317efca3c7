"""Post-hoc counterfactual explanations of mission outcomes.

The one-step SCM is unrolled over the explanation window, the exogenous
history is abducted from the trace, and candidate causes are scored by
probability of necessity (PN) and sufficiency (PS) in twin worlds.
"""

from __future__ import annotations

import json
import math
import operator
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateEvidence, LabelMismatch, UnknownVariable, ValidationError
from .scm import Categorical, EndogenousVar, ExogenousVar, ParticleSet, Scm, abduct

OPS = {
    "==": lambda a, b: abs(a - b) < 1e-9,
    "!=": lambda a, b: abs(a - b) >= 1e-9,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


def timed(name: str, t: int) -> str:
    return f"{name}@{t}"


def split_timed(name: str) -> tuple[str, int | None]:
    base, sep, t = name.rpartition("@")
    if not sep:
        return name, None
    try:
        return base, int(t)
    except ValueError:
        return name, None


# -- unrolling -----------------------------------------------------------------


def _state_pairs(scm: Scm) -> dict:
    states = scm.with_label("state")
    if not states:
        raise LabelMismatch("no state-labelled variables to chain")
    pairs = {}
    for s in states:
        n = f"{s}_next"
        if not scm.is_endogenous(n) or "next_state" not in scm.labels.get(n, ()):
            raise LabelMismatch(f"state variable {s!r} has no labelled successor {n!r}")
        pairs[n] = s
    for n in scm.with_label("next_state"):
        if n not in pairs:
            raise LabelMismatch(f"next-state variable {n!r} has no matching state variable")
    return pairs


def unroll(scm: Scm, T: int, start: int = 0) -> Scm:
    """Chain ``T`` copies of a one-step SCM.

    Variables are renamed ``name@t``; the successor ``s_next`` of step ``t``
    becomes ``s@{t+1}`` and feeds step ``t + 1``. Each step has fresh
    exogenous inputs; state priors are kept only for the first step.

    Raises:
        LabelMismatch: state and next-state labels do not pair up.
    """
    if T < 1:
        raise ValidationError("horizon must be at least 1")
    nexts = _state_pairs(scm)
    states = set(nexts.values())

    def rename(name: str, t: int) -> str:
        if name in nexts:
            return timed(nexts[name], t + 1)
        return timed(name, t)

    endo, exo, labels = [], [], {}

    def add(v: EndogenousVar, t: int, tags):
        new = rename(v.name, t)
        noise = timed(v.noise, t)
        endo.append(EndogenousVar(new, tuple(rename(p, t) for p in v.parents), v.mechanism, noise))
        exo.append(ExogenousVar(noise, scm.exo(v.noise).dist))
        if tags:
            labels[new] = tuple(tags)

    for v in scm.endogenous:
        if v.name in states:
            add(v, start, scm.labels.get(v.name, ()))
    for t in range(start, start + T):
        for v in scm.endogenous:
            if v.name in states:
                continue
            tags = scm.labels.get(v.name, ())
            if v.name in nexts:
                own = scm.labels.get(nexts[v.name], ())
                tags = tuple(dict.fromkeys(own + tuple(x for x in tags if x != "next_state")))
            add(v, t, tags)
    return Scm(exo, endo, labels)


# -- queries -------------------------------------------------------------------


@dataclass
class Trace:
    """Evidence extracted from a mission log.

    Attributes:
        evidence: observed values keyed by ``name@t``.
        horizon: number of steps covered.
        start: time index of the first covered state.
        meta: provenance (seed, config hash, outcome).
    """

    evidence: dict
    horizon: int
    start: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def end(self) -> int:
        return self.start + self.horizon


@dataclass(frozen=True)
class OutcomePredicate:
    """``var@time <op> value``, e.g. ``status@T == 2``."""

    var: str
    time: int
    op: str = "=="
    value: float = 1.0

    def __post_init__(self):
        if self.op not in OPS:
            raise ValidationError(f"unknown comparator {self.op!r}")

    @property
    def name(self) -> str:
        return timed(self.var, self.time)

    def holds(self, values: Mapping) -> bool:
        return bool(OPS[self.op](float(values[self.name]), float(self.value)))

    def __str__(self):
        return f"{self.name} {self.op} {self.value:g}"


@dataclass(frozen=True)
class CauseCandidate:
    """Variable ``var@time`` with its factual value and alternatives.

    ``factual`` None means the value is read from the evidence or, when
    unobserved, taken as its most probable abducted value.
    """

    var: str
    time: int
    factual: float | None = None
    alternatives: tuple = ()

    @property
    def name(self) -> str:
        return timed(self.var, self.time)


@dataclass
class CauseScore:
    candidate: CauseCandidate
    factual: float
    alternative: float
    pn: float
    ps: float
    pn_se: float = 0.0
    ps_se: float = 0.0
    outcome_prob: float = 0.0

    @property
    def score(self) -> float:
        return self.pn * self.ps

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate.name,
            "factual": self.factual,
            "alternative": self.alternative,
            "pn": self.pn,
            "pn_se": self.pn_se,
            "ps": self.ps,
            "ps_se": self.ps_se,
            "score": self.score,
            "outcome_prob_under_alternative": self.outcome_prob,
        }


@dataclass
class Explanation:
    outcome: OutcomePredicate
    scores: list
    model_id: str
    meta: dict = field(default_factory=dict)

    @property
    def top(self) -> CauseScore:
        return self.scores[0]

    def summary(self) -> list[str]:
        lines = []
        for s in self.scores:
            lines.append(
                f"had {s.candidate.name} been {s.alternative:g}, outcome {self.outcome} would have occurred "
                f"with probability {s.outcome_prob:.3f} (PN={s.pn:.3f}, PS={s.ps:.3f}, score={s.score:.3f})"
            )
        return lines

    def to_dict(self) -> dict:
        return {
            "query": {"outcome": str(self.outcome)},
            "model": self.model_id,
            "meta": self.meta,
            "scores": [s.to_dict() for s in self.scores],
            "top": self.top.candidate.name if self.scores else None,
            "summary": self.summary(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def text(self) -> str:
        head = [f"outcome: {self.outcome}", f"model: {self.model_id}"]
        if self.scores:
            head.append(f"top cause: {self.top.candidate.name} (score {self.top.score:.3f})")
        return "\n".join(head + self.summary()) + "\n"


# -- estimators ----------------------------------------------------------------


def _evidence(trace) -> dict:
    return dict(trace.evidence if isinstance(trace, Trace) else trace)


def _outcomes(scm_T: Scm, ps: ParticleSet, do: Mapping | None, outcome: OutcomePredicate) -> np.ndarray:
    return np.array(
        [outcome.holds(scm_T.evaluate(p, do, targets=(outcome.name,))) for p in ps.particles], dtype=float
    )


def _ratio(x: np.ndarray, y: np.ndarray, w: np.ndarray, exact: bool) -> tuple[float, float]:
    """Self-normalised ratio ``sum(w x) / sum(w y)`` with a delta-method error."""
    den = float(np.dot(w, y))
    if den <= 0.0:
        return 0.0, 0.0
    r = float(np.dot(w, x)) / den
    if exact:
        return r, 0.0
    return r, float(math.sqrt(np.sum(w**2 * (x - r * y) ** 2)) / den)


def _check(scm_T: Scm, candidate: CauseCandidate, outcome: OutcomePredicate):
    scm_T.var(candidate.name)
    scm_T.var(outcome.name)


def _restrict(ps: ParticleSet, scm_T: Scm, name: str, value: float) -> ParticleSet:
    """Keep particles whose factual ``name`` equals ``value``."""
    vals = np.array([scm_T.evaluate(p, targets=(name,))[name] for p in ps.particles])
    keep = np.abs(vals - value) < 1e-9
    w = ps.weights * keep
    if w.sum() <= 0.0:
        raise DegenerateEvidence(f"{name} = {value:g} has zero posterior probability")
    idx = np.flatnonzero(keep)
    return ParticleSet([ps.particles[i] for i in idx], w[idx] / w.sum(), ps.exact, ps.log_evidence)


def factual_value(scm_T: Scm, evidence: Mapping, candidate: CauseCandidate, ps: ParticleSet) -> float:
    if candidate.factual is not None:
        return float(candidate.factual)
    if candidate.name in evidence:
        return float(evidence[candidate.name])
    table: dict = {}
    for p, w in zip(ps.particles, ps.weights):
        v = float(scm_T.evaluate(p, targets=(candidate.name,))[candidate.name])
        table[v] = table.get(v, 0.0) + float(w)
    return max(table, key=lambda v: (table[v], -v))


def alternatives(scm_T: Scm, candidate: CauseCandidate, factual: float) -> list[float]:
    """Alternative values: given set, else the finite domain, else factual ± 2 sd."""
    if candidate.alternatives:
        alts = [float(a) for a in candidate.alternatives]
    else:
        dom = scm_T.domain(candidate.name)
        if dom is not None:
            alts = [float(v) for v in dom]
        else:
            dist = scm_T.noise_dist(candidate.name)
            sd = 1.0 if isinstance(dist, Categorical) else math.sqrt(dist.variance) or 1.0
            alts = [factual - 2.0 * sd, factual + 2.0 * sd]
    return [a for a in alts if abs(a - factual) >= 1e-9]


def _pn_from(scm_T, ps, name, alt, outcome) -> tuple[float, float, float]:
    fact = _outcomes(scm_T, ps, None, outcome)
    twin = _outcomes(scm_T, ps, {name: alt}, outcome)
    pn, se = _ratio(fact * (1.0 - twin), fact, ps.weights, ps.exact)
    prob = float(np.dot(ps.weights, twin))
    return pn, se, prob


def _ps_from(scm_T, ps, name, factual, alt, outcome) -> tuple[float, float]:
    base = _outcomes(scm_T, ps, {name: alt}, outcome)
    suff = _outcomes(scm_T, ps, {name: factual}, outcome)
    if float(np.dot(ps.weights, 1.0 - base)) > 0.0:
        return _ratio((1.0 - base) * suff, 1.0 - base, ps.weights, ps.exact)
    return _ratio(suff, np.ones_like(suff), ps.weights, ps.exact)


def sufficiency_context(scm_T: Scm, evidence: Mapping, name: str) -> dict:
    """Evidence on variables that the candidate cannot influence."""
    desc = scm_T.descendants(name)
    return {k: v for k, v in evidence.items() if k != name and k not in desc}


def pn(
    trace,
    candidate: CauseCandidate,
    outcome: OutcomePredicate,
    scm_T: Scm,
    n_particles: int = 1000,
    rng: np.random.Generator | None = None,
    alternative: float | None = None,
) -> tuple[float, dict]:
    """Probability that the outcome would not have occurred under the alternative.

    Returns ``(estimate, stats)``; ``stats`` holds the standard error, the
    alternative used and whether the estimate is exact.
    """
    _check(scm_T, candidate, outcome)
    ev = _evidence(trace)
    rng = rng if rng is not None else np.random.default_rng(0)
    ps = abduct(scm_T, ev, n_particles, rng)
    fv = factual_value(scm_T, ev, candidate, ps)
    alt = alternative if alternative is not None else alternatives(scm_T, candidate, fv)[0]
    if not scm_T.has_path(candidate.name, outcome.name):
        return 0.0, {"se": 0.0, "alternative": alt, "exact": True, "graphical_zero": True}
    if candidate.name not in ev:
        ps = _restrict(ps, scm_T, candidate.name, fv)
    est, se, _ = _pn_from(scm_T, ps, candidate.name, alt, outcome)
    return est, {"se": se, "alternative": alt, "exact": ps.exact, "n": len(ps)}


def ps(
    trace,
    candidate: CauseCandidate,
    outcome: OutcomePredicate,
    scm_T: Scm,
    n_particles: int = 1000,
    rng: np.random.Generator | None = None,
    alternative: float | None = None,
) -> tuple[float, dict]:
    """Probability that restoring the factual value produces the outcome.

    Conditions on the evidence the candidate cannot influence and on the
    outcome failing under the alternative; when that event is impossible
    it reduces to the outcome's probability under the factual value.
    """
    _check(scm_T, candidate, outcome)
    ev = _evidence(trace)
    rng = rng if rng is not None else np.random.default_rng(0)
    fv = candidate.factual
    if fv is None:
        fv = factual_value(scm_T, ev, candidate, abduct(scm_T, ev, n_particles, rng))
    alt = alternative if alternative is not None else alternatives(scm_T, candidate, fv)[0]
    ctx = abduct(scm_T, sufficiency_context(scm_T, ev, candidate.name), n_particles, rng)
    est, se = _ps_from(scm_T, ctx, candidate.name, fv, alt, outcome)
    return est, {"se": se, "alternative": alt, "exact": ctx.exact, "n": len(ctx)}


def score_candidate(
    ev: Mapping,
    candidate: CauseCandidate,
    outcome: OutcomePredicate,
    scm_T: Scm,
    n_particles: int,
    rng: np.random.Generator,
    factual_ps: ParticleSet,
) -> CauseScore:
    """Best-scoring alternative for one candidate; ties go to higher PN, then order."""
    name = candidate.name
    fv = factual_value(scm_T, ev, candidate, factual_ps)
    alts = alternatives(scm_T, candidate, fv)
    if not alts:
        raise ValidationError(f"{name} has no alternative value")
    relevant = scm_T.has_path(name, outcome.name)
    post = factual_ps if name in ev or not relevant else _restrict(factual_ps, scm_T, name, fv)
    ctx = abduct(scm_T, sufficiency_context(scm_T, ev, name), n_particles, rng)
    best = None
    for alt in alts:
        if relevant:
            p_n, p_n_se, prob = _pn_from(scm_T, post, name, alt, outcome)
        else:
            p_n, p_n_se = 0.0, 0.0
            prob = float(np.dot(post.weights, _outcomes(scm_T, post, None, outcome)))
        p_s, p_s_se = _ps_from(scm_T, ctx, name, fv, alt, outcome)
        cand = CauseScore(candidate, fv, alt, p_n, p_s, p_n_se, p_s_se, prob)
        if best is None or (cand.score, cand.pn) > (best.score, best.pn):
            best = cand
    return best


def default_candidates(scm_T: Scm, times: Sequence[int]) -> list[CauseCandidate]:
    """Explain-labelled variables: environment factors first, then actions.

    Variables that can take only one value are skipped.
    """
    base = []
    for v in scm_T.endogenous:
        b, t = split_timed(v.name)
        if "explain" in scm_T.labels.get(v.name, ()) and b not in base:
            base.append(b)
    actions = {split_timed(v)[0] for v in scm_T.with_label("action")}
    ordered = [b for b in base if b not in actions] + [b for b in base if b in actions]
    out = []
    for b in ordered:
        for t in times:
            name = timed(b, t)
            dom = scm_T.domain(name) if scm_T.is_endogenous(name) else []
            if dom is None or len(dom) > 1:
                out.append(CauseCandidate(b, t))
    return out


def rank_causes(
    trace,
    outcome: OutcomePredicate,
    candidates: Sequence[CauseCandidate],
    scm_T: Scm,
    n_particles: int = 1000,
    rng: np.random.Generator | None = None,
    seed: int = 0,
) -> Explanation:
    """Score every candidate and sort by PN·PS, then PN, then list order.

    Each candidate draws from its own random stream so the ranking does
    not depend on evaluation order.
    """
    if not candidates:
        raise ValidationError("candidate list is empty")
    for c in candidates:
        _check(scm_T, c, outcome)
    ev = _evidence(trace)
    base_seed = seed if rng is None else int(rng.integers(2**31))
    factual_ps = abduct(scm_T, ev, n_particles, np.random.default_rng([base_seed, 0]))
    scores = []
    for i, c in enumerate(candidates):
        stream = np.random.default_rng([base_seed, 1, i])
        scores.append(score_candidate(ev, c, outcome, scm_T, n_particles, stream, factual_ps))
    order = sorted(range(len(scores)), key=lambda i: (-scores[i].score, -scores[i].pn, i))
    meta = dict(trace.meta) if isinstance(trace, Trace) else {}
    return Explanation(outcome, [scores[i] for i in order], scm_T.fingerprint, meta)


def resolve_candidate(spec, scm_T: Scm) -> CauseCandidate:
    """Candidate from ``"gust@3"`` or ``{"var": ..., "t": ..., "alternatives": [...]}``."""
    if isinstance(spec, str):
        base, t = split_timed(spec)
        cand = CauseCandidate(base, t)
    else:
        cand = CauseCandidate(spec["var"], int(spec["t"]), spec.get("factual"), tuple(spec.get("alternatives", ())))
    if cand.time is None or not scm_T.is_endogenous(cand.name):
        raise UnknownVariable(f"unknown candidate variable {cand.name!r}")
    return cand


__all__ = [
    "Trace",
    "OutcomePredicate",
    "CauseCandidate",
    "CauseScore",
    "Explanation",
    "unroll",
    "pn",
    "ps",
    "rank_causes",
    "default_candidates",
    "resolve_candidate",
    "sufficiency_context",
    "alternatives",
]
