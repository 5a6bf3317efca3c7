"""Online adaptation of a predefined SCM to streaming observational data.

A belief over candidate SCMs is kept in log space. Each step proposes
structural edits of the current hypotheses, scores every hypothesis on the
newest data window, multiplies into the running posterior and keeps the
``N`` most probable models.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .errors import EmptyBatch, EmptyBelief, ValidationError
from .scm import Add, Const, EndogenousVar, ExogenousVar, Gate, Gaussian, Linear, Noise, Parent, Scm, log_likelihood
from .scm.io import scm_to_dict


# ---------------------------------------------------------------------------
# Proposal rules and edits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AddGatedExogenous:
    """Add ``W ~ N(mean, var)`` to ``target``'s mechanism while ``gate > 0.5``."""

    target: str
    gate: str
    means: tuple[float, ...]
    variances: tuple[float, ...]

    def edits(self, scm: Scm, provenance: Sequence[dict]):
        if any(e["kind"] == "add_gated_exogenous" and e["target"] == self.target for e in provenance):
            return
        for m in self.means:
            for v in self.variances:
                yield {"kind": "add_gated_exogenous", "target": self.target, "gate": self.gate, "mean": float(m), "variance": float(v)}


@dataclass(frozen=True)
class AdjustGaussianParams:
    """Replace the distribution of a Gaussian exogenous variable."""

    target: str
    means: tuple[float, ...]
    variances: tuple[float, ...]

    def edits(self, scm: Scm, provenance: Sequence[dict]):
        for m in self.means:
            for v in self.variances:
                yield {"kind": "adjust_gaussian", "target": self.target, "mean": float(m), "variance": float(v)}


@dataclass(frozen=True)
class AdjustLinearWeight:
    """Shift one weight of a ``Linear`` mechanism."""

    target: str
    index: int
    deltas: tuple[float, ...]

    def edits(self, scm: Scm, provenance: Sequence[dict]):
        for d in self.deltas:
            yield {"kind": "adjust_weight", "target": self.target, "index": int(self.index), "delta": float(d)}


@dataclass(frozen=True)
class RemoveAddedVariable:
    """Undo an earlier gated addition (any of them when ``edit_id`` is None)."""

    edit_id: str | None = None

    def edits(self, scm: Scm, provenance: Sequence[dict]):
        for e in provenance:
            if e["kind"] == "add_gated_exogenous" and self.edit_id in (None, edit_id(e)):
                yield {"kind": "remove", "edit": edit_id(e)}


ProposalRule = Union[AddGatedExogenous, AdjustGaussianParams, AdjustLinearWeight, RemoveAddedVariable]


def edit_id(edit: Mapping) -> str:
    body = ",".join(f"{k}={edit[k]}" for k in sorted(edit) if k != "kind")
    return f"{edit['kind']}({body})"


def _added_name(scm: Scm, target: str) -> str:
    k = 1
    while scm.is_endogenous(f"{target}_gust{k}"):
        k += 1
    return f"{target}_gust{k}"


def apply_edit(scm: Scm, edit: Mapping) -> Scm:
    """Return the edited SCM.

    Raises:
        ValidationError: the edit does not apply to this model.
    """
    kind = edit["kind"]
    endo, exo = list(scm.endogenous), list(scm.exogenous)
    if kind == "add_gated_exogenous":
        target = scm.var(edit["target"])
        scm.var(edit["gate"])
        if edit["variance"] < 0:
            raise ValidationError("variance must be non-negative")
        name = _added_name(scm, target.name)
        noise = f"U_{name}"
        parents = list(target.parents)
        gi = parents.index(edit["gate"]) if edit["gate"] in parents else len(parents)
        if gi == len(parents):
            parents.append(edit["gate"])
        parents.append(name)
        mech = Add(target.mechanism, Gate(Parent(gi), 0.5, Parent(len(parents) - 1), Const(0.0)))
        pos = endo.index(target)
        endo[pos] = EndogenousVar(target.name, tuple(parents), mech, target.noise)
        endo.insert(pos, EndogenousVar(name, (), Noise(), noise))
        exo.insert(pos, ExogenousVar(noise, Gaussian(edit["mean"], edit["variance"])))
    elif kind == "adjust_gaussian":
        u = scm.exo(edit["target"])
        if not isinstance(u.dist, Gaussian):
            raise ValidationError(f"{u.name} is not Gaussian")
        exo[exo.index(u)] = ExogenousVar(u.name, Gaussian(edit["mean"], edit["variance"]))
    elif kind == "adjust_weight":
        v = scm.var(edit["target"])
        if not isinstance(v.mechanism, Linear) or not 0 <= edit["index"] < len(v.mechanism.weights):
            raise ValidationError(f"{v.name} has no linear weight {edit['index']}")
        w = list(v.mechanism.weights)
        w[edit["index"]] += edit["delta"]
        endo[endo.index(v)] = replace(v, mechanism=replace(v.mechanism, weights=tuple(w)))
    else:
        raise ValidationError(f"edit kind {kind!r} is applied by replay")
    return Scm(exo, endo, scm.labels)


def replay(base: Scm, provenance: Sequence[Mapping]) -> Scm:
    scm = base
    for e in provenance:
        scm = apply_edit(scm, e)
    return scm


# ---------------------------------------------------------------------------
# Belief
# ---------------------------------------------------------------------------


@dataclass
class ModelHypothesis:
    scm: Scm
    log_weight: float
    provenance: tuple = ()

    @property
    def n_edits(self) -> int:
        return len(self.provenance)


@dataclass
class DataBatch:
    """Window of i.i.d. records over observed endogenous variables."""

    records: list
    timestamp: int = 0

    def __post_init__(self):
        self.records = [{k: float(v) for k, v in r.items()} for r in self.records]
        if self.records:
            keys = set(self.records[0])
            if any(set(r) != keys for r in self.records):
                raise ValidationError("batch records must share one key set")


@dataclass
class ModelBelief:
    """Weighted set of candidate SCMs (log-space, normalized).

    Attributes:
        base: the predefined model; hypotheses are replays of edits on it.
        capacity: maximum number of hypotheses kept after a step.
        epsilon: prior mass given to each newly proposed hypothesis.
        warnings: messages from degenerate steps.
    """

    hypotheses: list
    capacity: int
    base: Scm
    t: int = 0
    epsilon: float = 0.01
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValidationError("capacity must be >= 1")
        if not 0.0 < self.epsilon:
            raise ValidationError("epsilon must be positive")

    @classmethod
    def initial(cls, scm: Scm, capacity: int = 8, epsilon: float = 0.01) -> "ModelBelief":
        return cls([ModelHypothesis(scm, 0.0, ())], capacity, scm, 0, epsilon)

    @classmethod
    def from_models(cls, scms: Sequence[Scm], prior: Sequence[float] | None = None, capacity: int | None = None) -> "ModelBelief":
        """Fixed hypothesis set with an explicit prior (no provenance)."""
        prior = np.full(len(scms), 1.0 / len(scms)) if prior is None else np.asarray(prior, float)
        logp = np.log(prior) - logsumexp(np.log(prior))
        hyps = [ModelHypothesis(s, float(lp), ()) for s, lp in zip(scms, logp)]
        return cls(hyps, capacity or len(scms), scms[0])

    @property
    def log_weights(self) -> np.ndarray:
        return np.array([h.log_weight for h in self.hypotheses])

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "capacity": self.capacity,
            "epsilon": self.epsilon,
            "warnings": list(self.warnings),
            "hypotheses": [
                {
                    "id": h.scm.fingerprint,
                    "log_weight": h.log_weight,
                    "weight": math.exp(h.log_weight),
                    "provenance": list(h.provenance),
                    "scm": scm_to_dict(h.scm),
                }
                for h in self.hypotheses
            ],
        }


def write_snapshot(belief: ModelBelief, out_dir: str) -> str:
    """Write ``belief_t{t}.json`` into ``out_dir`` and return its path."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"belief_t{belief.t}.json")
    with open(path, "w") as fh:
        json.dump(belief.to_dict(), fh, indent=1, sort_keys=True)
    return path


def _normalize(logw: np.ndarray) -> np.ndarray:
    return logw - logsumexp(logw)


def gen_alt_scms(
    belief: ModelBelief,
    rules: Sequence[ProposalRule],
    rng: np.random.Generator,
    max_new: int = 16,
) -> list[ModelHypothesis]:
    """Propose models one edit away from current hypotheses.

    Structural duplicates of existing or already proposed models are
    dropped; if more than ``max_new`` remain, a seeded subset is kept. The
    returned hypotheses carry ``log(epsilon)`` prior mass (unnormalized).
    """
    if max_new <= 0:
        return []
    seen = {h.scm.fingerprint for h in belief.hypotheses}
    out = []
    for h in belief.hypotheses:
        for rule in rules:
            for edit in rule.edits(h.scm, h.provenance):
                if edit["kind"] == "remove":
                    prov = tuple(e for e in h.provenance if edit_id(e) != edit["edit"])
                else:
                    prov = h.provenance + (edit,)
                try:
                    scm = replay(belief.base, prov)
                except (ValidationError, KeyError):
                    continue
                if scm.fingerprint in seen:
                    continue
                seen.add(scm.fingerprint)
                out.append(ModelHypothesis(scm, math.log(belief.epsilon), prov))
    if len(out) > max_new:
        keep = sorted(rng.choice(len(out), size=max_new, replace=False))
        out = [out[i] for i in keep]
    return out


def batch_log_likelihood(scm: Scm, batch: DataBatch, n_samples: int, rng: np.random.Generator) -> float:
    total = 0.0
    for rec in batch.records:
        total += log_likelihood(scm, rec, n_samples, rng)
        if total == -math.inf:
            break
    return total


def adapt_step(
    belief: ModelBelief,
    batch: DataBatch,
    rules: Sequence[ProposalRule],
    rng: np.random.Generator,
    n_samples: int = 1000,
    max_new: int = 16,
    workers: int = 1,
) -> ModelBelief:
    """One propose-score-prune iteration.

    Raises:
        EmptyBatch: the batch holds no records.

    If every hypothesis gives the batch zero likelihood the input belief is
    returned unchanged apart from an entry in ``warnings``.
    """
    if not batch.records:
        raise EmptyBatch("adaptation batch has no records")
    if not belief.hypotheses:
        raise EmptyBelief("belief has no hypotheses")
    new = gen_alt_scms(belief, rules, rng, max_new) if rules else []
    hyps = list(belief.hypotheses) + new
    seeds = rng.integers(0, 2**63, size=len(hyps))

    def score(i):
        return batch_log_likelihood(hyps[i].scm, batch, n_samples, np.random.default_rng(int(seeds[i])))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ll = np.array(list(pool.map(score, range(len(hyps)))))
    else:
        ll = np.array([score(i) for i in range(len(hyps))])

    prior = _normalize(np.array([h.log_weight for h in hyps]))
    post = prior + ll
    if not np.isfinite(post).any():
        warnings = belief.warnings + [f"t={belief.t}: every hypothesis assigns zero likelihood to the batch"]
        return replace(belief, warnings=warnings)
    post = _normalize(post)
    order = sorted(range(len(hyps)), key=lambda i: (-post[i], hyps[i].n_edits, i))[: belief.capacity]
    order = [i for i in order if post[i] > -math.inf] or order[:1]
    order.sort()
    kept = _normalize(post[order])
    out = [ModelHypothesis(hyps[i].scm, float(lw), hyps[i].provenance) for i, lw in zip(order, kept)]
    return replace(belief, hypotheses=out, t=belief.t + 1)


def map_hypothesis(belief: ModelBelief) -> ModelHypothesis:
    if not belief.hypotheses:
        raise EmptyBelief("belief has no hypotheses")
    best = max(h.log_weight for h in belief.hypotheses)
    tied = [h for h in belief.hypotheses if h.log_weight >= best - 1e-12]
    return min(tied, key=lambda h: h.n_edits)


def map_model(belief: ModelBelief) -> Scm:
    """Most probable SCM; ties favour fewer edits, then declaration order.

    Raises:
        EmptyBelief: no hypotheses.
    """
    return map_hypothesis(belief).scm
