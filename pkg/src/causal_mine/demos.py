"""Synthetic adaptation scenarios with a known ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapt import AddGatedExogenous, AdjustGaussianParams, DataBatch, apply_edit
from .errors import ValidationError
from .scm import Add, Categorical, Gaussian, Noise, Parent, Scm, build, sample, var

SCENARIOS = ("gust-onset", "dust-onset", "none")


def force_scm(sensor_var: float = 0.01) -> Scm:
    """Measured force = propeller force + sensor noise; ``G`` gates gusts."""
    return build(
        var("F_prop", dist=Gaussian(1.0, 0.04)),
        var("G", dist=Categorical((0.5, 0.5))),
        var("F_total", ["F_prop"], Add(Parent(0), Noise()), dist=Gaussian(0.0, sensor_var)),
    )


def range_scm(noise_var: float = 0.25) -> Scm:
    """Beam range reading = true distance + sensor noise."""
    return build(
        var("distance", dist=Gaussian(3.0, 1.0)),
        var("reading", ["distance"], Add(Parent(0), Noise()), dist=Gaussian(0.0, noise_var)),
    )


def gust_edit(mean: float = 2.0, variance: float = 0.25) -> dict:
    return {"kind": "add_gated_exogenous", "target": "F_total", "gate": "G", "mean": mean, "variance": variance}


@dataclass
class Scenario:
    """Base model, proposal rules, and data sources before/after onset."""

    name: str
    base: Scm
    rules: list
    before: Scm
    after: Scm
    after_do: dict

    def batch(self, rng: np.random.Generator, size: int, onset: bool, timestamp: int = 0) -> DataBatch:
        scm, do = (self.after, self.after_do) if onset else (self.before, {})
        observed = [v.name for v in self.base.endogenous]
        recs = []
        for _ in range(size):
            draw = sample(scm, rng, do)
            recs.append({k: draw[k] for k in observed})
        return DataBatch(recs, timestamp)

    def is_changed(self, provenance) -> bool:
        """Whether a hypothesis encodes the kind of change this scenario injects."""
        if self.name == "gust-onset":
            return any(e["kind"] == "add_gated_exogenous" for e in provenance)
        if self.name == "dust-onset":
            return any(e["kind"] == "adjust_gaussian" and e["variance"] > 0.25 for e in provenance)
        return bool(provenance)


def scenario(
    name: str,
    means=(1.0, 2.0, 3.0),
    variances=(0.25, 1.0),
) -> Scenario:
    """Build a named scenario.

    ``gust-onset``: from onset on the gate is held open and a gust force
    ``W ~ N(2, 0.25)`` adds to the measured force. ``dust-onset``: range
    noise variance grows from 0.25 to 1. ``none``: nothing changes.
    """
    if name == "gust-onset" or name == "none":
        base = force_scm()
        rules = [AddGatedExogenous("F_total", "G", tuple(means), tuple(variances))]
        if name == "none":
            return Scenario(name, base, rules, base, base, {})
        return Scenario(name, base, rules, base, apply_edit(base, gust_edit()), {"G": 1.0})
    if name == "dust-onset":
        base = range_scm()
        rules = [AdjustGaussianParams("U_reading", (0.0,), (0.25, 1.0, 4.0))]
        return Scenario(name, base, rules, base, range_scm(1.0), {})
    raise ValidationError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")


def run_demo(
    sc: Scenario,
    rng: np.random.Generator,
    base_batches: int = 20,
    onset_batches: int = 30,
    batch_size: int = 20,
    capacity: int = 8,
    epsilon: float = 0.01,
    n_samples: int = 200,
    max_new: int = 16,
    snapshot_dir: str | None = None,
) -> list[dict]:
    """Stream batches through :func:`adapt_step` and record the posterior.

    Returns one row per step with the MAP hypothesis, its weight and the
    total mass on hypotheses that encode the injected change.
    """
    from .adapt import ModelBelief, adapt_step, map_hypothesis, write_snapshot

    belief = ModelBelief.initial(sc.base, capacity, epsilon)
    rows = []
    for t in range(base_batches + onset_batches):
        onset = t >= base_batches
        belief = adapt_step(belief, sc.batch(rng, batch_size, onset, t), sc.rules, rng, n_samples, max_new)
        if snapshot_dir:
            write_snapshot(belief, snapshot_dir)
        best = map_hypothesis(belief)
        changed = sum(float(w) for h, w in zip(belief.hypotheses, belief.weights) if sc.is_changed(h.provenance))
        rows.append(
            {
                "t": t,
                "phase": "onset" if onset else "base",
                "map_id": best.scm.fingerprint,
                "map_edits": ";".join(_describe(e) for e in best.provenance) or "base",
                "map_weight": float(np.exp(best.log_weight)),
                "changed_mass": changed,
                "n_hypotheses": len(belief.hypotheses),
                "hypotheses": [(h.scm.fingerprint, ";".join(_describe(e) for e in h.provenance) or "base", float(w)) for h, w in zip(belief.hypotheses, belief.weights)],
            }
        )
    return rows


def _describe(edit: dict) -> str:
    if edit["kind"] == "add_gated_exogenous":
        return f"gust({edit['target']},{edit['mean']:g},{edit['variance']:g})"
    if edit["kind"] == "adjust_gaussian":
        return f"noise({edit['target']},{edit['mean']:g},{edit['variance']:g})"
    return edit["kind"]
