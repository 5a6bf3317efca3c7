"""Mission logs as evidence for counterfactual explanation."""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from ..explain import (
    CauseCandidate,
    Explanation,
    OutcomePredicate,
    Trace,
    default_candidates,
    rank_causes,
    resolve_candidate,
    unroll,
)
from .env import BEAMS, CRASHED, DROPOUT, STATUS_NAMES
from .grid import ACTIONS, MineMap, load_map
from .mission import regime_from_dict, spec_from_dict
from .model import env_scm


def _state_evidence(mmap: MineMap, state: dict, t: int) -> dict:
    return {
        f"pos@{t}": float(mmap.index(*state["pos"])),
        f"wind@{t}": float(state["wind"]),
        f"status@{t}": float(STATUS_NAMES.index(state["status"])),
    }


def _obs_evidence(obs: dict, t: int) -> dict:
    out = {f"beam_{b}@{t}": float(DROPOUT if r is None else r) for b, r in zip(BEAMS, obs["ranges"])}
    out[f"landed@{t}"] = 1.0 if obs["landed"] else 0.0
    out[f"airflow_x@{t}"], out[f"airflow_y@{t}"] = (float(v) for v in obs["airflow"])
    return out


def mission_trace(records: list, window: int | None = 3) -> tuple[Trace, MineMap]:
    """Evidence over the last ``window`` steps of a logged mission.

    The window never reaches back past a forced gust onset, where the
    logged wind jumps without a matching transition.
    """
    header = records[0]
    if header.get("type") != "header":
        raise ValidationError("trace has no header record")
    steps = [r for r in records if r.get("type") == "step"]
    if not steps:
        raise ValidationError("trace has no step records")
    mmap = load_map(header["config"]["map"])
    spec = header["config"]["spec"]
    n = len(steps)
    start = 0 if window is None else max(0, n - window)
    if spec.get("onset_step") is not None and spec["onset_step"] < n:
        start = max(start, spec["onset_step"])
    ev = _state_evidence(mmap, steps[start]["state"], start)
    for rec in steps[start:]:
        t = rec["t"]
        ev[f"action@{t}"] = float(ACTIONS.index(rec["action"]))
        ev[f"reward@{t}"] = float(rec["reward"])
        ev.update(_obs_evidence(rec["obs"], t))
        ev.update(_state_evidence(mmap, rec["next_state"], t + 1))
    result = records[-1] if records[-1].get("type") == "result" else {}
    meta = {"seed": header.get("seed"), "config_hash": header.get("config_hash"), "outcome": result.get("outcome")}
    return Trace(ev, n - start, start, meta), mmap


def truth_scm(records: list, mmap: MineMap):
    """Ground-truth one-step SCM in force at the end of the mission."""
    spec = spec_from_dict(records[0]["config"]["spec"])
    steps = [r for r in records if r.get("type") == "step"]
    regime = spec.regime
    if spec.onset_step is not None and spec.onset_regime is not None and spec.onset_step < len(steps):
        regime = spec.onset_regime
    return env_scm(mmap, spec.dust, regime, spec.params)


def model_scm(records: list, mmap: MineMap):
    """One-step SCM built from the planner's final wind model."""
    spec = spec_from_dict(records[0]["config"]["spec"])
    result = records[-1] if records[-1].get("type") == "result" else {}
    regime = regime_from_dict(result["model_regime"]) if "model_regime" in result else spec.model_regime
    return env_scm(mmap, spec.dust, regime, spec.params)


def crash_outcome(trace: Trace) -> OutcomePredicate:
    return OutcomePredicate("status", trace.end, "==", float(CRASHED))


def explain_mission(
    records: list,
    outcome: OutcomePredicate | None = None,
    candidates=None,
    window: int = 3,
    n_particles: int = 500,
    seed: int = 0,
    scm=None,
    model: str = "truth",
) -> Explanation:
    """Rank causes of a logged outcome (default: the final crash).

    Args:
        candidates: :class:`CauseCandidate` objects, ``"var@t"`` strings or
            dicts; empty or None selects every environment and action
            variable in the window.
        model: ``"truth"`` explains with the simulator's own SCM,
            ``"map"`` with the planner's final wind model.
    """
    trace, mmap = mission_trace(records, window)
    if scm is not None:
        one_step = scm
    elif model == "truth":
        one_step = truth_scm(records, mmap)
    elif model == "map":
        # the planner never sees the true wind mode, and its mode indices differ
        one_step = model_scm(records, mmap)
        trace.evidence = {k: v for k, v in trace.evidence.items() if not k.startswith("wind@")}
    else:
        raise ValidationError(f"unknown explanation model {model!r}")
    scm_T = unroll(one_step, trace.horizon, trace.start)
    outcome = outcome or crash_outcome(trace)
    if not candidates:
        candidates = default_candidates(scm_T, range(trace.start, trace.end))
    else:
        candidates = [c if isinstance(c, CauseCandidate) else resolve_candidate(c, scm_T) for c in candidates]
    exp = rank_causes(trace, outcome, candidates, scm_T, n_particles, np.random.default_rng(seed))
    exp.meta["model"] = model if scm is None else "custom"
    return exp
