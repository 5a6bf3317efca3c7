"""Return-to-home missions: sense, adapt, plan, act."""

from __future__ import annotations

import hashlib
import json
import os
import time
import traceback
from dataclasses import asdict, dataclass, field

import numpy as np

from ..adapt import AddGatedExogenous, DataBatch, ModelBelief, adapt_step, map_hypothesis, write_snapshot
from ..errors import ValidationError
from ..planner import BeliefState, PlanConfig, plan, update_belief
from ..scm import Const, EndogenousVar, ExogenousVar, Gaussian, Noise, Scm
from .env import CALM, FLYING, LANDED, DustField, EnvParams, EnvState, WindMode, WindRegime, step
from .grid import ACTIONS, FREE, MineMap, emit_map, load_map
from .model import encode_obs
from .planning import mine_view

SUCCESS, CRASH, TIMEOUT = "Success", "Crash", "Timeout"


@dataclass(frozen=True)
class AdaptSettings:
    """Online adaptation of the wind model from anemometer readings.

    Learned gust hypotheses become planner wind modes with drift
    probability ``drift_prob`` and regime switching ``switch_prob``.
    """

    enabled: bool = True
    capacity: int = 4
    epsilon: float = 0.01
    period: int = 1
    means: tuple[float, ...] = (-2.0, 2.0)
    variances: tuple[float, ...] = (0.25,)
    n_samples: int = 200
    drift_prob: float = 0.5
    switch_prob: float = 0.05
    max_new: int = 16
    log_belief_dir: str | None = None


@dataclass(frozen=True)
class MissionSpec:
    """Environment and model settings of one mission.

    Attributes:
        regime: true wind regime at launch.
        onset_step / onset_regime / onset_mode: at ``onset_step`` the true
            regime becomes ``onset_regime`` and the wind is forced to
            ``onset_mode`` (mid-mission gust onset).
        model_regime: wind regime the planner starts with.
    """

    dust: DustField = DustField()
    params: EnvParams = EnvParams()
    regime: WindRegime = WindRegime()
    onset_step: int | None = None
    onset_regime: WindRegime | None = None
    onset_mode: int = 1
    model_regime: WindRegime = WindRegime()
    n_particles: int = 32
    discount: float = 0.95
    start: tuple[int, int] | None = None


@dataclass
class MissionResult:
    outcome: str
    steps: int
    reward: float
    trace: list
    error: str | None = None
    plan_ms: list = field(default_factory=list)
    posterior: list = field(default_factory=list)
    model_regime: WindRegime | None = None

    def summary(self) -> dict:
        out = {"type": "result", "outcome": self.outcome, "steps": self.steps, "reward": self.reward, "error": self.error}
        if self.model_regime is not None:
            out["model_regime"] = asdict(self.model_regime)
        return out


def airflow_scm(sigma: float) -> Scm:
    """Base anemometer model: zero-mean readings while airborne."""
    endo = [
        EndogenousVar("airborne", (), Const(1.0), "U_airborne"),
        EndogenousVar("airflow_x", ("airborne",), Noise(), "U_airflow_x"),
        EndogenousVar("airflow_y", ("airborne",), Noise(), "U_airflow_y"),
    ]
    exo = [
        ExogenousVar("U_airborne", Gaussian(0.0, 0.0)),
        ExogenousVar("U_airflow_x", Gaussian(0.0, sigma**2)),
        ExogenousVar("U_airflow_y", Gaussian(0.0, sigma**2)),
    ]
    return Scm(exo, endo, {"airflow_x": ("observation",), "airflow_y": ("observation",)})


def gust_rules(settings: AdaptSettings):
    return [
        AddGatedExogenous("airflow_x", "airborne", settings.means, settings.variances),
        AddGatedExogenous("airflow_y", "airborne", settings.means, settings.variances),
    ]


def regime_from_edits(provenance, settings: AdaptSettings) -> WindRegime:
    """Planner wind regime implied by a hypothesis' gust edits."""
    modes = [CALM]
    strength = 0.0
    for e in provenance:
        if e["kind"] != "add_gated_exogenous":
            continue
        if e["target"] == "airflow_x":
            d = "E" if e["mean"] > 0 else "W"
        else:
            d = "S" if e["mean"] > 0 else "N"
        modes.append(WindMode(d, settings.drift_prob))
        strength = max(strength, abs(e["mean"]))
    if len(modes) == 1:
        return WindRegime(tuple(modes), 0.0)
    return WindRegime(tuple(modes), settings.switch_prob, strength)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def spec_to_dict(mmap: MineMap, spec: MissionSpec, plan_cfg: PlanConfig, adapt: AdaptSettings | None) -> dict:
    return {
        "map": emit_map(mmap),
        "spec": asdict(spec),
        "planner": asdict(plan_cfg),
        "adapt": None if adapt is None else asdict(adapt),
    }


def regime_from_dict(d: dict) -> WindRegime:
    modes = tuple(WindMode(m["direction"], m["drift_prob"]) for m in d["modes"])
    return WindRegime(modes, d["switch_prob"], d["strength"])


def spec_from_dict(d: dict) -> MissionSpec:
    """Inverse of ``asdict`` on a :class:`MissionSpec`."""
    dust = DustField(tuple((tuple(c), lvl) for c, lvl in d["dust"]["levels"]), d["dust"]["kappa"], d["dust"]["lam"])
    return MissionSpec(
        dust=dust,
        params=EnvParams(**d["params"]),
        regime=regime_from_dict(d["regime"]),
        onset_step=d["onset_step"],
        onset_regime=None if d["onset_regime"] is None else regime_from_dict(d["onset_regime"]),
        onset_mode=d["onset_mode"],
        model_regime=regime_from_dict(d["model_regime"]),
        n_particles=d["n_particles"],
        discount=d["discount"],
        start=None if d["start"] is None else tuple(d["start"]),
    )


def _reset_wind(belief: BeliefState, n_modes: int) -> BeliefState:
    seen, states = set(), []
    for s in belief.states:
        for m in range(n_modes):
            t = (s[0], float(m), s[2])
            if t not in seen:
                seen.add(t)
                states.append(t)
    return BeliefState.uniform(states, belief.state_vars)


def run_mission(
    mmap: MineMap,
    plan_config: PlanConfig,
    spec: MissionSpec = MissionSpec(),
    adapt: AdaptSettings | None = None,
    seed: int = 0,
    max_steps: int = 50,
    trace_path: str | None = None,
    policy=None,
) -> MissionResult:
    """Fly one return-to-home mission from a random free cell.

    ``policy`` (belief -> action) replaces the planner, e.g. the
    observational baseline. Component failures end the mission as a crash
    with the error recorded.
    """
    header = {
        "type": "header",
        "seed": seed,
        "max_steps": max_steps,
        "config": spec_to_dict(mmap, spec, plan_config, adapt),
    }
    if policy is not None:
        header["config"]["policy"] = getattr(policy, "name", type(policy).__name__)
    header["config_hash"] = config_hash(header["config"])
    trace = [header]
    result = MissionResult(TIMEOUT, 0, 0.0, trace)
    rng_env = np.random.default_rng([seed, 1])
    rng_filter = np.random.default_rng([seed, 2])
    rng_adapt = np.random.default_rng([seed, 3])
    free = mmap.cells_of(FREE)
    start = spec.start if spec.start is not None else free[int(rng_env.integers(len(free)))]
    state = EnvState(start, FLYING, 0, True, 0)
    regime = spec.regime
    model_regime = spec.model_regime
    view = mine_view(mmap, spec.dust, model_regime, spec.params, spec.discount)
    n_modes = model_regime.n_modes
    belief = BeliefState.uniform(
        [(float(mmap.index(*start)), float(m), float(FLYING)) for m in range(n_modes)], view.state_vars
    )
    mb = ModelBelief.initial(airflow_scm(spec.params.airflow_sigma), adapt.capacity, adapt.epsilon) if adapt and adapt.enabled else None
    model_id = ()
    airflow: list = []
    wallclock = plan_config.budget_mode == "wallclock"
    try:
        for t in range(max_steps):
            if spec.onset_step is not None and t == spec.onset_step:
                regime = spec.onset_regime or regime
                state = EnvState(state.pos, state.status, spec.onset_mode, state.link_lost, state.step)
            cfg = PlanConfig(**{**asdict(plan_config), "seed": int(np.random.default_rng([seed, 4, t]).integers(2**31))})
            t0 = time.perf_counter()
            if policy is None:
                res = plan(belief, view, cfg)
                action, plan_stats = int(res.action), res.stats
            else:
                action, plan_stats = int(policy(belief)), {}
            result.plan_ms.append((time.perf_counter() - t0) * 1000.0)
            before = state
            state, obs, reward, done = step(state, mmap, spec.dust, action, rng_env, regime, spec.params)
            result.reward += reward
            result.steps = t + 1
            stats = {k: v for k, v in plan_stats.items() if wallclock or k != "elapsed_ms"}
            record = {
                "type": "step",
                "t": t,
                "state": before.to_dict(),
                "next_state": state.to_dict(),
                "action": ACTIONS[action],
                "obs": obs.to_dict(),
                "reward": reward,
                "belief_summary": belief.summary(),
                "planner_stats": stats,
                "model": [m.name for m in model_regime.modes],
            }
            trace.append(record)
            if done:
                result.outcome = SUCCESS if state.status == LANDED else CRASH
                break
            if mb is not None:
                airflow.append({"airflow_x": obs.airflow[0], "airflow_y": obs.airflow[1]})
                if (t + 1) % adapt.period == 0:
                    batch = DataBatch(airflow, t)
                    mb = adapt_step(mb, batch, gust_rules(adapt), rng_adapt, adapt.n_samples, adapt.max_new)
                    airflow = []
                    if adapt.log_belief_dir:
                        write_snapshot(mb, adapt.log_belief_dir)
                    best = map_hypothesis(mb)
                    record["adapt"] = {"t": mb.t, "map": best.scm.fingerprint, "map_weight": float(np.exp(best.log_weight))}
                    result.posterior.append(
                        {"t": t, "map": best.scm.fingerprint, "weights": [float(w) for w in mb.weights], "edits": [h.n_edits for h in mb.hypotheses]}
                    )
                    new_id = tuple(sorted((e["target"], e["mean"]) for e in best.provenance))
                    if new_id != model_id:
                        model_id = new_id
                        model_regime = regime_from_edits(best.provenance, adapt)
                        view = mine_view(mmap, spec.dust, model_regime, spec.params, spec.discount)
                        belief = _reset_wind(belief, model_regime.n_modes)
            belief = update_belief(belief, action, encode_obs(obs), view, rng_filter, spec.n_particles)
    except Exception as exc:  # noqa: BLE001 - any component failure ends the mission
        result.outcome = CRASH
        where = traceback.extract_tb(exc.__traceback__)[-1]
        result.error = f"{type(exc).__name__}: {exc} ({os.path.basename(where.filename)}:{where.lineno})"
    result.model_regime = model_regime
    trace.append(result.summary())
    if trace_path is not None:
        write_trace(trace, trace_path)
    return result


def replay_mission(records: list) -> MissionResult:
    """Re-fly a logged mission from the settings and seed in its header."""
    header = records[0]
    if header.get("type") != "header":
        raise ValidationError("trace has no header record")
    cfg = header["config"]
    if "policy" in cfg:
        raise ValidationError(f"missions flown by the {cfg['policy']} policy cannot be replayed")
    adapt = None
    if cfg["adapt"] is not None:
        adapt = AdaptSettings(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg["adapt"].items()})
    return run_mission(
        load_map(cfg["map"]),
        PlanConfig(**cfg["planner"]),
        spec_from_dict(cfg["spec"]),
        adapt,
        header["seed"],
        header["max_steps"],
    )


def trace_lines(trace: list) -> str:
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in trace)


def write_trace(trace: list, path: str) -> str:
    text = trace_lines(trace)
    with open(path, "w") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode()).hexdigest()


def read_trace(path: str) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def trace_hash(trace: list) -> str:
    return hashlib.sha256(trace_lines(trace).encode()).hexdigest()
