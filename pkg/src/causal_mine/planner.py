"""Interventional online POMDP planning over an SCM world model.

Actions are evaluated under ``do(action = a)``: the action variable is cut
from its parents, so an unobserved confounder that drove historical action
choices cannot bias the transition estimates. The search is a determinized
sparse tree in the DESPOT style: ``K`` scenarios fix a start state and the
exogenous noise at every depth, nodes branch on actions and on the
observations the scenarios produce, and lower/upper value bounds are
tightened by repeated trials until the root gap closes or the budget runs
out.
"""

from __future__ import annotations

import bisect
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import EmptyBelief, LabelMismatch, ParticleDepletion, UnknownAction, ValidationError
from .scm import Categorical, Scm, log_likelihood

StateKey = tuple


@dataclass
class PomdpView:
    """Planner-facing projection of an SCM.

    Hooks:
        upper_bound: ``(state dict, steps_left) -> float``, admissible value bound.
        rollout_policy: ``(state dict) -> action`` used for lower-bound rollouts;
            None means uniformly random actions from the scenario stream.
        obs_key: ``(observation dict) -> hashable`` grouping observations into
            tree branches.
    """

    scm: Scm
    state_vars: tuple[str, ...]
    next_vars: tuple[str, ...]
    action_var: str
    observation_vars: tuple[str, ...]
    reward_var: str
    confounder_vars: tuple[str, ...] = ()
    discount: float = 0.95
    terminal_var: str | None = None
    actions: tuple[float, ...] = ()
    upper_bound: Callable | None = None
    rollout_policy: Callable | None = None
    obs_key: Callable | None = None

    def __post_init__(self):
        if not 0.0 < self.discount <= 1.0:
            raise ValidationError("discount must lie in (0, 1]")
        groups = [set(self.state_vars), set(self.next_vars), {self.action_var}, set(self.observation_vars), {self.reward_var}]
        if sum(len(g) for g in groups) != len(set().union(*groups)):
            raise LabelMismatch("state, action, observation and reward variables must be disjoint")
        for name in set().union(*groups):
            self.scm.var(name)
        if not self.actions:
            dom = self.scm.domain(self.action_var)
            if dom is None:
                raise ValidationError("action variable needs a finite domain")
            self.actions = tuple(dom)
        self.actions = tuple(float(a) for a in self.actions)
        self._action_set = set(self.actions)
        self._term_idx = None if self.terminal_var is None else self.state_vars.index(self.terminal_var)
        self._sim = None

    @classmethod
    def from_scm(cls, scm: Scm, discount: float = 0.95, **hooks) -> "PomdpView":
        """Select variables by label; next-state variables are named ``<state>_next``."""
        states = tuple(scm.with_label("state"))
        nexts = tuple(f"{s}_next" for s in states)
        for n in nexts:
            if not scm.is_endogenous(n) or "next_state" not in scm.labels.get(n, ()):
                raise LabelMismatch(f"state variable without labelled successor {n!r}")
        actions = scm.with_label("action")
        rewards = scm.with_label("reward")
        if len(actions) != 1 or len(rewards) != 1:
            raise LabelMismatch("need exactly one action and one reward variable")
        terminal = [s for s, n in zip(states, nexts) if "terminal" in scm.labels.get(n, ())]
        return cls(
            scm,
            states,
            nexts,
            actions[0],
            tuple(scm.with_label("observation")),
            rewards[0],
            tuple(scm.with_label("confounder")),
            discount,
            terminal[0] if terminal else None,
            **hooks,
        )

    def is_terminal(self, state: StateKey) -> bool:
        return self._term_idx is not None and state[self._term_idx] > 0.5

    def state_dict(self, state: StateKey) -> dict:
        return dict(zip(self.state_vars, state))

    def state_key(self, state: Mapping) -> StateKey:
        return tuple(float(state[v]) for v in self.state_vars)

    def check_action(self, action) -> float:
        a = float(action)
        if a not in self._action_set:
            raise UnknownAction(f"action {action!r} outside {self.actions}")
        return a

    @property
    def simulator(self) -> "_Simulator":
        if self._sim is None:
            self._sim = _Simulator(self)
        return self._sim


class _Simulator:
    """Compiled one-step programs and the noise they consume."""

    def __init__(self, view: PomdpView):
        scm = view.scm
        self.view = view
        fixed = (*view.state_vars, view.action_var)
        self.tprog = scm.program((*view.next_vars, view.reward_var), fixed)
        self.oprog = scm.program(view.observation_vars, (*fixed, *view.next_vars, view.reward_var))
        self.tnoise = tuple(nz for n, _, _, nz in self.tprog if scm.uses_noise(n))
        self.onoise = tuple(nz for n, _, _, nz in self.oprog if scm.uses_noise(n))
        dists = {u.name: u.dist for u in scm.exogenous}
        self.cat, self.gauss = [], []
        for nz in dict.fromkeys(self.tnoise + self.onoise):
            d = dists[nz]
            if isinstance(d, Categorical):
                self.cat.append((nz, list(np.cumsum(d.probabilities)[:-1])))
            else:
                self.gauss.append((nz, d.mean, math.sqrt(d.variance)))
        self.tmemo: dict = {}
        self.omemo: dict = {}
        # continuous observation noise never repeats, so caching it only grows memory
        self.cache_obs = not {nz for nz, _, _ in self.gauss} & set(self.onoise)

    def draw(self, rng: np.random.Generator) -> dict:
        out = {}
        if self.cat:
            us = rng.random(len(self.cat))
            for (nz, cdf), u in zip(self.cat, us):
                out[nz] = float(bisect.bisect_right(cdf, u))
        if self.gauss:
            zs = rng.standard_normal(len(self.gauss))
            for (nz, mean, sd), z in zip(self.gauss, zs):
                out[nz] = mean + sd * float(z)
        out["_u"] = float(rng.random())
        return out

    def noise_outcomes(self, limit: int = 4096):
        """All joint outcomes of the transition noise with probabilities, or
        None when some of it is continuous or the product is too large."""
        if not hasattr(self, "_outcomes"):
            dists = {u.name: u.dist for u in self.view.scm.exogenous}
            names = list(dict.fromkeys(self.tnoise))
            supports = []
            size = 1
            for nz in names:
                d = dists[nz]
                if not isinstance(d, Categorical):
                    self._outcomes = None
                    return None
                supports.append(d.support())
                size *= len(supports[-1])
            if size > limit:
                self._outcomes = None
            else:
                self._outcomes = [
                    ({nz: v for nz, (v, _) in zip(names, combo)}, math.prod(p for _, p in combo))
                    for combo in itertools.product(*supports)
                ]
        return self._outcomes

    def transition(self, state: StateKey, action: float, noise: Mapping):
        key = (state, action, tuple(noise[n] for n in self.tnoise))
        hit = self.tmemo.get(key)
        if hit is None:
            view = self.view
            values = dict(zip(view.state_vars, state))
            values[view.action_var] = action
            for name, fn, parents, nz in self.tprog:
                values[name] = fn(tuple(values[p] for p in parents), noise.get(nz, 0.0))
            hit = (tuple(values[n] for n in view.next_vars), values[view.reward_var])
            self.tmemo[key] = hit
        return hit

    def observe(self, state: StateKey, action: float, nxt: StateKey, reward: float, noise: Mapping) -> dict:
        key = (state, action, nxt, tuple(noise[n] for n in self.onoise))
        hit = self.omemo.get(key)
        if hit is None:
            view = self.view
            values = dict(zip(view.state_vars, state))
            values.update(zip(view.next_vars, nxt))
            values[view.action_var] = action
            values[view.reward_var] = reward
            for name, fn, parents, nz in self.oprog:
                values[name] = fn(tuple(values[p] for p in parents), noise.get(nz, 0.0))
            hit = {n: values[n] for n in view.observation_vars}
            if self.cache_obs:
                self.omemo[key] = hit
        return hit


def causal_transition(view: PomdpView, state: Mapping, action, scenario_noise: Mapping) -> tuple[dict, dict, float]:
    """One step under ``do(action_var = action)`` with the given exogenous values.

    Returns:
        (next state keyed by state-variable name, observation, reward).

    Raises:
        UnknownAction: action outside the action domain.
    """
    a = view.check_action(action)
    sim = view.simulator
    s = view.state_key(state)
    noise = {nz: float(scenario_noise.get(nz, 0.0)) for nz in sim.tnoise + sim.onoise}
    nxt, reward = sim.transition(s, a, noise)
    obs = sim.observe(s, a, nxt, reward, noise)
    return dict(zip(view.state_vars, nxt)), dict(obs), float(reward)


# ---------------------------------------------------------------------------
# Beliefs
# ---------------------------------------------------------------------------


@dataclass
class BeliefState:
    """Weighted particles over state-variable assignments."""

    states: list
    weights: np.ndarray
    state_vars: tuple[str, ...]
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = [tuple(float(v) for v in s) for s in self.states]
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.states) != len(self.weights):
            raise ValidationError("states and weights differ in length")
        if len(self.states) and abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValidationError("belief weights must sum to 1")

    @classmethod
    def uniform(cls, states: Sequence, state_vars: Sequence[str]) -> "BeliefState":
        n = len(states)
        return cls(list(states), np.full(n, 1.0 / n) if n else np.zeros(0), tuple(state_vars))

    @classmethod
    def point(cls, state: Mapping, state_vars: Sequence[str]) -> "BeliefState":
        return cls([tuple(state[v] for v in state_vars)], np.ones(1), tuple(state_vars))

    def __len__(self):
        return len(self.states)

    @property
    def particles(self) -> list[tuple[dict, float]]:
        return [(dict(zip(self.state_vars, s)), float(w)) for s, w in zip(self.states, self.weights)]

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def marginal(self, var: str) -> dict:
        i = self.state_vars.index(var)
        out: dict = {}
        for s, w in zip(self.states, self.weights):
            out[s[i]] = out.get(s[i], 0.0) + float(w)
        return dict(sorted(out.items()))

    def summary(self) -> dict:
        return {v: {f"{k:g}": round(p, 6) for k, p in self.marginal(v).items()} for v in self.state_vars}


def systematic_resample(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    positions = (rng.random() + np.arange(n)) / n
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right")


class _ObsLikelihood:
    """Memoized ``P(observation | state, action, next state)`` under the SCM."""

    def __init__(self, view: PomdpView, observation: Mapping):
        self.view = view
        self.obs = {k: float(v) for k, v in observation.items() if k in view.observation_vars}
        self.memo: dict = {}

    def log(self, state: StateKey, action: float, nxt: StateKey) -> float:
        key = (state, action, nxt)
        val = self.memo.get(key)
        if val is None:
            if not self.obs:
                val = 0.0
            else:
                v = self.view
                do = dict(zip(v.state_vars, state))
                do.update(zip(v.next_vars, nxt))
                do[v.action_var] = action
                val = log_likelihood(v.scm, self.obs, intervention=do)
            self.memo[key] = val
        return val


def update_belief(
    belief: BeliefState,
    action,
    observation: Mapping,
    view: PomdpView,
    rng: np.random.Generator,
    n_particles: int | None = None,
    exact: bool = True,
) -> BeliefState:
    """Particle-filter update under ``do(action)``.

    When the transition noise is finite (and ``exact`` is set) every particle
    is pushed through all noise outcomes, so rare successors are never lost;
    otherwise each particle takes one fresh noise draw. Particles are then
    reweighted by the observation likelihood. If the support exceeds
    ``n_particles`` or the effective sample size drops below half the
    particle count, the set is resampled systematically. If every weight
    vanishes the belief is rebuilt from the states consistent with the
    observation and ``info["depleted"]`` is set.

    Raises:
        EmptyBelief: the input belief has no particles.
        ParticleDepletion: no state at all explains the observation.
    """
    if len(belief) == 0:
        raise EmptyBelief("belief has no particles")
    a = view.check_action(action)
    sim = view.simulator
    lik = _ObsLikelihood(view, observation)
    n = n_particles or len(belief)
    outcomes = sim.noise_outcomes() if exact else None
    info = {"depleted": False, "resampled": False, "exact": outcomes is not None}
    if outcomes is not None:
        terms: dict = {}
        for s, w in zip(belief.states, belief.weights):
            if w <= 0:
                continue
            for noise, p in outcomes:
                nxt, _ = sim.transition(s, a, noise)
                ll = lik.log(s, a, nxt)
                if ll > -math.inf and p > 0:
                    terms.setdefault(nxt, []).append(math.log(w * p) + ll)
        states = list(terms)
        logw = np.array([logsumexp(terms[k]) for k in states]) if states else np.empty(0)
    else:
        idx = np.arange(len(belief)) if n == len(belief) else systematic_resample(belief.weights, n, rng)
        states, logw = [], np.empty(len(idx))
        for j, i in enumerate(idx):
            s = belief.states[i]
            nxt, _ = sim.transition(s, a, sim.draw(rng))
            states.append(nxt)
            prior = belief.weights[i] if n == len(belief) else 1.0
            logw[j] = lik.log(s, a, nxt) + math.log(prior) if prior > 0 else -math.inf
    if not np.isfinite(logw).any():
        states, w = _recover(view, lik, a)
        info["depleted"] = True
        return BeliefState(states, w, view.state_vars, info)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    out = BeliefState(states, w, view.state_vars, info)
    if len(out) > n or out.ess < min(n, len(out)) / 2:
        pick = systematic_resample(w, n, rng)
        out = BeliefState([states[i] for i in pick], np.full(n, 1.0 / n), view.state_vars, info)
        info["resampled"] = True
    return out


def _recover(view: PomdpView, lik: _ObsLikelihood, action: float):
    domains = [view.scm.domain(v) for v in view.state_vars]
    if any(d is None for d in domains):
        raise ParticleDepletion("cannot enumerate continuous state variables")
    states, logw = [], []
    for s in itertools.product(*domains):
        lw = lik.log(s, action, s)
        if lw > -math.inf:
            states.append(tuple(s))
            logw.append(lw)
    if not states:
        raise ParticleDepletion("no state is consistent with the observation")
    logw = np.array(logw)
    w = np.exp(logw - logw.max())
    return states, w / w.sum()


# ---------------------------------------------------------------------------
# Tree search
# ---------------------------------------------------------------------------


@dataclass
class PlanConfig:
    """Search settings.

    Attributes:
        n_scenarios: determinized scenarios ``K``.
        max_depth: horizon ``D``; values beyond it count as zero.
        max_expansions: node-expansion budget (reproducible mode).
        time_budget_ms: wall-clock budget, used when ``budget_mode`` is
            ``"wallclock"``.
        exploration: when set, trials descend by a UCB score on lower bounds
            with this constant instead of by the upper bound.
        regularization: penalty per expanded node in the lower bound.
        rollout_policy: ``"greedy-home"`` uses the view's rollout hook,
            ``"random"`` draws actions from the scenario stream.
        gap_tolerance: stop once ``upper - lower`` at the root is below it.
    """

    n_scenarios: int = 16
    max_depth: int = 10
    max_expansions: int = 200
    time_budget_ms: float = 1000.0
    budget_mode: str = "expansions"
    exploration: float | None = None
    regularization: float = 0.0
    rollout_policy: str = "greedy-home"
    gap_tolerance: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n_scenarios < 1 or self.max_depth < 1:
            raise ValidationError("n_scenarios and max_depth must be >= 1")
        if self.max_expansions < 0 or self.time_budget_ms <= 0:
            raise ValidationError("budget must be positive")
        if self.budget_mode not in ("expansions", "wallclock"):
            raise ValidationError(f"unknown budget mode {self.budget_mode!r}")
        if self.rollout_policy not in ("random", "greedy-home"):
            raise ValidationError(f"unknown rollout policy {self.rollout_policy!r}")


class _Scenario:
    __slots__ = ("rng", "noise")

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.noise: list = []


class _Node:
    __slots__ = ("depth", "parts", "lower", "upper", "rlower", "l0", "u0", "children", "weight")

    def __init__(self, depth, parts, weight):
        self.depth = depth
        self.parts = parts  # list of (scenario index, state)
        self.weight = weight  # fraction of all scenarios reaching this node
        self.children = None


class _ActNode:
    __slots__ = ("reward", "kids", "lower", "upper", "rlower")

    def __init__(self, reward, kids):
        self.reward = reward
        self.kids = kids


@dataclass
class PlanResult:
    action: float
    lower: float
    upper: float
    stats: dict

    def __iter__(self):
        return iter((self.action, self.lower, self.upper, self.stats))


class _Search:
    def __init__(self, view: PomdpView, config: PlanConfig, belief: BeliefState):
        self.view = view
        self.cfg = config
        self.sim = view.simulator
        self.gamma = view.discount
        rng = np.random.default_rng(config.seed)
        k = config.n_scenarios
        starts = systematic_resample(belief.weights, k, rng)
        seeds = rng.integers(0, 2**63, size=k)
        self.scen = [_Scenario(int(s)) for s in seeds]
        self.start = [belief.states[i] for i in starts]
        self.umemo: dict = {}
        self.rmemo: dict = {}
        self.expansions = 0
        self.depth_reached = 0
        self.n_nodes = 1
        self.use_greedy = config.rollout_policy == "greedy-home" and view.rollout_policy is not None

    def noise(self, si: int, depth: int) -> dict:
        sc = self.scen[si]
        while len(sc.noise) <= depth:
            sc.noise.append(self.sim.draw(sc.rng))
        return sc.noise[depth]

    def upper0(self, state, depth) -> float:
        left = self.cfg.max_depth - depth
        if left <= 0 or self.view.is_terminal(state):
            return 0.0
        key = (state, left)
        val = self.umemo.get(key)
        if val is None:
            if self.view.upper_bound is not None:
                val = float(self.view.upper_bound(self.view.state_dict(state), left))
            else:
                val = self._generic_upper(left)
            self.umemo[key] = val
        return val

    def _generic_upper(self, left):
        dom = self.view.scm.domain(self.view.reward_var)
        if dom is None:
            raise ValidationError("reward variable needs a finite domain or an upper_bound hook")
        r = max(max(dom), 0.0)
        return r * sum(self.gamma**i for i in range(left))

    def rollout(self, si: int, state, depth: int) -> float:
        key = (si, state, depth)
        val = self.rmemo.get(key)
        if val is not None:
            return val
        total, s, d = 0.0, state, depth
        path = []
        while d < self.cfg.max_depth and not self.view.is_terminal(s):
            noise = self.noise(si, d)
            if self.use_greedy:
                a = float(self.view.rollout_policy(self.view.state_dict(s)))
            else:
                acts = self.view.actions
                a = acts[min(int(noise["_u"] * len(acts)), len(acts) - 1)]
            nxt, r = self.sim.transition(s, a, noise)
            path.append(r)
            s, d = nxt, d + 1
        for r in reversed(path):
            total = r + self.gamma * total
        self.rmemo[key] = total
        return total

    def make_node(self, depth, parts) -> _Node:
        node = _Node(depth, parts, len(parts) / self.cfg.n_scenarios)
        n = len(parts)
        node.l0 = sum(self.rollout(si, s, depth) for si, s in parts) / n
        node.u0 = sum(self.upper0(s, depth) for _, s in parts) / n
        node.lower = node.rlower = node.l0
        node.upper = node.u0
        self.depth_reached = max(self.depth_reached, depth)
        return node

    def closed(self, node: _Node) -> bool:
        return node.depth >= self.cfg.max_depth or all(self.view.is_terminal(s) for _, s in node.parts)

    def expand(self, node: _Node):
        self.expansions += 1
        node.children = {}
        n = len(node.parts)
        for a in self.view.actions:
            groups: dict = {}
            rsum = 0.0
            for si, s in node.parts:
                if self.view.is_terminal(s):
                    groups.setdefault(("__terminal__",), []).append((si, s))
                    continue
                noise = self.noise(si, node.depth)
                nxt, r = self.sim.transition(s, a, noise)
                rsum += r
                key = self._obs_key(s, a, nxt, r, noise)
                groups.setdefault(key, []).append((si, nxt))
            kids = {k: self.make_node(node.depth + 1, p) for k, p in groups.items()}
            self.n_nodes += len(kids)
            act = _ActNode(rsum / n, kids)
            self._update_act(act, n)
            node.children[a] = act
        self._update_node(node)

    def _obs_key(self, s, a, nxt, r, noise):
        if self.view.is_terminal(nxt):
            return ("__terminal__",)
        obs = self.sim.observe(s, a, nxt, r, noise)
        if self.view.obs_key is not None:
            return self.view.obs_key(obs)
        return tuple(round(obs[v], 6) for v in self.view.observation_vars)

    def _update_act(self, act: _ActNode, n: int):
        g = self.gamma
        act.lower = act.reward + g * sum(len(c.parts) / n * c.lower for c in act.kids.values())
        act.upper = act.reward + g * sum(len(c.parts) / n * c.upper for c in act.kids.values())
        act.rlower = act.reward + g * sum(len(c.parts) / n * c.rlower for c in act.kids.values())

    def _update_node(self, node: _Node):
        acts = node.children.values()
        node.lower = max(node.l0, max(a.lower for a in acts))
        node.upper = min(node.u0, max(a.upper for a in acts))
        lam = self.cfg.regularization * node.weight
        node.rlower = max(node.l0, max(a.rlower for a in acts) - lam)

    def pick_action(self, node: _Node) -> float:
        items = list(node.children.items())
        c = self.cfg.exploration
        if c is None:
            return max(items, key=lambda kv: kv[1].upper)[0]
        total = sum(len(k.parts) for _, a in items for k in a.kids.values()) or 1
        return max(items, key=lambda kv: kv[1].lower + c * math.sqrt(math.log(total + 1) / (1 + _visits(kv[1]))))[0]

    def trial(self) -> bool:
        node, path = self.root, []
        tol = self.cfg.gap_tolerance
        while node.children is not None:
            a = self.pick_action(node)
            act = node.children[a]
            open_kids = [k for k in act.kids.values() if k.upper - k.lower > tol and not self.closed(k)]
            if not open_kids:
                if self.cfg.exploration is not None:
                    open_any = [
                        (an, k) for an, ac in node.children.items() for k in ac.kids.values()
                        if k.upper - k.lower > tol and not self.closed(k)
                    ]
                    if not open_any:
                        return False
                    a, child = max(open_any, key=lambda t: t[1].weight * (t[1].upper - t[1].lower))
                    act = node.children[a]
                else:
                    return False
            else:
                child = max(open_kids, key=lambda k: k.weight * (k.upper - k.lower))
            path.append((node, act))
            node = child
        if self.closed(node):
            return False
        self.expand(node)
        for parent, act in reversed(path):
            self._update_act(act, len(parent.parts))
            self._update_node(parent)
        return True

    def run(self, budget_mode: str) -> PlanResult:
        t0 = time.perf_counter()
        parts = list(enumerate(self.start))
        self.root = self.make_node(0, parts)
        cfg = self.cfg
        stop_at = t0 + cfg.time_budget_ms / 1000.0
        while self.root.upper - self.root.lower > cfg.gap_tolerance and not self.closed(self.root):
            if budget_mode == "expansions" and self.expansions >= cfg.max_expansions:
                break
            if budget_mode == "wallclock" and time.perf_counter() >= stop_at:
                break
            if not self.trial():
                break
        root = self.root
        if root.children is None:
            action = self._fallback_action()
        else:
            action = max(root.children.items(), key=lambda kv: (kv[1].rlower, -self.view.actions.index(kv[0])))[0]
        stats = {
            "expansions": self.expansions,
            "depth_reached": self.depth_reached,
            "nodes": self.n_nodes,
            "lower": root.lower,
            "upper": root.upper,
            "elapsed_ms": (time.perf_counter() - t0) * 1000.0,
            "fallback": root.children is None,
        }
        if root.children is not None:
            stats["q_lower"] = {f"{a:g}": act.lower for a, act in root.children.items()}
            stats["q_upper"] = {f"{a:g}": act.upper for a, act in root.children.items()}
        return PlanResult(action, root.lower, root.upper, stats)

    def _fallback_action(self) -> float:
        si, s = 0, self.start[0]
        if self.use_greedy and not self.view.is_terminal(s):
            return float(self.view.rollout_policy(self.view.state_dict(s)))
        noise = self.noise(si, 0)
        acts = self.view.actions
        return acts[min(int(noise["_u"] * len(acts)), len(acts) - 1)]


def _visits(act: _ActNode) -> int:
    stack, n = list(act.kids.values()), 0
    while stack:
        node = stack.pop()
        if node.children is not None:
            n += 1
            for a in node.children.values():
                stack.extend(a.kids.values())
    return n


def plan(belief: BeliefState, view: PomdpView, config: PlanConfig = PlanConfig()) -> PlanResult:
    """Choose an action by determinized sparse tree search.

    Returns:
        PlanResult unpacking to ``(action, lower, upper, stats)``; the bounds
        bracket the scenario-average value of the root.

    Raises:
        EmptyBelief: no particles.
    """
    if len(belief) == 0:
        raise EmptyBelief("cannot plan from an empty belief")
    return _Search(view, config, belief).run(config.budget_mode)


# ---------------------------------------------------------------------------
# Observational baseline
# ---------------------------------------------------------------------------


@dataclass
class ObservationalModel:
    """Counting estimate of ``P(s' | s, a)`` from logged transitions.

    ``transitions[(s, a)]`` maps successor to probability with add-one
    smoothing over the successors ever observed; pairs never logged are
    absent and reported by :meth:`supported`.
    """

    transitions: dict
    counts: dict
    action_freq: dict
    support: tuple
    rewards: dict

    def supported(self, s: Hashable, a: Hashable) -> bool:
        return (s, a) in self.transitions

    def row(self, s: Hashable, a: Hashable) -> dict | None:
        return self.transitions.get((s, a))

    def prob(self, s, a, s_next) -> float | None:
        row = self.row(s, a)
        return None if row is None else row.get(s_next, 0.0)

    def expected_reward(self, s, a) -> float | None:
        return self.rewards.get((s, a))


def fit_observational(dataset: Sequence[tuple]) -> ObservationalModel:
    """Maximum-likelihood tables with add-one smoothing.

    Records are ``(s, a, s_next)`` or ``(s, a, s_next, reward)`` with
    hashable components.
    """
    if not dataset:
        raise ValidationError("dataset is empty")
    counts: dict = {}
    acts: dict = {}
    rsum: dict = {}
    support = []
    seen = set()
    for rec in dataset:
        s, a, s2 = rec[:3]
        counts.setdefault((s, a), {})
        counts[(s, a)][s2] = counts[(s, a)].get(s2, 0) + 1
        acts.setdefault(s, {})
        acts[s][a] = acts[s].get(a, 0) + 1
        if len(rec) > 3:
            tot, n = rsum.get((s, a), (0.0, 0))
            rsum[(s, a)] = (tot + float(rec[3]), n + 1)
        if s2 not in seen:
            seen.add(s2)
            support.append(s2)
    support = tuple(support)
    trans = {}
    for key, row in counts.items():
        n = sum(row.values())
        trans[key] = {s2: (row.get(s2, 0) + 1) / (n + len(support)) for s2 in support}
    freq = {s: {a: c / sum(row.values()) for a, c in row.items()} for s, row in acts.items()}
    rewards = {k: tot / n for k, (tot, n) in rsum.items()}
    return ObservationalModel(trans, counts, freq, support, rewards)


def finite_horizon_q(
    kernel: Callable,
    reward: Callable,
    states: Sequence,
    actions: Sequence,
    horizon: int,
    discount: float,
    terminal: Callable = lambda s: False,
) -> dict:
    """Finite-horizon Q values ``Q[(s, a)]`` by backward induction.

    Args:
        kernel: ``(s, a) -> {s': p}``.
        reward: ``(s, a) -> expected immediate reward``.
    """
    v = {s: 0.0 for s in states}
    q: dict = {}
    for _ in range(horizon):
        q = {}
        for s in states:
            if terminal(s):
                for a in actions:
                    q[(s, a)] = 0.0
                continue
            for a in actions:
                q[(s, a)] = reward(s, a) + discount * sum(p * v.get(s2, 0.0) for s2, p in kernel(s, a).items())
        v = {s: (0.0 if terminal(s) else max(q[(s, a)] for a in actions)) for s in states}
    return q


def greedy(q: Mapping, state, actions: Sequence):
    """Best action for ``state``; ties go to the earlier action."""
    return max(actions, key=lambda a: (q[(state, a)], -list(actions).index(a)))
