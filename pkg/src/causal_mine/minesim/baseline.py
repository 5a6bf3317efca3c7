"""Non-causal comparison policy fitted to historical pilot logs."""

from __future__ import annotations

import numpy as np

from ..planner import BeliefState, ObservationalModel, finite_horizon_q, fit_observational, greedy
from .env import FLYING, DustField, EnvParams, WindRegime
from .grid import ACTIONS, MineMap
from .logs import gen_observational_log


class ObservationalPolicy:
    """Greedy finite-horizon policy on the conditional kernel ``P(s'|s,a)``.

    The kernel is estimated from confounded logs, so an action is credited
    with whatever the wind tended to do while the pilot chose it. Pairs
    never seen in the log are treated as crashes.
    """

    name = "observational"

    def __init__(self, mmap: MineMap, model: ObservationalModel, params: EnvParams, horizon: int, discount: float):
        self.map = mmap
        self.model = model
        states = {(x, y, FLYING) for x, y in mmap.open_cells}
        for row in model.transitions.values():
            states.update(row)
        self.states = sorted(states)
        actions = list(range(len(ACTIONS)))

        def kernel(s, a):
            return model.row(s, a) or {}

        def reward(s, a):
            r = model.expected_reward(s, a)
            return -params.r_crash if r is None else r

        self.q = finite_horizon_q(kernel, reward, self.states, actions, horizon, discount, lambda s: s[2] != FLYING)
        self.actions = actions

    def __call__(self, belief: BeliefState) -> int:
        pos = max(belief.marginal("pos").items(), key=lambda kv: (kv[1], -kv[0]))[0]
        x, y = self.map.coords(int(pos))
        return int(greedy(self.q, (x, y, FLYING), self.actions))


def observational_policy(
    mmap: MineMap,
    regime: WindRegime,
    rng: np.random.Generator,
    dust: DustField = DustField(),
    params: EnvParams = EnvParams(),
    episodes: int = 4000,
    horizon: int = 20,
    discount: float = 0.95,
) -> ObservationalPolicy:
    log = gen_observational_log(mmap, regime, episodes, rng, dust, params)
    model = fit_observational(log)
    return ObservationalPolicy(mmap, model, params, horizon, discount)
