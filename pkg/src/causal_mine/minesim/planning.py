"""Planner hooks for mine maps: bounds, rollouts and observation grouping."""

from __future__ import annotations

from ..planner import PomdpView
from .env import BEAMS, FLYING, DustField, EnvParams, WindRegime
from .grid import DIRECTIONS, HOVER, LAND_ACTION, MOVES, MineMap
from .model import env_scm


class MineHeuristics:
    """Distance-based value bounds and a greedy return-to-home policy.

    ``reach`` counts steps to a landable cell when each step may add one
    wind push in any gust direction of the model, so it never overestimates
    progress; the upper bound pretends every step succeeds.
    """

    def __init__(self, mmap: MineMap, regime: WindRegime, params: EnvParams, discount: float):
        self.map = mmap
        self.params = params
        self.gamma = discount
        self.cells = mmap.open_cells
        gusts = sorted({m.direction for m in regime.modes if m.direction is not None and m.drift_prob > 0})
        self.home = self._distances(())
        self.reach = self._distances(tuple(gusts))
        self.modes = [regime.airflow(m) for m in range(regime.n_modes)]

    def _neighbours(self, c, gusts):
        x, y = c
        firsts = [c] + [(x + dx, y + dy) for dx, dy in MOVES.values() if not self.map.is_wall(x + dx, y + dy)]
        out = set(firsts)
        for fx, fy in firsts:
            for g in gusts:
                dx, dy = DIRECTIONS[g]
                if not self.map.is_wall(fx + dx, fy + dy):
                    out.add((fx + dx, fy + dy))
        return out

    def _distances(self, gusts) -> dict:
        inf = float("inf")
        dist = {c: (0 if self.map.landable(*c) else inf) for c in self.cells}
        nbrs = {c: self._neighbours(c, gusts) for c in self.cells}
        changed = True
        while changed:
            changed = False
            for c in self.cells:
                best = min((dist[q] for q in nbrs[c]), default=inf) + 1
                if best < dist[c]:
                    dist[c] = best
                    changed = True
        return {self.map.index(*c): d for c, d in dist.items()}

    def upper_bound(self, state: dict, steps_left: int) -> float:
        if state["status"] != FLYING or steps_left <= 0:
            return 0.0
        g, p = self.gamma, self.params
        walk = -p.step_cost * sum(g**i for i in range(steps_left))
        d = self.reach.get(int(state["pos"]), float("inf"))
        if d + 1 <= steps_left:
            land = -p.step_cost * sum(g**i for i in range(int(d))) + g**d * p.r_success
            return max(walk, land)
        return walk

    def rollout(self, state: dict) -> int:
        x, y = self.map.coords(int(state["pos"]))
        if self.map.landable(x, y):
            return LAND_ACTION
        here = self.home.get(self.map.index(x, y), float("inf"))
        best, choice = here, HOVER
        for a, (dx, dy) in MOVES.items():
            if self.map.is_wall(x + dx, y + dy):
                continue
            d = self.home[self.map.index(x + dx, y + dy)]
            if d < best:
                best, choice = d, a
        return choice

    def obs_key(self, obs: dict) -> tuple:
        beams = tuple(int(obs[f"beam_{b}"]) for b in BEAMS)
        ax, ay = obs["airflow_x"], obs["airflow_y"]
        mode = min(range(len(self.modes)), key=lambda m: (ax - self.modes[m][0]) ** 2 + (ay - self.modes[m][1]) ** 2)
        return beams + (int(obs["landed"]), mode)


def mine_view(
    mmap: MineMap,
    dust: DustField = DustField(),
    regime: WindRegime = WindRegime(),
    params: EnvParams = EnvParams(),
    discount: float = 0.95,
    observational_policy: bool = False,
) -> PomdpView:
    """Planner view of :func:`env_scm` with mine-specific hooks."""
    scm = env_scm(mmap, dust, regime, params, observational_policy)
    h = MineHeuristics(mmap, regime, params, discount)
    return PomdpView.from_scm(scm, discount, upper_bound=h.upper_bound, rollout_policy=h.rollout, obs_key=h.obs_key)
