"""Historical pilot logs in which the wind is an unobserved confounder."""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .env import FLYING, DustField, EnvParams, EnvState, WindRegime, step
from .grid import ACTIONS, FREE, MineMap
from .model import AGAINST, PILOT_FOLLOW


def pilot_action(mode, rng: np.random.Generator, follow: float = PILOT_FOLLOW) -> int:
    """Wind-aware pilot: oppose a gust with probability ``follow``, else uniform."""
    if mode.direction is not None and rng.random() < follow:
        return AGAINST[mode.direction]
    return int(rng.integers(len(ACTIONS)))


def gen_observational_log(
    mmap: MineMap,
    regime: WindRegime,
    episodes: int,
    rng: np.random.Generator,
    dust: DustField = DustField(),
    params: EnvParams = EnvParams(),
    pilot_follow: float = PILOT_FOLLOW,
    max_len: int = 20,
    starts=None,
    initial_wind: int | None = None,
) -> list[tuple]:
    """Simulate manually flown episodes and log ``(s, a, s', r)`` records.

    States are ``(x, y, status)`` tuples. The pilot sees the wind but the
    log does not record it.

    Args:
        starts: candidate start cells; defaults to every free cell.
        initial_wind: wind mode at launch; drawn uniformly when None.
    """
    if episodes < 1:
        raise ValidationError("episodes must be at least 1")
    cells = list(starts) if starts is not None else mmap.cells_of(FREE)
    log = []
    for _ in range(episodes):
        start = cells[int(rng.integers(len(cells)))]
        wind = int(rng.integers(regime.n_modes)) if initial_wind is None else initial_wind
        state = EnvState(start, FLYING, wind, False, 0)
        for _ in range(max_len):
            a = pilot_action(regime.modes[state.wind], rng, pilot_follow)
            nxt, _, reward, done = step(state, mmap, dust, a, rng, regime, params)
            log.append(((*state.pos, state.status), a, (*nxt.pos, nxt.status), reward))
            state = nxt
            if done:
                break
    return log
