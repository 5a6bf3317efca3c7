"""Grid-world dynamics: actuation, wind drift, collisions, sensing."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import InvalidAction, StateNotFlying, ValidationError
from .grid import ACTIONS, DIRECTIONS, LAND_ACTION, MOVES, MineMap

FLYING, LANDED, CRASHED = 0, 1, 2
STATUS_NAMES = ("Flying", "Landed", "Crashed")
BEAMS = ("N", "S", "E", "W")
DROPOUT = -1


def _check_prob(name, p):
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {p}")


@dataclass(frozen=True)
class WindMode:
    """Calm when ``direction`` is None, else a gust with drift probability."""

    direction: str | None = None
    drift_prob: float = 0.0

    def __post_init__(self):
        if self.direction is not None and self.direction not in DIRECTIONS:
            raise ValidationError(f"unknown wind direction {self.direction!r}")
        _check_prob("drift_prob", self.drift_prob)

    @property
    def calm(self) -> bool:
        return self.direction is None or self.drift_prob == 0.0

    @property
    def name(self) -> str:
        return "Calm" if self.direction is None else f"Gust({self.direction},{self.drift_prob:g})"


CALM = WindMode()


@dataclass(frozen=True)
class WindRegime:
    """Set of wind modes with uniform re-draw at rate ``switch_prob``.

    ``strength`` is the anemometer magnitude of a gust.
    """

    modes: tuple[WindMode, ...] = (CALM,)
    switch_prob: float = 0.0
    strength: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.modes:
            raise ValidationError("wind regime needs at least one mode")
        _check_prob("switch_prob", self.switch_prob)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def switch_probs(self) -> tuple[float, ...]:
        """P(switch outcome): 0 keeps the mode, k re-draws mode k-1."""
        m = self.n_modes
        return (1.0 - self.switch_prob,) + (self.switch_prob / m,) * m

    def airflow(self, mode: int) -> tuple[float, float]:
        wm = self.modes[mode]
        if wm.direction is None:
            return 0.0, 0.0
        dx, dy = DIRECTIONS[wm.direction]
        return self.strength * dx, self.strength * dy


@dataclass(frozen=True)
class DustField:
    """Static per-cell dust levels plus actuation and dropout coefficients."""

    levels: tuple = ()  # ((x, y), d) pairs; unlisted cells have d = 0
    kappa: float = 0.5
    lam: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(sorted((tuple(c), float(d)) for c, d in self.levels)))
        for _, d in self.levels:
            _check_prob("dust level", d)
        _check_prob("kappa", self.kappa)
        _check_prob("lam", self.lam)
        object.__setattr__(self, "_lookup", dict(self.levels))

    def level(self, x: int, y: int) -> float:
        return self._lookup.get((x, y), 0.0)

    def distinct_levels(self, cells) -> list[float]:
        return sorted({self.level(x, y) for x, y in cells})


@dataclass(frozen=True)
class EnvParams:
    """Stochastic and reward constants of the simulator."""

    p0: float = 0.95
    sigma_obs: float = 0.5
    r_success: float = 100.0
    r_crash: float = 100.0
    step_cost: float = 1.0
    bump_cost: float = 1.0
    airflow_sigma: float = 0.5

    def __post_init__(self):
        _check_prob("p0", self.p0)
        if self.sigma_obs < 0 or self.airflow_sigma < 0:
            raise ValidationError("noise scales must be non-negative")

    def act_prob(self, dust: DustField, d: float) -> float:
        return self.p0 * (1.0 - dust.kappa * d)

    def offset_pmf(self) -> tuple[list[int], list[float]]:
        """Beam noise: N(0, sigma_obs^2) rounded to whole cells, within 3 sigma."""
        if self.sigma_obs == 0:
            return [0], [1.0]
        k = max(1, math.ceil(3 * self.sigma_obs))
        cdf = lambda z: 0.5 * (1.0 + math.erf(z / (self.sigma_obs * math.sqrt(2))))
        mass = [cdf(i + 0.5) - cdf(i - 0.5) for i in range(-k, k + 1)]
        total = sum(mass)
        return list(range(-k, k + 1)), [m / total for m in mass]


@dataclass(frozen=True)
class EnvState:
    pos: tuple[int, int]
    status: int = FLYING
    wind: int = 0
    link_lost: bool = True
    step: int = 0

    def to_dict(self) -> dict:
        return {
            "pos": list(self.pos),
            "status": STATUS_NAMES[self.status],
            "wind": self.wind,
            "link_lost": self.link_lost,
            "step": self.step,
        }


@dataclass(frozen=True)
class ObsRecord:
    """Four beam ranges (N, S, E, W; None is a dropout), landing flag and
    an anemometer reading."""

    ranges: tuple
    landed: bool = False
    airflow: tuple[float, float] = (0.0, 0.0)

    def to_dict(self) -> dict:
        return {"ranges": list(self.ranges), "landed": self.landed, "airflow": list(self.airflow)}


def resolve_move(
    mmap: MineMap,
    pos: tuple[int, int],
    action: int,
    act_ok: bool,
    drift: str | None,
    params: EnvParams,
) -> tuple[tuple[int, int], int, float]:
    """Deterministic part of a transition.

    Args:
        drift: direction of the wind push this step, or None.

    Returns:
        (next position, next status, reward).
    """
    x, y = pos
    reward = -params.step_cost
    if action == LAND_ACTION and act_ok:
        if mmap.landable(x, y):
            return pos, LANDED, params.r_success
        return pos, CRASHED, -params.r_crash
    if action in MOVES and act_ok:
        dx, dy = MOVES[action]
        if mmap.is_wall(x + dx, y + dy):
            reward -= params.bump_cost
        else:
            x, y = x + dx, y + dy
    if drift is not None:
        dx, dy = DIRECTIONS[drift]
        if mmap.is_wall(x + dx, y + dy):
            return (x, y), CRASHED, -params.r_crash
        x, y = x + dx, y + dy
    return (x, y), FLYING, reward


def wall_ranges(mmap: MineMap, pos: tuple[int, int]) -> tuple[int, ...]:
    return tuple(mmap.wall_distance(pos[0], pos[1], b) for b in BEAMS)


def max_range(mmap: MineMap) -> int:
    return max(mmap.width, mmap.height) - 2


def step(
    state: EnvState,
    mmap: MineMap,
    dust: DustField,
    action: int,
    rng: np.random.Generator,
    regime: WindRegime = WindRegime(),
    params: EnvParams = EnvParams(),
) -> tuple[EnvState, ObsRecord, float, bool]:
    """Advance the simulator by one step.

    Raises:
        InvalidAction: action outside ``range(len(ACTIONS))``.
        StateNotFlying: the drone already landed or crashed.
    """
    if not isinstance(action, (int, np.integer)) or not 0 <= action < len(ACTIONS):
        raise InvalidAction(f"invalid action {action!r}")
    if state.status != FLYING:
        raise StateNotFlying(f"drone is {STATUS_NAMES[state.status]}")
    x, y = state.pos
    act_ok = rng.random() < params.act_prob(dust, dust.level(x, y))
    mode = regime.modes[state.wind]
    gust = mode.direction is not None and rng.random() < mode.drift_prob
    pos, status, reward = resolve_move(mmap, state.pos, int(action), act_ok, mode.direction if gust else None, params)
    wind = state.wind
    if rng.random() < regime.switch_prob:
        wind = int(rng.integers(regime.n_modes))
    obs = observe(mmap, dust, pos, status, state.wind, rng, regime, params)
    nxt = replace(state, pos=pos, status=status, wind=wind, step=state.step + 1)
    return nxt, obs, reward, status != FLYING


def observe(mmap, dust, pos, status, wind, rng, regime, params) -> ObsRecord:
    """Beams read from ``pos``; the anemometer sees the wind acting this step."""
    offsets, pmf = params.offset_pmf()
    cap = max_range(mmap)
    d = dust.level(*pos)
    ranges = []
    for true in wall_ranges(mmap, pos):
        off = offsets[int(rng.choice(len(pmf), p=pmf))] if len(pmf) > 1 else 0
        if rng.random() < dust.lam * d:
            ranges.append(None)
        else:
            ranges.append(min(max(true + off, 0), cap))
    ax, ay = regime.airflow(wind)
    s = params.airflow_sigma
    air = (ax + s * rng.standard_normal(), ay + s * rng.standard_normal())
    return ObsRecord(tuple(ranges), status == LANDED, (float(air[0]), float(air[1])))
