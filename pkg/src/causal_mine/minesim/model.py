"""Ground-truth one-step SCM of the simulator."""

from __future__ import annotations

import itertools

from ..scm import Add, Categorical, Const, EndogenousVar, ExogenousVar, Gate, Gaussian, Noise, Parent, Scm, Table
from .env import (
    BEAMS,
    CRASHED,
    DROPOUT,
    FLYING,
    LANDED,
    DustField,
    EnvParams,
    WindRegime,
    max_range,
    resolve_move,
    wall_ranges,
)
from .grid import ACTIONS, MineMap

STATE_VARS = ("pos", "wind", "status")
OBS_VARS = tuple(f"beam_{b}" for b in BEAMS) + ("landed", "airflow_x", "airflow_y")
PILOT_FOLLOW = 0.8
AGAINST = {"N": 1, "S": 0, "E": 3, "W": 2}  # action opposing a gust from each direction


class _Builder:
    def __init__(self):
        self.endo, self.exo, self.labels = [], [], {}

    def add(self, name, parents, mechanism, dist=None, labels=()):
        noise = f"U_{name}"
        self.endo.append(EndogenousVar(name, tuple(parents), mechanism, noise))
        self.exo.append(ExogenousVar(noise, dist if dist is not None else Gaussian(0.0, 0.0)))
        if labels:
            self.labels[name] = tuple(labels)

    def build(self) -> Scm:
        return Scm(self.exo, self.endo, self.labels)


def _select(values: list[float], n_branches: int):
    """Parent 0 picks which binary draw (parents 1..n) is returned.

    ``values[i]`` is the selector value routed to draw ``i``; unmatched
    selector values give 0.
    """
    if not values:
        return Const(0.0)
    entries = {}
    for sel in values:
        for bits in itertools.product((0.0, 1.0), repeat=n_branches):
            entries[(float(sel), *bits)] = bits[values.index(sel)]
    return Table.from_dict(entries, 0.0)


def start_distribution(mmap: MineMap, cells=None) -> Categorical:
    cells = mmap.open_cells if cells is None else list(cells)
    probs = [0.0] * mmap.n_cells
    for x, y in cells:
        probs[mmap.index(x, y)] = 1.0 / len(cells)
    return Categorical(tuple(probs))


def env_scm(
    mmap: MineMap,
    dust: DustField = DustField(),
    regime: WindRegime = WindRegime(),
    params: EnvParams = EnvParams(),
    observational_policy: bool = False,
    pilot_follow: float = PILOT_FOLLOW,
) -> Scm:
    """One-step SCM whose kernel under ``do(action)`` equals :func:`step`.

    Positions are cell indices ``y * width + x``. With ``observational_policy``
    the action is chosen by the wind-aware pilot of the historical logs
    (wind is then a parent of action); otherwise it is an uniform noise.
    """
    b = _Builder()
    cells = mmap.open_cells
    idx = {c: mmap.index(*c) for c in cells}
    n_modes = regime.n_modes

    b.add("pos", (), Noise(), start_distribution(mmap), ("state",))
    b.add("wind", (), Noise(), Categorical((1.0 / n_modes,) * n_modes), ("state", "confounder", "explain"))
    b.add("status", (), Noise(), Categorical((1.0, 0.0, 0.0)), ("state",))

    gust_modes = [m for m, mode in enumerate(regime.modes) if mode.direction is not None]
    gust_draws = []
    for m in gust_modes:
        p = regime.modes[m].drift_prob
        b.add(f"gust_draw_{m}", (), Noise(), Categorical((1.0 - p, p)))
        gust_draws.append(f"gust_draw_{m}")
    b.add(
        "gust",
        ("wind", *gust_draws),
        _select(gust_modes, len(gust_modes)),
        labels=("explain",),
    )

    n_act = len(ACTIONS)
    if observational_policy:
        b.add("pilot_follow", (), Noise(), Categorical((1.0 - pilot_follow, pilot_follow)))
        b.add("pilot_pick", (), Noise(), Categorical((1.0 / n_act,) * n_act))
        table = {}
        for m, mode in enumerate(regime.modes):
            for follow in (0, 1):
                for pick in range(n_act):
                    gusty = mode.direction is not None
                    table[(m, follow, pick)] = AGAINST[mode.direction] if gusty and follow else pick
        b.add("action", ("wind", "pilot_follow", "pilot_pick"), Table.from_dict(table), labels=("action", "explain"))
    else:
        b.add("action", (), Noise(), Categorical((1.0 / n_act,) * n_act), ("action", "explain"))

    dust_of = {idx[c]: dust.level(*c) for c in cells}
    levels = sorted(set(dust_of.values()))
    b.add("dust", ("pos",), Table.from_dict(dust_of), labels=("explain",))
    draws = []
    for k, d in enumerate(levels):
        p = params.act_prob(dust, d)
        b.add(f"act_draw_{k}", (), Noise(), Categorical((1.0 - p, p)))
        draws.append(f"act_draw_{k}")
    b.add(
        "act_ok",
        ("dust", *draws),
        _select(levels, len(levels)),
        labels=("explain",),
    )

    pos_t, status_t, reward_t = {}, {}, {}
    for c in cells:
        for a in range(n_act):
            for ok in (0, 1):
                for m, mode in enumerate(regime.modes):
                    for g in (0, 1):
                        drift = mode.direction if g and mode.direction is not None else None
                        pos, status, reward = resolve_move(mmap, c, a, bool(ok), drift, params)
                        key = (idx[c], a, ok, m, g)
                        pos_t[key] = idx[pos]
                        status_t[key] = status
                        reward_t[key] = reward
    trans_parents = ("status", "pos", "action", "act_ok", "wind", "gust")
    keys = (1, 2, 3, 4, 5)
    b.add("pos_next", trans_parents, Gate(Parent(0), 0.5, Parent(1), Table.from_dict(pos_t, keys=keys)), labels=("next_state",))
    b.add(
        "status_next",
        trans_parents,
        Gate(Parent(0), 0.5, Parent(0), Table.from_dict(status_t, keys=keys)),
        labels=("next_state", "terminal"),
    )
    b.add("reward", trans_parents, Gate(Parent(0), 0.5, Const(0.0), Table.from_dict(reward_t, keys=keys)), labels=("reward",))

    b.add("switch", (), Noise(), Categorical(regime.switch_probs()))
    wind_t = {(m, s): (m if s == 0 else s - 1) for m in range(n_modes) for s in range(n_modes + 1)}
    b.add("wind_next", ("wind", "switch"), Table.from_dict(wind_t), labels=("next_state",))
    b.add("dust_next", ("pos_next",), Table.from_dict(dust_of))

    offsets, pmf = params.offset_pmf()
    cap = max_range(mmap)
    positive = [(k, d) for k, d in enumerate(levels) if d > 0 and dust.lam > 0]
    ranges = {idx[c]: wall_ranges(mmap, c) for c in cells}
    for bi, beam in enumerate(BEAMS):
        b.add(f"off_{beam}", (), Add(Noise(), Const(float(offsets[0]))), Categorical(tuple(pmf)))
        reading = Table.from_dict(
            {(i, o): min(max(r[bi] + o, 0), cap) for i, r in ranges.items() for o in offsets}
        )
        if positive:
            drops = []
            for k, d in positive:
                q = dust.lam * d
                b.add(f"drop_{beam}_{k}", (), Noise(), Categorical((1.0 - q, q)))
                drops.append(f"drop_{beam}_{k}")
            b.add(f"dropout_{beam}", ("dust_next", *drops), _select([d for _, d in positive], len(positive)))
            reading = Table(reading.entries, reading.default, keys=(1, 2))
            b.add(
                f"beam_{beam}",
                (f"dropout_{beam}", "pos_next", f"off_{beam}"),
                Gate(Parent(0), 0.5, Const(float(DROPOUT)), reading),
                labels=("observation",),
            )
        else:
            b.add(f"beam_{beam}", ("pos_next", f"off_{beam}"), reading, labels=("observation",))
    b.add("landed", ("status_next",), Table.from_dict({LANDED: 1.0}), labels=("observation",))
    air_var = Gaussian(0.0, params.airflow_sigma**2)
    ax = {m: regime.airflow(m)[0] for m in range(n_modes)}
    ay = {m: regime.airflow(m)[1] for m in range(n_modes)}
    b.add("airflow_x", ("wind",), Add(Table.from_dict(ax), Noise()), air_var, ("observation",))
    b.add("airflow_y", ("wind",), Add(Table.from_dict(ay), Noise()), air_var, ("observation",))
    return b.build()


def encode_state(mmap: MineMap, pos, wind: int, status: int = FLYING) -> dict:
    return {"pos": float(mmap.index(*pos)), "wind": float(wind), "status": float(status)}


def encode_obs(obs) -> dict:
    out = {f"beam_{b}": float(DROPOUT if r is None else r) for b, r in zip(BEAMS, obs.ranges)}
    out["landed"] = 1.0 if obs.landed else 0.0
    out["airflow_x"], out["airflow_y"] = float(obs.airflow[0]), float(obs.airflow[1])
    return out


__all__ = ["env_scm", "encode_state", "encode_obs", "start_distribution", "STATE_VARS", "OBS_VARS", "CRASHED"]
