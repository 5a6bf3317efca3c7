import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causal_mine.errors import InvalidAction, ParseError, StateNotFlying, ValidationError
from causal_mine.minesim import (
    ACTIONS,
    CALM,
    CRASH,
    CRASHED,
    FLYING,
    LANDED,
    SUCCESS,
    TIMEOUT,
    DustField,
    EnvParams,
    EnvState,
    WindMode,
    WindRegime,
    emit_map,
    env_scm,
    gen_observational_log,
    load_map,
    read_trace,
    run_mission,
    step,
    trace_hash,
)
from causal_mine.minesim.grid import E, HOVER, LAND_ACTION, N, W
from causal_mine.planner import PlanConfig

from oracles import grid_kernel

SMALL = "####\n#.H#\n#..#\n####\n"
CORRIDOR = "#######\n#....H#\n#######\n"
EXACT = EnvParams(p0=1.0, sigma_obs=0.0)
NO_DUST = DustField(lam=0.0)


# -- maps ---------------------------------------------------------------------


def test_minimal_map_has_one_home():
    m = load_map("###\n#H#\n###\n")
    assert m.cells_of("H") == [(1, 1)]
    assert (m.width, m.height) == (3, 3)


def test_bad_character_reports_position():
    with pytest.raises(ParseError) as err:
        load_map("####\n#HX#\n####\n")
    assert (err.value.row, err.value.col) == (1, 2)


def test_ragged_rows_rejected():
    with pytest.raises(ParseError):
        load_map("####\n#H#\n####\n")


def test_missing_home_rejected():
    with pytest.raises(ValidationError):
        load_map("####\n#.L#\n####\n")


def test_open_boundary_rejected():
    with pytest.raises(ValidationError):
        load_map("####\n#H..\n####\n")


def test_comments_survive_round_trip():
    text = "; mock mine\n; level 2\n#####\n#.VH#\n#L..#\n#####\n"
    assert emit_map(load_map(text)) == text


@st.composite
def maps(draw):
    w = draw(st.integers(3, 8))
    h = draw(st.integers(3, 8))
    inner = [[draw(st.sampled_from("#.HLV")) for _ in range(w - 2)] for _ in range(h - 2)]
    hx, hy = draw(st.integers(0, w - 3)), draw(st.integers(0, h - 3))
    inner[hy][hx] = "H"
    rows = ["#" * w] + ["#" + "".join(r) + "#" for r in inner] + ["#" * w]
    return "\n".join(rows) + "\n"


@given(maps())
@settings(max_examples=60, deadline=None)
def test_map_round_trip_identity(text):
    assert emit_map(load_map(text)) == text
    assert load_map(emit_map(load_map(text))) == load_map(text)


# -- step ---------------------------------------------------------------------


def test_calm_move_east():
    m = load_map(CORRIDOR)
    s, obs, r, done = step(EnvState((1, 1)), m, NO_DUST, E, np.random.default_rng(0), params=EXACT)
    assert s.pos == (2, 1) and r == -1.0 and not done
    assert obs.ranges == (0, 0, 3, 1)


def test_gust_push_into_east_wall_crashes():
    m = load_map("#####\n#..H#\n#...#\n#####\n")
    regime = WindRegime((WindMode("E", 1.0),))
    s, _, r, done = step(EnvState((3, 2)), m, NO_DUST, N, np.random.default_rng(0), regime, EXACT)
    assert s.status == CRASHED and r == -100.0 and done


def test_land_on_home():
    m = load_map(CORRIDOR)
    s, obs, r, done = step(EnvState((5, 1)), m, NO_DUST, LAND_ACTION, np.random.default_rng(0), params=EXACT)
    assert s.status == LANDED and r == 100.0 and done and obs.landed


def test_intended_bump_costs_extra_without_moving():
    m = load_map(CORRIDOR)
    s, _, r, _ = step(EnvState((1, 1)), m, NO_DUST, W, np.random.default_rng(0), params=EXACT)
    assert s.pos == (1, 1) and s.status == FLYING and r == -2.0


def test_step_rejects_bad_action_and_terminal_state():
    m = load_map(CORRIDOR)
    with pytest.raises(InvalidAction):
        step(EnvState((1, 1)), m, NO_DUST, 6, np.random.default_rng(0))
    with pytest.raises(StateNotFlying):
        step(EnvState((5, 1), LANDED), m, NO_DUST, HOVER, np.random.default_rng(0))


@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 5), min_size=1, max_size=30))
@settings(max_examples=40, deadline=None)
def test_flying_positions_stay_on_open_cells(seed, actions):
    m = load_map("######\n#..V.#\n#.#..#\n#L..H#\n######\n")
    regime = WindRegime((CALM, WindMode("E", 0.7), WindMode("S", 0.4)), 0.3)
    rng = np.random.default_rng(seed)
    s = EnvState((1, 1))
    for a in actions:
        s, obs, _, done = step(s, m, DustField((((2, 1), 0.8),)), a, rng, regime)
        assert not m.is_wall(*s.pos)
        assert all(r is None or 0 <= r <= m.diagonal for r in obs.ranges)
        if done:
            with pytest.raises(StateNotFlying):
                step(s, m, NO_DUST, HOVER, rng)
            break


def _step_frequencies(m, pos, action, regime, dust, n, seed):
    rng = np.random.default_rng(seed)
    counts: dict = {}
    for _ in range(n):
        s, *_ = step(EnvState(pos, FLYING, 1 if regime.n_modes > 1 else 0), m, dust, action, rng, regime)
        counts[(s.pos, s.status)] = counts.get((s.pos, s.status), 0) + 1
    return counts


def _scm_kernel(scm, m, pos, action, wind):
    """Enumerate the categorical noises behind the successor variables."""
    do = {"pos": float(m.index(*pos)), "wind": float(wind), "status": 0.0, "action": float(action)}
    need = sorted(scm.ancestors(["pos_next", "status_next"], cut=do) - set(do))
    noises = [scm.var(n).noise for n in need if scm.uses_noise(n)]
    supports = [scm.exo(u).dist.support() for u in noises]
    out: dict = {}
    for combo in itertools.product(*supports):
        noise = {u: v for u, (v, _) in zip(noises, combo)}
        p = math.prod(q for _, q in combo)
        vals = scm.evaluate(noise, do, targets=("pos_next", "status_next"))
        key = (m.coords(int(vals["pos_next"])), int(vals["status_next"]))
        out[key] = out.get(key, 0.0) + p
    return out


def test_env_scm_kernel_matches_rules_exactly():
    m = load_map(SMALL)
    dust = DustField((((1, 2), 0.6),), kappa=0.5)
    regime = WindRegime((CALM, WindMode("E", 0.3), WindMode("S", 0.6)), 0.1)
    scm = env_scm(m, dust, regime)
    for pos in m.open_cells:
        p_act = 0.95 * (1 - 0.5 * dust.level(*pos))
        for action in range(len(ACTIONS)):
            for w, mode in enumerate(regime.modes):
                want = grid_kernel(m.rows, pos, action, p_act, mode.direction, mode.drift_prob)
                got = _scm_kernel(scm, m, pos, action, w)
                assert set(got) == set(want)
                for k in want:
                    assert got[k] == pytest.approx(want[k], abs=1e-12)


@pytest.mark.parametrize("pos,action", [((1, 1), E), ((2, 2), N), ((1, 2), LAND_ACTION), ((2, 1), HOVER)])
def test_step_frequencies_within_three_sigma_of_scm_kernel(pos, action):
    m = load_map(SMALL)
    dust = DustField((((1, 2), 0.6),))
    regime = WindRegime((CALM, WindMode("E", 0.5)), 0.0)
    exact = _scm_kernel(env_scm(m, dust, regime), m, pos, action, 1)
    n = 10_000
    counts = _step_frequencies(m, pos, action, regime, dust, n, seed=hash(pos) % 1000 + action)
    assert set(counts) <= set(exact)
    for k, p in exact.items():
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(counts.get(k, 0) / n - p) <= 3 * sigma + 1e-12


def test_hover_in_calm_clean_air_stays_put():
    m = load_map(SMALL)
    scm = env_scm(m, DustField(), WindRegime(), EnvParams(p0=1.0))
    assert _scm_kernel(scm, m, (1, 1), HOVER, 0) == {((1, 1), 0): 1.0}


def test_wind_feeds_gust_and_observational_action_only():
    m = load_map(SMALL)
    regime = WindRegime((CALM, WindMode("E", 0.5)), 0.1)
    plain = env_scm(m, regime=regime)
    pilot = env_scm(m, regime=regime, observational_policy=True)
    assert "wind" in plain.effective_parents("gust")
    assert "wind" not in plain.ancestors(["action"])
    assert "wind" in pilot.effective_parents("action")
    assert "wind" not in pilot.intervene({"action": 2.0}).ancestors(["action"])


def test_regime_frequencies_match_uniform_stationary_law():
    m = load_map("#####\n#...#\n#.H.#\n#...#\n#####\n")
    modes = (CALM, WindMode("E", 0.0), WindMode("N", 0.0))
    regime = WindRegime(modes, 0.3)
    rng = np.random.default_rng(7)
    s = EnvState((2, 2))
    counts = np.zeros(3)
    n = 100_000
    for _ in range(n):
        counts[s.wind] += 1
        s, *_ = step(s, m, NO_DUST, HOVER, rng, regime, EnvParams(p0=1.0, sigma_obs=0.0))
    # mode indicators have lag-one autocorrelation 1 - rho; inflate sigma accordingly
    phi = 1 - 0.3
    sigma = math.sqrt((1 / 3) * (2 / 3) / n) * math.sqrt((1 + phi) / (1 - phi))
    assert np.all(np.abs(counts / n - 1 / 3) <= 3 * sigma)


def test_dust_weakly_lowers_actuation_and_raises_dropout():
    m = load_map("#####\n#..H#\n#####\n")
    params = EnvParams(sigma_obs=0.0)
    levels = [0.0, 0.25, 0.5, 0.75, 1.0]
    act, drop = [], []
    n = 4000
    for d in levels:
        dust = DustField((((1, 1), d), ((2, 1), d)), kappa=0.6, lam=0.4)
        rng = np.random.default_rng(int(d * 100))
        moved = dropped = 0
        for _ in range(n):
            s, obs, *_ = step(EnvState((1, 1)), m, dust, E, rng, params=params)
            moved += s.pos == (2, 1)
            dropped += sum(r is None for r in obs.ranges)
        act.append(moved / n)
        drop.append(dropped / (4 * n))
        p = 0.95 * (1 - 0.6 * d)
        assert abs(act[-1] - p) <= 3 * math.sqrt(p * (1 - p) / n) + 1e-9
    exact_act = [0.95 * (1 - 0.6 * d) for d in levels]
    exact_drop = [0.4 * d for d in levels]
    assert all(a >= b for a, b in zip(exact_act, exact_act[1:]))
    assert all(a <= b for a, b in zip(exact_drop, exact_drop[1:]))
    for f, p in zip(drop, exact_drop):
        assert abs(f - p) <= 3 * math.sqrt(p * (1 - p) / (4 * n)) + 1e-9


# -- observational logs ---------------------------------------------------------


def test_pilot_opposes_east_gust():
    m = load_map("#######\n#.....#\n#....H#\n#######\n")
    regime = WindRegime((CALM, WindMode("E", 0.5)), 0.0)
    log = gen_observational_log(m, regime, 3000, np.random.default_rng(1), initial_wind=1)
    n = len(log)
    west = sum(a == W for _, a, *_ in log) / n
    p = 0.8 + 0.2 / 6
    assert abs(west - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_calm_pilot_is_uniform():
    m = load_map("#######\n#.....#\n#....H#\n#######\n")
    log = gen_observational_log(m, WindRegime(), 3000, np.random.default_rng(2))
    n = len(log)
    for a in range(6):
        f = sum(x == a for _, x, *_ in log) / n
        assert abs(f - 1 / 6) <= 3 * math.sqrt((1 / 6) * (5 / 6) / n)


def test_log_records_hide_the_wind():
    m = load_map(CORRIDOR)
    log = gen_observational_log(m, WindRegime((CALM, WindMode("E", 0.5))), 5, np.random.default_rng(0))
    for s, a, s2, r in log:
        assert len(s) == 3 and len(s2) == 3 and 0 <= a < 6
    with pytest.raises(ValidationError):
        gen_observational_log(m, WindRegime(), 0, np.random.default_rng(0))


# -- missions -------------------------------------------------------------------

CALM_SPEC_KW = dict(dust=NO_DUST, params=EnvParams(p0=1.0, sigma_obs=0.0))


def _mission(seed, max_steps=20, **kw):
    from causal_mine.minesim import MissionSpec

    spec = MissionSpec(**CALM_SPEC_KW, **kw)
    cfg = PlanConfig(n_scenarios=4, max_depth=8, max_expansions=100)
    return run_mission(load_map(CORRIDOR), cfg, spec, None, seed, max_steps)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_corridor_mission_succeeds_along_shortest_path(seed):
    res = _mission(seed)
    start = res.trace[1]["state"]["pos"]
    distance = 5 - start[0]
    assert res.outcome == SUCCESS
    assert res.steps == distance + 1  # moves plus the landing action
    assert [r["action"] for r in res.trace[1:-1]] == ["E"] * distance + ["Land"]


def test_zero_step_budget_times_out():
    res = _mission(0, max_steps=0)
    assert res.outcome == TIMEOUT and res.steps == 0
    assert res.trace[-1]["type"] == "result"


def test_repeated_seed_reproduces_trace(tmp_path):
    from causal_mine.minesim import AdaptSettings, MissionSpec

    m = load_map("#######\n#.....#\n#.#..H#\n#.....#\n#######\n")
    spec = MissionSpec(
        regime=WindRegime((CALM, WindMode("E", 0.4)), 0.05),
        onset_step=1,
        onset_regime=WindRegime((CALM, WindMode("E", 0.4)), 0.05),
    )
    cfg = PlanConfig(n_scenarios=8, max_depth=6, max_expansions=40)
    paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
    runs = [run_mission(m, cfg, spec, AdaptSettings(n_samples=50), 11, 15, str(p)) for p in paths]
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert runs[0].summary() == runs[1].summary()
    assert trace_hash(read_trace(str(paths[0]))) == trace_hash(runs[1].trace)


def test_trace_records_carry_required_fields():
    res = _mission(4)
    header, *steps, result = res.trace
    assert header["type"] == "header" and "config_hash" in header and header["seed"] == 4
    for rec in steps:
        assert {"t", "state", "action", "obs", "reward", "belief_summary", "planner_stats"} <= set(rec)
        assert "elapsed_ms" not in rec["planner_stats"]
    assert result["outcome"] == res.outcome
    json.dumps(res.trace)


def test_component_failure_becomes_recorded_crash(monkeypatch):
    import causal_mine.minesim.mission as mission

    def boom(*args, **kwargs):
        raise RuntimeError("planner exploded")

    monkeypatch.setattr(mission, "plan", boom)
    res = _mission(0)
    assert res.outcome == CRASH
    assert "RuntimeError: planner exploded" in res.error
    assert res.trace[-1]["error"] == res.error
