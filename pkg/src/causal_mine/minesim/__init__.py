"""Partially observable grid-world mine simulator."""

from .env import (
    BEAMS,
    CALM,
    CRASHED,
    DROPOUT,
    FLYING,
    LANDED,
    STATUS_NAMES,
    DustField,
    EnvParams,
    EnvState,
    ObsRecord,
    WindMode,
    WindRegime,
    observe,
    step,
)
from .baseline import ObservationalPolicy, observational_policy
from .grid import ACTIONS, HOVER, LAND_ACTION, MineMap, emit_map, load_map
from .logs import gen_observational_log, pilot_action
from .mission import (
    CRASH,
    SUCCESS,
    TIMEOUT,
    AdaptSettings,
    MissionResult,
    MissionSpec,
    read_trace,
    replay_mission,
    run_mission,
    trace_hash,
    write_trace,
)
from .model import OBS_VARS, STATE_VARS, encode_obs, encode_state, env_scm
from .planning import MineHeuristics, mine_view

__all__ = [
    "ACTIONS",
    "BEAMS",
    "CALM",
    "CRASH",
    "CRASHED",
    "DROPOUT",
    "FLYING",
    "HOVER",
    "LAND_ACTION",
    "LANDED",
    "OBS_VARS",
    "STATE_VARS",
    "STATUS_NAMES",
    "SUCCESS",
    "TIMEOUT",
    "AdaptSettings",
    "DustField",
    "EnvParams",
    "EnvState",
    "MineHeuristics",
    "MineMap",
    "MissionResult",
    "MissionSpec",
    "ObservationalPolicy",
    "ObsRecord",
    "WindMode",
    "WindRegime",
    "emit_map",
    "encode_obs",
    "encode_state",
    "env_scm",
    "gen_observational_log",
    "load_map",
    "mine_view",
    "observational_policy",
    "observe",
    "pilot_action",
    "read_trace",
    "replay_mission",
    "run_mission",
    "step",
    "trace_hash",
    "write_trace",
]
