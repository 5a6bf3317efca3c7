"""Command-line harness: map checks, missions, batch experiments, adaptation
demos and explanation queries.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import tomli
from scipy.stats import binomtest

from .demos import SCENARIOS, run_demo, scenario
from .errors import CausalMineError, DegenerateEvidence, ParseError, UnknownVariable, ValidationError
from .explain import OutcomePredicate
from .minesim import CALM, STATUS_NAMES, DustField, EnvParams, WindMode, WindRegime, load_map
from .minesim.baseline import observational_policy
from .minesim.grid import MineMap
from .minesim.mission import AdaptSettings, MissionSpec, config_hash, read_trace, run_mission, trace_hash, write_trace
from .minesim.traces import explain_mission, mission_trace
from .planner import PlanConfig

log = logging.getLogger("causal_mine")

VARIANTS = ("adapt-on", "adapt-off", "observational-baseline")

DEFAULT_MAP = """\
########
#......#
#.#....#
#...#..#
#.#...H#
#....#.#
#......#
########
"""


class ConfigError(ValidationError):
    """The configuration document or a file it references is invalid."""


# -- configuration ------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything a command needs, resolved from TOML plus flag overrides."""

    map_text: str
    map_source: str
    spec: MissionSpec
    planner: PlanConfig
    adapt: AdaptSettings
    seed: int = 0
    out_dir: str = "runs"
    max_steps: int = 40
    missions: int = 20
    baseline: dict = field(default_factory=lambda: {"episodes": 4000, "horizon": 20})
    demo: dict = field(default_factory=dict)

    @property
    def mmap(self) -> MineMap:
        return load_map(self.map_text)

    def to_dict(self) -> dict:
        return {
            "map": self.map_text,
            "spec": asdict(self.spec),
            "planner": asdict(self.planner),
            "adapt": asdict(self.adapt),
            "max_steps": self.max_steps,
            "missions": self.missions,
            "baseline": self.baseline,
            "demo": self.demo,
        }

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


def _parse_mode(text) -> WindMode:
    if isinstance(text, dict):
        return WindMode(text.get("direction"), float(text.get("drift_prob", 0.0)))
    text = str(text).strip()
    if text.lower() == "calm":
        return CALM
    direction, _, p = text.partition(":")
    try:
        return WindMode(direction.upper(), float(p) if p else 0.5)
    except ValueError as exc:
        raise ConfigError(f"bad wind mode {text!r}: {exc}") from exc


def _regime(table: dict | None, default: WindRegime) -> WindRegime:
    if not table:
        return default
    _only(table, {"modes", "switch_prob", "strength"}, "wind regime")
    modes = tuple(_parse_mode(m) for m in table.get("modes", ["calm"]))
    return WindRegime(modes, float(table.get("switch_prob", 0.0)), float(table.get("strength", default.strength)))


def _only(table: dict, allowed: set, where: str):
    extra = set(table) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")


def _dataclass(cls, table: dict, where: str, **extra):
    names = {f.name for f in fields(cls)}
    _only(table, names, where)
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in table.items()}
    kwargs.update(extra)
    return cls(**kwargs)


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Read a TOML config (or defaults when ``path`` is None).

    Raises:
        ConfigError: unreadable file, unknown keys or invalid values.
    """
    doc: dict = {}
    base_dir = os.getcwd()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomli.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        base_dir = os.path.dirname(os.path.abspath(path))
    doc = {**doc, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    top = {
        "map", "map_text", "seed", "out_dir", "max_steps", "missions", "discount", "n_particles", "start",
        "env", "dust", "wind", "onset", "model", "planner", "adapt", "baseline", "demo",
    }
    _only(doc, top, "config")
    try:
        return _build_config(doc, base_dir)
    except ConfigError:
        raise
    except (ValidationError, ParseError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _build_config(doc: dict, base_dir: str) -> RunConfig:
    if "map_text" in doc:
        map_text, source = doc["map_text"], "<inline>"
    elif "map" in doc:
        source = os.path.join(base_dir, doc["map"])
        try:
            with open(source) as fh:
                map_text = fh.read()
        except FileNotFoundError as exc:
            raise ConfigError(f"map file not found: {source}") from exc
    else:
        map_text, source = DEFAULT_MAP, "<default>"
    load_map(map_text)

    params = _dataclass(EnvParams, doc.get("env", {}), "[env]")
    dust_t = dict(doc.get("dust", {}))
    _only(dust_t, {"cells", "kappa", "lam"}, "[dust]")
    cells = tuple(((int(x), int(y)), float(d)) for x, y, d in dust_t.pop("cells", []))
    dust = DustField(cells, **dust_t)
    regime = _regime(doc.get("wind"), WindRegime())
    onset = dict(doc.get("onset", {}))
    _only(onset, {"step", "mode", "modes", "switch_prob", "strength"}, "[onset]")
    onset_step = onset.pop("step", None)
    onset_mode = int(onset.pop("mode", 1))
    onset_regime = _regime(onset, regime) if onset_step is not None else None
    model_regime = _regime(doc.get("model"), regime)
    start = doc.get("start")
    spec = MissionSpec(
        dust=dust,
        params=params,
        regime=regime,
        onset_step=None if onset_step is None else int(onset_step),
        onset_regime=onset_regime,
        onset_mode=onset_mode,
        model_regime=model_regime,
        n_particles=int(doc.get("n_particles", 32)),
        discount=float(doc.get("discount", 0.95)),
        start=None if start is None else (int(start[0]), int(start[1])),
    )
    if not 0.0 < spec.discount <= 1.0:
        raise ConfigError("discount must lie in (0, 1]")
    planner = _dataclass(PlanConfig, doc.get("planner", {}), "[planner]")
    adapt = _dataclass(AdaptSettings, doc.get("adapt", {}), "[adapt]")
    baseline = {"episodes": 4000, "horizon": 20, **doc.get("baseline", {})}
    _only(baseline, {"episodes", "horizon"}, "[baseline]")
    demo = dict(doc.get("demo", {}))
    _only(demo, {"base_batches", "onset_batches", "batch_size", "capacity", "epsilon", "n_samples", "max_new", "means", "variances"}, "[demo]")
    cfg = RunConfig(
        map_text=map_text,
        map_source=source,
        spec=spec,
        planner=planner,
        adapt=adapt,
        seed=int(doc.get("seed", 0)),
        out_dir=str(doc.get("out_dir", "runs")),
        max_steps=int(doc.get("max_steps", 40)),
        missions=int(doc.get("missions", 20)),
        baseline=baseline,
        demo=demo,
    )
    if cfg.max_steps < 1 or cfg.missions < 0:
        raise ConfigError("max_steps must be >= 1 and missions >= 0")
    return cfg


def apply_flags(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out_dir", None) is not None:
        cfg.out_dir = args.out_dir
    if getattr(args, "budget_mode", None) is not None:
        cfg.planner = PlanConfig(**{**asdict(cfg.planner), "budget_mode": args.budget_mode})
    return cfg


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("CAUSAL_MINE_THREADS")
    try:
        limit = int(cap) if cap else (os.cpu_count() or 1)
    except ValueError as exc:
        raise ConfigError(f"CAUSAL_MINE_THREADS must be an integer, got {cap!r}") from exc
    return max(1, min(limit, n_jobs))


def _write_json(path: str, obj) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- commands -----------------------------------------------------------------


def cmd_map_validate(args) -> int:
    try:
        with open(args.path) as fh:
            text = fh.read()
    except FileNotFoundError:
        print(f"error: no such file: {args.path}", file=sys.stderr)
        return 2
    try:
        m = load_map(text)
    except (ParseError, ValidationError) as exc:
        print(f"INVALID: {exc}")
        return 1
    print(f"OK {m.width}x{m.height}, {len(m.open_cells)} open cells, {sum(m.landable(x, y) for x, y in m.open_cells)} landable")
    return 0


def cmd_sim_run(args, cfg: RunConfig) -> int:
    adapt = cfg.adapt
    if args.log_belief:
        adapt = AdaptSettings(**{**asdict(adapt), "log_belief_dir": os.path.join(cfg.out_dir, f"beliefs_seed{cfg.seed}")})
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, f"trace_seed{cfg.seed}.jsonl")
    res = run_mission(cfg.mmap, cfg.planner, cfg.spec, adapt if adapt.enabled else None, cfg.seed, cfg.max_steps)
    digest = write_trace(res.trace, path)
    out = {**res.summary(), "seed": cfg.seed, "config_hash": res.trace[0]["config_hash"], "trace": path, "trace_hash": digest}
    print(json.dumps(out, sort_keys=True))
    return 1 if res.error else 0


def _mission_job(job):
    cfg, variant, seed, policy = job
    adapt = cfg.adapt if variant == "adapt-on" else None
    res = run_mission(cfg.mmap, cfg.planner, cfg.spec, adapt, seed, cfg.max_steps, policy=policy)
    return {
        "seed": seed,
        "outcome": res.outcome,
        "steps": res.steps,
        "reward": res.reward,
        "error": res.error,
        "start": res.trace[1]["state"]["pos"] if len(res.trace) > 2 else None,
        "trace_hash": trace_hash(res.trace),
        "plan_ms": res.plan_ms,
        "posterior": [{"t": p["t"], "map": p["map"]} for p in res.posterior],
    }


def summarize_variant(name: str, rows: list) -> dict:
    n = len(rows)
    wins = sum(r["outcome"] == "Success" for r in rows)
    timings = [ms for r in rows for ms in r["plan_ms"]]
    out = {
        "variant": name,
        "missions": n,
        "successes": wins,
        "success_rate": wins / n if n else None,
        "mean_steps": float(np.mean([r["steps"] for r in rows])) if n else None,
        "mean_reward": float(np.mean([r["reward"] for r in rows])) if n else None,
        "plan_ms_percentiles": (
            {f"p{q}": float(np.percentile(timings, q)) for q in (50, 90, 99)} if timings else {}
        ),
        "errors": sum(r["error"] is not None for r in rows),
        "missions_detail": [{k: r[k] for k in ("seed", "outcome", "steps", "reward", "error", "start", "trace_hash", "posterior")} for r in rows],
    }
    if n:
        ci = binomtest(wins, n).proportion_ci(0.95, method="wilson")
        out["success_rate_ci95"] = [ci.low, ci.high]
    return out


def paired_difference(a: list, b: list) -> dict:
    """Paired success-rate difference ``a - b`` over shared seeds.

    The interval is the normal approximation for paired proportions; the
    p-value is the exact one-sided sign test on the discordant pairs.
    """
    n = len(a)
    only_a = sum(x["outcome"] == "Success" and y["outcome"] != "Success" for x, y in zip(a, b))
    only_b = sum(y["outcome"] == "Success" and x["outcome"] != "Success" for x, y in zip(a, b))
    if n == 0:
        return {"n": 0, "difference": None, "ci95": None, "only_first": 0, "only_second": 0, "p_one_sided": None}
    diff = (only_a - only_b) / n
    se = math.sqrt(max(only_a + only_b - (only_a - only_b) ** 2 / n, 0.0)) / n
    p = binomtest(only_a, only_a + only_b, 0.5, alternative="greater").pvalue if only_a + only_b else 1.0
    return {
        "n": n,
        "difference": diff,
        "ci95": [diff - 1.959964 * se, diff + 1.959964 * se],
        "only_first": only_a,
        "only_second": only_b,
        "p_one_sided": float(p),
    }


def cmd_eval_batch(args, cfg: RunConfig) -> int:
    missions = cfg.missions if args.missions is None else args.missions
    if missions < 0:
        raise ConfigError("missions must be >= 0")
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    seeds = [cfg.seed + i for i in range(missions)]
    policy = None
    if "observational-baseline" in variants and missions:
        logs_regime = cfg.spec.onset_regime or cfg.spec.regime
        policy = observational_policy(
            cfg.mmap,
            logs_regime,
            np.random.default_rng([cfg.seed, 99]),
            cfg.spec.dust,
            cfg.spec.params,
            int(cfg.baseline["episodes"]),
            int(cfg.baseline["horizon"]),
            cfg.spec.discount,
        )
    jobs = [(cfg, v, s, policy if v == "observational-baseline" else None) for v in variants for s in seeds]
    workers = worker_count(len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_mission_job, jobs))
    else:
        results = [_mission_job(j) for j in jobs]
    by_variant = {v: results[i * missions : (i + 1) * missions] for i, v in enumerate(variants)}
    summaries = [summarize_variant(v, by_variant[v]) for v in variants]
    comparisons = []
    for i, a in enumerate(variants):
        for b in variants[i + 1 :]:
            comparisons.append({"first": a, "second": b, **paired_difference(by_variant[a], by_variant[b])})
    out = {"config_hash": cfg.hash, "seed": cfg.seed, "missions": missions, "variants": summaries, "comparisons": comparisons}
    path = os.path.join(cfg.out_dir, f"eval_seed{cfg.seed}.json")
    _write_json(path, out)
    print(f"config {cfg.hash}  seed {cfg.seed}  missions {missions}")
    print(f"{'variant':<24}{'success':>10}{'rate':>8}{'steps':>8}{'reward':>9}")
    for s in summaries:
        rate = "-" if s["success_rate"] is None else f"{s['success_rate']:.3f}"
        steps = "-" if s["mean_steps"] is None else f"{s['mean_steps']:.1f}"
        reward = "-" if s["mean_reward"] is None else f"{s['mean_reward']:.1f}"
        print(f"{s['variant']:<24}{s['successes']:>10}{rate:>8}{steps:>8}{reward:>9}")
    for c in comparisons:
        if c["n"]:
            print(
                f"{c['first']} - {c['second']}: {c['difference']:+.3f} "
                f"[{c['ci95'][0]:+.3f}, {c['ci95'][1]:+.3f}] discordant {c['only_first']}/{c['only_second']} "
                f"p={c['p_one_sided']:.3g}"
            )
    print(f"wrote {path}")
    return 1 if any(s["errors"] for s in summaries) else 0


def cmd_adapt_demo(args, cfg: RunConfig) -> int:
    d = cfg.demo
    grids = {k: tuple(d[k]) for k in ("means", "variances") if k in d}
    sc = scenario(args.scenario, **grids)
    snap_dir = os.path.join(cfg.out_dir, f"beliefs_{args.scenario}_seed{cfg.seed}") if args.log_belief else None
    rows = run_demo(
        sc,
        np.random.default_rng(cfg.seed),
        base_batches=int(d.get("base_batches", 20)),
        onset_batches=int(d.get("onset_batches", 30)),
        batch_size=int(d.get("batch_size", 20)),
        capacity=int(d.get("capacity", 8)),
        epsilon=float(d.get("epsilon", 0.01)),
        n_samples=int(d.get("n_samples", 200)),
        max_new=int(d.get("max_new", 16)),
        snapshot_dir=snap_dir,
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, f"posterior_{args.scenario}_seed{cfg.seed}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config_hash", "seed", "t", "phase", "hypothesis", "edits", "weight", "is_map", "changed_mass"])
        for r in rows:
            for hid, edits, weight in r["hypotheses"]:
                w.writerow([cfg.hash, cfg.seed, r["t"], r["phase"], hid, edits, f"{weight:.12g}", int(hid == r["map_id"]), f"{r['changed_mass']:.12g}"])
    last = rows[-1] if rows else None
    if last is not None:
        print(f"{args.scenario}: final MAP {last['map_edits']} (weight {last['map_weight']:.3f}), changed mass {last['changed_mass']:.3f}")
    print(f"wrote {path}")
    return 0


def _outcome_from_query(q: dict | None, trace_end: int) -> OutcomePredicate | None:
    if not q:
        return None
    value = q.get("value", 2)
    if isinstance(value, str):
        if value not in STATUS_NAMES:
            raise ConfigError(f"unknown status name {value!r}")
        value = STATUS_NAMES.index(value)
    t = q.get("t")
    return OutcomePredicate(q.get("var", "status"), trace_end if t in (None, "end") else int(t), q.get("op", "=="), float(value))


def cmd_explain(args, cfg: RunConfig) -> int:
    try:
        records = read_trace(args.trace)
    except FileNotFoundError as exc:
        raise ConfigError(f"trace file not found: {args.trace}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"trace is not JSON lines: {exc}") from exc
    query: dict = {}
    if args.query:
        try:
            with open(args.query) as fh:
                query = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"query file not found: {args.query}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"query is not valid JSON: {exc}") from exc
    _only(query, {"outcome", "candidates", "window", "n_particles", "model", "seed"}, "query")
    window = int(query.get("window", 3))
    trace, _ = mission_trace(records, window)
    outcome = _outcome_from_query(query.get("outcome"), trace.end)
    seed = int(query.get("seed", cfg.seed))
    exp = explain_mission(
        records,
        outcome,
        query.get("candidates") or None,
        window,
        int(query.get("n_particles", 500)),
        seed,
        model=query.get("model", "truth"),
    )
    exp.meta.update({"seed": seed, "trace": os.path.abspath(args.trace)})
    name = os.path.splitext(os.path.basename(args.trace))[0]
    path = os.path.join(cfg.out_dir, f"explain_{name}.json")
    _write_json(path, exp.to_dict())
    print(exp.text(), end="")
    print(f"wrote {path}")
    return 0


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base random seed")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for outputs")
    common.add_argument("--budget-mode", choices=("expansions", "wallclock"), default=argparse.SUPPRESS)
    common.add_argument("--log-belief", action="store_true", default=argparse.SUPPRESS, help="write belief snapshots")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="causal-mine", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("map-validate", parents=[common], help="check a map file")
    s.add_argument("path")
    sub.add_parser("sim-run", parents=[common], help="fly one mission and write its trace")
    s = sub.add_parser("eval-batch", parents=[common], help="paired missions across planner variants")
    s.add_argument("--missions", type=int, default=None)
    s.add_argument("--variants", default=None, help=f"comma list from {', '.join(VARIANTS)}")
    s = sub.add_parser("adapt-demo", parents=[common], help="posterior over models on synthetic data")
    s.add_argument("--scenario", choices=SCENARIOS, default="gust-onset")
    s = sub.add_parser("explain", parents=[common], help="rank causes of a logged outcome")
    s.add_argument("trace")
    s.add_argument("--query", default=None, help="JSON query file")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for name, default in (("config", None), ("seed", None), ("out_dir", None), ("budget_mode", None), ("log_belief", False), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "map-validate":
        return cmd_map_validate(args)
    try:
        cfg = apply_flags(load_config(args.config), args)
        handler = {"sim-run": cmd_sim_run, "eval-batch": cmd_eval_batch, "adapt-demo": cmd_adapt_demo, "explain": cmd_explain}
        return handler[args.command](args, cfg)
    except (ValidationError, UnknownVariable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DegenerateEvidence as exc:
        print(f"error: the model gives the logged evidence zero probability ({exc})", file=sys.stderr)
        return 1
    except (CausalMineError, OSError, RuntimeError, ArithmeticError) as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
