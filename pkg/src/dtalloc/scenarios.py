"""Turn a :class:`ScenarioConfig` into objects, run it, and persist the results."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import graph as G
from .analysis import (
    StepBoundReport,
    Trace,
    compute_step_bound,
    iterations_to,
    residual,
    states_csv,
    trace_csv,
)
from .config import ScenarioConfig
from .delay import DelayedRunConfig, DelayModel, FixedPerLink, TimeVarying, run_delayed
from .errors import InfeasiblePoint, InvalidRange, NonPositiveInput
from .nonlinearity import Compose, Saturation, parse_nonlinearity, with_domain
from .objective import (
    LogExp,
    PenaltyAugmented,
    Problem,
    Quadratic,
    SmoothPenaltyAugmented,
    apply_change_of_variables,
    generator_cost,
    random_generator_costs,
)
from .oracle import OracleSolution, solve_box_constrained, solve_kkt
from .protocol import ProtocolConfig, RandomFeasible, Uniform, feasible_init, run

__all__ = [
    "Scenario",
    "RunReport",
    "derive_seeds",
    "build_problem",
    "build_schedule",
    "build_scenario",
    "step_bound_for",
    "execute",
    "run_scenario",
    "run_sweep",
    "sweep_trials",
    "WORKERS_ENV",
]

WORKERS_ENV = "DTALLOC_WORKERS"
_SEED_STREAMS = ("problem", "network", "delay", "init")


def derive_seeds(master: int) -> dict[str, int]:
    """Independent sub-seeds for each random component, fixed by the master seed."""
    children = np.random.SeedSequence(master).spawn(len(_SEED_STREAMS))
    return {name: int(c.generate_state(1)[0]) for name, c in zip(_SEED_STREAMS, children)}


def _penalised(cost, pen: dict | None, m: float | None = None, M: float | None = None):
    if not pen or m is None or M is None:
        return cost
    if "mu" in pen:
        return SmoothPenaltyAugmented(cost, m, M, float(pen.get("c", 1.0)), float(pen["mu"]))
    return PenaltyAugmented(cost, m, M, float(pen.get("c", 1.0)), int(pen.get("sigma", 2)))


def build_problem(spec: dict, seed: int) -> tuple[Problem, dict]:
    """Problem plus metadata (generator types, sampled parameters)."""
    kind = spec.get("kind", "generators")
    b = float(spec["b"])
    pen = spec.get("penalty")
    meta: dict = {}
    if kind == "generators":
        types = spec.get("types", "random")
        if types == "random":
            kinds, costs = random_generator_costs(int(spec["n"]), seed, pen)
        else:
            kinds = [str(t).upper() for t in types]
            costs = [generator_cost(k, pen) for k in kinds]
        meta["types"] = "".join(kinds)
        return Problem(tuple(costs), b), meta
    if kind == "explicit":
        costs = []
        for c in spec["costs"]:
            ck = c["kind"]
            if ck == "generator":
                costs.append(generator_cost(c["type"], c.get("penalty", pen)))
                continue
            if ck == "quadratic":
                base = Quadratic(float(c["gamma"]), float(c.get("beta", 0.0)), float(c.get("alpha", 0.0)))
            else:
                base = LogExp(
                    float(c["alpha"]), float(c["beta"]), float(c["gamma"]), float(c["eta"]), float(c.get("zeta", 0.2))
                )
            costs.append(_penalised(base, c.get("penalty", pen), c.get("m"), c.get("M")))
        a = spec.get("a")
        return Problem(tuple(costs), b, None if a is None else tuple(float(v) for v in a)), meta
    # logexp_random
    n = int(spec["n"])
    r = {"alpha": [0.05, 0.2], "beta": [-0.2, 0.2], "gamma": [-0.3, 0.3], "eta": [0.0, 0.6], "zeta": 0.2,
         "a_abs": [0.5, 2.0]}
    r.update(spec.get("ranges", {}))
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(*r["alpha"], size=n)
    beta = rng.uniform(*r["beta"], size=n)
    gamma = rng.uniform(*r["gamma"], size=n)
    eta = rng.uniform(*r["eta"], size=n)
    a = rng.uniform(*r["a_abs"], size=n) * rng.choice([-1.0, 1.0], size=n)
    costs = tuple(LogExp(float(al), float(be), float(ga), float(et), float(r["zeta"]))
                  for al, be, ga, et in zip(alpha, beta, gamma, eta))
    return Problem(costs, b, tuple(float(v) for v in a)), meta


def build_schedule(spec: dict, n: int, seed: int, base_dir: Path = Path(".")) -> G.NetworkSchedule:
    kind = spec.get("kind", "erdos_renyi")
    wr = tuple(spec.get("weight_range", [1.0, 1.0]))
    weight = float(spec.get("weight", 1.0))
    if kind == "erdos_renyi":
        sched = G.NetworkSchedule.static(G.connected_erdos_renyi(n, float(spec.get("p", 0.2)), wr, seed))
    elif kind == "cycle":
        sched = G.NetworkSchedule.static(G.cycle_graph(n, weight))
    elif kind == "path":
        sched = G.NetworkSchedule.static(G.path_graph(n, weight))
    elif kind == "complete":
        sched = G.NetworkSchedule.static(G.complete_graph(n, weight))
    elif kind == "file":
        sched = G.NetworkSchedule.static(G.read_graph(Path(base_dir) / spec["path"]))
    elif kind == "alternating_matchings":
        sched = G.alternating_matchings(n, int(spec.get("duration", 1)), weight)
    elif kind == "random_switching":
        sched = G.random_switching_schedule(
            n, int(spec.get("snapshots", 10)), int(spec.get("duration", 10)), float(spec.get("p", 0.1)), wr, seed
        )
    else:
        raise ValueError(f"unknown network kind {kind!r}")
    if spec.get("normalize", "none") == "max_degree":
        # one common factor for all snapshots keeps the schedule's relative weights
        top = max(float(g.weighted_degree().max()) for _, g in sched.snapshots if g.edges)
        sched = G.NetworkSchedule(tuple((d, g.scaled(1.0 / top)) for d, g in sched.snapshots), sched.window_B)
    return sched


@dataclass
class Scenario:
    config: ScenarioConfig
    problem: Problem
    run_problem: Problem
    schedule: G.NetworkSchedule
    protocol: ProtocolConfig
    delay: DelayedRunConfig | None
    x0: np.ndarray
    oracle: OracleSolution
    seeds: dict
    meta: dict = field(default_factory=dict)
    bound: StepBoundReport | None = None
    bound_note: str = ""


def _envelope(x: np.ndarray) -> tuple[float, float]:
    """``[min x, max x]`` widened slightly so it is never empty."""
    lo, hi = float(np.min(x)), float(np.max(x))
    pad = 1e-6 * max(1.0, abs(lo), abs(hi))
    return lo - pad, hi + pad


def _sector_map(cfg: ProtocolConfig):
    if cfg.variant == "hybrid":
        return Compose(cfg.nonlinearity, cfg.link_nonlinearity)
    return cfg.nonlinearity


def _difference_envelope(p: Problem, sched: G.NetworkSchedule, x: np.ndarray) -> float:
    grads = p.gradients(x)
    u = G.union_graph(g for _, g in sched.snapshots)
    if not u.edges:
        return 0.0
    return float(np.max(np.abs(grads[u.src] - grads[u.dst])))


def step_bound_for(
    p: Problem,
    sched: G.NetworkSchedule,
    cfg: ProtocolConfig,
    x_lo: float,
    x_hi: float,
    envelope: float,
    spectrum: str = "union",
) -> tuple[StepBoundReport | None, str]:
    """Step bound with sector constants taken on the magnitude range ``(0, envelope]``.

    Returns ``(None, reason)`` when the bound is undefined (zero lower sector,
    unbounded upper sector or a disconnected network).
    """
    env = max(envelope, 1e-12)
    m = with_domain(_sector_map(cfg), (0.0, env))
    eps, K = m.sector
    v, u = p.curvature_bounds((x_lo, x_hi))
    spec = G.schedule_spectrum(sched, spectrum) if not sched.is_static else G.spectral_summary(sched.snapshots[0][1])
    try:
        return compute_step_bound(eps, K, u, spec, v), ""
    except NonPositiveInput as exc:
        return None, str(exc)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    seeds = derive_seeds(cfg.seed)
    pr, nw, pc, dl = (cfg.section(s) for s in ("problem", "network", "protocol", "delay"))
    problem, meta = build_problem(pr, seeds["problem"])
    run_problem = apply_change_of_variables(problem) if problem.a is not None else problem
    schedule = build_schedule(nw, problem.n, seeds["network"], cfg.base_dir)
    oracle = solve_kkt(run_problem)

    mode = RandomFeasible(seeds["init"], 0.1) if pr.get("init", "uniform") == "random" else Uniform()
    x0 = feasible_init(run_problem, mode).x

    gmap = parse_nonlinearity(str(pc.get("nonlinearity", "id")))
    lmap = parse_nonlinearity(str(pc["link_nonlinearity"])) if "link_nonlinearity" in pc else None
    variant = pc.get("variant", "node")
    probe = ProtocolConfig(variant, 1.0, gmap, 0, 0.0, lmap)
    lo, hi = _envelope(np.concatenate([x0, oracle.x_star]))
    envelope = _difference_envelope(run_problem, schedule, x0)
    bound, note = step_bound_for(run_problem, schedule, probe, lo, hi, envelope, nw.get("spectrum", "union"))
    if "step_fraction" in pc:
        if bound is None:
            raise InvalidRange(f"step_fraction needs a defined step bound: {note}")
        T = float(pc["step_fraction"]) * bound.T_lambda
    else:
        T = float(pc["step_T"])
    f0 = residual(run_problem, x0, oracle)
    protocol = ProtocolConfig(
        variant, T, gmap, int(pc.get("max_steps", 10_000)), float(pc.get("termination_residual", 0.0)), lmap
    )

    delay = None
    if dl:
        tb = int(dl["tau_bar"])
        if dl.get("mode", "varying") == "fixed":
            table = {(r[0], r[1]): r[2] for r in dl.get("table", [])}
            assignment = FixedPerLink(table, dl.get("default"))
        else:
            assignment = TimeVarying(int(dl.get("seed", seeds["delay"])))
        delay = DelayedRunConfig(dl.get("case", "II"), protocol, DelayModel(tb, assignment), dl.get("send_policy", "on_update"))

    meta.update({"initial_residual": f0, "difference_envelope": envelope, "curvature_interval": [lo, hi]})
    return Scenario(cfg, problem, run_problem, schedule, protocol, delay, x0, oracle, seeds, meta, bound, note)


@dataclass
class RunReport:
    scenario: str
    status: str
    iterations: int
    initial_residual: float
    final_residual: float
    target_residual: float | None
    iterations_to_target: int | None
    step_T: float
    tau_bar: int
    step_bound: dict | None
    step_bound_note: str
    respects_bound: bool | None
    step_bound_audit: dict | None
    b_connected_advisory: bool | None
    uniformly_connected: bool
    max_feasibility_drift: float
    max_rate: float
    rrl_limit: float | None
    rrl_ok: bool | None
    phi_star: float
    oracle_cost: float
    seed: int
    seeds: dict
    config_hash: str
    delay_info: dict
    meta: dict
    wall_time_s: float = 0.0
    box_comparison: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _box_comparison(p: Problem, x_pen: np.ndarray) -> dict | None:
    """Penalised optimum against the hard-box optimum of the unpenalised costs."""
    penal = (PenaltyAugmented, SmoothPenaltyAugmented)
    if p.a is not None or not all(isinstance(c, penal) for c in p.costs):
        return None
    base = Problem(tuple(c.base for c in p.costs), p.b)
    lower = np.array([c.m for c in p.costs], float)
    upper = np.array([c.M for c in p.costs], float)
    try:
        hard = solve_box_constrained(base, lower, upper)
    except InfeasiblePoint as exc:
        return {"note": str(exc)}
    return {
        "hard_box_cost": base.cost(hard.x_star),
        "hard_box_phi_star": hard.phi_star,
        "penalized_optimum_base_cost": base.cost(x_pen),
        "max_abs_gap": float(np.max(np.abs(x_pen - hard.x_star))),
        "max_box_violation": float(np.max(np.maximum(lower - x_pen, 0) + np.maximum(x_pen - upper, 0))),
    }


def _rrl_limit(scn: Scenario) -> float | None:
    """Per-agent rate cap implied by a node-based outer saturation."""
    g = scn.protocol.nonlinearity
    if scn.protocol.variant == "link" or not isinstance(g, Saturation):
        return None
    top = max(float(gr.weighted_degree().max()) if gr.edges else 0.0 for _, gr in scn.schedule.snapshots)
    return g.kappa * top


def execute(scn: Scenario, record_states: bool = False) -> tuple[Trace, RunReport]:
    t0 = time.perf_counter()
    if scn.delay is None:
        trace = run(scn.run_problem, scn.schedule, scn.protocol, x0=scn.x0, oracle=scn.oracle, record_states=record_states)
        tau_bar = 0
    else:
        trace = run_delayed(
            scn.run_problem, scn.schedule, scn.delay, x0=scn.x0, oracle=scn.oracle, record_states=record_states
        )
        tau_bar = scn.delay.delay.tau_bar
    wall = time.perf_counter() - t0

    pc = scn.config.section("protocol")
    target = pc.get("target_residual")
    T = scn.protocol.step_T
    lo, hi = scn.meta["curvature_interval"]
    f_lo, f_hi = _envelope(trace.x_final)
    lo, hi = min(lo, f_lo), max(hi, f_hi)
    audit, _ = step_bound_for(
        scn.run_problem, scn.schedule, scn.protocol, lo, hi, max(trace.diff_envelope, 1e-12),
        scn.config.section("network").get("spectrum", "union"),
    )
    uc, _ = G.check_uniform_connectivity(scn.schedule)
    limit = _rrl_limit(scn)
    # Case I updates once per window with step T, so only Case II pays the (tau_bar + 1) factor
    effective_tau = tau_bar if scn.delay is not None and scn.delay.mode == "II" else 0
    # rounding of x itself, expressed as a rate
    rate_tol = 8 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(trace.x_final)))) / T
    bound = scn.bound
    report = RunReport(
        scenario=scn.config.name,
        status=trace.status,
        iterations=len(trace) - 1,
        initial_residual=float(trace.residual[0]),
        final_residual=float(trace.residual[-1]),
        target_residual=target,
        iterations_to_target=None if target is None else iterations_to(trace, float(target)),
        step_T=T,
        tau_bar=tau_bar,
        step_bound=None if bound is None else bound.as_dict(),
        step_bound_note=scn.bound_note,
        respects_bound=None if bound is None else bound.respects(T, effective_tau),
        step_bound_audit=None if audit is None else audit.as_dict(),
        b_connected_advisory=None if bound is None or scn.schedule.is_static else T * scn.schedule.window_B <= bound.T_lambda,
        uniformly_connected=uc,
        max_feasibility_drift=trace.max_drift,
        max_rate=trace.max_rate,
        rrl_limit=limit,
        rrl_ok=None if limit is None else bool(trace.max_rate <= limit + rate_tol),
        phi_star=scn.oracle.phi_star,
        oracle_cost=scn.run_problem.cost(scn.oracle.x_star),
        box_comparison=_box_comparison(scn.run_problem, scn.oracle.x_star),
        seed=scn.config.seed,
        seeds=scn.seeds,
        config_hash=scn.config.hash(),
        delay_info=trace.info,
        meta=scn.meta,
        wall_time_s=wall,
    )
    return trace, report


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> tuple[Trace, RunReport]:
    """Build, run and (if ``out_dir`` or the config names one) write trace/report files."""
    scn = build_scenario(cfg)
    out = cfg.section("output")
    want_states = bool(out.get("states", False))
    trace, report = execute(scn, record_states=want_states)
    target = out_dir if out_dir is not None else out.get("dir")
    if target is not None:
        d = Path(target)
        d.mkdir(parents=True, exist_ok=True)
        (d / "trace.csv").write_text(trace_csv(trace))
        if want_states:
            (d / "states.csv").write_text(states_csv(trace))
        (d / "report.json").write_text(report.to_json() + "\n")
    return trace, report


def sweep_trials(cfg: ScenarioConfig) -> list[tuple[int, tuple, int, dict]]:
    """``(trial_index, cell_values, seed, overrides)`` for every grid cell x seed."""
    sw = cfg.section("sweep")
    grid = sw.get("grid", {})
    keys = list(grid)
    if "seeds" in sw:
        seeds = [int(s) for s in sw["seeds"]]
    else:
        trials = int(sw.get("trials", 1))
        extra = np.random.SeedSequence(cfg.seed).spawn(max(trials - 1, 0))
        seeds = [cfg.seed] + [int(c.generate_state(1)[0] % (2**31)) for c in extra]
    out = []
    idx = 0
    for values in itertools.product(*(grid[k] for k in keys)):
        for s in seeds:
            overrides = dict(zip(keys, values))
            overrides["seed"] = s
            out.append((idx, values, s, overrides))
            idx += 1
    return out


def _trial_worker(args) -> dict:
    raw, source, base_dir, idx, values, seed, overrides, target = args
    cfg = ScenarioConfig(raw, source, Path(base_dir)).with_overrides(overrides)
    cfg.raw.pop("sweep", None)
    row = {"trial": idx, "seed": seed}
    try:
        trace, rep = execute(build_scenario(cfg))
        it = iterations_to(trace, target) if target is not None else None
        row.update(
            status=rep.status,
            iterations=rep.iterations,
            final_residual=rep.final_residual,
            iterations_to_target=it,
            step_T=rep.step_T,
            iterations_times_T=None if it is None else it * rep.step_T,
            T_lambda=None if rep.step_bound is None else rep.step_bound["T_lambda"],
            max_feasibility_drift=rep.max_feasibility_drift,
        )
    except Exception as exc:  # a failed trial is recorded, not fatal
        row.update(status=f"Error: {type(exc).__name__}: {exc}")
    return row


TRIAL_COLUMNS = (
    "trial", "seed", "status", "iterations", "final_residual", "iterations_to_target", "step_T",
    "iterations_times_T", "T_lambda", "max_feasibility_drift",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".17g")
    return str(v)


def run_sweep(cfg: ScenarioConfig, out_dir: str | Path | None = None, workers: int | None = None):
    """Run every grid cell x seed; return ``(rows, summary)`` and write CSVs when an output dir is set.

    Rows come back in trial order whatever the completion order, so the
    output only depends on the config.
    """
    sw = cfg.section("sweep")
    grid_keys = list(sw.get("grid", {}))
    target = sw.get("target_residual", cfg.section("protocol").get("target_residual"))
    trials = sweep_trials(cfg)
    raw = {k: v for k, v in cfg.raw.items() if k != "sweep"}
    jobs = [(raw, cfg.source, str(cfg.base_dir), i, vals, s, ov, target) for i, vals, s, ov in trials]
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, sw.get("workers", 1)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_trial_worker, jobs))
    else:
        rows = [_trial_worker(j) for j in jobs]
    for (_, vals, _, _), row in zip(trials, rows):
        for k, v in zip(grid_keys, vals):
            row[k] = v

    summary = []
    for vals, group in itertools.groupby(zip(trials, rows), key=lambda tr: tr[0][1]):
        grp = [r for _, r in group]
        cell = dict(zip(grid_keys, vals))
        for col in ("iterations_to_target", "iterations_times_T", "final_residual"):
            data = [r.get(col) for r in grp if r.get(col) is not None]
            cell[f"{col}_mean"] = float(np.mean(data)) if data else None
            cell[f"{col}_std"] = float(np.std(data)) if data else None
        cell["trials"] = len(grp)
        cell["failed"] = sum(1 for r in grp if str(r.get("status", "")).startswith("Error"))
        summary.append(cell)

    target_dir = out_dir if out_dir is not None else cfg.section("output").get("dir")
    if target_dir is not None:
        d = Path(target_dir)
        d.mkdir(parents=True, exist_ok=True)
        cols = list(grid_keys) + list(TRIAL_COLUMNS)
        (d / "sweep.csv").write_text(_table(cols, rows))
        scols = list(grid_keys) + [c for c in summary[0] if c not in grid_keys] if summary else []
        (d / "sweep_summary.csv").write_text(_table(scols, summary))
    return rows, summary


def _table(cols: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()
