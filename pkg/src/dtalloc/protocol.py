"""Delay-free discrete-time allocation dynamics.

Each link carries an anti-symmetric flow, so the total allocation is
conserved exactly up to rounding.  Three variants share one kernel:

``node``    ``x_i -= T sum_j W_ij g(df_i - df_j)``
``link``    ``x_i -= T sum_j W_ij (g(df_i) - g(df_j))``
``hybrid``  ``x_i -= T sum_j W_ij g(h(df_i) - h(df_j))`` with an inner link map ``h``
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analysis import Trace, gradient_dispersion, residual
from .errors import DirectedGraphRejected, DirectedUnbalanced, InvalidRange
from .graph import NetworkSchedule, WeightedGraph, is_weight_balanced
from .nonlinearity import Identity, NonlinearMap
from .objective import Problem
from .oracle import OracleSolution, solve_kkt

__all__ = [
    "ProtocolConfig",
    "AllocationState",
    "Uniform",
    "RandomFeasible",
    "feasible_init",
    "step_node_based",
    "step_link_based",
    "run",
    "EdgeArrays",
    "edge_arrays",
    "pair_flow",
    "DIVERGE_STATE",
    "DIVERGE_RESIDUAL",
]

VARIANTS = ("node", "link", "hybrid")
DIVERGE_STATE = 1e12
DIVERGE_RESIDUAL = 1e6


@dataclass(frozen=True)
class ProtocolConfig:
    variant: str = "node"
    step_T: float = 0.01
    nonlinearity: NonlinearMap = field(default_factory=Identity)
    max_steps: int = 10_000
    termination_residual: float = 0.0
    link_nonlinearity: NonlinearMap | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidRange(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (self.step_T > 0 and math.isfinite(self.step_T)):
            raise InvalidRange(f"step_T must be positive, got {self.step_T}")
        if self.max_steps < 0:
            raise InvalidRange("max_steps must be nonnegative")
        if self.termination_residual < 0:
            raise InvalidRange("termination_residual must be nonnegative")
        if self.variant == "hybrid" and self.link_nonlinearity is None:
            raise InvalidRange("hybrid variant needs link_nonlinearity")


@dataclass
class AllocationState:
    x: np.ndarray
    step: int
    grad_cache: np.ndarray
    comp: np.ndarray = None  # Kahan compensation per agent

    def __post_init__(self):
        if self.comp is None:
            self.comp = np.zeros_like(self.x)

    def copy(self) -> AllocationState:
        return AllocationState(self.x.copy(), self.step, self.grad_cache.copy(), self.comp.copy())


@dataclass(frozen=True)
class Uniform:
    pass


@dataclass(frozen=True)
class RandomFeasible:
    seed: int = 0
    scale: float = 1.0


def feasible_init(p: Problem, mode=Uniform()) -> AllocationState:
    """Starting point on ``sum x = b`` (unweighted problems only)."""
    n, b = p.n, float(p.b)
    if isinstance(mode, Uniform):
        x = np.full(n, b / n)
    elif isinstance(mode, RandomFeasible):
        rng = np.random.default_rng(mode.seed)
        x = b / n + mode.scale * max(1.0, abs(b) / n) * rng.standard_normal(n)
        x -= (math.fsum(x) - b) / n
    else:
        raise InvalidRange(f"unknown init mode {mode!r}")
    # push the leftover rounding into one entry so the sum is exact
    x[-1] += b - math.fsum(x)
    x[-1] += b - math.fsum(x)
    return AllocationState(x, 0, p.gradients(x))


@dataclass(frozen=True)
class EdgeArrays:
    """Vectorised view of a snapshot: flow on row ``e`` leaves ``a[e]`` and enters ``b[e]``.

    For undirected graphs each edge appears once with ``credit = True``.  For
    directed graphs row ``e`` is an arc whose receiver ``a[e]`` updates using
    the sender ``b[e]``; only the receiver moves.
    """

    a: np.ndarray
    b: np.ndarray
    w: np.ndarray
    credit: bool
    n: int


def edge_arrays(g: WeightedGraph) -> EdgeArrays:
    if g.directed:
        return EdgeArrays(g.dst, g.src, g.weights, False, g.n)
    return EdgeArrays(g.src, g.dst, g.weights, True, g.n)


def _check_graph(g: WeightedGraph, cfg: ProtocolConfig) -> None:
    if not g.directed:
        return
    if cfg.variant in ("node", "hybrid"):
        raise DirectedGraphRejected(
            f"{cfg.variant}-based updates need symmetric weights; got a directed graph"
        )
    if not is_weight_balanced(g):
        raise DirectedUnbalanced("link-based updates on a digraph need in-weight == out-weight at every node")


def make_term(cfg: ProtocolConfig) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Odd pairwise term ``phi(gi, gj) = -phi(gj, gi)`` for the configured variant."""
    g = cfg.nonlinearity
    if cfg.variant == "node":
        return lambda gi, gj: g(gi - gj)
    if cfg.variant == "link":
        return lambda gi, gj: g(gi) - g(gj)
    h = cfg.link_nonlinearity
    return lambda gi, gj: g(h(gi) - h(gj))


def pair_flow(cfg: ProtocolConfig, w, gi, gj):
    """``T * w * phi(gi, gj)``: the amount agent ``i`` gives up on one link."""
    return cfg.step_T * w * make_term(cfg)(np.asarray(gi, float), np.asarray(gj, float))


def accumulate(ea: EdgeArrays, flows: np.ndarray) -> np.ndarray:
    """Per-agent increments from per-row flows."""
    delta = -np.bincount(ea.a, weights=flows, minlength=ea.n)
    if ea.credit:
        delta += np.bincount(ea.b, weights=flows, minlength=ea.n)
    return delta


def kahan_apply(state: AllocationState, delta: np.ndarray) -> None:
    y = delta - state.comp
    t = state.x + y
    state.comp = (t - state.x) - y
    state.x = t


def _step(state: AllocationState, p: Problem, g: WeightedGraph, cfg: ProtocolConfig) -> AllocationState:
    _check_graph(g, cfg)
    out = state.copy()
    if g.num_edges:
        ea = edge_arrays(g)
        grads = state.grad_cache
        flows = cfg.step_T * ea.w * make_term(cfg)(grads[ea.a], grads[ea.b])
        kahan_apply(out, accumulate(ea, flows))
    out.step += 1
    out.grad_cache = p.gradients(out.x)
    return out


def step_node_based(state: AllocationState, p: Problem, g: WeightedGraph, cfg: ProtocolConfig) -> AllocationState:
    if cfg.variant == "link":
        raise InvalidRange("step_node_based called with a link-based config")
    return _step(state, p, g, cfg)


def step_link_based(state: AllocationState, p: Problem, g: WeightedGraph, cfg: ProtocolConfig) -> AllocationState:
    if cfg.variant != "link":
        raise InvalidRange("step_link_based called with a non link-based config")
    return _step(state, p, g, cfg)


class Recorder:
    """Collects per-step metrics and decides termination; shared with the delay engines."""

    def __init__(self, p: Problem, cfg: ProtocolConfig, oracle: OracleSolution, record_states: bool):
        self.p, self.cfg, self.oracle = p, cfg, oracle
        self.b = float(p.b)
        self.res: list[float] = []
        self.drift: list[float] = []
        self.disp: list[float] = []
        self.change: list[float] = []
        self.states: list[np.ndarray] | None = [] if record_states else None
        self.diff_env = 0.0
        self.gmin, self.gmax = math.inf, -math.inf
        self.status = "MaxSteps"
        self._prev: np.ndarray | None = None

    def observe(self, x: np.ndarray, grads: np.ndarray) -> bool:
        """Record the state; return True when the run should stop."""
        if self._prev is not None:
            self.change.append(float(np.max(np.abs(x - self._prev))))
        self._prev = x.copy()
        finite = bool(np.all(np.isfinite(x)))
        r = residual(self.p, x, self.oracle) if finite else math.inf
        self.res.append(r)
        self.drift.append(math.fsum(x) - self.b if finite else math.inf)
        self.disp.append(gradient_dispersion(grads) if finite else math.inf)
        if self.states is not None:
            self.states.append(x.copy())
        if finite:
            self.gmin = min(self.gmin, float(grads.min()))
            self.gmax = max(self.gmax, float(grads.max()))
        f0 = self.res[0]
        if not finite or np.max(np.abs(x)) > DIVERGE_STATE or r > DIVERGE_RESIDUAL * max(f0, 1e-300):
            if len(self.res) > 1:
                self.status = "Diverged"
                return True
        if self.cfg.termination_residual > 0 and r <= self.cfg.termination_residual:
            self.status = "Converged"
            return True
        return False

    def hold(self, count: int) -> None:
        """Repeat the last record ``count`` times for steps where the state did not move."""
        for lst in (self.res, self.drift, self.disp):
            lst.extend([lst[-1]] * count)
        self.change.extend([0.0] * count)
        if self.states is not None:
            self.states.extend([self.states[-1].copy() for _ in range(count)])

    def note_differences(self, gi: np.ndarray, gj: np.ndarray) -> None:
        if gi.size:
            self.diff_env = max(self.diff_env, float(np.max(np.abs(gi - gj))))

    def finish(self, x: np.ndarray, info: dict | None = None) -> Trace:
        return Trace(
            residual=np.array(self.res),
            feasibility_drift=np.array(self.drift),
            grad_dispersion=np.array(self.disp),
            max_change=np.array(self.change),
            x_final=x.copy(),
            status=self.status,
            step_T=self.cfg.step_T,
            states=None if self.states is None else np.array(self.states),
            diff_envelope=self.diff_env,
            grad_range=(self.gmin, self.gmax),
            info=info or {},
        )


def _initial_state(p: Problem, x0) -> AllocationState:
    if x0 is None:
        return feasible_init(p, Uniform())
    if isinstance(x0, (Uniform, RandomFeasible)):
        return feasible_init(p, x0)
    x = np.array(x0, dtype=float)
    return AllocationState(x, 0, p.gradients(x))


def prepare(p: Problem, schedule: NetworkSchedule, cfg: ProtocolConfig, oracle):
    if p.a is not None:
        raise InvalidRange("distributed runs need an unweighted problem; use apply_change_of_variables")
    if schedule.n != p.n:
        raise InvalidRange(f"schedule has {schedule.n} nodes but the problem has {p.n} agents")
    for _, g in schedule.snapshots:
        _check_graph(g, cfg)
    return solve_kkt(p) if oracle is None else oracle


def run(
    p: Problem,
    schedule: NetworkSchedule | WeightedGraph,
    cfg: ProtocolConfig,
    x0=None,
    oracle: OracleSolution | None = None,
    record_states: bool = False,
) -> Trace:
    """Iterate the configured update on the active snapshot at each step.

    Stops after ``cfg.max_steps`` updates, when the residual reaches
    ``cfg.termination_residual`` (if positive), or on divergence.
    """
    if isinstance(schedule, WeightedGraph):
        schedule = NetworkSchedule.static(schedule)
    oracle = prepare(p, schedule, cfg, oracle)
    state = _initial_state(p, x0)
    rec = Recorder(p, cfg, oracle, record_states)
    term = make_term(cfg)
    cache: dict[int, EdgeArrays] = {}
    T = cfg.step_T

    for k in range(cfg.max_steps + 1):
        if rec.observe(state.x, state.grad_cache) or k == cfg.max_steps:
            break
        idx = schedule.index_at(k)
        ea = cache.get(idx)
        if ea is None:
            ea = cache[idx] = edge_arrays(schedule.snapshots[idx][1])
        if ea.w.size:
            gi, gj = state.grad_cache[ea.a], state.grad_cache[ea.b]
            rec.note_differences(gi, gj)
            kahan_apply(state, accumulate(ea, T * ea.w * term(gi, gj)))
        state.step += 1
        state.grad_cache = p.gradients(state.x)
    return rec.finish(state.x)
