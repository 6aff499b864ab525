"""Bounded, symmetric link delays and the two delay-tolerant engines.

Delays are integer step counts ``0 <= tau <= tau_bar`` drawn once per
unordered agent pair, so both directions of a link deliver on the same step
and the pairwise flow stays anti-symmetric.

Case I runs on a slow clock: one exchange per window of ``tau_bar + 1`` fast
steps, with the update applied at the end of the window once every packet has
landed.

Case II updates on every fast step with whatever time-stamped packets arrive.
A packet sent at step ``s`` carries the sender's gradient at ``s``; the
receiver pairs it with its own recorded gradient at ``s``.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .analysis import Trace
from .errors import HistoryUnderflow, InvalidRange
from .graph import NetworkSchedule, WeightedGraph
from .objective import Problem
from .oracle import OracleSolution
from .protocol import (
    EdgeArrays,
    ProtocolConfig,
    Recorder,
    _initial_state,
    accumulate,
    edge_arrays,
    kahan_apply,
    make_term,
    prepare,
)

__all__ = [
    "FixedPerLink",
    "TimeVarying",
    "DelayModel",
    "DelayedRunConfig",
    "timescale_map",
    "sample_delays",
    "validate_delay_schedule",
    "run_case_i",
    "run_case_ii",
    "run_delayed",
]

SEND_POLICIES = ("on_update", "every_step")
MAX_REDRAWS = 64


@dataclass(frozen=True)
class FixedPerLink:
    """Constant per-pair delays; pairs missing from ``table`` use ``default`` (``tau_bar`` if None)."""

    table: dict = field(default_factory=dict)
    default: int | None = None


@dataclass(frozen=True)
class TimeVarying:
    """Fresh uniform draw from ``{0, ..., tau_bar}`` per pair and step."""

    seed: int = 0


@dataclass(frozen=True)
class DelayModel:
    tau_bar: int
    assignment: FixedPerLink | TimeVarying = field(default_factory=FixedPerLink)

    def __post_init__(self):
        if int(self.tau_bar) != self.tau_bar or self.tau_bar < 0:
            raise InvalidRange(f"tau_bar must be a nonnegative integer, got {self.tau_bar}")
        a = self.assignment
        if isinstance(a, FixedPerLink):
            norm = {}
            for key, tau in dict(a.table).items():
                i, j = int(key[0]), int(key[1])
                if not 0 <= tau <= self.tau_bar or int(tau) != tau:
                    raise InvalidRange(f"delay {tau} on link {key} outside 0..{self.tau_bar}")
                norm[(min(i, j), max(i, j))] = int(tau)
            default = self.tau_bar if a.default is None else a.default
            if not 0 <= default <= self.tau_bar:
                raise InvalidRange(f"default delay {default} outside 0..{self.tau_bar}")
            object.__setattr__(self, "assignment", FixedPerLink(norm, int(default)))
        elif not isinstance(a, TimeVarying):
            raise InvalidRange(f"unknown delay assignment {a!r}")


@dataclass(frozen=True)
class DelayedRunConfig:
    mode: str
    base: ProtocolConfig
    delay: DelayModel
    send_policy: str = "on_update"

    def __post_init__(self):
        if self.mode not in ("I", "II"):
            raise InvalidRange(f"delay mode must be 'I' or 'II', got {self.mode!r}")
        if self.send_policy not in SEND_POLICIES:
            raise InvalidRange(f"send_policy must be one of {SEND_POLICIES}")


def timescale_map(k: int, tau_bar: int) -> int:
    """Slow step containing fast step ``k >= 1``."""
    if k < 1:
        raise InvalidRange("fast steps are counted from 1")
    return (k - 1) // (tau_bar + 1) + 1


def _pair_keys(a: np.ndarray, b: np.ndarray) -> list[tuple[int, int]]:
    return [(int(min(i, j)), int(max(i, j))) for i, j in zip(a, b)]


def _draw(dm: DelayModel, k: int, keys: list[tuple[int, int]], must_deliver: bool) -> np.ndarray:
    m = len(keys)
    a = dm.assignment
    if isinstance(a, FixedPerLink):
        return np.array([a.table.get(key, a.default) for key in keys], dtype=np.int64)
    if dm.tau_bar == 0 or m == 0:
        return np.zeros(m, dtype=np.int64)
    # one draw per distinct pair so both arcs of a digraph pair agree
    uniq = sorted(set(keys))
    rng = np.random.default_rng([a.seed, k])
    draws = rng.integers(0, dm.tau_bar + 1, size=len(uniq))
    if must_deliver:
        tries = 0
        while not np.any(draws == 0) and tries < MAX_REDRAWS:
            draws = rng.integers(0, dm.tau_bar + 1, size=len(uniq))
            tries += 1
        if not np.any(draws == 0):
            draws[0] = 0
    lookup = dict(zip(uniq, draws.tolist()))
    return np.array([lookup[key] for key in keys], dtype=np.int64)


def sample_delays(
    dm: DelayModel, k: int, active_links, must_deliver: bool = False
) -> dict[tuple[int, int], int]:
    """Delay of each active pair for packets sent at step ``k``.

    Pure in ``(dm, k, active_links)``.  With ``must_deliver`` set, a
    time-varying model redraws until some pair gets zero delay, so at least
    one packet lands at ``k``; engines set it when nothing else is due.
    """
    keys = sorted({(min(int(i), int(j)), max(int(i), int(j))) for i, j, *_ in active_links})
    taus = _draw(dm, k, keys, must_deliver)
    return dict(zip(keys, taus.tolist()))


def validate_delay_schedule(schedule: NetworkSchedule, dm: DelayModel) -> list[str]:
    """Problems that make a switching schedule incompatible with the delay bound."""
    if schedule.is_static:
        return []
    if schedule.min_duration <= dm.tau_bar + 1:
        return [
            f"snapshot duration {schedule.min_duration} must exceed tau_bar + 1 = {dm.tau_bar + 1} "
            "so every packet lands before its link switches off"
        ]
    return []


class _Counters:
    def __init__(self):
        self.sent = 0
        self.consumed = 0
        self.discarded = 0
        self.idle_steps = 0

    def as_dict(self, in_flight: int) -> dict:
        return {
            "packets_sent": self.sent,
            "packets_consumed": self.consumed,
            "packets_in_flight": in_flight,
            "packets_discarded": self.discarded,
            "idle_steps": self.idle_steps,
        }


def _packets(ea: EdgeArrays, rows: int) -> int:
    return rows * (2 if ea.credit else 1)


def run_case_i(
    p: Problem,
    schedule: NetworkSchedule | WeightedGraph,
    cfg: DelayedRunConfig,
    x0=None,
    oracle: OracleSolution | None = None,
    record_states: bool = False,
) -> Trace:
    """Slow-clock engine: exchange at the start of each window, update at its end.

    The trace is indexed by fast step; states are constant inside a window.
    ``max_steps`` counts fast steps.
    """
    if isinstance(schedule, WeightedGraph):
        schedule = NetworkSchedule.static(schedule)
    base = cfg.base
    oracle = prepare(p, schedule, base, oracle)
    _raise_on_schedule(schedule, cfg.delay)
    tau1 = cfg.delay.tau_bar + 1
    state = _initial_state(p, x0)
    rec = Recorder(p, base, oracle, record_states)
    term = make_term(base)
    T = base.step_T
    cnt = _Counters()
    cache: dict[int, EdgeArrays] = {}

    k = 0
    stop = rec.observe(state.x, state.grad_cache)
    while not stop and k < base.max_steps:
        idx = schedule.index_at(k)
        ea = cache.get(idx)
        if ea is None:
            ea = cache[idx] = edge_arrays(schedule.snapshots[idx][1])
        delta = None
        if ea.w.size:
            # every packet lands inside the window, so the update sees the full exchange
            taus = _draw(cfg.delay, k, _pair_keys(ea.a, ea.b), must_deliver=False)
            if np.any(taus > cfg.delay.tau_bar):
                raise HistoryUnderflow("a packet exceeded the delay bound")
            cnt.sent += _packets(ea, ea.w.size)
            gi, gj = state.grad_cache[ea.a], state.grad_cache[ea.b]
            rec.note_differences(gi, gj)
            delta = accumulate(ea, T * ea.w * term(gi, gj))
        # waiting steps of the window hold the state
        wait = min(tau1 - 1, base.max_steps - k)
        rec.hold(wait)
        k += wait
        if k >= base.max_steps:
            break
        if delta is not None:
            kahan_apply(state, delta)
            cnt.consumed += _packets(ea, ea.w.size)
        state.step += 1
        state.grad_cache = p.gradients(state.x)
        k += 1
        stop = rec.observe(state.x, state.grad_cache)
    in_flight = cnt.sent - cnt.consumed
    return rec.finish(state.x, {"mode": "I", **cnt.as_dict(in_flight)})


def _raise_on_schedule(schedule: NetworkSchedule, dm: DelayModel) -> None:
    problems = validate_delay_schedule(schedule, dm)
    if problems:
        raise InvalidRange("; ".join(problems))


def run_case_ii(
    p: Problem,
    schedule: NetworkSchedule | WeightedGraph,
    cfg: DelayedRunConfig,
    x0=None,
    oracle: OracleSolution | None = None,
    record_states: bool = False,
) -> Trace:
    """Same-clock engine driven by time-stamped packets.

    ``send_policy = "every_step"`` sends on every active link at every step.
    ``"on_update"`` (default) sends at step 0, when a link appears, and after
    either endpoint has applied an update, so no gradient is sent twice
    unchanged.  With equal delays ``tau_bar`` on every link this reproduces the
    delay-free run slowed down by a factor ``tau_bar + 1``.
    """
    if isinstance(schedule, WeightedGraph):
        schedule = NetworkSchedule.static(schedule)
    base = cfg.base
    oracle = prepare(p, schedule, base, oracle)
    _raise_on_schedule(schedule, cfg.delay)
    tau_bar = cfg.delay.tau_bar
    depth = tau_bar + 1
    n = p.n
    state = _initial_state(p, x0)
    rec = Recorder(p, base, oracle, record_states)
    term = make_term(base)
    T = base.step_T
    cnt = _Counters()
    cache: dict[int, tuple[EdgeArrays, list]] = {}
    hist = np.empty((depth, n))
    # arrival step -> list of (edge arrays, row mask, send step)
    pending: dict[int, list[tuple[EdgeArrays, np.ndarray, int]]] = defaultdict(list)
    updated = np.zeros(n, dtype=bool)
    prev_idx = None
    every = cfg.send_policy == "every_step"

    for k in range(base.max_steps + 1):
        if rec.observe(state.x, state.grad_cache) or k == base.max_steps:
            break
        hist[k % depth] = state.grad_cache
        idx = schedule.index_at(k)
        if idx not in cache:
            ea_new = edge_arrays(schedule.snapshots[idx][1])
            cache[idx] = (ea_new, _pair_keys(ea_new.a, ea_new.b))
        ea, keys = cache[idx]

        if ea.w.size:
            if every or k == 0 or idx != prev_idx:
                send = np.ones(ea.w.size, dtype=bool)
            else:
                send = updated[ea.a] | updated[ea.b]
            if send.any():
                rows = np.flatnonzero(send)
                taus = np.full(ea.w.size, -1, dtype=np.int64)
                taus[rows] = _draw(cfg.delay, k, [keys[r] for r in rows], must_deliver=not pending.get(k))
                cnt.sent += _packets(ea, rows.size)
                for tau in np.unique(taus[rows]):
                    pending[k + int(tau)].append((ea, taus == tau, k))
        prev_idx = idx

        batches = pending.pop(k, [])
        updated = np.zeros(n, dtype=bool)
        if not batches:
            cnt.idle_steps += 1
        else:
            delta = np.zeros(n)
            for bea, mask, s in batches:
                if k - s > tau_bar:
                    raise HistoryUnderflow(f"packet sent at {s} arrived at {k}, beyond tau_bar={tau_bar}")
                a, b, w = bea.a[mask], bea.b[mask], bea.w[mask]
                h = hist[s % depth]
                gi, gj = h[a], h[b]
                rec.note_differences(gi, gj)
                sub = EdgeArrays(a, b, w, bea.credit, n)
                delta += accumulate(sub, T * w * term(gi, gj))
                cnt.consumed += _packets(bea, int(mask.sum()))
                updated[a] = True
                if bea.credit:
                    updated[b] = True
            kahan_apply(state, delta)
        state.step += 1
        state.grad_cache = p.gradients(state.x)

    in_flight = sum(_packets(bea, int(mask.sum())) for lst in pending.values() for bea, mask, _ in lst)
    return rec.finish(state.x, {"mode": "II", "send_policy": cfg.send_policy, **cnt.as_dict(in_flight)})


def run_delayed(p, schedule, cfg: DelayedRunConfig, **kwargs) -> Trace:
    if cfg.mode == "I":
        return run_case_i(p, schedule, cfg, **kwargs)
    return run_case_ii(p, schedule, cfg, **kwargs)
