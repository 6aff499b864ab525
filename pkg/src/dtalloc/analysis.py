"""Convergence metrics, the step-size bound and trace export."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DimensionMismatch, InfeasiblePoint, NonPositiveInput
from .graph import SpectralSummary
from .objective import Problem
from .oracle import OracleSolution, solve_kkt

__all__ = [
    "TraceRecord",
    "Trace",
    "StepBoundReport",
    "compute_step_bound",
    "residual",
    "residual_vector",
    "certify_rate",
    "sandwich_check",
    "gradient_dispersion",
    "iterations_to",
    "windowed_ratio",
    "trace_csv",
    "states_csv",
    "TRACE_COLUMNS",
]

RESIDUAL_FLOOR = -1e-9
RATE_FLOOR = 1e-12
RATE_SLACK = 1e-9
TRACE_COLUMNS = ("step", "residual", "feasibility_drift", "grad_dispersion", "rate_ratio")


@dataclass(frozen=True)
class TraceRecord:
    step: int
    residual: float
    feasibility_drift: float
    grad_dispersion: float
    state_snapshot: np.ndarray | None = None
    rate_ratio: float | None = None


@dataclass
class Trace:
    """Column-oriented run history; index ``k`` is the state after ``k`` steps."""

    residual: np.ndarray
    feasibility_drift: np.ndarray
    grad_dispersion: np.ndarray
    max_change: np.ndarray
    x_final: np.ndarray
    status: str
    step_T: float
    states: np.ndarray | None = None
    diff_envelope: float = 0.0
    grad_range: tuple[float, float] = (0.0, 0.0)
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.residual)

    @property
    def steps(self) -> np.ndarray:
        return np.arange(len(self))

    @property
    def rate_ratio(self) -> np.ndarray:
        """``F(k+1)/F(k)`` aligned with step ``k+1``; NaN at step 0 and where ``F(k) == 0``."""
        out = np.full(len(self), np.nan)
        prev, cur = self.residual[:-1], self.residual[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            out[1:] = np.where(prev != 0, cur / prev, np.nan)
        return out

    @property
    def max_rate(self) -> float:
        """Largest ``|x_i(k+1) - x_i(k)| / T`` over the run."""
        return float(self.max_change.max() / self.step_T) if len(self.max_change) else 0.0

    @property
    def max_drift(self) -> float:
        return float(np.max(np.abs(self.feasibility_drift)))

    def record(self, k: int) -> TraceRecord:
        rr = self.rate_ratio[k]
        return TraceRecord(
            step=k,
            residual=float(self.residual[k]),
            feasibility_drift=float(self.feasibility_drift[k]),
            grad_dispersion=float(self.grad_dispersion[k]),
            state_snapshot=None if self.states is None else self.states[k].copy(),
            rate_ratio=None if math.isnan(rr) else float(rr),
        )

    def __iter__(self) -> Iterator[TraceRecord]:
        return (self.record(k) for k in range(len(self)))

    def __getitem__(self, k: int) -> TraceRecord:
        return self.record(range(len(self))[k])


@dataclass(frozen=True)
class StepBoundReport:
    epsilon: float
    K_g: float
    u: float
    lambda2: float
    lambdaN: float
    T_lambda: float
    v: float | None = None

    def rate_bound_coefficient(self, T: float, v: float | None = None) -> float:
        """``1 + 4 v (u K^2 T^2 lambdaN^2 - T lambda2 epsilon)``."""
        v = self.v if v is None else v
        if v is None:
            raise NonPositiveInput("rate coefficient needs the lower curvature constant v")
        return 1.0 + 4.0 * v * (
            self.u * self.K_g**2 * T**2 * self.lambdaN**2 - T * self.lambda2 * self.epsilon
        )

    def respects(self, T: float, tau_bar: int = 0) -> bool:
        return T * (tau_bar + 1) < self.T_lambda

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "K_g": self.K_g,
            "u": self.u,
            "v": self.v,
            "lambda2": self.lambda2,
            "lambdaN": self.lambdaN,
            "T_lambda": self.T_lambda,
        }


def compute_step_bound(
    epsilon: float, K_g: float, u: float, spec: SpectralSummary, v: float | None = None
) -> StepBoundReport:
    """Sufficient step bound ``T_lambda = eps lambda2 / (u K^2 lambdaN^2)``."""
    named = {"epsilon": epsilon, "K_g": K_g, "u": u, "lambda2": spec.lambda2, "lambdaN": spec.lambdaN}
    bad = [k for k, val in named.items() if not (val > 0 and math.isfinite(val))]
    if v is not None and not v > 0:
        bad.append("v")
    if bad:
        raise NonPositiveInput(f"step bound needs positive finite inputs; offending: {', '.join(bad)}")
    t = epsilon * spec.lambda2 / (u * K_g**2 * spec.lambdaN**2)
    return StepBoundReport(float(epsilon), float(K_g), float(u), float(spec.lambda2), float(spec.lambdaN), t, v)


def _opt(p: Problem, oracle_opt) -> tuple[np.ndarray, float]:
    if isinstance(oracle_opt, OracleSolution):
        return oracle_opt.x_star, oracle_opt.phi_star
    x_star = np.asarray(oracle_opt, dtype=float)
    return x_star, float(np.mean(p.gradients(x_star)))


def residual_vector(p: Problem, x: np.ndarray, oracle_opt) -> np.ndarray:
    """Per-agent terms ``f_i(x_i) - f_i(x*_i) - phi* (x_i - x*_i)``.

    These sum to ``F(x) - F*`` on the feasible set and are each nonnegative by
    convexity.  The linear term removes the cancellation that a plain
    difference of totals suffers near the optimum.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n,):
        raise DimensionMismatch(f"expected a vector of length {p.n}, got shape {x.shape}")
    x_star, phi = _opt(p, oracle_opt)
    return p.excess(x, x_star, phi)


def residual(p: Problem, x, oracle_opt) -> float:
    """``F(x) - F(x*)`` for feasible ``x``, clamped below at ``-1e-9``."""
    return max(math.fsum(residual_vector(p, x, oracle_opt)), RESIDUAL_FLOOR)


def gradient_dispersion(grads: np.ndarray) -> float:
    return float(np.max(grads) - np.min(grads))


def certify_rate(trace: Trace, bound: StepBoundReport, T: float, v: float) -> tuple[bool, int | None]:
    """Check ``F(k+1)/F(k)`` against the linear rate bound while ``F(k) > 1e-12``.

    Returns ``(ok, first_violating_step)``; the step is the index ``k+1``.
    """
    limit = bound.rate_bound_coefficient(T, v) + RATE_SLACK
    r = trace.residual
    for k in range(len(r) - 1):
        if r[k] <= RATE_FLOOR:
            continue
        if r[k + 1] / r[k] > limit:
            return False, k + 1
    return True, None


def sandwich_check(p: Problem, x, v: float, u: float, oracle_opt=None, rtol: float = 1e-9) -> bool:
    """``|g - mean g|^2 / (4u) <= F(x) - F* <= |g - mean g|^2 / (4v)`` at a feasible ``x``."""
    if v > u:
        raise NonPositiveInput(f"curvature constants need v <= u, got v={v}, u={u}")
    if v <= 0:
        raise NonPositiveInput("curvature constant v must be positive")
    x = np.asarray(x, dtype=float)
    if abs(math.fsum(x) - p.b) > 1e-9 * max(1.0, abs(p.b)):
        raise InfeasiblePoint(f"sum(x) = {math.fsum(x)!r} differs from b = {p.b!r}")
    sol = solve_kkt(p) if oracle_opt is None else oracle_opt
    fbar = residual(p, x, sol)
    g = p.gradients(x)
    disp2 = float(np.sum((g - g.mean()) ** 2))
    lower, upper = disp2 / (4 * u), disp2 / (4 * v)
    slack = rtol * max(disp2, 1e-300) + 1e-15
    return lower <= fbar * (1 + rtol) + slack and fbar <= upper * (1 + rtol) + slack


def iterations_to(trace: Trace, target: float, relative: bool = False) -> int | None:
    """First step at which the residual is at or below ``target`` (times ``F(0)`` if relative)."""
    thr = target * trace.residual[0] if relative else target
    hit = np.flatnonzero(trace.residual <= thr)
    return int(hit[0]) if hit.size else None


def windowed_ratio(trace: Trace, B: int) -> np.ndarray:
    """Diagnostic ``F(k+B)/F(k)`` over the run (not certified against any bound)."""
    r = trace.residual
    if len(r) <= B:
        return np.empty(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r[:-B] > 0, r[B:] / r[:-B], np.nan)


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else format(float(v), ".17g")


def trace_csv(trace: Trace) -> str:
    """CSV text with 17 significant digits so repeated runs compare byte-for-byte."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    rr = trace.rate_ratio
    for k in range(len(trace)):
        w.writerow(
            [
                k,
                _fmt(trace.residual[k]),
                _fmt(trace.feasibility_drift[k]),
                _fmt(trace.grad_dispersion[k]),
                _fmt(rr[k]),
            ]
        )
    return buf.getvalue()


def states_csv(trace: Trace) -> str:
    if trace.states is None:
        raise ValueError("trace was recorded without states")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("step", "agent", "x"))
    for k, row in enumerate(trace.states):
        for i, val in enumerate(row):
            w.writerow((k, i, _fmt(val)))
    return buf.getvalue()
