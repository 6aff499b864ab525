"""Centralised reference solvers for ``min sum f_i(x_i)  s.t.  sum x_i = b``.

:func:`solve_kkt` equalises gradients by bisection on the common value
``phi``; :func:`brute_force_grid` enumerates a grid and exists only to
cross-check it on tiny problems.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BracketFailure, EmptyFeasibleGrid, InfeasiblePoint, InvalidRange, TooManyAgents
from .objective import Problem, apply_change_of_variables

__all__ = [
    "OracleSolution",
    "solve_kkt",
    "solve_box_constrained",
    "invert_gradients",
    "brute_force_grid",
    "grid_cost_tolerance",
]

MAX_DOUBLINGS = 200


@dataclass(frozen=True)
class OracleSolution:
    x_star: np.ndarray
    phi_star: float
    iterations: int
    residual_kkt: float


def _bracket_x(p: Problem, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-agent bracket ``lo <= x_i <= hi`` with ``f_i'(lo) <= phi_i <= f_i'(hi)``."""
    n = p.n
    lo, hi = np.full(n, -1.0), np.full(n, 1.0)
    for _ in range(MAX_DOUBLINGS):
        bad = p.gradients(lo) > phi
        if not bad.any():
            break
        lo = np.where(bad, 2.0 * lo, lo)
    else:
        raise BracketFailure("could not bracket a gradient inverse from below")
    for _ in range(MAX_DOUBLINGS):
        bad = p.gradients(hi) < phi
        if not bad.any():
            break
        hi = np.where(bad, 2.0 * hi, hi)
    else:
        raise BracketFailure("could not bracket a gradient inverse from above")
    return lo, hi


def invert_gradients(p: Problem, phi: float, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Solve ``f_i'(x_i) = phi`` for every agent with safeguarded Newton steps."""
    target = np.full(p.n, float(phi))
    lo, hi = _bracket_x(p, target)
    x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        r = p.gradients(x) - target
        lo = np.where(r < 0, x, lo)
        hi = np.where(r > 0, x, hi)
        h = p.hessians(x)
        newton = x - r / h
        inside = (newton > lo) & (newton < hi)
        x_new = np.where(inside, newton, 0.5 * (lo + hi))
        x_new = np.where(r == 0, x, x_new)
        step = np.abs(x_new - x)
        x = x_new
        if np.all(step <= tol * np.maximum(1.0, np.abs(x))):
            break
    return x


def solve_kkt(p: Problem, tol: float = 1e-10) -> OracleSolution:
    """Optimum of ``p`` via gradient equalisation.

    Weighted problems are first mapped to the unweighted form; the returned
    point is expressed in the original variables in that case.
    """
    if p.a is not None:
        q = apply_change_of_variables(p)
        sol = solve_kkt(q, tol)
        a = np.asarray(p.a)
        return OracleSolution(sol.x_star / a, sol.phi_star, sol.iterations, sol.residual_kkt)

    b, n = float(p.b), p.n
    phi0 = float(np.mean(p.gradients(np.full(n, b / n))))

    def excess(phi: float) -> float:
        return math.fsum(invert_gradients(p, phi)) - b

    width = max(1.0, abs(phi0))
    lo_phi, hi_phi = phi0 - width, phi0 + width
    for k in range(MAX_DOUBLINGS):
        e_lo, e_hi = excess(lo_phi), excess(hi_phi)
        if e_lo <= 0 <= e_hi:
            break
        width *= 2.0
        if e_lo > 0:
            lo_phi = phi0 - width
        if e_hi < 0:
            hi_phi = phi0 + width
    else:
        raise BracketFailure("sum of gradient inverses never brackets b")

    iterations = 0
    phi = 0.5 * (lo_phi + hi_phi)
    while iterations < 400:
        iterations += 1
        x = invert_gradients(p, phi)
        e = math.fsum(x) - b
        if e > 0:
            hi_phi = phi
        elif e < 0:
            lo_phi = phi
        if abs(e) <= 1e-13 * max(1.0, abs(b)) or hi_phi - lo_phi <= 1e-15 * max(1.0, abs(phi)):
            break
        # Newton on phi: d(sum x)/d(phi) = sum 1/f''
        slope = float(np.sum(1.0 / p.hessians(x)))
        cand = phi - e / slope
        phi = cand if lo_phi < cand < hi_phi else 0.5 * (lo_phi + hi_phi)

    x = invert_gradients(p, phi)
    # spread the leftover sum error by local compliance 1/f''
    comp = 1.0 / p.hessians(x)
    x = x - (math.fsum(x) - b) * comp / comp.sum()
    x[-1] += b - math.fsum(x)
    grads = p.gradients(x)
    phi = float(np.mean(grads))
    residual = max(float(np.max(np.abs(grads - phi))), abs(math.fsum(x) - b))
    return OracleSolution(x, phi, iterations, residual)


def solve_box_constrained(p: Problem, lower, upper, iters: int = 200) -> OracleSolution:
    """Optimum of ``p`` with hard bounds ``lower <= x <= upper`` (unweighted problems).

    Each agent follows the clipped gradient inverse ``clip(f_i'^{-1}(phi))``;
    the sum is monotone in ``phi`` so bisection finds the level that meets
    ``b``.  ``phi_star`` is the multiplier of the sum constraint.
    """
    if p.a is not None:
        raise InvalidRange("box-constrained oracle expects an unweighted problem")
    lo = np.broadcast_to(np.asarray(lower, float), (p.n,)).copy()
    hi = np.broadcast_to(np.asarray(upper, float), (p.n,)).copy()
    b = float(p.b)
    if np.any(lo > hi) or not math.fsum(lo) <= b <= math.fsum(hi):
        raise InfeasiblePoint(f"no point with sum {b} inside the box")
    phi_lo = float(np.min(p.gradients(lo)))
    phi_hi = float(np.max(p.gradients(hi)))

    def point(phi: float) -> np.ndarray:
        return np.clip(invert_gradients(p, phi), lo, hi)

    it = 0
    for it in range(1, iters + 1):
        mid = 0.5 * (phi_lo + phi_hi)
        if math.fsum(point(mid)) < b:
            phi_lo = mid
        else:
            phi_hi = mid
        if phi_hi - phi_lo <= 1e-15 * max(1.0, abs(mid)):
            break
    phi = 0.5 * (phi_lo + phi_hi)
    x = point(phi)
    free = (x > lo) & (x < hi)
    if free.any():
        # leftover sum error goes to agents strictly inside their bounds
        x[free] += (b - math.fsum(x)) / free.sum()
    g = p.gradients(x)
    kkt = float(np.max(np.abs(g[free] - phi))) if free.any() else 0.0
    return OracleSolution(x, phi, it, max(kkt, abs(math.fsum(x) - b)))


def grid_cost_tolerance(u: float, n: int, h: float) -> float:
    """Worst-case cost excess of the best grid point over the true minimiser.

    Rounding the ``n - 1`` free coordinates to the nearest grid node moves each
    by at most ``h/2`` and the dependent coordinate by at most ``(n-1) h/2``;
    with curvature at most ``2u`` the cost rises by at most ``u`` times the
    squared displacement.
    """
    return u * ((n - 1) * (h / 2) ** 2 + ((n - 1) * h / 2) ** 2)


def brute_force_grid(
    p: Problem,
    resolution: int,
    box: list[tuple[float, float]] | tuple[float, float],
    chunk: int = 1 << 18,
) -> np.ndarray:
    """Best feasible point on a regular grid inside ``box``.

    The first ``n - 1`` coordinates range over ``resolution + 1`` evenly spaced
    values on their box; the last is fixed by the constraint and the point is
    kept only if it lands in its own box.
    """
    n = p.n
    if n > 4:
        raise TooManyAgents(f"grid search is limited to n <= 4, got {n}")
    if isinstance(box[0], (int, float)):
        box = [tuple(box)] * n
    box = [(float(lo), float(hi)) for lo, hi in box]
    axes = [np.linspace(lo, hi, resolution + 1) for lo, hi in box[:-1]]
    last_lo, last_hi = box[-1]
    best_cost, best_x = math.inf, None
    slack = 1e-12 * max(1.0, abs(last_lo), abs(last_hi))

    sizes = [len(ax) for ax in axes]
    total = int(np.prod(sizes))
    flat = np.arange(total)
    for start in range(0, total, chunk):
        idx = np.unravel_index(flat[start:start + chunk], sizes)
        cols = [ax[i] for ax, i in zip(axes, idx)]
        free = np.stack(cols, axis=1)
        last = p.b - free.sum(axis=1)
        ok = (last >= last_lo - slack) & (last <= last_hi + slack)
        if not ok.any():
            continue
        pts = np.column_stack([free[ok], last[ok]])
        costs = np.zeros(len(pts))
        for i in range(n):
            costs += np.asarray(p.costs[i].value(pts[:, i]))
        j = int(np.argmin(costs))
        if costs[j] < best_cost:
            best_cost, best_x = float(costs[j]), pts[j]
    if best_x is None:
        raise EmptyFeasibleGrid("no grid point satisfies the constraint inside the box")
    return np.array(best_x)
