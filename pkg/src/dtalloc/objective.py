"""Local cost functions, the sum-constrained problem and generator presets.

Every cost works elementwise on numpy arrays.  Parameters may themselves
be arrays, which is how :class:`Problem` evaluates all agents with one
vectorised call per cost family (see :func:`stack_costs`).
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, IntervalEmpty, InvalidRange, ZeroCoefficient

__all__ = [
    "Quadratic",
    "LogExp",
    "PenaltyAugmented",
    "SmoothPenaltyAugmented",
    "CostModel",
    "Problem",
    "gradient",
    "curvature_bounds",
    "global_cost",
    "apply_change_of_variables",
    "stack_costs",
    "GENERATOR_TYPES",
    "generator_cost",
    "random_generator_costs",
]


def _softplus(z):
    return np.logaddexp(0.0, z)


def _softplus_diff(a, b):
    """``softplus(a) - softplus(b)`` without cancellation when ``a`` is near ``b``."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    hi, lo = np.maximum(a, b), np.minimum(a, b)
    d = hi - lo
    with np.errstate(over="ignore"):
        # keep the log1p argument nonnegative; far-apart arguments do not cancel
        near = np.log1p(expit(lo) * np.expm1(np.minimum(d, 1.0)))
    far = np.logaddexp(0.0, hi) - np.logaddexp(0.0, lo)
    out = np.where(d <= 1.0, near, far)
    out = np.where(a >= b, out, -out)
    return out if out.ndim else float(out)


def _hinge_pow(z, p):
    h = np.maximum(z, 0.0)
    if p == 0:
        return np.where(z > 0, 1.0, 0.0)
    return h**p


class _Cost:
    """Shared behaviour; subclasses supply value/gradient/hessian/excess."""

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    def excess(self, x, y, slope):
        """``f(x) - f(y) - slope * (x - y)`` evaluated without first-order cancellation."""
        return self.value(x) - self.value(y) - slope * (x - y)

    def curvature_bounds(self, interval: tuple[float, float]) -> tuple[float, float]:
        raise NotImplementedError

    def structure(self) -> tuple:
        return (type(self).__name__,)


def _check_interval(interval):
    lo, hi = interval
    if not lo < hi:
        raise IntervalEmpty(f"interval must satisfy lo < hi, got {interval}")
    return float(lo), float(hi)


@dataclass(frozen=True)
class Quadratic(_Cost):
    """``gamma * x**2 + beta * x + alpha``."""

    gamma: float
    beta: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.gamma) <= 0):
            raise InvalidRange("quadratic cost needs gamma > 0 for strict convexity")

    def value(self, x):
        return self.gamma * x * x + self.beta * x + self.alpha

    def gradient(self, x):
        return 2.0 * self.gamma * x + self.beta

    def hessian(self, x):
        return 2.0 * self.gamma + 0.0 * x

    def excess(self, x, y, slope):
        return (x - y) * (self.gamma * (x + y) + self.beta - slope)

    def curvature_bounds(self, interval):
        _check_interval(interval)
        return float(self.gamma), float(self.gamma)

    def inverse_gradient(self, phi):
        return (phi - self.beta) / (2.0 * self.gamma)


@dataclass(frozen=True)
class LogExp(_Cost):
    """``0.5*alpha*(x - gamma)**2 + zeta*log(1 + exp(beta*(x - eta)))``."""

    alpha: float
    beta: float
    gamma: float
    eta: float
    zeta: float = 0.2

    def __post_init__(self):
        if np.any(np.asarray(self.alpha) <= 0):
            raise InvalidRange("log-exp cost needs alpha > 0")
        if np.any(np.asarray(self.zeta) < 0):
            raise InvalidRange("log-exp cost needs zeta >= 0 to stay convex")

    def value(self, x):
        d = x - self.gamma
        return 0.5 * self.alpha * d * d + self.zeta * _softplus(self.beta * (x - self.eta))

    def gradient(self, x):
        return self.alpha * (x - self.gamma) + self.zeta * self.beta * expit(self.beta * (x - self.eta))

    def hessian(self, x):
        s = expit(self.beta * (x - self.eta))
        return self.alpha + self.zeta * self.beta**2 * s * (1.0 - s)

    def excess(self, x, y, slope):
        dx = x - y
        quad = dx * (0.5 * self.alpha * (x + y - 2.0 * self.gamma) - slope)
        return quad + self.zeta * _softplus_diff(self.beta * (x - self.eta), self.beta * (y - self.eta))

    def curvature_bounds(self, interval):
        _check_interval(interval)
        # logistic slope s(1 - s) never exceeds 1/4
        return float(self.alpha) / 2.0, float(self.alpha + self.zeta * self.beta**2 / 4.0) / 2.0


@dataclass(frozen=True)
class PenaltyAugmented(_Cost):
    """``base + c*max(x - M, 0)**sigma + c*max(m - x, 0)**sigma`` with integer ``sigma >= 2``."""

    base: _Cost
    m: float
    M: float
    c: float = 1.0
    sigma: int = 2

    def __post_init__(self):
        if int(self.sigma) != self.sigma or self.sigma < 2:
            raise InvalidRange(
                "penalty exponent sigma must be an integer >= 2; use "
                "SmoothPenaltyAugmented for the non-smooth sigma=1 hinge"
            )
        if np.any(np.asarray(self.c) <= 0):
            raise InvalidRange("penalty weight c must be positive")
        if np.any(np.asarray(self.m) > np.asarray(self.M)):
            raise InvalidRange("penalty box needs m <= M")

    def _pen(self, x):
        return self.c * (_hinge_pow(x - self.M, self.sigma) + _hinge_pow(self.m - x, self.sigma))

    def value(self, x):
        return self.base.value(x) + self._pen(x)

    def gradient(self, x):
        s = self.sigma
        return self.base.gradient(x) + self.c * s * (
            _hinge_pow(x - self.M, s - 1) - _hinge_pow(self.m - x, s - 1)
        )

    def hessian(self, x):
        s = self.sigma
        return self.base.hessian(x) + self.c * s * (s - 1) * (
            _hinge_pow(x - self.M, s - 2) + _hinge_pow(self.m - x, s - 2)
        )

    def excess(self, x, y, slope):
        return self.base.excess(x, y, slope) + self._pen(x) - self._pen(y)

    def curvature_bounds(self, interval):
        lo, hi = _check_interval(interval)
        v, u = self.base.curvature_bounds(interval)
        s, c = self.sigma, float(self.c)
        extra = 0.0
        if hi > self.M:
            extra += c * s * (s - 1) * (hi - self.M) ** (s - 2)
        if lo < self.m:
            extra += c * s * (s - 1) * (self.m - lo) ** (s - 2)
        return v, u + extra / 2.0

    def structure(self):
        return ("PenaltyAugmented", int(self.sigma), self.base.structure())


@dataclass(frozen=True)
class SmoothPenaltyAugmented(_Cost):
    """``base + c*(L(x - M) + L(m - x))`` with ``L(z) = log(1 + exp(mu*z)) / mu``."""

    base: _Cost
    m: float
    M: float
    c: float = 1.0
    mu: float = 10.0

    def __post_init__(self):
        if np.any(np.asarray(self.c) <= 0) or np.any(np.asarray(self.mu) <= 0):
            raise InvalidRange("smooth penalty needs c > 0 and mu > 0")
        if np.any(np.asarray(self.m) > np.asarray(self.M)):
            raise InvalidRange("penalty box needs m <= M")

    def _pen(self, x):
        mu = self.mu
        return self.c * (_softplus(mu * (x - self.M)) + _softplus(mu * (self.m - x))) / mu

    def value(self, x):
        return self.base.value(x) + self._pen(x)

    def gradient(self, x):
        mu = self.mu
        return self.base.gradient(x) + self.c * (expit(mu * (x - self.M)) - expit(mu * (self.m - x)))

    def hessian(self, x):
        mu = self.mu
        a, b = expit(mu * (x - self.M)), expit(mu * (self.m - x))
        return self.base.hessian(x) + self.c * mu * (a * (1 - a) + b * (1 - b))

    def excess(self, x, y, slope):
        mu = self.mu
        pen = (
            _softplus_diff(mu * (x - self.M), mu * (y - self.M))
            + _softplus_diff(mu * (self.m - x), mu * (self.m - y))
        ) * self.c / mu
        return self.base.excess(x, y, slope) + pen

    def curvature_bounds(self, interval):
        _check_interval(interval)
        v, u = self.base.curvature_bounds(interval)
        return v, u + float(self.c * self.mu) / 4.0

    def structure(self):
        return ("SmoothPenaltyAugmented", self.base.structure())


CostModel = Union[Quadratic, LogExp, PenaltyAugmented, SmoothPenaltyAugmented]


def gradient(cost: CostModel, x):
    return cost.gradient(x)


def curvature_bounds(cost: CostModel, interval: tuple[float, float]) -> tuple[float, float]:
    """``(v, u)`` with ``2v <= f'' <= 2u`` on ``interval``."""
    return cost.curvature_bounds(interval)


def stack_costs(costs: Sequence[CostModel]):
    """Merge same-structure costs into one cost whose parameters are arrays."""
    first = costs[0]
    kwargs = {}
    for f in dataclasses.fields(first):
        vals = [getattr(c, f.name) for c in costs]
        if isinstance(vals[0], _Cost):
            kwargs[f.name] = stack_costs(vals)
        elif f.name == "sigma":
            kwargs[f.name] = int(vals[0])
        else:
            kwargs[f.name] = np.array(vals, dtype=float)
    return type(first)(**kwargs)


@dataclass(frozen=True)
class Problem:
    """Minimise ``sum f_i(x_i)`` subject to ``sum a_i x_i = b`` (``a`` defaults to ones)."""

    costs: tuple
    b: float
    a: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "costs", tuple(self.costs))
        if len(self.costs) < 2:
            raise InvalidRange("a problem needs at least two agents")
        if self.a is not None:
            a = tuple(float(v) for v in self.a)
            if len(a) != len(self.costs):
                raise DimensionMismatch("coefficient vector length differs from agent count")
            if any(v == 0 for v in a):
                raise ZeroCoefficient("constraint coefficients must be nonzero")
            object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return len(self.costs)

    @property
    def weighted(self) -> bool:
        return self.a is not None and any(v != 1.0 for v in self.a)

    @cached_property
    def _batches(self):
        groups: dict[tuple, list[int]] = {}
        for i, c in enumerate(self.costs):
            groups.setdefault(c.structure(), []).append(i)
        return [
            (np.array(idx, dtype=np.intp), stack_costs([self.costs[i] for i in idx]))
            for idx in groups.values()
        ]

    def _map(self, method: str, *arrays):
        arrays = [np.asarray(a, dtype=float) for a in arrays]
        if arrays[0].shape != (self.n,):
            raise DimensionMismatch(f"expected a vector of length {self.n}, got shape {arrays[0].shape}")
        out = np.empty(self.n)
        for idx, cost in self._batches:
            out[idx] = getattr(cost, method)(*(a[idx] for a in arrays))
        return out

    def gradients(self, x) -> np.ndarray:
        return self._map("gradient", x)

    def hessians(self, x) -> np.ndarray:
        return self._map("hessian", x)

    def values(self, x) -> np.ndarray:
        return self._map("value", x)

    def excess(self, x, y, slope: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._map("excess", x, y, np.full(self.n, slope))

    def cost(self, x) -> float:
        return math.fsum(self.values(x))

    def curvature_bounds(self, interval) -> tuple[float, float]:
        bounds = [c.curvature_bounds(interval) for c in self.costs]
        return min(v for v, _ in bounds), max(u for _, u in bounds)


def global_cost(p: Problem, x) -> float:
    return p.cost(x)


def _scale_cost(cost: CostModel, a: float) -> CostModel:
    """Cost in ``x = a*z`` for a cost originally written in ``z``."""
    if a == 1.0:
        return cost
    if isinstance(cost, Quadratic):
        return Quadratic(cost.gamma / a**2, cost.beta / a, cost.alpha)
    if isinstance(cost, LogExp):
        return LogExp(cost.alpha / a**2, cost.beta / a, cost.gamma * a, cost.eta * a, cost.zeta)
    lo, hi = sorted((a * cost.m, a * cost.M))
    base = _scale_cost(cost.base, a)
    if isinstance(cost, PenaltyAugmented):
        return PenaltyAugmented(base, lo, hi, cost.c / abs(a) ** cost.sigma, cost.sigma)
    if isinstance(cost, SmoothPenaltyAugmented):
        return SmoothPenaltyAugmented(base, lo, hi, cost.c / abs(a), cost.mu / abs(a))
    raise TypeError(f"cannot rescale {type(cost).__name__}")


def apply_change_of_variables(p: Problem) -> Problem:
    """Rewrite ``sum a_i z_i = b`` as ``sum x_i = b`` with ``x_i = a_i z_i``.

    The map is exact for every cost family: quadratics and log-exp costs are
    reparametrised in closed form, and box penalties move to ``[a m, a M]``
    (endpoints swap when ``a < 0``) with their weights rescaled.
    """
    if p.a is None:
        return p
    if any(v == 0 for v in p.a):
        raise ZeroCoefficient("constraint coefficients must be nonzero")
    return Problem(tuple(_scale_cost(c, a) for c, a in zip(p.costs, p.a)), p.b, None)


# type -> (M, beta, gamma); alpha = 0 and m = 20 for every type
GENERATOR_TYPES = {
    "A": (80.0, 2.0, 0.04),
    "B": (90.0, 3.0, 0.03),
    "C": (70.0, 4.0, 0.035),
    "D": (70.0, 4.0, 0.03),
    "E": (80.0, 2.5, 0.04),
}
GENERATOR_MIN = 20.0


def generator_cost(kind: str, penalty: dict | None = None) -> CostModel:
    """Quadratic generator cost for type ``A``..``E``, optionally box-penalised.

    ``penalty`` is ``{"c": ..., "sigma": ...}`` for a power penalty or
    ``{"c": ..., "mu": ...}`` for the smooth log-exp penalty.
    """
    M, beta, gamma = GENERATOR_TYPES[kind.upper()]
    cost = Quadratic(gamma, beta, 0.0)
    if not penalty:
        return cost
    if "mu" in penalty:
        return SmoothPenaltyAugmented(cost, GENERATOR_MIN, M, penalty.get("c", 1.0), penalty["mu"])
    return PenaltyAugmented(cost, GENERATOR_MIN, M, penalty.get("c", 1.0), int(penalty.get("sigma", 2)))


def random_generator_costs(n: int, seed: int, penalty: dict | None = None) -> tuple[list[str], list[CostModel]]:
    """Uniform random type per generator, drawn with a seeded integer generator."""
    rng = np.random.default_rng(seed)
    letters = sorted(GENERATOR_TYPES)
    kinds = [letters[i] for i in rng.integers(0, len(letters), size=n)]
    return kinds, [generator_cost(k, penalty) for k in kinds]
