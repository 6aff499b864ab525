"""Odd, sign-preserving scalar maps applied to gradient differences.

Every map is vectorised and written as ``sign(y) * h(|y|)`` so oddness holds
bit-for-bit.  Each map carries a ``domain`` of magnitudes ``(lo, hi)`` on
which its declared ``sector`` ``(epsilon, K)`` is valid, i.e.
``epsilon*|y| <= |g(y)| <= K*|y|`` for ``lo <= |y| <= hi``.
"""
from __future__ import annotations

import math
import re
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import EmptyDomain, InvalidRange

__all__ = [
    "Identity",
    "SignPower",
    "FixedTime",
    "Saturation",
    "LogQuantizer",
    "UniformQuantizer",
    "RobustDeadZone",
    "Compose",
    "NonlinearMap",
    "compose",
    "evaluate",
    "verify_sector",
    "parse_nonlinearity",
    "with_domain",
]

_INF = math.inf
_ZERO_GAP = 1e-12


def _check_domain(domain):
    lo, hi = float(domain[0]), float(domain[1])
    if lo < 0 or hi <= lo:
        raise InvalidRange(f"magnitude domain must satisfy 0 <= lo < hi, got {domain}")
    return lo, hi


class _Map:
    strongly_sign_preserving = True

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.sign(y) * self._mag(np.abs(y))
        return out if out.ndim else float(out)

    def _mag(self, r):
        raise NotImplementedError

    @property
    def sector(self) -> tuple[float, float]:
        raise NotImplementedError

    def magnitude_image(self, lo: float, hi: float) -> tuple[float, float]:
        """Bounds on ``|g(y)|`` for ``lo <= |y| <= hi`` (maps are monotone in magnitude)."""
        return float(self._mag(np.float64(lo))), float(self._mag(np.float64(hi)))

    def describe(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Identity(_Map):
    domain: tuple = field(default=(0.0, _INF), kw_only=True)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return y.copy() if y.ndim else float(y)

    def _mag(self, r):
        return r

    @property
    def sector(self):
        return 1.0, 1.0

    def describe(self):
        return "id"


@dataclass(frozen=True)
class SignPower(_Map):
    """``sgn(y) * |y|**nu``; ``nu = 0`` is the signum with ``sgn(0) = 0``."""

    nu: float
    domain: tuple = field(default=(0.0, _INF), kw_only=True)

    def __post_init__(self):
        if self.nu < 0:
            raise InvalidRange("sign-power exponent must be >= 0")
        _check_domain(self.domain)

    def _mag(self, r):
        if self.nu == 0:
            return np.where(r > 0, 1.0, 0.0)
        return r**self.nu

    @property
    def sector(self):
        lo, hi = _check_domain(self.domain)
        # ratio r**(nu - 1) is monotone, so the extremes sit at the domain ends
        ends = [_ratio_at(self, lo), _ratio_at(self, hi)]
        return min(ends), max(ends)

    def describe(self):
        return f"pow(nu={self.nu!r})"


def _ratio_at(m: _Map, r: float) -> float:
    if r == 0.0:
        if isinstance(m, FixedTime):
            return _INF
        if isinstance(m, SignPower):
            return _INF if m.nu < 1 else (1.0 if m.nu == 1 else 0.0)
    if math.isinf(r):
        if isinstance(m, SignPower):
            return 0.0 if m.nu < 1 else (_INF if m.nu > 1 else 1.0)
        if isinstance(m, FixedTime):
            return _INF if m.nu2 > 1 else (1.0 if m.nu2 == 1 else 0.0)
    return float(m._mag(np.float64(r))) / r


@dataclass(frozen=True)
class FixedTime(_Map):
    """``sgn^{nu1}(y) + sgn^{nu2}(y)`` with ``0 < nu1 < 1 < nu2``."""

    nu1: float
    nu2: float
    domain: tuple = field(default=(0.0, _INF), kw_only=True)

    def __post_init__(self):
        if not (0 < self.nu1 < 1 < self.nu2):
            raise InvalidRange("fixed-time exponents need 0 < nu1 < 1 < nu2")
        _check_domain(self.domain)

    def _mag(self, r):
        return r**self.nu1 + r**self.nu2

    @property
    def sector(self):
        lo, hi = _check_domain(self.domain)
        # r**(nu1-1) + r**(nu2-1) is convex in log r with its minimum at r_star
        r_star = ((1 - self.nu1) / (self.nu2 - 1)) ** (1 / (self.nu2 - self.nu1))
        candidates = [lo, hi] + ([r_star] if lo < r_star < hi else [])
        ratios = [_ratio_at(self, r) for r in candidates]
        return min(ratios), max(_ratio_at(self, lo), _ratio_at(self, hi))

    def describe(self):
        return f"fixed(nu1={self.nu1!r}, nu2={self.nu2!r})"


@dataclass(frozen=True)
class Saturation(_Map):
    """Clip to ``[-kappa, kappa]``."""

    kappa: float
    domain: tuple = field(default=(0.0, _INF), kw_only=True)

    def __post_init__(self):
        if not self.kappa > 0:
            raise InvalidRange("saturation level kappa must be positive")
        _check_domain(self.domain)

    def __call__(self, y):
        out = np.clip(np.asarray(y, dtype=float), -self.kappa, self.kappa)
        return out if out.ndim else float(out)

    def _mag(self, r):
        return np.minimum(r, self.kappa)

    @property
    def sector(self):
        _, hi = _check_domain(self.domain)
        return min(1.0, self.kappa / hi), 1.0

    def describe(self):
        return f"sat(kappa={self.kappa!r})"


def _round_half_away(z):
    return np.sign(z) * np.floor(np.abs(z) + 0.5)


@dataclass(frozen=True)
class LogQuantizer(_Map):
    """``sgn(y) * exp(delta * round(log|y| / delta))``, zero at zero."""

    delta: float
    domain: tuple = field(default=(0.0, _INF), kw_only=True)

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidRange("quantization level delta must be positive")
        _check_domain(self.domain)

    def _mag(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            lg = np.log(r)
        q = np.exp(self.delta * _round_half_away(lg / self.delta))
        return np.where(r > 0, q, 0.0)

    @property
    def sector(self):
        # the log error is at most delta/2, so the ratio lies in [exp(-delta/2), exp(delta/2)];
        # 1 - delta/2 <= exp(-delta/2) gives a simpler valid lower constant
        return 1.0 - self.delta / 2.0, math.exp(self.delta / 2.0)

    def describe(self):
        return f"logq(delta={self.delta!r})"


@dataclass(frozen=True)
class UniformQuantizer(_Map):
    """``delta * round(y / delta)`` with ties rounded away from zero."""

    delta: float
    domain: tuple = field(default=(0.0, _INF), kw_only=True)
    strongly_sign_preserving = False

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidRange("quantization level delta must be positive")
        _check_domain(self.domain)

    def _mag(self, r):
        return self.delta * np.floor(np.asarray(r) / self.delta + 0.5)

    @property
    def sector(self):
        # |y| < delta/2 maps to zero; elsewhere the ratio is at most 2 (attained at delta/2)
        lo, _ = _check_domain(self.domain)
        return (1.0 - self.delta / (2.0 * lo) if lo >= self.delta / 2 else 0.0), 2.0

    def describe(self):
        return f"uq(delta={self.delta!r})"


@dataclass(frozen=True)
class RobustDeadZone(_Map):
    """``(1 - eps)/(eps*d) * sgn(y)`` for ``|y| > d``, zero otherwise."""

    eps: float
    d: float
    domain: tuple = field(default=(0.0, _INF), kw_only=True)
    strongly_sign_preserving = False

    def __post_init__(self):
        if not (0 < self.eps < 1) or not self.d > 0:
            raise InvalidRange("dead-zone map needs 0 < eps < 1 and d > 0")
        _check_domain(self.domain)

    @property
    def level(self) -> float:
        return (1.0 - self.eps) / (self.eps * self.d)

    def _mag(self, r):
        return np.where(np.asarray(r) > self.d, self.level, 0.0)

    @property
    def sector(self):
        lo, hi = _check_domain(self.domain)
        eps = self.level / hi if lo > self.d and math.isfinite(hi) else 0.0
        return eps, self.level / max(lo, self.d)

    def describe(self):
        return f"robust(eps={self.eps!r}, d={self.d!r})"


@dataclass(frozen=True)
class Compose(_Map):
    """``outer(inner(y))``."""

    outer: _Map
    inner: _Map

    def __call__(self, y):
        return self.outer(self.inner(y))

    def _mag(self, r):
        return self.outer._mag(self.inner._mag(r))

    @property
    def strongly_sign_preserving(self):  # type: ignore[override]
        return self.outer.strongly_sign_preserving and self.inner.strongly_sign_preserving

    @property
    def domain(self):
        return self.inner.domain

    @property
    def sector(self):
        e_in, k_in = self.inner.sector
        e_out, k_out = self.outer.sector
        return e_out * e_in, k_out * k_in

    def describe(self):
        return f"{self.outer.describe()} o {self.inner.describe()}"


NonlinearMap = Union[
    Identity, SignPower, FixedTime, Saturation, LogQuantizer, UniformQuantizer, RobustDeadZone, Compose
]


def compose(outer: NonlinearMap, inner: NonlinearMap) -> Compose:
    return Compose(outer, inner)


def evaluate(m: NonlinearMap, y):
    return m(y)


def with_domain(m: NonlinearMap, domain: tuple[float, float]) -> NonlinearMap:
    """Copy of ``m`` whose sector is declared on the magnitude range ``domain``.

    For compositions the inner map takes ``domain`` and the outer map takes
    the image of ``domain`` under the inner map.
    """
    import dataclasses

    if isinstance(m, Compose):
        inner = with_domain(m.inner, domain)
        lo, hi = domain
        img_lo, img_hi = inner.magnitude_image(lo, hi) if math.isfinite(hi) else (inner._mag(np.float64(lo)), _INF)
        img_hi = max(img_hi, img_lo + _ZERO_GAP)
        return Compose(with_domain(m.outer, (float(img_lo), float(img_hi))), inner)
    return dataclasses.replace(m, domain=(float(domain[0]), float(domain[1])))


def verify_sector(m: NonlinearMap, domain: tuple[float, float], samples: int = 10_000):
    """Audit a map's sector on a signed interval ``domain``.

    Returns ``(eps_observed, K_observed, holds)`` where the observed values are
    the extreme ratios ``|g(y)|/|y|`` over ``samples`` evenly spaced points
    (points within ``1e-12`` of zero are dropped), and ``holds`` says whether
    the map's declared sector contains them.
    """
    lo, hi = float(domain[0]), float(domain[1])
    y = np.linspace(lo, hi, int(samples))
    y = y[np.abs(y) > _ZERO_GAP]
    if y.size == 0:
        raise EmptyDomain(f"no samples away from zero in {domain}")
    ratio = np.abs(np.asarray(m(y))) / np.abs(y)
    eps_obs, k_obs = float(ratio.min()), float(ratio.max())
    eps_dec, k_dec = m.sector
    return eps_obs, k_obs, bool(eps_dec <= eps_obs and k_obs <= k_dec)


_FACTORIES = {
    "id": (Identity, ()),
    "identity": (Identity, ()),
    "pow": (SignPower, ("nu",)),
    "fixed": (FixedTime, ("nu1", "nu2")),
    "sat": (Saturation, ("kappa",)),
    "logq": (LogQuantizer, ("delta",)),
    "uq": (UniformQuantizer, ("delta",)),
    "robust": (RobustDeadZone, ("eps", "d")),
}
_TERM = re.compile(r"^\s*([A-Za-z_]+)\s*(?:\((.*)\))?\s*$")


def _parse_term(text: str) -> _Map:
    m = _TERM.match(text)
    if not m:
        raise InvalidRange(f"cannot parse nonlinearity term {text!r}")
    name, args = m.group(1).lower(), m.group(2)
    if name not in _FACTORIES:
        raise InvalidRange(f"unknown nonlinearity {name!r}; known: {', '.join(sorted(_FACTORIES))}")
    cls, allowed = _FACTORIES[name]
    kwargs = {}
    for part in filter(None, (s.strip() for s in (args or "").split(","))):
        key, _, val = part.partition("=")
        key = key.strip()
        if key not in allowed:
            raise InvalidRange(f"{name} does not take {key!r}; expected {allowed}")
        try:
            kwargs[key] = float(Fraction(val.strip()))
        except ValueError as exc:
            raise InvalidRange(f"bad value for {name}.{key}: {val.strip()!r}") from exc
    missing = set(allowed) - set(kwargs)
    if missing:
        raise InvalidRange(f"{name} is missing {sorted(missing)}")
    return cls(**kwargs)


def parse_nonlinearity(expr: str) -> NonlinearMap:
    """Parse ``"sat(kappa=1/60) o logq(delta=0.125)"``-style expressions.

    Terms are ``name(key=value, ...)``; ``o`` composes right to left.
    Simple fractions such as ``1/60`` are accepted as values.
    """
    parts = re.split(r"\s+o\s+", expr.strip())
    maps = [_parse_term(p) for p in parts]
    out = maps[-1]
    for outer in reversed(maps[:-1]):
        out = Compose(outer, out)
    return out
