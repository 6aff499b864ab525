import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from dtalloc.errors import DimensionMismatch, IntervalEmpty, InvalidRange, ZeroCoefficient
from dtalloc.objective import (
    LogExp,
    PenaltyAugmented,
    Problem,
    Quadratic,
    SmoothPenaltyAugmented,
    apply_change_of_variables,
    curvature_bounds,
    generator_cost,
    global_cost,
    gradient,
)

pos = st.floats(0.01, 2.0)
real = st.floats(-3.0, 3.0)


@st.composite
def costs(draw):
    kind = draw(st.sampled_from(["quad", "logexp", "pen", "smooth"]))
    if kind == "quad":
        return Quadratic(draw(pos), draw(real), draw(real))
    base = LogExp(draw(pos), draw(real), draw(real), draw(real), draw(st.floats(0.0, 1.0)))
    if kind == "logexp":
        return base
    m = draw(st.floats(-2.0, 0.0))
    M = m + draw(st.floats(0.1, 3.0))
    if kind == "pen":
        return PenaltyAugmented(base, m, M, draw(st.floats(0.1, 2.0)), draw(st.sampled_from([2, 3, 4])))
    return SmoothPenaltyAugmented(base, m, M, draw(st.floats(0.1, 2.0)), draw(st.floats(1.0, 30.0)))


def test_generator_gradient_example():
    assert gradient(generator_cost("A"), 64.0) == pytest.approx(7.12)


def test_logexp_zero_zeta_minimum():
    f = LogExp(0.3, 1.0, 2.5, 0.0, 0.0)
    assert gradient(f, 2.5) == 0.0


def test_penalty_gradient_example():
    f = PenaltyAugmented(Quadratic(1.0, -150.0), 20.0, 70.0, 1.0, 2)
    # base gradient vanishes at 75, penalty contributes 2 * (75 - 70)
    assert gradient(f, 75.0) == pytest.approx(10.0)


def test_curvature_bound_examples():
    assert curvature_bounds(generator_cost("A"), (0, 100)) == (0.04, 0.04)
    v, u = curvature_bounds(LogExp(0.1, 0.2, 0.0, 0.0, 0.2), (-1, 1))
    assert 2 * v == pytest.approx(0.1)
    assert 2 * u == pytest.approx(0.102)
    v, u = curvature_bounds(LogExp(0.1, 0.2, 0.0, 0.0, 0.0), (-1, 1))
    assert v == u == pytest.approx(0.05)
    with pytest.raises(IntervalEmpty):
        curvature_bounds(generator_cost("A"), (1, 1))


def test_global_cost_examples(two_gen):
    assert global_cost(two_gen, np.array([50.0, 50.0])) == pytest.approx(425.0)
    p = Problem((Quadratic(1, 0, 2.0), Quadratic(1, 0, 3.5)), 0.0)
    assert global_cost(p, np.zeros(2)) == 5.5
    with pytest.raises(DimensionMismatch):
        global_cost(two_gen, np.zeros(3))


def test_problem_invariants():
    with pytest.raises(InvalidRange):
        Problem((Quadratic(1.0),), 1.0)
    with pytest.raises(ZeroCoefficient):
        Problem((Quadratic(1.0), Quadratic(1.0)), 1.0, a=(1.0, 0.0))
    with pytest.raises(InvalidRange):
        Quadratic(0.0)
    with pytest.raises(InvalidRange):
        LogExp(0.0, 1, 0, 0)
    with pytest.raises(InvalidRange):
        PenaltyAugmented(Quadratic(1.0), 0, 1, 1.0, 1)
    with pytest.raises(InvalidRange):
        PenaltyAugmented(Quadratic(1.0), 2, 1, 1.0, 2)


def test_change_of_variables_identity_and_boxes():
    base = Problem((Quadratic(1.0, 1.0), Quadratic(2.0, -1.0)), 3.0, a=(1.0, 1.0))
    q = apply_change_of_variables(base)
    assert q.costs == base.costs and q.a is None

    box = PenaltyAugmented(Quadratic(1.0), 0.0, 5.0, 1.0, 2)
    q = apply_change_of_variables(Problem((box, box), 1.0, a=(2.0, -1.0)))
    assert (q.costs[0].m, q.costs[0].M) == (0.0, 10.0)
    assert (q.costs[1].m, q.costs[1].M) == (-5.0, 0.0)


@given(costs(), st.floats(-1.5, 1.5).filter(lambda a: abs(a) > 0.2), st.floats(-3, 3))
def test_change_of_variables_preserves_values(cost, a, z):
    p = Problem((cost, Quadratic(1.0)), 0.0, a=(a, 1.0))
    q = apply_change_of_variables(p)
    x = a * z
    assert q.costs[0].value(x) == pytest.approx(cost.value(z), rel=1e-9, abs=1e-9)
    # chain rule: d/dx f(x/a) = f'(z)/a
    assert q.costs[0].gradient(x) == pytest.approx(cost.gradient(z) / a, rel=1e-9, abs=1e-9)


@given(costs(), st.floats(-4, 4))
def test_gradient_matches_central_difference(cost, x):
    h = 1e-6
    fd = (cost.value(x + h) - cost.value(x - h)) / (2 * h)
    assert gradient(cost, x) == pytest.approx(fd, rel=1e-5, abs=1e-5)


@given(costs(), st.floats(-4, 4), st.floats(1e-3, 4))
def test_gradient_strictly_increasing(cost, x, d):
    assert gradient(cost, x) < gradient(cost, x + d)


@given(costs(), st.floats(-3, 0), st.floats(0.1, 3))
def test_curvature_sandwich(cost, lo, width):
    hi = lo + width
    v, u = curvature_bounds(cost, (lo, hi))
    xs = np.linspace(lo, hi, 100)
    h = 1e-5
    second = (cost.gradient(xs + h) - cost.gradient(xs - h)) / (2 * h)
    # finite differences straddle the kink of a hinge^2 at the box edge
    kink = isinstance(cost, PenaltyAugmented) and cost.sigma == 2
    mask = np.ones_like(xs, bool)
    if kink:
        mask = (np.abs(xs - cost.m) > 2 * h) & (np.abs(xs - cost.M) > 2 * h)
    # central differences carry an O(h) error where the penalty turns on
    tol = 1e-4 * (1 + 2 * u)
    assert np.all(second[mask] >= 2 * v - tol)
    assert np.all(second[mask] <= 2 * u + tol)


@given(costs(), st.floats(-4, 4), st.floats(-4, 4), st.floats(-2, 2))
def test_excess_matches_definition(cost, x, y, slope):
    direct = cost.value(x) - cost.value(y) - slope * (x - y)
    assert cost.excess(x, y, slope) == pytest.approx(direct, rel=1e-7, abs=1e-9)


@pytest.mark.parametrize("mu", [10.0, 100.0])
def test_smooth_penalty_approaches_hinge(mu):
    base = Quadratic(0.5)
    m, M, c = -1.0, 1.0, 1.0
    smooth = SmoothPenaltyAugmented(base, m, M, c, mu)
    xs = np.linspace(-4, 4, 2001)
    hinge = base.value(xs) + c * (np.maximum(xs - M, 0) + np.maximum(m - xs, 0))
    assert np.max(np.abs(smooth.value(xs) - hinge)) <= 1.0 / mu


def test_logexp_extreme_arguments_are_finite():
    f = LogExp(0.1, 50.0, 0.0, 0.0, 1.0)
    xs = np.array([-1e3, -50.0, 0.0, 50.0, 1e3])
    assert np.all(np.isfinite(f.value(xs)))
    assert np.all(np.isfinite(f.gradient(xs)))
    assert np.all(np.isfinite(f.hessian(xs)))


def test_vectorised_problem_matches_per_cost(rng):
    cs = [generator_cost(k, {"c": 1.0, "sigma": 2}) for k in "ABCDEA"]
    cs += [LogExp(0.1, 0.2, 0.1, 0.3), Quadratic(0.5, 1.0)]
    p = Problem(tuple(cs), 10.0)
    x = rng.uniform(0, 100, size=p.n)
    expect = np.array([c.gradient(v) for c, v in zip(cs, x)])
    assert np.array_equal(p.gradients(x), expect)
    assert p.cost(x) == pytest.approx(math.fsum(c.value(v) for c, v in zip(cs, x)))
