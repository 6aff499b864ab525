import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dtalloc.analysis import (
    StepBoundReport,
    Trace,
    certify_rate,
    compute_step_bound,
    iterations_to,
    residual,
    residual_vector,
    sandwich_check,
    states_csv,
    trace_csv,
    windowed_ratio,
)
from dtalloc.errors import InfeasiblePoint, NonPositiveInput
from dtalloc.graph import SpectralSummary, cycle_graph, spectral_summary
from dtalloc.objective import LogExp, Problem, Quadratic, global_cost
from dtalloc.oracle import solve_kkt
from dtalloc.protocol import ProtocolConfig, RandomFeasible, run


def make_trace(res):
    res = np.asarray(res, float)
    z = np.zeros_like(res)
    return Trace(res, z, z, z[1:], np.zeros(2), "MaxSteps", 0.1)


def test_step_bound_example():
    rep = compute_step_bound(0.0166, 1.0, 0.04, SpectralSummary(1.38, 3.61))
    # 0.0166 * 1.38 / (0.04 * 3.61**2), evaluated by hand
    assert rep.T_lambda == pytest.approx(0.0439457, rel=1e-5)
    assert rep.respects(0.04) and not rep.respects(0.05)
    assert rep.respects(0.01, tau_bar=3) and not rep.respects(0.02, tau_bar=3)


def test_step_bound_rejects_nonpositive():
    with pytest.raises(NonPositiveInput, match="lambda2"):
        compute_step_bound(0.1, 1.0, 1.0, SpectralSummary(0.0, 2.0))
    with pytest.raises(NonPositiveInput, match="epsilon"):
        compute_step_bound(0.0, 1.0, 1.0, SpectralSummary(1.0, 2.0))


def test_rate_coefficient_below_one_inside_bound():
    rep = compute_step_bound(0.5, 1.2, 2.0, SpectralSummary(0.4, 3.0), v=0.5)
    for f in (0.1, 0.5, 0.99):
        assert rep.rate_bound_coefficient(f * rep.T_lambda) < 1
    # equality at T_lambda itself
    assert rep.rate_bound_coefficient(rep.T_lambda) == pytest.approx(1.0)


def test_residual_is_cost_gap(edp5):
    sol = solve_kkt(edp5)
    x = np.array([80.0, 50.0, 60.0, 70.0, 40.0])
    gap = global_cost(edp5, x) - global_cost(edp5, sol.x_star)
    assert residual(edp5, x, sol) == pytest.approx(gap, rel=1e-10)
    assert residual(edp5, sol.x_star, sol) == pytest.approx(0.0, abs=1e-12)
    assert np.all(residual_vector(edp5, x, sol) >= 0)


@given(st.integers(2, 12), st.integers(0, 5000))
def test_sandwich_holds(n, seed):
    rng = np.random.default_rng(seed)
    cs = tuple(LogExp(rng.uniform(0.1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1))
               for _ in range(n))
    p = Problem(cs, 1.0)
    x = rng.normal(size=n)
    x += (1.0 - x.sum()) / n
    lo, hi = min(x.min(), -5), max(x.max(), 5)
    bounds = [c.curvature_bounds((lo, hi)) for c in cs]
    v, u = min(b[0] for b in bounds), max(b[1] for b in bounds)
    assert sandwich_check(p, x, v, u)


def test_sandwich_guards(two_gen):
    with pytest.raises(InfeasiblePoint):
        sandwich_check(two_gen, [1.0, 1.0], 0.03, 0.04)
    with pytest.raises(NonPositiveInput):
        sandwich_check(two_gen, [50.0, 50.0], 0.05, 0.04)


def test_certify_rate_on_run(edp5):
    g = cycle_graph(5)
    s = spectral_summary(g)
    rep = compute_step_bound(1.0, 1.0, 0.04, s, v=0.03)
    T = 0.5 * rep.T_lambda
    tr = run(edp5, g, ProtocolConfig("node", T, max_steps=3000), x0=RandomFeasible(0, 10))
    ok, first = certify_rate(tr, rep, T, 0.03)
    assert ok and first is None
    bad = make_trace([1.0, 0.5, 0.9])
    ok, first = certify_rate(bad, rep, T, 0.03)
    assert not ok and first == 2


def test_trace_helpers():
    tr = make_trace([8.0, 4.0, 2.0, 0.0, 0.0])
    assert np.isnan(tr.rate_ratio[0]) and tr.rate_ratio[1] == 0.5
    assert np.isnan(tr.rate_ratio[4])
    assert iterations_to(tr, 2.0) == 2
    assert iterations_to(tr, 0.5, relative=True) == 1
    assert iterations_to(tr, -1.0) is None
    assert np.allclose(windowed_ratio(tr, 2)[:2], [0.25, 0.0])
    rec = tr[-1]
    assert rec.step == 4 and rec.rate_ratio is None


def test_trace_csv_format(edp5):
    tr = run(edp5, cycle_graph(5), ProtocolConfig("node", 0.01, max_steps=5), record_states=True)
    lines = trace_csv(tr).splitlines()
    assert lines[0] == "step,residual,feasibility_drift,grad_dispersion,rate_ratio"
    assert len(lines) == 7
    assert lines[1].endswith(",")  # no ratio at step 0
    first = float(lines[1].split(",")[1])
    assert first == tr.residual[0]  # 17 significant digits round-trip exactly
    assert len(states_csv(tr).splitlines()) == 1 + 6 * 5
