"""Acceptance suite: one test per criterion, each printing a PASS/FAIL summary line.

Run ``pytest tests/test_acceptance.py -v`` to see the per-criterion table at the
end of the session.
"""
import csv
import io
import math
import time

import numpy as np
import pytest

from dtalloc.analysis import certify_rate, compute_step_bound, gradient_dispersion, residual
from dtalloc.config import load_config, load_text
from dtalloc.delay import DelayedRunConfig, DelayModel, FixedPerLink, TimeVarying, run_delayed
from dtalloc.graph import (
    alternating_matchings,
    check_uniform_connectivity,
    connected_erdos_renyi,
    cycle_graph,
    is_connected,
    spectral_summary,
)
from dtalloc.nonlinearity import FixedTime, Identity, LogQuantizer, Saturation, compose, verify_sector
from dtalloc.objective import Problem, Quadratic, generator_cost, global_cost, random_generator_costs
from dtalloc.oracle import brute_force_grid, grid_cost_tolerance, solve_kkt
from dtalloc.protocol import ProtocolConfig, Uniform, feasible_init, run
from dtalloc.scenarios import build_scenario, execute, run_scenario, run_sweep


def closed_form_phi(gammas, betas, b):
    g, bt = np.asarray(gammas), np.asarray(betas)
    return (b + np.sum(bt / (2 * g))) / np.sum(1 / (2 * g))


# --- 1 -------------------------------------------------------------------------------------


def test_c01_feasibility_conservation(criterion):
    n = 8
    p = Problem(tuple(generator_cost(k) for k in "ABCDEABC"), 512.0)
    networks = {
        "static-er": connected_erdos_renyi(n, 0.4, (1.0, 1.0), seed=1),
        # every snapshot is a matching; the union over two snapshots is the cycle
        "switching": alternating_matchings(n, duration=8),
    }
    maps = {
        "id": Identity(),
        "sat": Saturation(0.5),
        "logq": LogQuantizer(0.125),
        "fixed": FixedTime(0.4, 1.6),
        "sat-o-logq": compose(Saturation(0.5), LogQuantizer(0.125)),
    }
    delays = {
        "none": None,
        "case-I": ("I", DelayModel(6, TimeVarying(3))),
        "case-II": ("II", DelayModel(2, TimeVarying(4))),
    }
    steps = 5000
    tol = 1e-9 * max(1.0, abs(p.b))
    worst, failures, runs = 0.0, [], 0
    t0 = time.perf_counter()
    for variant in ("node", "link"):
        for mname, m in maps.items():
            for nname, net in networks.items():
                for dname, d in delays.items():
                    base = ProtocolConfig(variant, 0.02, m, max_steps=steps)
                    if d is None:
                        tr = run(p, net, base)
                    else:
                        tr = run_delayed(p, net, DelayedRunConfig(d[0], base, d[1]))
                    runs += 1
                    worst = max(worst, tr.max_drift)
                    if tr.max_drift > tol or len(tr) - 1 < steps or tr.status == "Diverged":
                        failures.append(f"{variant}/{mname}/{nname}/{dname}")
    elapsed = time.perf_counter() - t0
    criterion(
        "1 feasibility conservation",
        f"{runs} runs x {steps} steps, worst |sum x - b| = {worst:.3g} (tol {tol:.3g}), {elapsed:.1f}s",
    )
    assert not failures, failures
    assert elapsed < 60


# --- 2 -------------------------------------------------------------------------------------


def test_c02_step_bound_reproduction(criterion):
    from dtalloc.graph import SpectralSummary

    t = compute_step_bound(0.0166, 1.0, 0.04, SpectralSummary(1.38, 3.61)).T_lambda
    criterion("2 step-bound reproduction", f"T_lambda = {t:.6f}, required in [0.0438, 0.0441] and < 0.045")
    assert 0.0438 <= t <= 0.0441
    assert t < 0.045


# --- 3 -------------------------------------------------------------------------------------


def test_c03_oracle_equivalence(criterion):
    rng = np.random.default_rng(2024)
    box = 10.0
    worst_phi, worst_x, made = 0.0, 0.0, 0
    problems = []
    t0 = time.perf_counter()
    while made < 50:
        n = int(rng.integers(2, 4))
        gam = rng.uniform(0.5, 2.0, n)
        bet = rng.uniform(-5, 5, n)
        b = float(rng.uniform(-5, 5))
        phi = closed_form_phi(gam, bet, b)
        x_cf = (phi - bet) / (2 * gam)
        if np.max(np.abs(x_cf)) > 0.8 * box:
            continue
        made += 1
        p = Problem(tuple(Quadratic(g, c) for g, c in zip(gam, bet)), b)
        sol = solve_kkt(p)
        worst_phi = max(worst_phi, abs(sol.phi_star - phi))
        res = 4000 if n == 2 else 400
        h = 2 * box / res
        x_grid = brute_force_grid(p, res, [(-box, box)] * n)
        tol = grid_cost_tolerance(float(gam.max()), n, h)
        gap = global_cost(p, x_grid) - global_cost(p, sol.x_star)
        # on the constraint plane F(x) - F* >= min(gamma) |x - x*|^2
        x_tol = math.sqrt(tol / gam.min())
        dist = float(np.max(np.abs(x_grid - sol.x_star)))
        worst_x = max(worst_x, dist / x_tol)
        problems.append((gap <= tol + 1e-12 and gap >= -1e-12) and dist <= x_tol)
    elapsed = time.perf_counter() - t0
    criterion(
        "3 oracle equivalence",
        f"50 problems, max |phi - closed form| = {worst_phi:.2e}, "
        f"worst grid distance / resolution bound = {worst_x:.2f}, {elapsed:.1f}s",
    )
    assert all(problems)
    assert worst_phi <= 1e-9
    assert elapsed < 30


# --- 4 and 5 -------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def identity_runs():
    out = []
    t0 = time.perf_counter()
    for seed in (0, 1, 2):
        n = 20
        _, costs = random_generator_costs(n, seed)
        p = Problem(tuple(costs), 64.0 * n)
        g = connected_erdos_renyi(n, 0.3, (1.0, 1.0), seed)
        spec = spectral_summary(g)
        gam = np.array([c.gamma for c in costs])
        v, u = float(gam.min()), float(gam.max())
        bound = compute_step_bound(1.0, 1.0, u, spec, v=v)
        T = bound.T_lambda / 2
        sol = solve_kkt(p)
        tr = run(
            p, g, ProtocolConfig("node", T, Identity(), max_steps=100_000, termination_residual=1e-20),
            oracle=sol,
        )
        out.append((p, sol, tr, bound, T, v))
    return out, time.perf_counter() - t0


def test_c04_convergence_to_oracle(identity_runs, criterion):
    runs, elapsed = identity_runs
    errs = [float(np.max(np.abs(tr.x_final - sol.x_star))) for _, sol, tr, *_ in runs]
    disp = [gradient_dispersion(p.gradients(tr.x_final)) for p, _, tr, *_ in runs]
    steps = [len(tr) - 1 for _, _, tr, *_ in runs]
    criterion(
        "4 convergence to oracle",
        f"3 ER(20, 0.3) runs, max|x - x*| = {max(errs):.2e}, dispersion = {max(disp):.2e}, "
        f"steps = {steps}, {elapsed:.1f}s",
    )
    assert max(errs) <= 1e-4
    assert max(disp) <= 1e-6
    assert max(steps) <= 100_000
    assert elapsed < 10


def test_c05_rate_bound_certification(identity_runs, criterion):
    runs, _ = identity_runs
    results = [certify_rate(tr, bound, T, v) for _, _, tr, bound, T, v in runs]
    coeffs = [bound.rate_bound_coefficient(T, v) for _, _, _, bound, T, v in runs]
    worst = []
    for _, _, tr, *_ in runs:
        r = tr.residual
        mask = r[:-1] > 1e-12
        worst.append(float(np.max(r[1:][mask] / r[:-1][mask])))
    criterion(
        "5 rate-bound certification",
        f"max observed ratio {max(worst):.6f} vs bound coefficients "
        f"{', '.join(f'{c:.6f}' for c in coeffs)}",
    )
    assert all(ok for ok, _ in results), results


# --- 6 -------------------------------------------------------------------------------------


def test_c06_delay_behaviour(criterion):
    p = Problem(tuple(generator_cost(k) for k in "ABCDE"), 300.0)
    g = cycle_graph(5)
    sol = solve_kkt(p)
    f0 = residual(p, feasible_init(p, Uniform()).x, sol)
    sat = Saturation(1 / 60)
    t0 = time.perf_counter()

    case_i = {}
    for tau in (2, 6, 15):
        base = ProtocolConfig("node", 0.02, sat, max_steps=1_000_000, termination_residual=1e-4 * f0)
        tr = run_delayed(p, g, DelayedRunConfig("I", base, DelayModel(tau, TimeVarying(tau))), oracle=sol)
        case_i[tau] = (tr.status, len(tr) - 1, tr.residual[-1] / f0)

    t_lambda = build_scenario(load_config("edp5-cycle")).bound.T_lambda
    tau = 2
    T2 = 0.9 * t_lambda / (tau + 1)
    case_ii = {}
    for policy in ("on_update", "every_step"):
        base = ProtocolConfig("node", T2, sat, max_steps=1_000_000, termination_residual=1e-4 * f0)
        cfg = DelayedRunConfig("II", base, DelayModel(tau, TimeVarying(5)), policy)
        tr = run_delayed(p, g, cfg, oracle=sol)
        case_ii[policy] = (tr.status, len(tr) - 1, tr.residual[-1] / f0)

    tau = 6
    k = 3000
    ref = run(p, g, ProtocolConfig("node", 0.02, sat, max_steps=k), oracle=sol, record_states=True)
    dil = run_delayed(
        p, g,
        DelayedRunConfig("II", ProtocolConfig("node", 0.02, sat, max_steps=k * (tau + 1)),
                         DelayModel(tau, FixedPerLink(default=tau))),
        oracle=sol, record_states=True,
    )
    dilation_err = float(np.max(np.abs(dil.states[:: tau + 1] - ref.states)))
    elapsed = time.perf_counter() - t0

    criterion(
        "6 delay behaviour",
        "case I " + ", ".join(f"tau={t}: {s} after {n} steps" for t, (s, n, _) in case_i.items())
        + f"; case II tau=2 T={T2:.5f}: "
        + ", ".join(f"{pol} {s} after {n}" for pol, (s, n, _) in case_ii.items())
        + f"; dilation error {dilation_err:.1e}; {elapsed:.1f}s",
    )
    assert all(s == "Converged" and r < 1e-4 for s, _, r in case_i.values())
    assert T2 * 3 < t_lambda
    assert all(s == "Converged" and r < 1e-4 for s, _, r in case_ii.values())
    assert dilation_err <= 1e-12
    assert elapsed < 60


# --- 7 -------------------------------------------------------------------------------------


def test_c07_ramp_rate_compliance(criterion):
    t0 = time.perf_counter()
    cfg = load_config("edp50")
    trace, report = run_scenario(cfg)
    control, _ = run_scenario(cfg.with_overrides({"protocol.nonlinearity": "id"}))
    elapsed = time.perf_counter() - t0
    limit = 1 / 60
    criterion(
        "7 ramp-rate compliance",
        f"saturated max rate {trace.max_rate:.5f} <= {limit:.5f} ({report.status}), "
        f"identity control {control.max_rate:.4f}, {elapsed:.1f}s",
    )
    assert trace.max_rate <= limit
    assert control.max_rate > limit
    assert report.status == "Converged"
    assert elapsed < 30


# --- 8 -------------------------------------------------------------------------------------


def test_c08a_quantized_floor(criterion):
    t0 = time.perf_counter()
    base = load_config("quantized100")
    floors, drops, flat, structure = {}, {}, {}, None
    for delta in (0.5, 0.25, 0.125):
        cfg = base.with_overrides({"protocol.link_nonlinearity": f"logq(delta={delta})"})
        scn = build_scenario(cfg)
        if structure is None:
            sched = scn.schedule
            structure = (
                scn.run_problem.n,
                all(not is_connected(g) for _, g in sched.snapshots),
                check_uniform_connectivity(sched)[0],
                sched.window_B,
            )
        tr, _ = execute(scn)
        r = tr.residual
        tail = r[-len(r) // 4:]
        floors[delta] = float(tail[-1])
        drops[delta] = float(r[-1] / r[0])
        flat[delta] = float((tail.max() - tail.min()) / tail.max())
    elapsed = time.perf_counter() - t0
    criterion(
        "8a quantized floor",
        f"n={structure[0]}, snapshots disconnected={structure[1]}, B={structure[3]}-connected={structure[2]}; "
        + ", ".join(f"delta={d}: floor {f:.2e}" for d, f in floors.items())
        + f"; {elapsed:.1f}s",
    )
    assert structure == (100, True, True, 100)
    assert all(d < 1e-2 for d in drops.values())
    # the floor has been reached: no further progress over the last quarter
    assert all(f <= 1e-3 for f in flat.values())
    assert floors[0.5] > floors[0.25] > floors[0.125] > 0
    assert elapsed < 120


def test_c08b_log_quantizer_sector_band(criterion):
    rows = []
    for delta in (0.5, 0.25, 0.125):
        eps, K, declared_ok = verify_sector(LogQuantizer(delta), (-10.0, 10.0), 100_000)
        rows.append((delta, eps, K, declared_ok, 1 - delta / 2 <= eps and K <= 1 + delta / 2))
    criterion(
        "8b log-quantizer sector band [1 - delta/2, 1 + delta/2]",
        "; ".join(
            f"delta={d}: observed [{e:.5f}, {k:.5f}] vs band [{1 - d / 2:.5f}, {1 + d / 2:.5f}], "
            f"declared sector holds={ok}"
            for d, e, k, ok, _ in rows
        ),
    )
    assert all(ok for *_, ok, _ in rows)
    assert all(band for *_, band in rows)


# --- 9 -------------------------------------------------------------------------------------

SWEEP = """
preset = "edp50"
seed = 21

[network]
p = 0.3
weight_range = [0.02, 0.12]
normalize = "none"

[protocol]
nonlinearity = "sat(kappa=3)"
max_steps = 200000
termination_residual = 1e-2
target_residual = 1e-2

[sweep]
grid = { "protocol.step_T" = [0.01, 0.02, 0.04] }
trials = 5
"""


def test_c09_sweep_trend(criterion):
    t0 = time.perf_counter()
    rows, summary = run_sweep(load_text(SWEEP), workers=1)
    elapsed = time.perf_counter() - t0
    prod = {float(c["protocol.step_T"]): float(c["iterations_times_T_mean"]) for c in summary}
    spread = (max(prod.values()) - min(prod.values())) / min(prod.values())
    criterion(
        "9 sweep trend",
        "mean iterations x T: " + ", ".join(f"T={t}: {v:.2f}" for t, v in sorted(prod.items()))
        + f"; spread {100 * spread:.2f}%; {elapsed:.1f}s",
    )
    assert all(r["status"] == "Converged" for r in rows)
    assert spread < 0.25
    assert elapsed < 120


# --- 10 ------------------------------------------------------------------------------------


def test_c10_determinism(tmp_path, criterion):
    scenarios = {
        "edp50": load_config("edp50").with_overrides({"output.states": True}),
        "case-II": load_config("edp5-cycle").with_overrides(
            {"delay.case": "II", "protocol.max_steps": 20_000, "protocol.step_T": 0.005}
        ),
        "quantized100": load_config("quantized100").with_overrides({"protocol.max_steps": 3000}),
    }
    identical = {}
    for name, cfg in scenarios.items():
        outs = []
        for rep in (0, 1):
            d = tmp_path / f"{name}-{rep}"
            run_scenario(cfg, d)
            outs.append({f.name: f.read_bytes() for f in sorted(d.glob("*.csv"))})
        identical[name] = outs[0] == outs[1] and len(outs[0]) >= 1
    sweep_text = SWEEP.replace("trials = 5", "trials = 2").replace("max_steps = 200000", "max_steps = 3000")
    sw = []
    for rep in (0, 1):
        d = tmp_path / f"sweep-{rep}"
        run_sweep(load_text(sweep_text), d, workers=1)
        sw.append({f.name: f.read_bytes() for f in sorted(d.glob("*.csv"))})
    identical["sweep"] = sw[0] == sw[1]
    criterion("10 determinism", ", ".join(f"{k}: {'identical' if v else 'DIFFERENT'}" for k, v in identical.items()))
    assert all(identical.values())
