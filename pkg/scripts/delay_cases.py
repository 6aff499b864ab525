"""Five-generator ring with link delays: Case I and Case II against the delay bound.

For each ``tau_bar`` the script runs Case I with ``T = 0.02`` and Case II with
``T = fraction * T_lambda / (tau_bar + 1)`` and reports the fast steps needed
to bring the residual below ``1e-4`` of its starting value.
"""
import argparse
import time

from dtalloc.analysis import residual
from dtalloc.config import load_config
from dtalloc.delay import DelayedRunConfig, DelayModel, FixedPerLink, TimeVarying, run_delayed
from dtalloc.graph import cycle_graph
from dtalloc.nonlinearity import Saturation
from dtalloc.objective import Problem, generator_cost
from dtalloc.oracle import solve_kkt
from dtalloc.protocol import ProtocolConfig, Uniform, feasible_init
from dtalloc.scenarios import build_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--taus", type=int, nargs="+", default=[2, 6])
    ap.add_argument("--fraction", type=float, default=0.9)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-steps", type=int, default=1_000_000)
    args = ap.parse_args()

    p = Problem(tuple(generator_cost(k) for k in "ABCDE"), 300.0)
    g = cycle_graph(5)
    sol = solve_kkt(p)
    stop = 1e-4 * residual(p, feasible_init(p, Uniform()).x, sol)
    sat = Saturation(1 / 60)
    t_lambda = build_scenario(load_config("edp5-cycle")).bound.T_lambda
    print(f"T_lambda = {t_lambda:.6f}")
    print(f"{'tau':>4} {'case':>5} {'delays':>8} {'T':>9} {'status':>9} {'steps':>8} {'time':>6}")
    for tau in args.taus:
        runs = [
            ("I", 0.02, TimeVarying(args.seed), "varying"),
            ("II", args.fraction * t_lambda / (tau + 1), TimeVarying(args.seed), "varying"),
            ("II", args.fraction * t_lambda / (tau + 1), FixedPerLink(default=tau), "fixed"),
        ]
        for mode, T, assign, label in runs:
            base = ProtocolConfig("node", T, sat, max_steps=args.max_steps, termination_residual=stop)
            t0 = time.perf_counter()
            tr = run_delayed(p, g, DelayedRunConfig(mode, base, DelayModel(tau, assign)), oracle=sol)
            print(f"{tau:4d} {mode:>5} {label:>8} {T:9.5f} {tr.status:>9} {len(tr) - 1:8d} "
                  f"{time.perf_counter() - t0:5.1f}s")


if __name__ == "__main__":
    main()
