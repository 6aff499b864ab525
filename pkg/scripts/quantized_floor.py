"""Residual floor of the quantized 100-agent preset as a function of the quantization level."""
import argparse
import csv
from pathlib import Path

from dtalloc.analysis import trace_csv
from dtalloc.config import load_config
from dtalloc.scenarios import build_scenario, execute


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.5, 0.25, 0.125, 0.0625])
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--out", default="runs/quantized_floor")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for delta in args.deltas:
        cfg = load_config("quantized100").with_overrides(
            {"protocol.link_nonlinearity": f"logq(delta={delta})", "protocol.max_steps": args.steps}
        )
        trace, report = execute(build_scenario(cfg))
        (out / f"trace_delta_{delta}.csv").write_text(trace_csv(trace))
        rows.append((delta, trace.residual[0], trace.residual[-1], report.max_feasibility_drift))
        print(f"delta={delta:<7} residual {trace.residual[0]:.3e} -> {trace.residual[-1]:.3e}  "
              f"drift {report.max_feasibility_drift:.1e}")
    with (out / "floors.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "initial_residual", "final_residual", "max_feasibility_drift"])
        w.writerows([[format(v, ".17g") for v in r] for r in rows])
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
