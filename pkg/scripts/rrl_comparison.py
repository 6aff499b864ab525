"""Ramp-rate comparison on the 50-generator preset: saturated map versus the identity map.

Writes ``rates.csv`` (per-step max |dx|/T for both runs) and prints a summary.
"""
import argparse
import csv
from pathlib import Path

from dtalloc.config import load_config
from dtalloc.scenarios import run_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/rrl_comparison")
    ap.add_argument("--limit", type=float, default=1 / 60, help="ramp-rate limit per unit time")
    args = ap.parse_args()

    cfg = load_config("edp50")
    runs = {
        "saturated": run_scenario(cfg)[0],
        "identity": run_scenario(cfg.with_overrides({"protocol.nonlinearity": "id"}))[0],
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    steps = max(len(t.max_change) for t in runs.values())
    with (out / "rates.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", *runs])
        for k in range(steps):
            w.writerow([k + 1, *(
                format(t.max_change[k] / t.step_T, ".17g") if k < len(t.max_change) else ""
                for t in runs.values()
            )])
    for name, t in runs.items():
        verdict = "within" if t.max_rate <= args.limit else "VIOLATES"
        print(f"{name:10s} status={t.status:9s} steps={len(t) - 1:6d} max rate={t.max_rate:.5f} "
              f"({verdict} limit {args.limit:.5f})")
    print(f"wrote {out / 'rates.csv'}")


if __name__ == "__main__":
    main()
