"""Iterations-to-target times the step size across step sizes and link densities.

Runs ``configs/step_sweep.toml`` (or another sweep file) and prints one line per grid cell.
"""
import argparse
from pathlib import Path

from dtalloc.config import load_config
from dtalloc.scenarios import run_sweep

DEFAULT = Path(__file__).resolve().parent.parent / "configs" / "step_sweep.toml"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", nargs="?", default=str(DEFAULT))
    ap.add_argument("--out", default="runs/step_sweep")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    _, summary = run_sweep(load_config(args.config), args.out, args.workers)
    for cell in summary:
        keys = {k: v for k, v in cell.items() if "." in k}
        print(", ".join(f"{k}={v}" for k, v in keys.items()),
              f"iterations x T = {cell['iterations_times_T_mean']:.2f} +/- {cell['iterations_times_T_std']:.2f}",
              f"(failed {cell['failed']})")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
