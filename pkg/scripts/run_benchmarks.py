"""Run every bench suite and write one TSV (and optionally a PNG) per suite.

    python3 scripts/run_benchmarks.py --out results --samples 50 --plot
"""

import argparse
import time
from pathlib import Path

from dualrcc import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--samples", type=int, default=None, help="per-point samples; suite default if omitted")
    ap.add_argument("--suites", default=",".join(bench.SUITES))
    ap.add_argument("--plot", action="store_true", help="also write PNG plots (needs matplotlib)")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.suites.split(","):
        t0 = time.perf_counter()
        rows = bench.run_suite(name, args.samples)
        (out / f"{name}.tsv").write_text(bench.format_table(rows))
        if args.plot:
            x, y, g = bench.PLOT_AXES[name]
            bench.plot_table(rows, x, y, out / f"{name}.png", g)
        print(f"{name}: {len(rows)} rows in {time.perf_counter() - t0:.1f}s -> {out / (name + '.tsv')}")


if __name__ == "__main__":
    main()
