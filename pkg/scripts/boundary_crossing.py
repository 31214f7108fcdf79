"""Conditioned estimates of P(sup Xbar_n >= b, no jump above c) along n = 2^5..2^10.

    python scripts/boundary_crossing.py --b 1.5 --c 1.0 --trials 100000 --out out/boundary.csv
"""
import argparse
import time
from pathlib import Path

from heavytail import rare_event as rev


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--b", type=float, default=1.5)
    ap.add_argument("--c", type=float, default=1.0)
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--pmax", type=int, default=10, help="largest n is 2^pmax")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--out", default="out/boundary.csv")
    args = ap.parse_args()

    t0 = time.perf_counter()
    grid = tuple(2**p for p in range(5, args.pmax + 1))
    rep = rev.boundary_crossing_check(args.b, args.c, grid, args.trials, seed=args.seed, threads=args.threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rep.to_csv())
    for e in rep.estimates:
        lr = "nan" if e.log_ratio is None else f"{e.log_ratio:.4f}"
        print(f"n={e.n:<6} hits={e.hits:<8} p={e.p_hat:.3e}  log-ratio {lr}")
    print(f"band {rep.band}, verdict {rep.verdict}, decreasing {rep.decreasing}, "
          f"{time.perf_counter() - t0:.1f} s -> {out}")


if __name__ == "__main__":
    main()
