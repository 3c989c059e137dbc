"""Time all four attention variants over a token-count sweep and fit log-log slopes.

    python scripts/scaling_sweep.py --d 64 --n-max 16384 --out results/scaling.csv
"""

import argparse
from pathlib import Path

from swiftattn import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variants", default="additive,separable,transpose,standard")
    ap.add_argument("--n-min", type=int, default=256)
    ap.add_argument("--n-max", type=int, default=16384)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/scaling.csv")
    args = ap.parse_args()

    ns = bench.powers_of_two(args.n_min, args.n_max)
    records = bench.sweep(args.variants.split(","), ns, args.d, args.repeats, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    bench.write_csv(records, out)
    bench.write_gnuplot(records, out.with_suffix(".dat"))
    print(f"{'variant':<12}{'beta':>8}{'R2':>8}")
    for v in args.variants.split(","):
        f = bench.fit_scaling([r for r in records if r.variant == v])
        print(f"{v:<12}{f.beta:>8.3f}{f.r2:>8.4f}")
    print(f"wrote {out} and {out.with_suffix('.dat')}")


if __name__ == "__main__":
    main()
