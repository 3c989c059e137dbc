"""Parameter/MAC accounting for every preset plus single-threaded forward latency.

    python scripts/model_report.py --size 224 --repeats 5
"""

import argparse

import numpy as np

from swiftattn import bench, constants
from swiftattn import model as M


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=224)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--no-timing", action="store_true")
    args = ap.parse_args()

    hdr = f"{'model':<6}{'params':>12}{'target':>8}{'GMACs':>9}{'target':>8}"
    if not args.no_timing:
        hdr += f"{'ms':>10}{'ms fused':>10}"
    print(hdr)
    for key, spec in M.PRESETS.items():
        p = M.param_count(spec).total
        g = M.mac_count(spec, args.size).total / 1e9
        row = (f"{key:<6}{p / 1e6:>11.3f}M{constants.TARGET_PARAMS_M[key]:>7}M"
               f"{g:>9.3f}{constants.TARGET_GMACS[key]:>8}")
        if not args.no_timing:
            m = M.build(spec, args.seed, np.float32)
            t = [bench.bench_model(spec, args.size, fused=f, repeats=args.repeats, seed=args.seed, model=m)
                 for f in (False, True)]
            row += f"{t[0].median_ns / 1e6:>10.1f}{t[1].median_ns / 1e6:>10.1f}"
        print(row, flush=True)


if __name__ == "__main__":
    main()
