"""Additive attention with and without the key-value interaction: MACs and median time.

    python scripts/ablation_timing.py --n 4096 --d 256 --repeats 50
"""

import argparse

from swiftattn import bench
from swiftattn.attention import AttentionConfig, attn_mac_count


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[196, 1024, 4096])
    ap.add_argument("--d", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'n':>6}{'d':>6}{'MACs':>14}{'MACs kv':>14}{'ms':>9}{'ms kv':>9}{'saving':>9}")
    for n in args.n:
        (a,) = bench.bench_attention("additive", [n], args.d, args.repeats, args.seed)
        (q,) = bench.bench_attention("additive", [n], args.d, args.repeats, args.seed, keep_value=True)
        assert a.macs == attn_mac_count(AttentionConfig(n, args.d))
        print(f"{n:>6}{args.d:>6}{a.macs:>14,}{q.macs:>14,}{a.median_ns / 1e6:>9.2f}"
              f"{q.median_ns / 1e6:>9.2f}{1 - a.median_ns / q.median_ns:>9.1%}")


if __name__ == "__main__":
    main()
