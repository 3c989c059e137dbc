"""Command-line frontend.

Exit codes: 0 success/PASS, 2 usage error, 3 acceptance-threshold failure,
4 I/O or weight-file error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import bench, constants, gradcheck, selftest
from . import model as M

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAIL = 3
EXIT_IO = 4

PRECISIONS = {"f32": np.float32, "f64": np.float64}


class UsageError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get("SWIFTATTN_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"SWIFTATTN_SEED must be an integer, got {raw!r}") from None


def _spec(args) -> M.ModelSpec:
    try:
        spec = M.resolve_variant(args.variant)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    except ValueError as exc:
        raise UsageError(f"bad custom spec: {exc}") from None
    if getattr(args, "head", None):
        spec = spec.with_head(args.head)
    return spec


def _preset_key(args) -> str | None:
    key = args.variant.lower()
    return key if key in constants.TARGET_PARAMS_M else None


def _verdict(value: float, target: float, tol: float) -> tuple[float, bool]:
    delta = (value - target) / target
    return delta, abs(delta) <= tol


def cmd_paramcount(args) -> int:
    spec = _spec(args)
    rep = M.param_count(spec)
    print(f"variant {spec.name}  head {spec.head}")
    print(f"{'component':<12}{'params':>14}")
    for k, v in rep.breakdown.items():
        print(f"{k:<12}{v:>14,}")
    print(f"{'total':<12}{rep.total:>14,}")
    other = "single" if spec.head == "dual" else "dual"
    print(f"{'(' + other + ' head)':<12}{M.param_count(spec.with_head(other)).total:>14,}")
    key = _preset_key(args)
    if key is None:
        return EXIT_OK
    target = constants.TARGET_PARAMS_M[key]
    delta, ok = _verdict(rep.total / 1e6, target, constants.PARAM_TOLERANCE)
    print(f"target {target}M  ours {rep.total / 1e6:.3f}M  delta {delta:+.2%}  "
          f"{'PASS' if ok else 'FAIL'} (tolerance {constants.PARAM_TOLERANCE:.0%})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_maccount(args) -> int:
    spec = _spec(args)
    try:
        rep = M.mac_count(spec, args.size)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"variant {spec.name}  input {args.size}x{args.size}  head {spec.head}")
    print(f"{'component':<12}{'MACs':>16}")
    for k, v in rep.breakdown.items():
        print(f"{k:<12}{v:>16,}")
    print(f"{'total':<12}{rep.total:>16,}")
    print(f"{'no head':<12}{rep.total_without_head:>16,}")
    assert sum(rep.breakdown.values()) == rep.total
    key = _preset_key(args)
    if key is None or args.size != constants.INPUT_SIZE:
        return EXIT_OK
    target = constants.TARGET_GMACS[key]
    delta, ok = _verdict(rep.total / 1e9, target, constants.MAC_TOLERANCE)
    delta_nh, _ = _verdict(rep.total_without_head / 1e9, target, constants.MAC_TOLERANCE)
    print(f"target {target}G  ours {rep.total / 1e9:.4f}G  delta {delta:+.2%} "
          f"(without head {delta_nh:+.2%})  {'PASS' if ok else 'FAIL'} "
          f"(tolerance {constants.MAC_TOLERANCE:.0%})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_selftest(args) -> int:
    t0 = time.perf_counter()
    results = selftest.run(fault=args.inject_fault, seed=args.seed)
    all_ok = True
    for name, (ok, total) in results.items():
        status = "ok" if ok == total else "FAILED"
        all_ok &= ok == total
        print(f"{name:<20}{ok:>4}/{total:<4} {status}")
    print(f"selftest {'passed' if all_ok else 'FAILED'} in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK if all_ok else EXIT_FAIL


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for n, d, s in gradcheck.random_cases(args.cases, args.seed, args.max_n, args.max_d):
        r = gradcheck.check_additive(n, d, s, h=args.step)
        worst = max(worst, r.max_rel_error)
        print(f"n={n:<3} d={d:<3} seed={s:<6} max_rel_err={r.max_rel_error:.3e} ({r.worst})")
    ok = worst < args.tol
    print(f"max relative error {worst:.3e}  {'PASS' if ok else 'FAIL'} (< {args.tol:g})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_bench(args) -> int:
    if args.model:
        args.variant = args.model
        spec = _spec(args)
        records = [bench.bench_model(spec, args.size, fused=f, repeats=args.repeats, seed=args.seed)
                   for f in ((False, True) if args.fused == "both" else (args.fused == "yes",))]
    else:
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        unknown = set(variants) - {"standard", "transpose", "separable", "additive"}
        if unknown:
            raise UsageError(f"unknown attention variants {sorted(unknown)}")
        ns = bench.powers_of_two(args.n_min, args.n_max)
        records = bench.sweep(variants, ns, args.d, args.repeats, args.seed,
                              parallel_cells=args.parallel_cells, keep_value=args.keep_value)
    text = bench.to_csv(records)
    if args.out:
        bench.write_csv(records, args.out)
    else:
        sys.stdout.write(text)
    if args.gnuplot:
        bench.write_gnuplot(records, args.gnuplot)
    if args.fit and not args.model:
        for v in dict.fromkeys(r.variant for r in records):
            f = bench.fit_scaling([r for r in records if r.variant == v])
            print(f"# fit {v}: beta={f.beta:.3f} R2={f.r2:.4f} n={f.n_min}..{f.n_max}", file=sys.stderr)
    return EXIT_OK


def cmd_weights(args) -> int:
    if args.action == "save":
        spec = _spec(args)
        m = M.build(spec, args.seed, dtype=PRECISIONS[args.precision])
        M.save_weights(m.weights, args.path, spec)
        rep = M.param_count(spec)
        print(f"saved {len(m.weights)} tensors ({rep.total:,} params) for {spec.name} seed {args.seed} to {args.path}")
        return EXIT_OK
    if args.action == "load":
        spec = _spec(args)
        bundle = M.load_weights(args.path, spec)
        print(f"loaded {len(bundle)} tensors; matches spec {spec.name}")
        return EXIT_OK
    bundle, digest = M.decode_weights(open(args.path, "rb").read())
    print(f"spec-hash {digest:#018x}  tensors {len(bundle)}")
    print(f"{'name':<40}{'dtype':>8}  shape")
    for name, a in bundle.tensors.items():
        print(f"{name:<40}{str(a.dtype):>8}  {'x'.join(map(str, a.shape))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swiftattn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def variant_args(sp, required=True):
        sp.add_argument("--variant", required=required, help="xs | s | l1 | l3 | custom:<spec-file>")
        sp.add_argument("--head", choices=M.HEAD_MODES, help="classifier head mode (default: dual)")

    sp = sub.add_parser("paramcount", help="parameter count vs published target")
    variant_args(sp)
    sp.set_defaults(func=cmd_paramcount)

    sp = sub.add_parser("maccount", help="MAC count vs published target")
    variant_args(sp)
    sp.add_argument("--size", type=int, default=constants.INPUT_SIZE)
    sp.set_defaults(func=cmd_maccount)

    sp = sub.add_parser("bench", help="timing sweeps, CSV output")
    sp.add_argument("--variants", default="additive,standard")
    sp.add_argument("--n-min", type=int, default=256)
    sp.add_argument("--n-max", type=int, default=16384)
    sp.add_argument("--d", type=int, default=64)
    sp.add_argument("--repeats", type=int, default=bench.MIN_REPEATS)
    sp.add_argument("--keep-value", action="store_true", help="time the key-value ablation form of additive")
    sp.add_argument("--model", help="time a full model instead of an attention sweep")
    sp.add_argument("--head", choices=M.HEAD_MODES)
    sp.add_argument("--size", type=int, default=constants.INPUT_SIZE)
    sp.add_argument("--fused", choices=("no", "yes", "both"), default="both")
    sp.add_argument("--out", help="CSV path (default stdout)")
    sp.add_argument("--gnuplot", help="also write a gnuplot data file")
    sp.add_argument("--fit", action="store_true", help="print log-log fits to stderr")
    sp.add_argument("--parallel-cells", action="store_true")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("selftest", help="oracle, gradient, fusion and property suites")
    sp.add_argument("--inject-fault", choices=sorted(selftest.FAULTS), help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_selftest)

    sp = sub.add_parser("gradcheck", help="additive-attention backward vs finite differences")
    sp.add_argument("--cases", type=int, default=20)
    sp.add_argument("--max-n", type=int, default=8)
    sp.add_argument("--max-d", type=int, default=16)
    sp.add_argument("--step", type=float, default=1e-5)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("weights", help="save / load / inspect weight files")
    sp.add_argument("action", choices=("save", "load", "inspect"))
    sp.add_argument("--path", required=True)
    variant_args(sp, required=False)
    sp.add_argument("--precision", choices=sorted(PRECISIONS), default="f64")
    sp.set_defaults(func=cmd_weights)

    for sp in sub.choices.values():
        sp.add_argument("--seed", type=int, default=None, help="default: $SWIFTATTN_SEED or 0")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.seed is None:
            args.seed = default_seed()
        if args.command == "weights" and args.action in ("save", "load") and not args.variant:
            raise UsageError("weights save/load need --variant")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, M.WeightFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
