"""Timing harness: median-of-repeats wall time, analytic MACs, log-log scaling fits."""

from __future__ import annotations

import csv
import io
import math
import platform
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import attention
from . import model as M
from .attention import AttentionConfig

WARMUP = 3
MIN_REPEATS = 5
CSV_HEADER = ("variant", "n", "d", "repeats", "median_ns", "macs", "host")


@dataclass(frozen=True)
class BenchRecord:
    variant: str
    n: int
    d: int
    repeats: int
    warmup: int
    median_ns: int
    macs: int
    host: str

    def __post_init__(self):
        if self.repeats < MIN_REPEATS:
            raise ValueError(f"repeats must be >= {MIN_REPEATS}")
        if self.median_ns <= 0:
            raise ValueError("median time must be positive")


@dataclass(frozen=True)
class ScalingFit:
    beta: float
    intercept: float
    r2: float
    n_min: int
    n_max: int
    points: int


def host_fingerprint() -> str:
    return f"{platform.node()}|{platform.machine()}|{platform.python_implementation()}{platform.python_version()}|numpy{np.__version__}"


def median_ns(fn, repeats: int, warmup: int = WARMUP) -> int:
    """Median wall time of fn() over `repeats` calls after `warmup` untimed calls."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return max(1, int(statistics.median(samples)))


def bench_inputs(n: int, d: int, seed: int, dtype=np.float32) -> np.ndarray:
    """Token matrix shared by every variant at a given (seed, n, d)."""
    return np.random.default_rng([seed, n, d]).standard_normal((n, d)).astype(dtype)


def bench_attention(variant: str, ns, d: int, repeats: int = MIN_REPEATS, seed: int = 0,
                    dtype=np.float32, heads: int = 1, keep_value: bool = False,
                    warmup: int = WARMUP) -> list[BenchRecord]:
    """Time one attention variant over ascending token counts, single-threaded."""
    ns = list(ns)
    if ns != sorted(ns):
        raise ValueError("token counts must be sorted ascending")
    label = variant + ("-qkv" if keep_value else "")
    params = attention.init_params(AttentionConfig(n=1, d=d, variant=variant, heads=heads,
                                                   ablation_keep_value=keep_value), seed=seed, dtype=dtype)
    host = host_fingerprint()
    records = []
    with threadpool_limits(limits=1):
        for n in ns:
            x = bench_inputs(n, d, seed, dtype)
            t = median_ns(lambda: attention.forward(x, params), repeats, warmup)
            macs = attention.attn_mac_count(AttentionConfig(n=n, d=d, variant=variant, heads=heads,
                                                            ablation_keep_value=keep_value))
            records.append(BenchRecord(label, n, d, repeats, warmup, t, macs, host))
    return records


def _cell(args):
    variant, ns, d, repeats, seed, keep_value = args
    return bench_attention(variant, ns, d, repeats, seed, keep_value=keep_value)


def sweep(variants, ns, d: int, repeats: int = MIN_REPEATS, seed: int = 0,
          parallel_cells: bool = False, keep_value: bool = False) -> list[BenchRecord]:
    """Run bench_attention for each variant; cells run in worker processes only on request."""
    cells = [(v, list(ns), d, repeats, seed, keep_value and v == "additive") for v in variants]
    if parallel_cells:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_cell, cells))
    else:
        results = [_cell(c) for c in cells]
    return [r for rs in results for r in rs]


def fit_scaling(records) -> ScalingFit:
    """Ordinary least squares of ln(time) on ln(n)."""
    records = list(records)
    ns = [r.n for r in records]
    if len(set(ns)) < 5:
        raise ValueError(f"need at least 5 distinct token counts, got {len(set(ns))}")
    if max(ns) < 16 * min(ns):
        raise ValueError("token counts must span at least 16x")
    lx = np.log(np.array(ns, dtype=float))
    ly = np.log(np.array([r.median_ns for r in records], dtype=float))
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    (beta, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (beta * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(float(beta), float(intercept), r2, min(ns), max(ns), len(records))


def bench_model(spec: M.ModelSpec, size: int = 224, fused: bool = False, repeats: int = MIN_REPEATS,
                seed: int = 0, warmup: int = WARMUP, model: M.Model | None = None) -> BenchRecord:
    """End-to-end single-precision forward time, optionally with BN folded into convs.

    n holds the input pixel count H*W and d the input channel count.
    """
    m = model if model is not None else M.build(spec, seed, dtype=np.float32)
    if fused and not m.fused:
        m = M.fuse(m)
    img = np.random.default_rng([seed, size]).standard_normal((spec.in_channels, size, size)).astype(np.float32)
    with threadpool_limits(limits=1):
        t = median_ns(lambda: M.forward(m, img), repeats, warmup)
    label = spec.name + ("-fused" if fused else "")
    return BenchRecord(label, size * size, spec.in_channels, repeats, warmup, t,
                       M.mac_count(spec, size).total, host_fingerprint())


# --- output ---------------------------------------------------------------


def to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow((r.variant, r.n, r.d, r.repeats, r.median_ns, r.macs, r.host))
    return buf.getvalue()


def write_csv(records, path) -> None:
    Path(path).write_text(to_csv(records))


def read_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [BenchRecord(r["variant"], int(r["n"]), int(r["d"]), int(r["repeats"]), WARMUP,
                        int(r["median_ns"]), int(r["macs"]), r["host"]) for r in rows]


def to_gnuplot(records) -> str:
    """One index block per variant (blank-line separated), columns n, median_ns, macs."""
    out = []
    by_variant: dict = {}
    for r in records:
        by_variant.setdefault(r.variant, []).append(r)
    for variant, rs in by_variant.items():
        out.append(f"# {variant} d={rs[0].d}")
        out.append("# n median_ns macs")
        out.extend(f"{r.n} {r.median_ns} {r.macs}" for r in rs)
        out.append("")
        out.append("")
    return "\n".join(out)


def write_gnuplot(records, path) -> None:
    Path(path).write_text(to_gnuplot(records))


def powers_of_two(lo: int, hi: int) -> list[int]:
    return [1 << k for k in range(int(math.log2(lo)), int(math.log2(hi)) + 1)]
