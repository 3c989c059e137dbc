"""Minimal dense tensor core.

Tensors are plain C-contiguous numpy arrays of rank 1-4 in one of two
precisions (float64 for correctness work, float32 for benchmarks).  The
helpers here validate shapes and precision and never mutate their inputs.
"""

from __future__ import annotations

import numpy as np

PRECISIONS = (np.dtype(np.float64), np.dtype(np.float32))

# row-normalisation guard per precision
L2_EPS = {np.dtype(np.float64): 1e-12, np.dtype(np.float32): 1e-6}


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class PrecisionError(TypeError):
    """Operands carry different precisions, or an unsupported one."""


def as_tensor(x, dtype=np.float64) -> np.ndarray:
    """Copy `x` into a validated row-major tensor of the given precision."""
    dtype = np.dtype(dtype)
    if dtype not in PRECISIONS:
        raise PrecisionError(f"unsupported precision {dtype}")
    arr = np.array(x, dtype=dtype, order="C", copy=True)
    check_tensor(arr)
    return arr


def check_tensor(a: np.ndarray) -> None:
    if not isinstance(a, np.ndarray):
        raise TypeError(f"expected ndarray, got {type(a).__name__}")
    if a.dtype not in PRECISIONS:
        raise PrecisionError(f"unsupported precision {a.dtype}")
    if not 1 <= a.ndim <= 4:
        raise DimensionError(f"rank must be 1..4, got shape {a.shape}")
    if any(e < 1 for e in a.shape):
        raise DimensionError(f"all extents must be >= 1, got shape {a.shape}")


def strides_of(shape) -> tuple[int, ...]:
    """Row-major element strides for `shape`."""
    out = []
    acc = 1
    for e in reversed(shape):
        out.append(acc)
        acc *= e
    return tuple(reversed(out))


def offset_of(shape, index) -> int:
    return sum(i * s for i, s in zip(index, strides_of(shape)))


def same_precision(*arrays: np.ndarray) -> np.dtype:
    dtypes = {a.dtype for a in arrays if isinstance(a, np.ndarray)}
    if len(dtypes) > 1:
        raise PrecisionError(f"mixed precisions: {sorted(str(d) for d in dtypes)}")
    (dt,) = dtypes
    if dt not in PRECISIONS:
        raise PrecisionError(f"unsupported precision {dt}")
    return dt


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    same_precision(a, b)
    return a @ b


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {x.ndim}")
    z = x - x.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def _broadcastable(a: np.ndarray, b) -> bool:
    if np.isscalar(b):
        return True
    if b.shape == a.shape:
        return True
    # vector broadcast along the leading axis: b matches the trailing extent
    return b.ndim == 1 and a.ndim >= 2 and b.shape[0] == a.shape[-1]


def elementwise(op: str, a: np.ndarray, b) -> np.ndarray:
    """Apply add/sub/mul/scale pointwise, replicating `b` if it is a scalar or row."""
    if op == "scale":
        if not np.isscalar(b):
            raise DimensionError("scale expects a scalar operand")
        op = "mul"
    if op not in _OPS:
        raise ValueError(f"unknown elementwise op {op!r}")
    if not _broadcastable(a, b):
        raise DimensionError(f"cannot broadcast {np.shape(b)} onto {a.shape}")
    if isinstance(b, np.ndarray):
        same_precision(a, b)
        return _OPS[op](a, b)
    return _OPS[op](a, a.dtype.type(b))


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def scale(a, s):
    return elementwise("scale", a, s)


def l2_normalize_rows(x: np.ndarray, eps: float | None = None) -> np.ndarray:
    """Divide each row by max(||row||, eps)."""
    if x.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {x.shape}")
    if eps is None:
        eps = L2_EPS[x.dtype]
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    return x / np.maximum(norms, eps)[:, None]
