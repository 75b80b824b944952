"""Reduced-precision floating-point emulation.

Values are stored in float64 ("working precision") and rounded onto the
grid of a narrower binary format after every arithmetic operation.  The
rounding step ("chopping") maps a float64 value to the nearest value
representable with ``significand_bits`` bits of precision and an exponent
in the IEEE-style symmetric range, with ties broken to even.  Overflow
rounds to signed infinity, underflow to the subnormal grid (or to zero
when subnormals are disabled), and NaN/infinity pass through unchanged.

Reductions (dot products, sparse matrix-vector products) accumulate with
one rounding per addition, optionally splitting the sum into fixed-size
blocks whose partial sums are combined sequentially.  Blocking shrinks
the worst-case accumulation error because each addend participates in a
much shorter chain of rounded additions.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, fields
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from .errors import DimensionError, GammaBoundError

if TYPE_CHECKING:
    from .linops import SparseMatrix

__all__ = [
    "Rounding",
    "FloatFormat",
    "BlockedReduceConfig",
    "FORMATS",
    "get_format",
    "chop",
    "chop_scalar",
    "chopped_ew",
    "chopped_dot",
    "chopped_spmv",
    "unit_roundoff",
    "gamma_bound",
    "OpStats",
    "op_stats",
]


class Rounding(Enum):
    """Rounding behaviour of a format (only round-to-nearest-even is supported)."""

    NEAREST_TIES_TO_EVEN = "nearest-even"


@dataclass(frozen=True)
class FloatFormat:
    """Description of a binary floating-point format to emulate.

    Parameters
    ----------
    significand_bits : int
        Total significand precision t in bits, counting the implicit
        leading bit (fp16: 11, bfloat16: 8, fp32: 24).
    max_exponent : int
        Largest unbiased binary exponent e_max (fp16: 15, bfloat16: 127,
        fp32: 127).  The smallest normal exponent is 1 - e_max.
    supports_subnormals : bool
        Whether results below the normal range underflow gradually.
    rounding : Rounding
        Fixed to nearest-ties-to-even.
    passthrough : bool
        When true every chop is the identity; this is how fp64 working
        precision is modelled.
    """

    significand_bits: int
    max_exponent: int
    supports_subnormals: bool = True
    rounding: Rounding = Rounding.NEAREST_TIES_TO_EVEN
    passthrough: bool = False

    def __post_init__(self) -> None:
        if self.significand_bits < 2:
            raise ValueError("significand_bits must be >= 2")
        if self.max_exponent < 1:
            raise ValueError("max_exponent must be >= 1")
        # The emulated grid must live inside float64, otherwise the
        # exact-scaling tricks below stop being exact.
        if self.max_exponent > 1023:
            raise ValueError("max_exponent exceeds the float64 working range")
        if self.min_exponent - (self.significand_bits - 1) < -1074:
            raise ValueError("format is finer than float64 working precision")

    @property
    def min_exponent(self) -> int:
        """Smallest unbiased exponent of a normal number (1 - e_max)."""
        return 1 - self.max_exponent

    @property
    def max_finite(self) -> float:
        """Largest finite representable magnitude (2 - 2^(1-t)) * 2^e_max."""
        return math.ldexp(2.0 - math.ldexp(1.0, 1 - self.significand_bits), self.max_exponent)

    @property
    def smallest_normal(self) -> float:
        return math.ldexp(1.0, self.min_exponent)

    @property
    def smallest_subnormal(self) -> float:
        return math.ldexp(1.0, self.min_exponent - self.significand_bits + 1)


@dataclass(frozen=True)
class BlockedReduceConfig:
    """How chopped reductions split their summation into blocks.

    ``block_size`` addends are summed sequentially (chop after each add)
    per block; the block partial sums are then combined sequentially.  A
    block size >= n degenerates to a plain sequential chopped sum.
    """

    block_size: int = 256

    def __post_init__(self) -> None:
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")


FORMATS: dict[str, FloatFormat] = {
    "fp16": FloatFormat(significand_bits=11, max_exponent=15),
    "bfloat16": FloatFormat(significand_bits=8, max_exponent=127),
    "fp32": FloatFormat(significand_bits=24, max_exponent=127),
    "fp64": FloatFormat(significand_bits=53, max_exponent=1023, passthrough=True),
}


def get_format(name: str) -> FloatFormat:
    """Look up a preset format by name ("fp16", "bfloat16", "fp32", "fp64")."""
    try:
        return FORMATS[name]
    except KeyError:
        raise ValueError(f"unknown format {name!r}; choose from {sorted(FORMATS)}") from None


# ---------------------------------------------------------------------------
# instrumentation


@dataclass
class OpStats:
    """Per-thread counters for chopped kernel calls and overflow events.

    An overflow event is a kernel call whose inputs were all finite but
    whose output contains a non-finite value.
    """

    dot_calls: int = 0
    spmv_calls: int = 0
    ew_calls: int = 0
    scalar_calls: int = 0
    dot_overflows: int = 0
    spmv_overflows: int = 0
    ew_overflows: int = 0

    def reset(self) -> None:
        for f in fields(self):
            setattr(self, f.name, 0)

    def snapshot(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_tls = threading.local()


def op_stats() -> OpStats:
    """Return the calling thread's counter instance (created on first use)."""
    stats = getattr(_tls, "stats", None)
    if stats is None:
        stats = OpStats()
        _tls.stats = stats
    return stats


# ---------------------------------------------------------------------------
# chopping


def chop(x, fmt: FloatFormat) -> np.ndarray:
    """Round an array of float64 values to the nearest values in ``fmt``.

    NaN and +-inf pass through; magnitudes beyond the overflow threshold
    round to signed infinity per the IEEE nearest-rounding rule; values
    below the subnormal grid round to signed zero.  The result is always
    representable in ``fmt`` (chopping is idempotent).
    """
    a = np.asarray(x, dtype=np.float64)
    if fmt.passthrough:
        return a.copy()

    t = fmt.significand_bits
    out = a.copy()
    work = np.isfinite(a) & (a != 0.0)
    if not work.any():
        return out
    v = a[work]

    # |v| = m * 2^e with m in [0.5, 1), so the unbiased exponent is e - 1.
    _, e = np.frexp(v)
    ulp_exp = np.maximum(e - 1, fmt.min_exponent) - (t - 1)
    scale = np.ldexp(1.0, ulp_exp)
    # v/scale is exact (power-of-two scaling), np.rint ties to even, and
    # the integer result times scale is again exact.
    y = np.rint(v / scale) * scale

    # Values at or above 2^e_max * (2 - 2^-t) round away to infinity.
    over_threshold = math.ldexp(2.0 - math.ldexp(1.0, -t), fmt.max_exponent)
    over = np.abs(v) >= over_threshold
    if over.any():
        y[over] = np.copysign(np.inf, v[over])

    if not fmt.supports_subnormals:
        tiny = (y != 0.0) & (np.abs(y) < fmt.smallest_normal)
        if tiny.any():
            y[tiny] = np.copysign(0.0, y[tiny])

    out[work] = y
    return out


def chop_scalar(x: float, fmt: FloatFormat) -> float:
    """Round a single working-precision value to ``fmt`` (ties to even)."""
    op_stats().scalar_calls += 1
    return float(chop(np.asarray(x, dtype=np.float64), fmt))


_EW_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}


def chopped_ew(op: str, x, y, fmt: FloatFormat) -> np.ndarray:
    """Elementwise add/sub/mul/div with exactly one rounding per element.

    Operands must already be representable in ``fmt`` (callers chop their
    inputs on entry).  Scalars broadcast against vectors.
    """
    try:
        ufunc = _EW_OPS[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim and ya.ndim and xa.shape != ya.shape:
        raise DimensionError(f"elementwise operands disagree: {xa.shape} vs {ya.shape}")
    stats = op_stats()
    stats.ew_calls += 1
    with np.errstate(all="ignore"):
        raw = ufunc(xa, ya)
    res = chop(raw, fmt)
    if np.isfinite(xa).all() and np.isfinite(ya).all() and not np.isfinite(res).all():
        stats.ew_overflows += 1
    return res


def _blocked_chop_sum(z: np.ndarray, fmt: FloatFormat, block: int) -> np.ndarray:
    """Row-wise chopped summation of a (rows, width) array of addends.

    Each row is summed left to right within blocks of ``block`` entries
    (chop after every addition), then the block partial sums are combined
    sequentially.  Rows may be zero-padded: adding exact zeros neither
    changes a representable partial sum nor its rounding.
    """
    rows, width = z.shape
    if width == 0:
        return np.zeros(rows)
    nblocks = -(-width // block)
    if nblocks == 1:
        cols = np.ascontiguousarray(z.T)
        s = np.zeros(rows)
        if fmt.passthrough:
            for i in range(width):
                s += cols[i]
            return s
        for i in range(width):
            s = chop(s + cols[i], fmt)
        return s

    padded = np.zeros((rows, nblocks * block))
    padded[:, :width] = z
    # steps[i] holds addend i of every block: shape (block, rows, nblocks)
    steps = np.ascontiguousarray(padded.reshape(rows, nblocks, block).transpose(2, 0, 1))
    s = np.zeros((rows, nblocks))
    if fmt.passthrough:
        for i in range(block):
            s += steps[i]
    else:
        for i in range(block):
            s = chop(s + steps[i], fmt)
    total = s[:, 0].copy()
    if fmt.passthrough:
        for j in range(1, nblocks):
            total += s[:, j]
        return total
    for j in range(1, nblocks):
        total = chop(total + s[:, j], fmt)
    return total


def chopped_dot(x, y, fmt: FloatFormat, cfg: BlockedReduceConfig) -> float:
    """Chopped inner product: chop the elementwise products once, then sum
    them blockwise with a chop after every addition.

    Inputs must already be representable in ``fmt``.  An empty product
    returns 0.0.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise DimensionError(f"dot operands disagree: {xa.shape} vs {ya.shape}")
    stats = op_stats()
    stats.dot_calls += 1
    if xa.size == 0:
        return 0.0
    with np.errstate(all="ignore"):
        z = chop(xa * ya, fmt)
        res = float(_blocked_chop_sum(z[None, :], fmt, cfg.block_size)[0])
    if math.isfinite(res) is False and np.isfinite(xa).all() and np.isfinite(ya).all():
        stats.dot_overflows += 1
    return res


def chopped_spmv(
    A: "SparseMatrix",
    x,
    fmt: FloatFormat,
    cfg: BlockedReduceConfig,
    transpose: bool = False,
) -> np.ndarray:
    """Chopped sparse matrix-vector product.

    Every output element equals ``chopped_dot`` of the corresponding
    (sparse) row pattern with ``x``; ``transpose=True`` applies the
    transposed matrix under the same contract.  Matrix values and ``x``
    must already be representable in ``fmt``.
    """
    mat = A.transpose() if transpose else A
    xa = np.asarray(x, dtype=np.float64)
    if xa.ndim != 1 or xa.size != mat.n_cols:
        raise DimensionError(
            f"spmv operand has shape {xa.shape}, expected ({mat.n_cols},)"
        )
    stats = op_stats()
    stats.spmv_calls += 1
    with np.errstate(all="ignore"):
        products = chop(mat.values * xa[mat.col_indices], fmt)
        # Gather each row's products into a zero-padded rectangle; the
        # trailing slot of the extended array holds the padding zero.
        ext = np.append(products, 0.0)
        res = _blocked_chop_sum(ext[mat.padded_index()], fmt, cfg.block_size)
    if (
        not np.isfinite(res).all()
        and np.isfinite(mat.values).all()
        and np.isfinite(xa).all()
    ):
        stats.spmv_overflows += 1
    return res


# ---------------------------------------------------------------------------
# roundoff constants


def unit_roundoff(fmt: FloatFormat) -> float:
    """Unit roundoff u = 2^(1-t) of the format.

    fp16: 9.77e-4, fp32: 1.19e-7, fp64: 2.22e-16.
    """
    return math.ldexp(1.0, 1 - fmt.significand_bits)


def gamma_bound(n: int, u: float) -> float:
    """Accumulated-roundoff constant gamma_n = n*u / (1 - n*u).

    Bounds the inner-product error after n rounded operations; use
    floor(log2 n) + 1 in place of n for the blocked/pairwise bound.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    nu = n * u
    if nu >= 1.0:
        raise GammaBoundError(f"gamma undefined: n*u = {nu} >= 1")
    return nu / (1.0 - nu)
