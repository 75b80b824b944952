"""Sparse storage, operator abstraction, and Tikhonov augmentation.

The solver modules see only ``LinearOperator``: an apply/apply-transpose
pair evaluated in a chopped-arithmetic context, plus working-precision
variants used for diagnostics and bound estimation.  Regularization
enters solely by stacking a scaled identity under the matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Union

import numpy as np

from . import precision
from .errors import DimensionError, SingularSystemError, SpectralBoundError
from .precision import BlockedReduceConfig, FloatFormat, chop, chopped_ew

__all__ = [
    "SparseMatrix",
    "LinearOperator",
    "SparseOperator",
    "TikhonovOperator",
    "tikhonov_augment",
    "augmented_rhs",
    "estimate_sigma_bounds",
    "direct_tikhonov_solve",
    "filter_factor",
    "write_matrix_market",
    "read_matrix_market",
]

_DENSE_GUARD = 4096


@dataclass(eq=False)
class SparseMatrix:
    """Compressed sparse row matrix in working precision.

    ``row_offsets`` has length ``n_rows + 1`` and is nondecreasing;
    column indices are 0-based, in range, and unique within a row.
    Instances are immutable after construction (the caches below are
    derived data only).
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self._transpose: SparseMatrix | None = None
        self._pad_index: np.ndarray | None = None
        self._row_ids: np.ndarray | None = None
        self.row_offsets = np.asarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(self.col_indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("matrix dimensions must be nonnegative")
        if self.row_offsets.shape != (self.n_rows + 1,):
            raise ValueError("row_offsets must have length n_rows + 1")
        if self.row_offsets[0] != 0 or self.row_offsets[-1] != self.col_indices.size:
            raise ValueError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if self.col_indices.size != self.values.size:
            raise ValueError("col_indices and values must have equal length")
        if self.col_indices.size and (
            self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols
        ):
            raise ValueError("column index out of range")
        for r in range(self.n_rows):
            cols = self.col_indices[self.row_offsets[r] : self.row_offsets[r + 1]]
            if cols.size and np.unique(cols).size != cols.size:
                raise ValueError(f"duplicate column in row {r}")

    # -- construction -------------------------------------------------

    @classmethod
    def from_coo(cls, rows, cols, vals, shape: tuple[int, int]) -> "SparseMatrix":
        """Build from coordinate triplets (sorted row-major, then by column)."""
        n_rows, n_cols = shape
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape):
            raise DimensionError("coordinate arrays must have equal length")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
        return cls(n_rows, n_cols, offsets, cols, vals)

    # -- derived data ---------------------------------------------------

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry (cached)."""
        if self._row_ids is None:
            self._row_ids = np.repeat(np.arange(self.n_rows), self.row_lengths())
        return self._row_ids

    def padded_index(self) -> np.ndarray:
        """(n_rows, max_row_nnz) gather indices into ``values`` extended by
        one zero slot; cached.  Lets row reductions run as one rectangle."""
        if self._pad_index is None:
            lens = self.row_lengths()
            width = int(lens.max()) if lens.size else 0
            idx = np.full((self.n_rows, width), self.nnz, dtype=np.int64)
            if width:
                span = np.arange(width)
                mask = span[None, :] < lens[:, None]
                flat = self.row_offsets[:-1, None] + span[None, :]
                idx[mask] = flat[mask]
            self._pad_index = idx
        return self._pad_index

    def transpose(self) -> "SparseMatrix":
        """Structural transpose as CSR (cached; entries ordered by original row)."""
        if self._transpose is None:
            order = np.argsort(self.col_indices, kind="stable")
            cols_t = self.row_ids()[order]
            vals_t = self.values[order]
            offsets = np.zeros(self.n_cols + 1, dtype=np.int64)
            np.cumsum(np.bincount(self.col_indices, minlength=self.n_cols), out=offsets[1:])
            self._transpose = SparseMatrix(self.n_cols, self.n_rows, offsets, cols_t, vals_t)
            self._transpose._transpose = self
        return self._transpose

    def with_values(self, values: np.ndarray) -> "SparseMatrix":
        """Same sparsity pattern with replaced values (structure shared)."""
        out = SparseMatrix(self.n_rows, self.n_cols, self.row_offsets, self.col_indices, values)
        out._pad_index = self._pad_index
        out._row_ids = self._row_ids
        return out

    # -- working-precision products -------------------------------------

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Plain float64 A @ x (no chopping)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_cols,):
            raise DimensionError(f"matvec operand has shape {x.shape}, expected ({self.n_cols},)")
        return np.bincount(self.row_ids(), weights=self.values * x[self.col_indices], minlength=self.n_rows)

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        """Plain float64 A.T @ x (no chopping)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_rows,):
            raise DimensionError(f"rmatvec operand has shape {x.shape}, expected ({self.n_rows},)")
        return np.bincount(self.col_indices, weights=self.values * x[self.row_ids()], minlength=self.n_cols)

    def to_dense(self) -> np.ndarray:
        if self.n_rows * self.n_cols > _DENSE_GUARD * _DENSE_GUARD:
            raise ValueError("matrix too large to densify")
        dense = np.zeros((self.n_rows, self.n_cols))
        dense[self.row_ids(), self.col_indices] = self.values
        return dense


# ---------------------------------------------------------------------------
# Matrix Market coordinate IO (row-major sorted, 1-based)


def write_matrix_market(A: SparseMatrix, dest: Union[str, IO[str]]) -> None:
    """Write a SparseMatrix in Matrix Market coordinate format."""
    own = isinstance(dest, str)
    fh = open(dest, "w", encoding="ascii") if own else dest
    try:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{A.n_rows} {A.n_cols} {A.nnz}\n")
        rows = A.row_ids()
        for r, c, v in zip(rows, A.col_indices, A.values):
            fh.write(f"{r + 1} {c + 1} {v!r}\n")
    finally:
        if own:
            fh.close()


def read_matrix_market(src: Union[str, IO[str]]) -> SparseMatrix:
    """Read a Matrix Market coordinate file written by :func:`write_matrix_market`."""
    own = isinstance(src, str)
    fh = open(src, "r", encoding="ascii") if own else src
    try:
        header = fh.readline()
        if "matrixmarket" not in header.lower() or "coordinate" not in header.lower():
            raise ValueError("not a Matrix Market coordinate file")
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        n_rows, n_cols, nnz = (int(tok) for tok in line.split())
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        for i in range(nnz):
            r, c, v = fh.readline().split()
            rows[i], cols[i], vals[i] = int(r) - 1, int(c) - 1, float(v)
        return SparseMatrix.from_coo(rows, cols, vals, (n_rows, n_cols))
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------------------
# operators


class LinearOperator:
    """Apply/apply-transpose pair with dimensions.

    ``apply``/``apply_transpose`` run in the chopped-arithmetic context
    given by (fmt, cfg); the ``*_working`` variants are plain float64 and
    are used only for diagnostics and setup.
    """

    n_rows: int
    n_cols: int

    def apply(self, x: np.ndarray, fmt: FloatFormat, cfg: BlockedReduceConfig) -> np.ndarray:
        raise NotImplementedError

    def apply_transpose(self, x: np.ndarray, fmt: FloatFormat, cfg: BlockedReduceConfig) -> np.ndarray:
        raise NotImplementedError

    def apply_working(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_transpose_working(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SparseOperator(LinearOperator):
    """A sparse matrix as a chopped operator.

    The matrix values are chopped once per format on first use, so the
    "operands already live in low precision" precondition of the chopped
    kernels holds mechanically.
    """

    def __init__(self, A: SparseMatrix):
        self.A = A
        self.n_rows = A.n_rows
        self.n_cols = A.n_cols
        self._chopped: dict[FloatFormat, SparseMatrix] = {}

    def _matrix_for(self, fmt: FloatFormat) -> SparseMatrix:
        if fmt.passthrough:
            return self.A
        mat = self._chopped.get(fmt)
        if mat is None:
            mat = self.A.with_values(chop(self.A.values, fmt))
            self._chopped[fmt] = mat
        return mat

    def apply(self, x, fmt, cfg):
        return precision.chopped_spmv(self._matrix_for(fmt), x, fmt, cfg)

    def apply_transpose(self, x, fmt, cfg):
        return precision.chopped_spmv(self._matrix_for(fmt), x, fmt, cfg, transpose=True)

    def apply_working(self, x):
        return self.A.matvec(x)

    def apply_transpose_working(self, x):
        return self.A.rmatvec(x)


class TikhonovOperator(LinearOperator):
    """Stacked operator [A; lam*I] for Tikhonov-regularized least squares.

    apply(x) = [A x; lam x] of length m + n; apply_transpose([r1; r2]) =
    A^T r1 + lam r2.  The augmented spectrum is sqrt(sigma_i^2 + lam^2).
    """

    def __init__(self, inner: LinearOperator, lam: float):
        if lam < 0:
            raise ValueError("regularization parameter must be nonnegative")
        self.inner = inner
        self.lam = float(lam)
        self.n_rows = inner.n_rows + inner.n_cols
        self.n_cols = inner.n_cols

    def apply(self, x, fmt, cfg):
        top = self.inner.apply(x, fmt, cfg)
        lam_c = self.lam if fmt.passthrough else float(chop(np.float64(self.lam), fmt))
        bottom = chopped_ew("mul", lam_c, x, fmt)
        return np.concatenate([top, bottom])

    def apply_transpose(self, x, fmt, cfg):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_rows,):
            raise DimensionError(f"operand has shape {x.shape}, expected ({self.n_rows},)")
        m = self.inner.n_rows
        t1 = self.inner.apply_transpose(x[:m], fmt, cfg)
        lam_c = self.lam if fmt.passthrough else float(chop(np.float64(self.lam), fmt))
        t2 = chopped_ew("mul", lam_c, x[m:], fmt)
        return chopped_ew("add", t1, t2, fmt)

    def apply_working(self, x):
        return np.concatenate([self.inner.apply_working(x), self.lam * np.asarray(x, dtype=np.float64)])

    def apply_transpose_working(self, x):
        x = np.asarray(x, dtype=np.float64)
        m = self.inner.n_rows
        return self.inner.apply_transpose_working(x[:m]) + self.lam * x[m:]


def tikhonov_augment(A: LinearOperator, lam: float) -> TikhonovOperator:
    """Stack lam*I under the operator; solve with right-hand side [b; 0]."""
    return TikhonovOperator(A, lam)


def augmented_rhs(b: np.ndarray, n_cols: int) -> np.ndarray:
    """Right-hand side [b; 0] matching the augmented operator."""
    b = np.asarray(b, dtype=np.float64)
    return np.concatenate([b, np.zeros(n_cols)])


# ---------------------------------------------------------------------------
# spectral bounds and direct solves


def estimate_sigma_bounds(
    A: LinearOperator,
    lam: float,
    power_iters: int = 100,
    seed: int = 0,
) -> tuple[float, float]:
    """Singular-value bounds of the augmented operator [A; lam*I].

    The largest eigenvalue of A^T A is estimated by a seeded power
    iteration in working precision; the upper bound sqrt(rho + lam^2)
    carries a 5% safety margin because the power method approaches the
    true value from below.  The lower bound is lam itself, valid because
    the augmented singular values are sqrt(sigma_i^2 + lam^2) >= lam.
    """
    if lam <= 0:
        raise SpectralBoundError("lower bound requires lam > 0")
    if power_iters < 1:
        raise ValueError("power_iters must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.n_cols)
    v /= np.linalg.norm(v)
    rho = 0.0
    for _ in range(power_iters):
        w = A.apply_transpose_working(A.apply_working(v))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            rho = 0.0
            break
        rho = float(v @ w)
        v = w / norm
    sigma_u = math.sqrt(max(rho, 0.0) + lam * lam) * 1.05
    return float(lam), sigma_u


def direct_tikhonov_solve(A: SparseMatrix, b: np.ndarray, lam: float) -> np.ndarray:
    """Dense normal-equations solve (A^T A + lam^2 I) x = A^T b.

    Test oracle at small scale only; n_cols is guarded.
    """
    if A.n_cols > _DENSE_GUARD:
        raise ValueError(f"dense oracle limited to n_cols <= {_DENSE_GUARD}")
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.n_rows,):
        raise DimensionError(f"rhs has shape {b.shape}, expected ({A.n_rows},)")
    dense = A.to_dense()
    normal = dense.T @ dense + (lam * lam) * np.eye(A.n_cols)
    try:
        return np.linalg.solve(normal, dense.T @ b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc


def filter_factor(sigma: float, lam: float) -> float:
    """Tikhonov attenuation sigma^2 / (sigma^2 + lam^2) in (0, 1]."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    s2 = sigma * sigma
    return s2 / (s2 + lam * lam)
