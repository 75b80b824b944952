"""Iterative solvers running entirely in chopped arithmetic.

Two methods share the same result/diagnostic machinery:

* CGLS - conjugate gradients on the normal equations A^T A x = A^T b,
  applied implicitly.  Needs two inner products per iteration, which is
  where overflow first strikes in narrow formats.
* Chebyshev semi-iterative (CS) - a fixed-coefficient recurrence over a
  known singular-value interval [sigma_L, sigma_U]; performs no inner
  products at all.

Every matvec, inner product, vector update, and scalar coefficient is
chopped; the per-iteration diagnostics (error and residual norms) are
computed in working precision and exempt from chopping.  On the first
non-finite value the solver stops and returns the last fully finite
iterate.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, SpectralBoundError
from .linops import LinearOperator
from .precision import (
    BlockedReduceConfig,
    FloatFormat,
    chop,
    chop_scalar,
    chopped_dot,
    chopped_ew,
)

__all__ = [
    "SolverConfig",
    "IterationRecord",
    "SolveResult",
    "Termination",
    "cgls",
    "chebyshev_si",
    "cs_coefficients",
    "cs_iteration_count",
    "IterationCount",
    "history_to_csv",
]

_ITER_HARD_CAP = 10**6


class Termination(Enum):
    TOLERANCE = "tolerance"
    MAX_ITER = "max-iter"
    NON_FINITE = "non-finite"


@dataclass
class SolverConfig:
    """Arithmetic context and stopping controls shared by both solvers.

    ``tol`` is the CGLS stopping threshold on psi = ||A^T r||^2 (CS takes
    its epsilon explicitly).  ``lam`` is carried for callers that build
    the augmented system; the iterations themselves read only the
    operator.  When ``track_error_against`` is set, relative error norms
    against it are recorded every iteration.
    """

    fmt: FloatFormat
    reduce: BlockedReduceConfig = field(default_factory=BlockedReduceConfig)
    max_iter: int = 100
    tol: float = 0.0
    lam: float = 0.0
    track_error_against: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class IterationRecord:
    """Working-precision diagnostics for one produced iterate."""

    k: int
    rel_error: float | None
    residual_norm: float
    finite: bool


@dataclass
class SolveResult:
    x_final: np.ndarray
    x_best: np.ndarray
    best_iter: int
    history: list[IterationRecord]
    termination: Termination


class _RunState:
    """Shared history/best-iterate bookkeeping for both solvers."""

    def __init__(self, op: LinearOperator, b: np.ndarray, cfg: SolverConfig):
        self.op = op
        self.b = b
        self.cfg = cfg
        self.history: list[IterationRecord] = []
        self.x_best: np.ndarray | None = None
        self.best_iter = 0
        self.best_score = math.inf
        x_true = cfg.track_error_against
        self.x_true = None if x_true is None else np.asarray(x_true, dtype=np.float64)
        self.x_true_norm = None if self.x_true is None else float(np.linalg.norm(self.x_true))

    def record(self, k: int, x: np.ndarray, finite: bool) -> None:
        with np.errstate(all="ignore"):
            residual = float(np.linalg.norm(self.b - self.op.apply_working(x)))
            rel = None
            if self.x_true is not None:
                rel = float(np.linalg.norm(x - self.x_true) / self.x_true_norm)
        self.history.append(IterationRecord(k, rel, residual, finite))
        if finite:
            score = residual if rel is None else rel
            if math.isfinite(score) and score < self.best_score:
                self.best_score = score
                self.best_iter = k
                self.x_best = x.copy()

    def result(self, x_final: np.ndarray, termination: Termination) -> SolveResult:
        x_best = x_final.copy() if self.x_best is None else self.x_best
        return SolveResult(x_final, x_best, self.best_iter, self.history, termination)


def _all_finite(*items) -> bool:
    for item in items:
        if isinstance(item, np.ndarray):
            if not np.isfinite(item).all():
                return False
        elif not math.isfinite(item):
            return False
    return True


def cgls(op: LinearOperator, b: np.ndarray, cfg: SolverConfig) -> SolveResult:
    """Conjugate gradient least squares in chopped arithmetic.

    Starts from x = 0 and iterates until psi = ||A^T r||^2 falls to
    ``cfg.tol``, ``cfg.max_iter`` is reached, or a non-finite value
    appears in {psi, alpha, beta, q, x}.  For a regularized solve pass
    the augmented operator together with the padded right-hand side.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (op.n_rows,):
        raise DimensionError(f"rhs has shape {b.shape}, expected ({op.n_rows},)")
    fmt, red = cfg.fmt, cfg.reduce

    b_c = chop(b, fmt)
    state = _RunState(op, b, cfg)
    x = np.zeros(op.n_cols)
    r = b_c.copy()
    s = op.apply_transpose(r, fmt, red)
    p = s.copy()
    psi = chopped_dot(s, s, fmt, red)
    if not _all_finite(psi, s):
        return state.result(x, Termination.NON_FINITE)

    k = 0
    while True:
        if psi <= cfg.tol:
            return state.result(x, Termination.TOLERANCE)
        if k >= cfg.max_iter:
            return state.result(x, Termination.MAX_ITER)
        q = op.apply(p, fmt, red)
        qq = chopped_dot(q, q, fmt, red)
        with np.errstate(all="ignore"):
            alpha = chop_scalar(psi / qq, fmt)
        x_new = chopped_ew("add", x, chopped_ew("mul", alpha, p, fmt), fmt)
        r = chopped_ew("sub", r, chopped_ew("mul", alpha, q, fmt), fmt)
        s = op.apply_transpose(r, fmt, red)
        psi_new = chopped_dot(s, s, fmt, red)
        with np.errstate(all="ignore"):
            beta = chop_scalar(psi_new / psi, fmt)
        p = chopped_ew("add", s, chopped_ew("mul", beta, p, fmt), fmt)
        k += 1
        finite = _all_finite(psi_new, alpha, beta, q, x_new)
        state.record(k, x_new, finite)
        if not finite:
            return state.result(x, Termination.NON_FINITE)
        x = x_new
        psi = psi_new


class IterationCount(NamedTuple):
    """Iteration count for the Chebyshev recurrence, with a clamp flag."""

    count: int
    clamped: bool


def cs_iteration_count(sigma_lo: float, sigma_hi: float, eps: float) -> IterationCount:
    """K = ceil((log eps - log 2) / log((sU - sL)/(sU + sL))), clamped to
    [1, 10^6]; the recurrence then runs iterations k = 0..K."""
    if not (0.0 < sigma_lo < sigma_hi):
        raise SpectralBoundError("bounds must satisfy 0 < sigma_lo < sigma_hi")
    if not (0.0 < eps < 2.0):
        raise SpectralBoundError("eps must lie in (0, 2)")
    ratio = (sigma_hi - sigma_lo) / (sigma_hi + sigma_lo)
    denom = math.log(ratio)
    if denom == 0.0 or not math.isfinite(denom):
        raise SpectralBoundError(
            f"iteration count overflows: contraction ratio {ratio} rounds to 1"
        )
    raw = (math.log(eps) - math.log(2.0)) / denom
    if not math.isfinite(raw):
        raise SpectralBoundError("iteration count is not finite")
    k = int(math.ceil(raw))
    if 1 <= k <= _ITER_HARD_CAP:
        return IterationCount(k, False)
    return IterationCount(min(max(k, 1), _ITER_HARD_CAP), True)


def cs_coefficients(k: int, c: float, d: float, alpha_prev: float | None = None):
    """Chebyshev recurrence coefficients (alpha, beta) at step k.

    k = 0: (1/d, 0); k = 1: (1/(d - c^2/(2d)), (c/d)^2 / 2); k >= 2:
    (1/(d - alpha_prev c^2/4), (alpha_prev c/2)^2).  The k = 1 alpha is
    the corrected form of the recurrence.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if d <= 0:
        raise SpectralBoundError("d must be positive")
    if k == 0:
        return 1.0 / d, 0.0
    if k == 1:
        denom = d - c * c / (2.0 * d)
        if denom <= 0:
            raise SpectralBoundError("coefficient breakdown: nonpositive denominator")
        return 1.0 / denom, 0.5 * (c / d) ** 2
    if alpha_prev is None:
        raise ValueError("alpha_prev is required for k >= 2")
    denom = d - alpha_prev * c * c / 4.0
    if denom <= 0:
        raise SpectralBoundError("coefficient breakdown: nonpositive denominator")
    return 1.0 / denom, (alpha_prev * c / 2.0) ** 2


def chebyshev_si(
    op: LinearOperator,
    b: np.ndarray,
    sigma_lo: float,
    sigma_hi: float,
    eps: float,
    cfg: SolverConfig,
) -> SolveResult:
    """Chebyshev semi-iterative method in chopped arithmetic.

    Requires singular-value bounds 0 < sigma_lo < sigma_hi covering the
    operator's nonzero spectrum and a tolerance eps in (0, 1).  Runs the
    K+1 iterations prescribed by :func:`cs_iteration_count` (capped by
    ``cfg.max_iter``); the loop performs no inner products.  History and
    termination semantics match :func:`cgls`, with Tolerance reported
    when the full prescribed count completes.
    """
    if not (0.0 < sigma_lo < sigma_hi):
        raise SpectralBoundError("bounds must satisfy 0 < sigma_lo < sigma_hi")
    if not (0.0 < eps < 1.0):
        raise SpectralBoundError("eps must lie in (0, 1)")
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (op.n_rows,):
        raise DimensionError(f"rhs has shape {b.shape}, expected ({op.n_rows},)")
    fmt, red = cfg.fmt, cfg.reduce

    planned = cs_iteration_count(sigma_lo, sigma_hi, eps).count + 1
    s_lo = chop_scalar(sigma_lo, fmt)
    s_hi = chop_scalar(sigma_hi, fmt)
    hi2 = chop_scalar(s_hi * s_hi, fmt)
    lo2 = chop_scalar(s_lo * s_lo, fmt)
    d = chop_scalar(chop_scalar(hi2 + lo2, fmt) / 2.0, fmt)
    c = chop_scalar(chop_scalar(hi2 - lo2, fmt) / 2.0, fmt)

    state = _RunState(op, b, cfg)
    b_c = chop(b, fmt)
    x = np.zeros(op.n_cols)
    v = np.zeros(op.n_cols)
    r = b_c.copy()
    alpha: float | None = None

    for k in range(planned):
        if k >= cfg.max_iter:
            return state.result(x, Termination.MAX_ITER)
        raw_alpha, raw_beta = cs_coefficients(k, c, d, alpha)
        alpha = chop_scalar(raw_alpha, fmt)
        beta = chop_scalar(raw_beta, fmt)
        atr = op.apply_transpose(r, fmt, red)
        v = chopped_ew("add", chopped_ew("mul", beta, v, fmt), atr, fmt)
        x_new = chopped_ew("add", x, chopped_ew("mul", alpha, v, fmt), fmt)
        av = op.apply(v, fmt, red)
        r = chopped_ew("sub", r, chopped_ew("mul", alpha, av, fmt), fmt)
        finite = _all_finite(alpha, beta, v, x_new, r)
        state.record(k + 1, x_new, finite)
        if not finite:
            return state.result(x, Termination.NON_FINITE)
        x = x_new
    return state.result(x, Termination.TOLERANCE)


def history_to_csv(result: SolveResult) -> str:
    """Serialize the iteration history: `iter,rel_error,residual_norm,finite`
    with an empty rel_error field when error tracking was off."""
    buf = io.StringIO()
    buf.write("iter,rel_error,residual_norm,finite\n")
    for rec in result.history:
        rel = "" if rec.rel_error is None else repr(rec.rel_error)
        fin = "true" if rec.finite else "false"
        buf.write(f"{rec.k},{rel},{repr(rec.residual_norm)},{fin}\n")
    return buf.getvalue()
