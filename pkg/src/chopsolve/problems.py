"""Synthetic inverse-problem generation.

Two desk-scale test problems with known ground truth: Gaussian image
deblurring (zero boundary conditions) and parallel-beam tomography with
an exact ray-grid traversal matrix.  Both expose the linear model
b = A x + e with relative Gaussian noise, plus rescaling of (A, b) to
keep chopped iterations inside a narrow format's range.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import GeometryError, InvalidScaleError
from .linops import SparseMatrix

__all__ = [
    "ProblemKind",
    "PhantomKind",
    "Problem",
    "phantom",
    "gen_deblur",
    "gen_tomo",
    "add_noise",
    "rescale_problem",
    "ray_pixel_lengths",
    "default_tomo_geometry",
    "MILD_BLUR",
    "write_pgm",
    "write_vector",
    "read_vector",
    "export_problem",
]


class ProblemKind(Enum):
    DEBLUR = "deblur"
    TOMO = "tomo"


class PhantomKind(Enum):
    SHAPES = "shapes"
    DOT = "dot"
    FLAT = "flat"


# "mild" deblurring preset: (blur_sigma, bandwidth)
MILD_BLUR = (1.0, 4)


@dataclass
class Problem:
    """A generated inverse-problem instance with known ground truth.

    ``x_true`` is a flattened row-major grid_n x grid_n image of length
    N = grid_n^2; ``b_exact = A @ x_true`` in working precision; ``b``
    carries the noise realization; ``scale`` is the accumulated (A, b)
    multiplier (1 when unscaled).
    """

    A: SparseMatrix
    x_true: np.ndarray
    b_exact: np.ndarray
    b: np.ndarray
    noise_level: float
    scale: float
    kind: ProblemKind
    grid_n: int


def phantom(kind: PhantomKind, grid_n: int) -> np.ndarray:
    """Deterministic test image with values in [0, 1], flattened row-major."""
    if grid_n < 8:
        raise ValueError("grid_n must be >= 8")
    n = grid_n
    if kind is PhantomKind.FLAT:
        return np.ones(n * n)
    if kind is PhantomKind.DOT:
        img = np.zeros((n, n))
        img[n // 2, n // 2] = 1.0
        return img.ravel()
    # Shapes: painted ellipses and a rectangle on normalized [-1, 1]^2
    # coordinates, tomography-style.
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    X, Y = np.meshgrid(c, c)  # X: column axis, Y: row axis
    img = np.zeros((n, n))
    img[(X / 0.78) ** 2 + (Y / 0.88) ** 2 <= 1.0] = 0.6
    img[((X + 0.18) / 0.32) ** 2 + ((Y + 0.12) / 0.42) ** 2 <= 1.0] = 0.3
    img[((X - 0.28) / 0.18) ** 2 + ((Y - 0.2) / 0.18) ** 2 <= 1.0] = 1.0
    img[(np.abs(X + 0.05) <= 0.14) & (np.abs(Y - 0.45) <= 0.1)] = 0.85
    img[((X + 0.25) / 0.09) ** 2 + ((Y - 0.42) / 0.09) ** 2 <= 1.0] = 0.0
    return img.ravel()


# ---------------------------------------------------------------------------
# deblurring


def _gaussian_kernel_mass(blur_sigma: float, bandwidth: int) -> float:
    """Total mass of the untruncated discrete Gaussian (separable square)."""
    reach = max(bandwidth, int(math.ceil(12.0 * blur_sigma)) + 1)
    i = np.arange(-reach, reach + 1, dtype=np.float64)
    line = np.exp(-(i * i) / (2.0 * blur_sigma * blur_sigma))
    return float(line.sum() ** 2)


def gen_deblur(
    grid_n: int,
    blur_sigma: float = MILD_BLUR[0],
    bandwidth: int = MILD_BLUR[1],
    phantom_kind: PhantomKind = PhantomKind.SHAPES,
) -> Problem:
    """Gaussian blurring operator on a grid_n x grid_n image.

    The kernel exp(-(i^2+j^2)/(2 sigma^2)) is truncated to |i|,|j| <=
    bandwidth and normalized by the full untruncated kernel mass, so
    rows sum to slightly less than 1; boundary condition is zero padding.
    The matrix is N x N, symmetric, with <= (2 bandwidth + 1)^2 nonzeros
    per row.
    """
    if grid_n < 8:
        raise ValueError("grid_n must be >= 8")
    if blur_sigma <= 0:
        raise ValueError("blur_sigma must be positive")
    if bandwidth < 0 or bandwidth >= grid_n:
        raise GeometryError("bandwidth must satisfy 0 <= bandwidth < grid_n")

    n = grid_n
    mass = _gaussian_kernel_mass(blur_sigma, bandwidth)
    rows, cols, vals = [], [], []
    base = np.arange(n)
    for di in range(-bandwidth, bandwidth + 1):
        r = base[(base + di >= 0) & (base + di < n)]
        for dj in range(-bandwidth, bandwidth + 1):
            w = math.exp(-(di * di + dj * dj) / (2.0 * blur_sigma * blur_sigma)) / mass
            if w == 0.0:
                continue
            c = base[(base + dj >= 0) & (base + dj < n)]
            rr, cc = np.meshgrid(r, c, indexing="ij")
            rows.append((rr * n + cc).ravel())
            cols.append(((rr + di) * n + (cc + dj)).ravel())
            vals.append(np.full(rr.size, w))
    A = SparseMatrix.from_coo(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (n * n, n * n)
    )
    x_true = phantom(phantom_kind, n)
    b_exact = A.matvec(x_true)
    return Problem(A, x_true, b_exact, b_exact.copy(), 0.0, 1.0, ProblemKind.DEBLUR, n)


# ---------------------------------------------------------------------------
# tomography


def ray_pixel_lengths(grid_n: int, theta: float, offset: float):
    """Exact traversal of one parallel-beam ray through the pixel grid.

    The grid of unit pixels covers [0, n] x [0, n]; the ray has direction
    (cos theta, sin theta) and passes through center + offset * normal.
    Returns (pixel_indices, lengths) with row-major pixel indices; both
    empty when the ray misses the grid.
    """
    n = grid_n
    d = (math.cos(theta), math.sin(theta))
    p0 = (n / 2.0 - offset * math.sin(theta), n / 2.0 + offset * math.cos(theta))

    s_lo, s_hi = -math.inf, math.inf
    for axis in (0, 1):
        if d[axis] != 0.0:
            a = (0.0 - p0[axis]) / d[axis]
            b = (n - p0[axis]) / d[axis]
            s_lo = max(s_lo, min(a, b))
            s_hi = min(s_hi, max(a, b))
        elif not (0.0 <= p0[axis] <= n):
            return np.empty(0, dtype=np.int64), np.empty(0)
    if not (s_lo < s_hi) or not math.isfinite(s_lo) or not math.isfinite(s_hi):
        return np.empty(0, dtype=np.int64), np.empty(0)

    crossings = [np.array([s_lo, s_hi])]
    lines = np.arange(n + 1, dtype=np.float64)
    for axis in (0, 1):
        if d[axis] != 0.0:
            s = (lines - p0[axis]) / d[axis]
            crossings.append(s[(s > s_lo) & (s < s_hi)])
    ss = np.unique(np.concatenate(crossings))
    if ss.size < 2:
        return np.empty(0, dtype=np.int64), np.empty(0)

    mids = 0.5 * (ss[:-1] + ss[1:])
    lens = np.diff(ss)
    px = np.floor(p0[0] + mids * d[0]).astype(np.int64)
    py = np.floor(p0[1] + mids * d[1]).astype(np.int64)
    ok = (lens > 0) & (px >= 0) & (px < n) & (py >= 0) & (py < n)
    if not ok.any():
        return np.empty(0, dtype=np.int64), np.empty(0)
    pix = py[ok] * n + px[ok]
    uniq, inv = np.unique(pix, return_inverse=True)
    return uniq, np.bincount(inv, weights=lens[ok])


def default_tomo_geometry(grid_n: int) -> tuple[int, int]:
    """Default (n_angles, n_detectors): angles covering [0, 180) one per
    grid row, detectors spanning the grid diagonal."""
    return grid_n, int(math.ceil(math.sqrt(2.0) * grid_n))


def gen_tomo(
    grid_n: int,
    n_angles: int | None = None,
    n_detectors: int | None = None,
    phantom_kind: PhantomKind = PhantomKind.SHAPES,
) -> Problem:
    """Parallel-beam tomography matrix with exact intersection lengths.

    Angles are equispaced over [0, 180) degrees; detector offsets are the
    centers of n_detectors equal bins across the grid diagonal.  Row
    (angle, detector) holds the lengths of that ray's pixel crossings;
    m = n_angles * n_detectors.
    """
    if grid_n < 8:
        raise ValueError("grid_n must be >= 8")
    defaults = default_tomo_geometry(grid_n)
    n_angles = defaults[0] if n_angles is None else n_angles
    n_detectors = defaults[1] if n_detectors is None else n_detectors
    if n_angles < 1 or n_detectors < 1:
        raise ValueError("n_angles and n_detectors must be >= 1")

    n = grid_n
    diag = math.sqrt(2.0) * n
    offsets = (np.arange(n_detectors) + 0.5) * (diag / n_detectors) - diag / 2.0
    thetas = np.deg2rad(np.arange(n_angles) * (180.0 / n_angles))

    rows, cols, vals = [], [], []
    for a, theta in enumerate(thetas):
        for dd, off in enumerate(offsets):
            pix, lens = ray_pixel_lengths(n, float(theta), float(off))
            if pix.size:
                rows.append(np.full(pix.size, a * n_detectors + dd, dtype=np.int64))
                cols.append(pix)
                vals.append(lens)
    m = n_angles * n_detectors
    if rows:
        A = SparseMatrix.from_coo(
            np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (m, n * n)
        )
    else:
        A = SparseMatrix(m, n * n, np.zeros(m + 1, dtype=np.int64), [], [])
    x_true = phantom(phantom_kind, n)
    b_exact = A.matvec(x_true)
    return Problem(A, x_true, b_exact, b_exact.copy(), 0.0, 1.0, ProblemKind.TOMO, n)


# ---------------------------------------------------------------------------
# noise and rescaling


def add_noise(P: Problem, level: float, seed: int) -> Problem:
    """Add white Gaussian noise with ||e|| = level * ||b_exact|| exactly.

    Deterministic given the seed; level 0 returns b == b_exact.
    """
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    if level == 0.0:
        return replace(P, b=P.b_exact.copy(), noise_level=0.0)
    e = np.random.default_rng(seed).standard_normal(P.b_exact.size)
    norm = np.linalg.norm(e)
    if norm == 0.0:
        raise RuntimeError("degenerate zero noise draw")
    e *= level * np.linalg.norm(P.b_exact) / norm
    return replace(P, b=P.b_exact + e, noise_level=level)


def rescale_problem(P: Problem, s: float) -> Problem:
    """Multiply A and both right-hand sides by s; x_true is unchanged.

    Shrinks intermediate magnitudes to delay overflow in narrow formats
    without changing the exact-arithmetic iterate trajectory.
    """
    if s <= 0:
        raise InvalidScaleError("scale factor must be positive")
    return replace(
        P,
        A=P.A.with_values(P.A.values * s),
        b_exact=P.b_exact * s,
        b=P.b * s,
        scale=P.scale * s,
    )


# ---------------------------------------------------------------------------
# file formats


def write_pgm(path: str | Path, vec: np.ndarray, grid_n: int) -> None:
    """8-bit binary PGM of an image-shaped vector, min-max scaled to 0..255."""
    img = np.asarray(vec, dtype=np.float64).reshape(grid_n, grid_n)
    lo = float(img.min())
    hi = float(img.max())
    if hi > lo:
        scaled = np.rint((img - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(img)
    data = scaled.astype(np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid_n} {grid_n}\n255\n".encode("ascii"))
        fh.write(data)


_VEC_MAGIC = b"CSVEC1\x00\x00"


def write_vector(path: str | Path, vec: np.ndarray) -> None:
    """Little-endian float64 array with an 8-byte magic + uint64 length header."""
    vec = np.asarray(vec, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_VEC_MAGIC)
        fh.write(struct.pack("<Q", vec.size))
        fh.write(vec.astype("<f8").tobytes())


def read_vector(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _VEC_MAGIC:
            raise ValueError("not a chopsolve vector file")
        (count,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(count * 8), dtype="<f8")
        if data.size != count:
            raise ValueError("truncated vector file")
        return data.astype(np.float64)


def export_problem(P: Problem, out_dir: str | Path) -> list[Path]:
    """Write A (Matrix Market), the vectors, and PGMs of image-shaped data."""
    from .linops import write_matrix_market

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    mtx = out / "A.mtx"
    write_matrix_market(P.A, str(mtx))
    written.append(mtx)
    for name, vec in (("x_true", P.x_true), ("b_exact", P.b_exact), ("b", P.b)):
        p = out / f"{name}.vec"
        write_vector(p, vec)
        written.append(p)
    pgm = out / "x_true.pgm"
    write_pgm(pgm, P.x_true, P.grid_n)
    written.append(pgm)
    if P.b.size == P.grid_n * P.grid_n:
        pgm = out / "b.pgm"
        write_pgm(pgm, P.b, P.grid_n)
        written.append(pgm)
    return written
