"""Reduced-precision emulation and regularized iterative solvers for
ill-posed inverse problems."""

from .errors import (
    ChopsolveError,
    ConfigError,
    DimensionError,
    GammaBoundError,
    GeometryError,
    InvalidScaleError,
    SingularSystemError,
    SpectralBoundError,
)
from .linops import (
    LinearOperator,
    SparseMatrix,
    SparseOperator,
    TikhonovOperator,
    augmented_rhs,
    direct_tikhonov_solve,
    estimate_sigma_bounds,
    filter_factor,
    read_matrix_market,
    tikhonov_augment,
    write_matrix_market,
)
from .precision import (
    FORMATS,
    BlockedReduceConfig,
    FloatFormat,
    OpStats,
    Rounding,
    chop,
    chop_scalar,
    chopped_dot,
    chopped_ew,
    chopped_spmv,
    gamma_bound,
    get_format,
    op_stats,
    unit_roundoff,
)
from .problems import (
    MILD_BLUR,
    PhantomKind,
    Problem,
    ProblemKind,
    add_noise,
    export_problem,
    gen_deblur,
    gen_tomo,
    phantom,
    ray_pixel_lengths,
    rescale_problem,
)
from .solvers import (
    IterationRecord,
    SolveResult,
    SolverConfig,
    Termination,
    cgls,
    chebyshev_si,
    cs_coefficients,
    cs_iteration_count,
    history_to_csv,
)

__version__ = "0.1.0"
