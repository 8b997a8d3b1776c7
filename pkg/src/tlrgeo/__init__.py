"""Tile low-rank Gaussian-process toolkit for spatial data.

Covariance assembly, spatial orderings, tile low-rank compression and
Cholesky factorization, and Matérn maximum-likelihood estimation.
"""

__version__ = "0.1.0"

from .core import (
    BivariateMaternParams,
    FactorizationError,
    IngestError,
    InvalidArgument,
    LocationSet,
    MaternParams,
    OptimizationError,
    Permutation,
    TghParams,
    TlrError,
    apply_permutation,
    generate_uniform_locations,
)
from .covgen import TiledDenseMatrix, build_covariance, simulate_field
from .kernels import bessel_k, bivariate_matern, matern, tgh_transform
from .mle import MleResult, OptimizerConfig, dense_loglik, fit_matern, identifiable_f, loglik, maximize
from .ordering import order_locations
from .tlr import LowRankTile, RankReport, TlrMatrix, compress_matrix, compress_tile, rank_stats
from .tlr_linalg import TlrCholeskyFactor, logdet, tlr_potrf, tlr_trsv

__all__ = [
    "__version__",
    "BivariateMaternParams", "FactorizationError", "IngestError", "InvalidArgument",
    "LocationSet", "MaternParams", "OptimizationError", "Permutation", "TghParams", "TlrError",
    "apply_permutation", "generate_uniform_locations",
    "TiledDenseMatrix", "build_covariance", "simulate_field",
    "bessel_k", "bivariate_matern", "matern", "tgh_transform",
    "MleResult", "OptimizerConfig", "dense_loglik", "fit_matern", "identifiable_f", "loglik", "maximize",
    "order_locations",
    "LowRankTile", "RankReport", "TlrMatrix", "compress_matrix", "compress_tile", "rank_stats",
    "TlrCholeskyFactor", "logdet", "tlr_potrf", "tlr_trsv",
]
