"""Nearest-subspace search in l1 distance by Cauchy random embedding."""
from ._backend import BACKEND
from .cauchy import RngSpec, SketchMatrix, cauchy_quantile, sample_sketch, stability_check
from .core import (
    DistanceRecord,
    QueryVector,
    SubspaceCollection,
    SubspaceModel,
    fit_subspace,
    matvec,
    orthonormalize,
)
from .l1_solver import L1Solution, SolverOptions, distance_to_subspace, oracle_l1, solve_l1
from .search import (
    QueryResult,
    SearchConfig,
    SketchedIndex,
    build_index,
    gap_statistic,
    query_exhaustive,
    query_sketched,
    suggest_dimension,
)

__version__ = "0.1.0"
