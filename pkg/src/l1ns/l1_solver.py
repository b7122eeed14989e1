"""Least absolute deviations: ``min_v |q - B v|_1``.

The solve itself lives in the compiled kernel (or its numpy twin): a
primal-dual interior-point method on the LP epigraph form with a final
vertex polish. Coefficients are not unique in degenerate problems; the
objective is.
"""
from __future__ import annotations

import enum
import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from . import _backend
from .core import (
    DimensionError,
    DistanceRecord,
    RankDeficientError,
    SubspaceModel,
    as_matrix,
    as_vector,
    query_values,
)


class Status(enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-9
    max_iterations: int = 200
    perturbation: float = 1e-12

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.perturbation < 0:
            raise ValueError(f"perturbation must be nonnegative, got {self.perturbation}")


DEFAULT_OPTIONS = SolverOptions()

# objectives this small relative to |q|_1 are rounding residue of an exact fit
ZERO_RTOL = 1e-11


def snap_zero(obj, Q):
    """Replace objectives at or below ``ZERO_RTOL * |q|_1`` by exact zeros."""
    obj = np.array(obj, dtype=np.float64)
    obj[obj <= ZERO_RTOL * np.abs(Q).sum(axis=-1)] = 0.0
    return obj


@dataclass(frozen=True)
class L1Solution:
    """Result of one LAD solve.

    ``objective`` is recomputed from ``coeffs`` on the unperturbed data and
    ``lower_bound`` is the dual objective, so the true optimum lies in
    ``[lower_bound, objective]``. Objectives below ``ZERO_RTOL * |q|_1``
    are reported as exactly 0.
    """

    coeffs: np.ndarray
    objective: float
    lower_bound: float
    iterations: int
    status: Status

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


def _check_full_rank(B):
    s = np.linalg.svd(B, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= 1e-10 * s[0]:
        raise RankDeficientError(f"B ({B.shape[0]}x{B.shape[1]}) is not of full column rank")


def solve_l1(q, B, opts: SolverOptions = DEFAULT_OPTIONS) -> L1Solution:
    """Solve ``min_v |q - B v|_1`` for ``q`` of length m and ``B`` of shape (m, r), m > r."""
    q = as_vector(q, "q")
    B = as_matrix(B, "B")
    m, r = B.shape
    if q.shape[0] != m:
        raise DimensionError(f"q has length {q.shape[0]} but B has shape {B.shape}")
    if not (m > r >= 1):
        raise DimensionError(f"need m > r >= 1, got B of shape {B.shape}")
    _check_full_rank(B)
    return solve_many(q[None, :], B[None, :, :], opts)[0]


def solve_many(Q, Bs, opts: SolverOptions = DEFAULT_OPTIONS) -> list[L1Solution]:
    """Batched solve without input validation (callers guarantee shapes and rank).

    ``Q`` is ``(k, m)`` and ``Bs`` is ``(k, m, r)``.
    """
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    Bs = np.ascontiguousarray(Bs, dtype=np.float64)
    coeffs, obj, lower, iters, status = _backend.lad_solve_batch(
        Q, Bs, float(opts.tolerance), int(opts.max_iterations), float(opts.perturbation))
    obj = snap_zero(obj, Q)
    out = []
    for k in range(Bs.shape[0]):
        if status[k] < 0:
            raise RankDeficientError(f"problem {k}: B is not of full column rank")
        out.append(L1Solution(
            coeffs=coeffs[k],
            objective=float(obj[k]),
            lower_bound=float(lower[k]),
            iterations=int(iters[k]),
            status=Status.CONVERGED if status[k] == 1 else Status.MAX_ITERS,
        ))
    return out


class ApproximateOracleWarning(UserWarning):
    """``oracle_l1`` fell back to grid refinement; its value is not exact."""


def oracle_l1(q, B) -> float:
    """Brute-force LAD optimum by vertex enumeration.

    Some optimal v zeroes the residual on r rows of B that are linearly
    independent, so the minimum over all invertible r x r row blocks of the
    interpolating solution (and v = 0) is the exact optimum. Exponential
    in m; meant for m <= 14, r <= 3.
    """
    q = as_vector(q, "q")
    B = as_matrix(B, "B")
    m, r = B.shape
    if q.shape[0] != m:
        raise DimensionError(f"q has length {q.shape[0]} but B has shape {B.shape}")
    if m > 14 or r > 3:
        raise ValueError(f"oracle is limited to m <= 14 and r <= 3, got m={m}, r={r}")
    best = float(np.abs(q).sum())
    found = False
    scale = np.abs(B).max()
    for rows in itertools.combinations(range(m), r):
        A = B[list(rows)]
        if scale == 0.0 or abs(np.linalg.det(A)) <= 1e-12 * scale**r:
            continue
        found = True
        v = np.linalg.solve(A, q[list(rows)])
        best = min(best, float(np.abs(q - B @ v).sum()))
    if not found:
        warnings.warn("all row blocks singular; using grid refinement", ApproximateOracleWarning)
        best = min(best, _grid_refine(q, B))
    return best


def _grid_refine(q, B, points=21, rounds=40):
    v, *_ = np.linalg.lstsq(B, q, rcond=None)
    width = max(np.abs(v).max(), np.abs(q).max(), 1.0)
    r = B.shape[1]
    best_v = v
    best = float(np.abs(q - B @ v).sum())
    axis = np.linspace(-1.0, 1.0, points)
    for _ in range(rounds):
        grids = np.meshgrid(*([axis * width] * r), indexing="ij")
        cand = best_v + np.stack([g.ravel() for g in grids], axis=1)
        vals = np.abs(q[None, :] - cand @ B.T).sum(axis=1)
        k = int(np.argmin(vals))
        if vals[k] < best:
            best, best_v = float(vals[k]), cand[k]
        width *= 0.5
    return best


def distance_to_subspace(q, S: SubspaceModel, opts: SolverOptions = DEFAULT_OPTIONS) -> DistanceRecord:
    """l1 distance from a query to a subspace."""
    values = query_values(q)
    if values.shape[0] != S.ambient_dim:
        raise DimensionError(f"query has length {values.shape[0]}, subspace lives in R^{S.ambient_dim}")
    sol = solve_many(values[None, :], S.basis[None, :, :], opts)[0]
    return DistanceRecord(S.id, sol.objective, sol.coeffs, sol.converged)
