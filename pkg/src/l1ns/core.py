"""Domain types and dense linear-algebra primitives.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 (row-major);
the types here only wrap them with the invariants the search relies on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

ORTHO_TOL = 1e-10
RANK_TOL = 1e-10


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class RankDeficientError(ValueError):
    """A matrix that must have full column rank does not."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


def as_matrix(a, name="matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError(f"{name} has non-finite entries")
    return m


def as_vector(x, name="vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise ValueError(f"{name} has non-finite entries")
    return v


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def matvec(M, x) -> np.ndarray:
    """Matrix-vector product with an explicit shape check."""
    M = np.asarray(M, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if M.ndim != 2 or x.ndim != 1 or M.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot multiply matrix of shape {M.shape} by vector of shape {x.shape}")
    return M @ x


def orthonormalize(B, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis for the column space of ``B``.

    Modified Gram-Schmidt in fixed column order, with one
    re-orthogonalization pass so that ``Q.T @ Q`` is the identity to
    roughly machine precision even for badly scaled inputs.

    Raises
    ------
    RankDeficientError
        If column ``k`` retains less than ``tol`` of its norm after
        removing the components along columns ``0..k-1``.
    """
    B = as_matrix(B, "B")
    D, r = B.shape
    if r > D:
        raise RankDeficientError(f"{r} columns cannot be independent in dimension {D}", column=D)
    Q = B.copy()
    for k in range(r):
        col = Q[:, k]
        norm0 = np.linalg.norm(col)
        if norm0 == 0.0:
            raise RankDeficientError(f"column {k} is zero", column=k)
        for _ in range(2):
            for j in range(k):
                col -= (Q[:, j] @ col) * Q[:, j]
        norm = np.linalg.norm(col)
        if norm <= tol * norm0:
            raise RankDeficientError(f"column {k} is linearly dependent on columns 0..{k - 1}", column=k)
        Q[:, k] = col / norm
    return Q


@dataclass(frozen=True)
class SubspaceModel:
    """An r-dimensional linear subspace of R^D given by an orthonormal basis."""

    basis: np.ndarray
    id: int = 0

    def __post_init__(self):
        B = as_matrix(self.basis, "basis")
        D, r = B.shape
        if r < 1 or r >= D:
            raise ValueError(f"need 1 <= rank < ambient dimension, got rank {r} in dimension {D}")
        err = np.abs(B.T @ B - np.eye(r)).max()
        if err > ORTHO_TOL:
            raise ValueError(f"basis columns are not orthonormal (max Gram error {err:.3g})")
        object.__setattr__(self, "basis", _frozen(B))

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def from_spanning(cls, B, id: int = 0) -> "SubspaceModel":
        return cls(orthonormalize(B), id=id)


@dataclass(frozen=True)
class SubspaceCollection:
    models: tuple

    def __post_init__(self):
        models = tuple(self.models)
        if len(models) < 2:
            raise ValueError(f"a collection needs at least 2 subspaces, got {len(models)}")
        D, r = models[0].ambient_dim, models[0].rank
        for i, s in enumerate(models):
            if s.id != i:
                raise ValueError(f"subspace ids must be 0..n-1 in order; position {i} has id {s.id}")
            if s.ambient_dim != D or s.rank != r:
                raise DimensionError(
                    f"subspace {i} is {s.rank}-dim in R^{s.ambient_dim}, expected {r}-dim in R^{D}")
        object.__setattr__(self, "models", models)

    @classmethod
    def from_bases(cls, bases: Sequence) -> "SubspaceCollection":
        return cls(tuple(SubspaceModel(b, id=i) for i, b in enumerate(bases)))

    def __len__(self):
        return len(self.models)

    def __getitem__(self, i) -> SubspaceModel:
        return self.models[i]

    @property
    def n(self) -> int:
        return len(self.models)

    @property
    def ambient_dim(self) -> int:
        return self.models[0].ambient_dim

    @property
    def rank(self) -> int:
        return self.models[0].rank

    def stacked(self) -> np.ndarray:
        """All bases as one ``(n, D, r)`` array."""
        return np.stack([s.basis for s in self.models])


@dataclass(frozen=True)
class QueryVector:
    values: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(as_vector(self.values, "query")))

    def __len__(self):
        return self.values.shape[0]


def query_values(q) -> np.ndarray:
    return q.values if isinstance(q, QueryVector) else as_vector(q, "query")


@dataclass(frozen=True)
class DistanceRecord:
    """l1 distance from a query to one subspace, with the minimizing coefficients.

    ``converged`` is False when the solver stopped at its iteration cap; the
    distance is then the best upper bound found.
    """

    subspace_id: int
    distance: float
    coeffs: np.ndarray = field(repr=False)
    converged: bool = True

    def __post_init__(self):
        if not self.distance >= 0.0:
            raise ValueError(f"distance must be nonnegative, got {self.distance}")


def fit_subspace(samples, r: int, id: int = 0) -> SubspaceModel:
    """Fit an r-dim subspace to the columns of a ``D x m`` sample matrix.

    The basis is the top-r left singular vectors, each signed so that its
    largest-magnitude entry is positive.
    """
    X = as_matrix(samples, "samples")
    D, m = X.shape
    if r < 1:
        raise ValueError(f"rank must be >= 1, got {r}")
    if m < r:
        raise ValueError(f"need at least r={r} samples, got {m}")
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    if s[0] == 0.0 or s[r - 1] <= RANK_TOL * s[0]:
        raise RankDeficientError(f"samples have numerical rank below {r}", column=r - 1)
    U = U[:, :r]
    peak = np.argmax(np.abs(U), axis=0)
    U = U * np.sign(U[peak, np.arange(r)])
    return SubspaceModel(U, id=id)
