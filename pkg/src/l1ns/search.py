"""Nearest-subspace search through Cauchy sketches.

Preprocessing draws one sketch matrix P_t per trial and stores the
orthonormalized projections P_t B_i. A query is projected with each P_t,
ranked against every sketched subspace, and the n_back best per trial are
pooled into a candidate set. With ``verify`` the candidates are re-ranked
by their exact ambient l1 distance.
"""
from __future__ import annotations

import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _backend
from .cauchy import RngSpec, SketchMatrix, sample_sketch
from .core import (
    DimensionError,
    DistanceRecord,
    RankDeficientError,
    SubspaceCollection,
    orthonormalize,
    query_values,
)
from .formats import FormatError, matrix_to_bytes, read_matrix_stream
from .l1_solver import DEFAULT_OPTIONS, SolverOptions, snap_zero


def suggest_dimension(r: int, n: int, alpha: float = 0.9) -> int:
    """Sketch dimension ``ceil((r ln n) ** (1 / alpha))``.

    The order bound d ~ (r log n)^(1/alpha) with leading constant 1 and the
    natural log; with alpha near 1 and r=9, n=38 this gives 33.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    if n <= r:
        raise ValueError(f"the dimension rule assumes more subspaces than their rank (n > r), got n={n}, r={r}")
    return math.ceil((r * math.log(n)) ** (1.0 / alpha))


@dataclass(frozen=True)
class SearchConfig:
    """Search parameters.

    ``identity_sketch`` is a test hook: every trial uses P = I_D, which
    requires ``d == D``.
    """

    d: int
    trials: int = 1
    n_back: int = 1
    alpha: float = 0.9
    seed: int = 0
    sketch_solver: SolverOptions = DEFAULT_OPTIONS
    ambient_solver: SolverOptions = DEFAULT_OPTIONS
    verify: bool = False
    identity_sketch: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.n_back < 1:
            raise ValueError(f"n_back must be >= 1, got {self.n_back}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError(f"seed must be in [0, 2**64), got {self.seed}")

    def check_against(self, n: int, D: int):
        if self.n_back > n:
            raise ValueError(f"n_back={self.n_back} exceeds the number of subspaces n={n}")
        if self.identity_sketch:
            if self.d != D:
                raise ValueError(f"identity sketch needs d == D, got d={self.d}, D={D}")
        elif self.d >= D:
            raise ValueError(f"sketch dimension d={self.d} must be smaller than D={D}")


@dataclass(frozen=True)
class SketchedIndex:
    """Sketch matrices and projected bases for T trials over n subspaces.

    ``sketched_bases`` has shape ``(T, n, d, min(r, d))``. When d <= r every
    projected subspace is all of R^d and all sketched distances are zero.
    ``ambient`` optionally carries the original ``(n, D, r)`` bases for
    verification.
    """

    sketches: tuple
    sketched_bases: np.ndarray
    n: int
    D: int
    r: int
    seed: int
    alpha: float
    n_back: int
    ambient: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def trials(self) -> int:
        return len(self.sketches)

    @property
    def d(self) -> int:
        return self.sketches[0].d

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(INDEX_MAGIC)
        out.write(struct.pack("<I", INDEX_VERSION))
        out.write(struct.pack("<5Q", self.n, self.D, self.r, self.trials, self.d))
        out.write(struct.pack("<QdQ", self.seed, self.alpha, self.n_back))
        for s in self.sketches:
            out.write(matrix_to_bytes(s.P))
        for t in range(self.trials):
            for i in range(self.n):
                out.write(matrix_to_bytes(self.sketched_bases[t, i]))
        # trailing section: ambient bases for verification (count 0 or n)
        if self.ambient is None:
            out.write(struct.pack("<Q", 0))
        else:
            out.write(struct.pack("<Q", self.n))
            for i in range(self.n):
                out.write(matrix_to_bytes(self.ambient[i]))
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "SketchedIndex":
        f = io.BytesIO(data)
        if f.read(len(INDEX_MAGIC)) != INDEX_MAGIC:
            raise FormatError("not an l1ns index file (bad magic)")
        (version,) = _unpack(f, "<I")
        if version != INDEX_VERSION:
            raise FormatError(f"unsupported index version {version}")
        n, D, r, T, d = _unpack(f, "<5Q")
        seed, alpha, n_back = _unpack(f, "<QdQ")
        rs = min(r, d)
        sketches = []
        for t in range(T):
            P = read_matrix_stream(f)
            if P.shape != (d, D):
                raise FormatError(f"sketch {t} has shape {P.shape}, expected {(d, D)}")
            sketches.append(SketchMatrix(P, RngSpec(seed, t)))
        bases = np.empty((T, n, d, rs))
        for t in range(T):
            for i in range(n):
                M = read_matrix_stream(f)
                if M.shape != (d, rs):
                    raise FormatError(f"sketched basis ({t}, {i}) has shape {M.shape}, expected {(d, rs)}")
                bases[t, i] = M
        (count,) = _unpack(f, "<Q")
        ambient = None
        if count:
            if count != n:
                raise FormatError(f"index stores {count} ambient bases, expected {n}")
            ambient = np.stack([read_matrix_stream(f) for _ in range(n)])
            if ambient.shape != (n, D, r):
                raise FormatError(f"ambient bases have shape {ambient.shape}, expected {(n, D, r)}")
        if f.read(1):
            raise FormatError("trailing bytes after index")
        return cls(tuple(sketches), bases, n, D, r, seed, alpha, n_back, ambient)

    def save(self, path):
        from .formats import atomic_write

        atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "SketchedIndex":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


INDEX_MAGIC = b"L1NSIDX"
INDEX_VERSION = 1


def _unpack(f, fmt):
    size = struct.calcsize(fmt)
    data = f.read(size)
    if len(data) != size:
        raise FormatError("truncated index file")
    return struct.unpack(fmt, data)


def build_index(collection: SubspaceCollection, config: SearchConfig,
                keep_ambient: bool = True) -> SketchedIndex:
    """Sample one sketch per trial (streams 0..T-1) and project every basis."""
    n, D, r = collection.n, collection.ambient_dim, collection.rank
    config.check_against(n, D)
    d = config.d
    rs = min(r, d)
    sketches = []
    bases = np.empty((config.trials, n, d, rs))
    for t in range(config.trials):
        if config.identity_sketch:
            sk = SketchMatrix.identity(D)
        else:
            sk = sample_sketch(RngSpec(config.seed, t), d, D)
        sketches.append(sk)
        for i, model in enumerate(collection.models):
            projected = sk.P @ model.basis
            if rs == r:
                try:
                    bases[t, i] = orthonormalize(projected)
                except RankDeficientError as exc:
                    raise RankDeficientError(
                        f"trial {t}: projection of subspace {i} lost rank ({exc})", column=exc.column) from None
            else:
                s = np.linalg.svd(projected, compute_uv=False)
                if s[d - 1] <= 1e-10 * s[0]:
                    raise RankDeficientError(f"trial {t}: projection of subspace {i} does not span R^{d}")
                bases[t, i] = np.eye(d)
    bases.setflags(write=False)
    ambient = collection.stacked() if keep_ambient else None
    return SketchedIndex(tuple(sketches), bases, n, D, r, config.seed, config.alpha, config.n_back, ambient)


@dataclass(frozen=True)
class QueryResult:
    """Ranked answer to one query.

    ``records`` are sorted ascending by distance, ties by id. They hold
    ambient distances when ``verified``, otherwise the smallest sketched
    distance over trials (coefficients then refer to the sketched basis of
    the trial that attained it). ``sketched_distances`` is ``(T, n)`` or
    None for exhaustive search. ``flagged`` lists subspaces whose solve hit
    the iteration cap and are ranked by their best upper bound.
    """

    records: tuple
    verified: bool
    candidates: tuple = ()
    sketched_distances: Optional[np.ndarray] = field(default=None, repr=False)
    flagged: tuple = ()

    @property
    def winner_id(self) -> int:
        return self.records[0].subspace_id

    @property
    def distances(self) -> np.ndarray:
        return np.array([rec.distance for rec in self.records])

    @property
    def gap_eta(self) -> float:
        """xi_2 / xi_1 of the ranking; +inf when xi_1 is zero or only one entry exists."""
        if len(self.records) < 2:
            return math.inf
        return gap_statistic(self, 2)

    @property
    def eta_degenerate(self) -> bool:
        return len(self.records) < 2 or self.records[0].distance == 0.0

    def sketched_gap(self) -> float:
        """Gap of the per-subspace minimum sketched distance over trials."""
        if self.sketched_distances is None:
            return self.gap_eta
        best = np.sort(self.sketched_distances.min(axis=0))
        return math.inf if best[0] == 0.0 else float(best[1] / best[0])


def gap_statistic(result: QueryResult, k_prime: int) -> float:
    """``xi_{k'} / xi_1`` over the ranked distances (+inf if xi_1 is zero)."""
    if k_prime < 2:
        raise ValueError(f"k_prime must be >= 2, got {k_prime}")
    if len(result.records) < k_prime:
        raise ValueError(f"ranking has {len(result.records)} entries, need at least {k_prime}")
    first = result.records[0].distance
    if first == 0.0:
        return math.inf
    return result.records[k_prime - 1].distance / first


def _rank(records) -> tuple:
    return tuple(sorted(records, key=lambda rec: (rec.distance, rec.subspace_id)))


def _solve_against(q, bases, opts):
    """Solve q against each basis in an (k, m, r) stack; raw arrays."""
    k = bases.shape[0]
    Q = np.ascontiguousarray(np.broadcast_to(q, (k, q.shape[0])))
    coeffs, obj, lower, iters, status = _backend.lad_solve_batch(
        Q, np.ascontiguousarray(bases), float(opts.tolerance), int(opts.max_iterations),
        float(opts.perturbation))
    return coeffs, snap_zero(obj, Q), lower, iters, status


def _ambient_records(q, bases, ids, opts):
    coeffs, obj, _, _, status = _solve_against(q, bases, opts)
    if (status < 0).any():
        raise RankDeficientError("ambient basis is rank-deficient")
    return [DistanceRecord(int(i), float(obj[k]), coeffs[k], bool(status[k] == 1))
            for k, i in enumerate(ids)]


def query_exhaustive(collection: SubspaceCollection, q, opts: SolverOptions = DEFAULT_OPTIONS) -> QueryResult:
    """Rank every subspace by its exact ambient l1 distance."""
    values = query_values(q)
    if values.shape[0] != collection.ambient_dim:
        raise DimensionError(f"query has length {values.shape[0]}, collection lives in R^{collection.ambient_dim}")
    records = _ambient_records(values, collection.stacked(), range(collection.n), opts)
    flagged = tuple(rec.subspace_id for rec in records if not rec.converged)
    return QueryResult(_rank(records), verified=True, candidates=tuple(range(collection.n)), flagged=flagged)


def query_sketched(index: SketchedIndex, q, config: SearchConfig,
                   collection: Optional[SubspaceCollection] = None) -> QueryResult:
    """Answer a query in sketch space, optionally verifying candidates in R^D.

    Verification uses the ambient bases stored in the index, or
    ``collection`` when given.
    """
    values = query_values(q)
    if values.shape[0] != index.D:
        raise DimensionError(f"query has length {values.shape[0]}, index expects D={index.D}")
    if config.n_back > index.n:
        raise ValueError(f"n_back={config.n_back} exceeds the number of subspaces n={index.n}")
    T, n = index.trials, index.n
    d, rs = index.sketched_bases.shape[2], index.sketched_bases.shape[3]
    ids = np.arange(n)
    dist = np.zeros((T, n))
    coeffs = np.zeros((T, n, rs))
    converged = np.ones((T, n), dtype=bool)
    candidates = set()
    for t, sk in enumerate(index.sketches):
        pq = sk.P @ values
        if rs < d:
            c, obj, _, _, status = _solve_against(pq, index.sketched_bases[t], config.sketch_solver)
            dist[t], coeffs[t], converged[t] = obj, c, status == 1
        else:
            coeffs[t] = index.sketched_bases[t].transpose(0, 2, 1) @ pq
        order = np.lexsort((ids, dist[t]))
        candidates.update(int(i) for i in order[: config.n_back])
    cand = tuple(sorted(candidates))

    if config.verify:
        if collection is not None:
            ambient = collection.stacked()
        elif index.ambient is not None:
            ambient = index.ambient
        else:
            raise ValueError("verification needs the ambient bases: pass collection= or build with keep_ambient")
        records = _ambient_records(values, ambient[list(cand)], cand, config.ambient_solver)
        flagged = tuple(rec.subspace_id for rec in records if not rec.converged)
    else:
        records = []
        for i in cand:
            t = int(np.argmin(dist[:, i]))
            records.append(DistanceRecord(i, float(dist[t, i]), coeffs[t, i], bool(converged[t, i])))
        flagged = tuple(i for i in cand if not converged[:, i].all())
    dist.setflags(write=False)
    return QueryResult(_rank(records), verified=config.verify, candidates=cand,
                       sketched_distances=dist, flagged=flagged)


def map_queries(fn, queries, threads: Optional[int] = None) -> list:
    """``[fn(q) for q in queries]``, spread over ``threads`` workers, order kept."""
    queries = list(queries)
    if not threads or threads <= 1 or len(queries) <= 1:
        return [fn(q) for q in queries]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, queries))


def with_d(config: SearchConfig, d: int, seed: Optional[int] = None) -> SearchConfig:
    return replace(config, d=d, seed=config.seed if seed is None else seed)
