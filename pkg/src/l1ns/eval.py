"""Experiment harness: synthetic instances, dimension and n_back sweeps,
distortion statistics, and the on-disk dataset layout.

Dataset directory layout::

    manifest.csv          class_id,train_file,test_file  (one line per class)
    <train_file>          training samples as rows (m x D)
    <test_file>           test queries as rows (k x D), may be empty

Matrix files use either format from :mod:`l1ns.formats`.
"""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .cauchy import RngSpec, cauchy_matrix
from .core import (
    DimensionError,
    QueryVector,
    SubspaceCollection,
    SubspaceModel,
    fit_subspace,
    orthonormalize,
    query_values,
)
from .formats import FormatError, atomic_write, load_matrix, matrix_to_bytes, matrix_to_csv
from .l1_solver import DEFAULT_OPTIONS, SolverOptions, distance_to_subspace, solve_many
from .search import SearchConfig, build_index, map_queries, query_exhaustive, query_sketched

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 1000
SWEEP_HEADER = "d,trials,n_back,success_rate,recall,mean_eta,wall_ms"


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit child seed for (seed, keys...)."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SyntheticSpec:
    """Synthetic nearest-subspace instance.

    Queries are a random point of their labelled subspace plus noise
    (sparse corruption on ``corruption_fraction`` of coordinates with scale
    ``corruption_magnitude``, and dense Gaussian noise ``sigma``). The noise
    is then rescaled so the exhaustive gap eta lands in
    ``[target_eta, eta_max]`` (default ``eta_max = 2 * target_eta``); the two
    magnitudes only set the relative weight of the noise parts.
    """

    n: int
    D: int
    r: int
    target_eta: float = 3.0
    queries_per_run: int = 100
    corruption_fraction: float = 0.1
    corruption_magnitude: float = 1.0
    sigma: float = 0.0
    seed: int = 0
    eta_max: Optional[float] = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need n >= 2, got {self.n}")
        if self.r < 1 or self.D <= 2 * self.r:
            raise ValueError(f"need r >= 1 and D > 2r, got D={self.D}, r={self.r}")
        if not self.target_eta > 1:
            raise ValueError(f"target_eta must exceed 1, got {self.target_eta}")
        if not 0 <= self.corruption_fraction < 1:
            raise ValueError(f"corruption_fraction must lie in [0, 1), got {self.corruption_fraction}")
        if self.sigma < 0 or self.corruption_magnitude < 0:
            raise ValueError("noise magnitudes must be nonnegative")
        if self.queries_per_run < 0:
            raise ValueError("queries_per_run must be >= 0")
        if self.eta_max is not None and not self.eta_max > self.target_eta:
            raise ValueError(f"eta_max must exceed target_eta, got {self.eta_max}")

    @property
    def eta_band(self) -> tuple:
        return self.target_eta, self.eta_max if self.eta_max is not None else 2.0 * self.target_eta


_SPEC_KEYS = {
    "n": ("n", int), "D": ("D", int), "r": ("r", int),
    "eta": ("target_eta", float), "eta_max": ("eta_max", float),
    "queries": ("queries_per_run", int), "frac": ("corruption_fraction", float),
    "mag": ("corruption_magnitude", float), "sigma": ("sigma", float), "seed": ("seed", int),
}


def parse_spec(text: str, **overrides) -> SyntheticSpec:
    """Parse ``"n=38,r=9,D=2000,eta=3"`` style strings."""
    kwargs = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = part.partition("=")
        if not sep or key.strip() not in _SPEC_KEYS:
            raise ValueError(f"bad spec entry {part!r}; known keys: {', '.join(_SPEC_KEYS)}")
        name, conv = _SPEC_KEYS[key.strip()]
        kwargs[name] = conv(value)
    missing = {"n", "D", "r"} - kwargs.keys()
    if missing:
        raise ValueError(f"spec is missing {', '.join(sorted(missing))}")
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return SyntheticSpec(**kwargs)


def _draw_noise(spec, rng):
    D = spec.D
    e = np.zeros(D)
    k = int(round(spec.corruption_fraction * D))
    if k and spec.corruption_magnitude > 0:
        support = rng.choice(D, size=k, replace=False)
        e[support] = spec.corruption_magnitude * rng.standard_normal(k)
    if spec.sigma > 0:
        e += spec.sigma * rng.standard_normal(D)
    return e


def generate_instance(spec: SyntheticSpec, opts: SolverOptions = DEFAULT_OPTIONS):
    """Random collection plus labelled queries with a controlled gap.

    Returns ``(collection, queries)``. Each query's label is also its
    exhaustive l1 winner, and its measured gap lies in ``spec.eta_band``
    (noise-free queries have distance 0 to their label and gap +inf).
    """
    rng = np.random.default_rng(derive_seed(spec.seed, 0))
    collection = SubspaceCollection.from_bases(
        [orthonormalize(rng.standard_normal((spec.D, spec.r))) for _ in range(spec.n)])
    lo, hi = spec.eta_band
    log_target = math.log(math.sqrt(lo * hi))
    queries = []
    for j in range(spec.queries_per_run):
        label = j % spec.n
        basis = collection[label].basis
        attempts = 0
        accepted = None
        while accepted is None:
            x = basis @ rng.standard_normal(spec.r)
            e = _draw_noise(spec, rng)
            attempts += 1
            if not e.any():
                accepted = x
                break
            own = distance_to_subspace(e, collection[label], opts).distance
            others = min(distance_to_subspace(x, s, opts).distance for s in collection.models if s.id != label)
            if own == 0.0:
                continue
            # secant in (log scale, log rho) where rho = nearest other distance / own distance
            log_s = math.log(others) - log_target - math.log(own)
            prev = None
            for _ in range(30):
                q = x + math.exp(log_s) * e
                res = query_exhaustive(collection, q, opts)
                dist = {rec.subspace_id: rec.distance for rec in res.records}
                rho = min(v for k, v in dist.items() if k != label) / dist[label]
                if res.winner_id == label and lo <= res.gap_eta <= hi:
                    accepted = q
                    break
                attempts += 1
                if attempts >= MAX_ATTEMPTS:
                    break
                f = math.log(rho) - log_target
                slope = -1.0
                if prev is not None and prev[0] != log_s:
                    slope = (f - prev[1]) / (log_s - prev[0])
                    if not slope < -1e-3:
                        slope = -1.0
                prev = (log_s, f)
                log_s -= f / slope
            if accepted is None and attempts >= MAX_ATTEMPTS:
                raise RuntimeError(
                    f"could not place query {j} in eta band [{lo}, {hi}] after {MAX_ATTEMPTS} attempts; "
                    "try a wider band, a larger D, or fewer subspaces")
        queries.append(QueryVector(accepted, label=label))
    return collection, queries


@dataclass(frozen=True)
class SweepRow:
    d: int
    trials: int
    n_back: int
    success_rate: float
    recall: float
    mean_eta: float
    wall_ms: float


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)

    def to_csv(self, timing: bool = True) -> str:
        """CSV with the fixed sweep header; ``timing=False`` writes wall_ms as 0."""
        lines = [SWEEP_HEADER]
        for row in self.rows:
            wall = row.wall_ms if timing else 0.0
            lines.append(f"{row.d},{row.trials},{row.n_back},{row.success_rate!r},{row.recall!r},"
                         f"{row.mean_eta!r},{wall!r}")
        return "\n".join(lines) + "\n"

    def column(self, name) -> list:
        return [getattr(row, name) for row in self.rows]


def exhaustive_winners(instance, opts: SolverOptions = DEFAULT_OPTIONS, threads=None) -> list:
    collection, queries = instance
    return [res.winner_id for res in map_queries(lambda q: query_exhaustive(collection, q, opts), queries, threads)]


def _finite_mean(values):
    vals = [v for v in values if math.isfinite(v)]
    return float(np.mean(vals)) if vals else math.nan


def _run_cell(instance, truth, config, threads):
    collection, queries = instance
    start = time.perf_counter()
    index = build_index(collection, config, keep_ambient=False)
    results = map_queries(lambda q: query_sketched(index, q, config, collection=collection), queries, threads)
    wall = (time.perf_counter() - start) * 1e3
    success = float(np.mean([res.winner_id == t for res, t in zip(results, truth)]))
    recall = float(np.mean([t in res.candidates for res, t in zip(results, truth)]))
    eta = _finite_mean([res.sketched_gap() for res in results])
    return SweepRow(config.d, config.trials, config.n_back, success, recall, eta, wall)


def sweep_dimension(instance, d_values: Sequence[int], config: SearchConfig,
                    truth: Optional[Sequence[int]] = None, threads: Optional[int] = None) -> SweepResult:
    """Success rate versus sketch dimension.

    ``truth`` defaults to the exhaustive ambient winners. Each d gets a
    fresh index seeded from ``(config.seed, d)``.
    """
    d_values = list(d_values)
    if d_values != sorted(d_values):
        raise ValueError(f"d_values must be ascending, got {d_values}")
    if truth is None:
        truth = exhaustive_winners(instance, config.ambient_solver, threads)
    rows = []
    for d in d_values:
        cfg = replace(config, d=d, seed=derive_seed(config.seed, d))
        rows.append(_run_cell(instance, truth, cfg, threads))
        logger.info("d=%d success=%.3f recall=%.3f", d, rows[-1].success_rate, rows[-1].recall)
    return SweepResult(rows)


def sweep_nback(instance, d_values: Sequence[int], nback_values: Sequence[int], config: SearchConfig,
                truth: Optional[Sequence[int]] = None, threads: Optional[int] = None) -> SweepResult:
    """Recall and success over a (d, n_back) grid; one index per d."""
    if truth is None:
        truth = exhaustive_winners(instance, config.ambient_solver, threads)
    rows = []
    for d in sorted(d_values):
        for nb in sorted(nback_values):
            cfg = replace(config, d=d, n_back=nb, seed=derive_seed(config.seed, d))
            rows.append(_run_cell(instance, truth, cfg, threads))
    return SweepResult(rows)


@dataclass(frozen=True)
class DistortionSample:
    psi: float
    d: int
    r: int
    seed: int


def distortion_histogram(q, S: SubspaceModel, d: int, num_matrices: int, seed: int,
                         opts: SolverOptions = DEFAULT_OPTIONS) -> list:
    """Distortion ratio of the sketched to the ambient l1 distance over random P.

    Sample k uses the Cauchy stream ``(seed, k)``; the sketched distance is
    divided by ``d`` so that psi stays O(1) as d grows.
    """
    values = query_values(q)
    if values.shape[0] != S.ambient_dim:
        raise DimensionError(f"query has length {values.shape[0]}, subspace lives in R^{S.ambient_dim}")
    if not S.rank < d < S.ambient_dim:
        raise ValueError(f"need r < d < D, got r={S.rank}, d={d}, D={S.ambient_dim}")
    ambient = distance_to_subspace(values, S, opts).distance
    if ambient == 0.0:
        raise ValueError("query lies in the subspace; the distortion ratio is undefined")
    Q = np.empty((num_matrices, d))
    Bs = np.empty((num_matrices, d, S.rank))
    for k in range(num_matrices):
        P = cauchy_matrix(RngSpec(seed, k), d, S.ambient_dim)
        Q[k] = P @ values
        Bs[k] = orthonormalize(P @ S.basis)
    sketched = np.array([sol.objective for sol in solve_many(Q, Bs, opts)])
    psi = sketched / (d * ambient)
    return [DistortionSample(float(p), d, S.rank, seed) for p in psi]


def distortion_summary(samples) -> dict:
    """1%, 50% and 99% quantiles of psi."""
    psi = np.array([s.psi for s in samples])
    q01, q50, q99 = np.quantile(psi, [0.01, 0.5, 0.99])
    return {"q01": float(q01), "median": float(q50), "q99": float(q99)}


def write_dataset(path, collection: SubspaceCollection, queries, samples_per_class: Optional[int] = None,
                  seed: int = 0, fmt: str = "bin"):
    """Write a dataset directory (training samples drawn from each subspace)."""
    if fmt not in ("bin", "csv"):
        raise ValueError(f"fmt must be 'bin' or 'csv', got {fmt!r}")
    os.makedirs(path, exist_ok=True)
    m = samples_per_class or 2 * collection.rank
    rng = np.random.default_rng(derive_seed(seed, 1))
    encode = matrix_to_bytes if fmt == "bin" else matrix_to_csv
    manifest = []
    for model in collection.models:
        train = (model.basis @ rng.standard_normal((collection.rank, m))).T
        train_name = f"class_{model.id}_train.{fmt}"
        atomic_write(os.path.join(path, train_name), encode(train))
        rows = [query_values(q) for q in queries if getattr(q, "label", None) == model.id]
        test_name = ""
        if rows:
            test_name = f"class_{model.id}_test.{fmt}"
            atomic_write(os.path.join(path, test_name), encode(np.stack(rows)))
        manifest.append(f"{model.id},{train_name},{test_name}")
    atomic_write(os.path.join(path, "manifest.csv"), "\n".join(manifest) + "\n")


def read_manifest(path) -> list:
    manifest = os.path.join(path, "manifest.csv")
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no manifest.csv in {path}")
    entries = []
    with open(manifest) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if lineno == 1 and parts[0] == "class_id":
                continue
            if len(parts) not in (2, 3):
                raise FormatError(f"manifest line {lineno}: expected class_id,train_file,test_file")
            try:
                cid = int(parts[0])
            except ValueError:
                raise FormatError(f"manifest line {lineno}: class id {parts[0]!r} is not an integer") from None
            entries.append((cid, parts[1], parts[2] if len(parts) == 3 else ""))
    ids = sorted(e[0] for e in entries)
    if ids != list(range(len(ids))):
        raise FormatError(f"manifest class ids must be 0..n-1, got {ids}")
    return sorted(entries)


def load_external_dataset(path, r: int):
    """Fit one subspace per class from training rows; test rows become labelled queries."""
    entries = read_manifest(path)
    models, queries = [], []
    D = None

    def load(name):
        full = os.path.join(path, name)
        if not os.path.exists(full):
            raise FileNotFoundError(f"manifest references missing file {name}")
        M = load_matrix(full)
        nonlocal D
        if M.shape[0] == 0:
            return M
        if D is None:
            D = M.shape[1]
        elif M.shape[1] != D:
            raise DimensionError(f"{name} has {M.shape[1]} columns, expected D={D}")
        return M

    for cid, train_name, test_name in entries:
        train = load(train_name)
        models.append(fit_subspace(train.T, r, id=cid))
        if test_name:
            queries.extend(QueryVector(row, label=cid) for row in load(test_name))
    return SubspaceCollection(tuple(models)), queries
