"""Seeded standard Cauchy variates and the d x D sketch matrix.

Each (seed, stream_id) pair keys its own Philox counter-based generator,
so every trial gets an independent, individually reproducible stream.
Variates come from inverse-CDF sampling of open-interval uniforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import as_vector

_U64 = 1 << 64


@dataclass(frozen=True)
class RngSpec:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) < _U64:
                raise ValueError(f"{name} must be an integer in [0, 2**64), got {v!r}")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "stream_id", int(self.stream_id))

    def bit_generator(self) -> np.random.Philox:
        return np.random.Philox(key=self.seed | (self.stream_id << 64))


def open_uniforms(rng: RngSpec, size) -> np.ndarray:
    """Uniforms on the open interval (0, 1): (k + 1/2) / 2**53 for 53-bit k."""
    count = int(np.prod(size))
    raw = rng.bit_generator().random_raw(count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return u.reshape(size)


def cauchy_quantile(u):
    """Inverse CDF of the standard Cauchy, ``tan(pi * (u - 1/2))``.

    Accepts a scalar or an array; every value must lie strictly in (0, 1).
    """
    arr = np.asarray(u, dtype=np.float64)
    if not ((arr > 0.0) & (arr < 1.0)).all():
        raise ValueError("Cauchy quantile is defined only for 0 < u < 1")
    # tan(pi/4) rounds to 0.9999999999999999; handle the exact quartiles explicitly
    out = np.tan(np.pi * (arr - 0.5))
    out = np.where(arr == 0.5, 0.0, out)
    out = np.where(arr == 0.75, 1.0, out)
    out = np.where(arr == 0.25, -1.0, out)
    return float(out) if np.ndim(u) == 0 else out


def cauchy_matrix(rng: RngSpec, rows: int, cols: int) -> np.ndarray:
    """``rows x cols`` i.i.d. standard Cauchy entries from one stream, no shape rules."""
    return cauchy_quantile(open_uniforms(rng, (rows, cols)))


@dataclass(frozen=True)
class SketchMatrix:
    """The random embedding P (d x D) together with the stream that produced it.

    ``rng`` is None for matrices that did not come from the sampler (the
    identity test hook, or a matrix loaded from an index file).
    """

    P: np.ndarray
    rng: RngSpec | None = None

    def __post_init__(self):
        P = np.array(self.P, dtype=np.float64, copy=True)
        if P.ndim != 2 or P.shape[0] < 1:
            raise ValueError(f"sketch matrix must be 2-D with d >= 1, got shape {P.shape}")
        if not np.isfinite(P).all():
            raise ValueError("sketch matrix has non-finite entries")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def d(self) -> int:
        return self.P.shape[0]

    @property
    def D(self) -> int:
        return self.P.shape[1]

    @classmethod
    def identity(cls, D: int) -> "SketchMatrix":
        """P = I_D. Test hook: the sketch then changes nothing."""
        return cls(np.eye(D))


def sample_sketch(rng: RngSpec, d: int, D: int) -> SketchMatrix:
    """Draw P in R^{d x D} with i.i.d. standard Cauchy entries."""
    if d < 1:
        raise ValueError(f"sketch dimension must be >= 1, got {d}")
    if d >= D:
        raise ValueError(f"sketch dimension d={d} must be smaller than ambient dimension D={D}")
    return SketchMatrix(cauchy_matrix(rng, d, D), rng)


def stability_check(x, d: int, rng: RngSpec) -> float:
    """Median over j of ``|(P x)_j| / |x|_1`` for a fresh d x len(x) Cauchy P.

    By 1-stability each ``(P x)_j`` is ``|x|_1`` times a standard Cauchy, so
    the result concentrates near the median of ``|C|``, which is 1.
    """
    x = as_vector(x, "x")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    norm = np.abs(x).sum()
    if norm == 0.0:
        raise ValueError("stability check needs a nonzero vector")
    P = cauchy_matrix(rng, d, x.shape[0])
    return float(np.median(np.abs(P @ (x / norm))))


def tail_mass(threshold: float) -> float:
    """P(|C| > threshold) for a standard Cauchy C."""
    return 1.0 - 2.0 / math.pi * math.atan(threshold)
