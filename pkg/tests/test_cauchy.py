import math

import numpy as np
import pytest

from l1ns.cauchy import (
    RngSpec,
    SketchMatrix,
    cauchy_matrix,
    cauchy_quantile,
    open_uniforms,
    sample_sketch,
    stability_check,
    tail_mass,
)

# P(|C| > 10) from the CDF F(x) = 1/2 + arctan(x)/pi
TAIL_10 = 2.0 / math.pi * math.atan(1.0 / 10.0)


def test_tail_oracle_value():
    assert TAIL_10 == pytest.approx(0.0635, abs=5e-5)
    assert tail_mass(10.0) == pytest.approx(TAIL_10, rel=1e-12)


@pytest.mark.parametrize("u, x", [(0.5, 0.0), (0.75, 1.0), (0.25, -1.0)])
def test_quantile_exact_points(u, x):
    assert cauchy_quantile(u) == x


@pytest.mark.parametrize("u", [0.0, 1.0, -0.2, 1.5, float("nan")])
def test_quantile_domain(u):
    with pytest.raises(ValueError):
        cauchy_quantile(u)


def test_quantile_monotone_and_symmetric():
    u = open_uniforms(RngSpec(3), (10_000,))
    x = cauchy_quantile(np.sort(u))
    assert np.all(np.diff(x) >= 0)
    # 1 - u is exact for u > 1/2, so the reflection is exact too
    hi = u[u > 0.5]
    np.testing.assert_array_equal(cauchy_quantile(1.0 - hi), -cauchy_quantile(hi))


def test_quantile_matches_density():
    # F(Q(u)) = u with F the Cauchy CDF
    u = np.linspace(0.01, 0.99, 99)
    np.testing.assert_allclose(0.5 + np.arctan(cauchy_quantile(u)) / np.pi, u, atol=1e-14)


def test_open_uniforms_interval():
    u = open_uniforms(RngSpec(0), (1000, 1000))
    assert u.min() > 0.0 and u.max() < 1.0


def test_sketch_determinism():
    a = sample_sketch(RngSpec(7, 0), 3, 10)
    b = sample_sketch(RngSpec(7, 0), 3, 10)
    assert a.P.tobytes() == b.P.tobytes()
    assert (a.d, a.D) == (3, 10)
    assert not np.array_equal(a.P, sample_sketch(RngSpec(7, 1), 3, 10).P)
    assert not np.array_equal(a.P, sample_sketch(RngSpec(8, 0), 3, 10).P)


def test_sketch_shape_rules():
    with pytest.raises(ValueError, match="smaller"):
        sample_sketch(RngSpec(0), 10, 10)
    with pytest.raises(ValueError, match=">= 1"):
        sample_sketch(RngSpec(0), 0, 10)


def test_rng_spec_range():
    with pytest.raises(ValueError):
        RngSpec(-1)
    with pytest.raises(ValueError):
        RngSpec(0, 2**64)


def test_sketch_is_read_only():
    sk = sample_sketch(RngSpec(1), 2, 5)
    with pytest.raises(ValueError):
        sk.P[0, 0] = 0.0


def test_identity_hook():
    sk = SketchMatrix.identity(4)
    np.testing.assert_array_equal(sk.P, np.eye(4))
    assert sk.rng is None


def test_column_medians_near_one():
    # median |C| = tan(pi/4) = 1
    P = cauchy_matrix(RngSpec(11), 1000, 2)
    med = np.median(np.abs(P), axis=0)
    assert np.all((med >= 0.9) & (med <= 1.1))


def test_tail_fraction_and_symmetry():
    P = sample_sketch(RngSpec(2024), 500, 2000).P
    assert P.size == 10**6
    assert 0.058 <= np.mean(np.abs(P) > 10) <= 0.069
    assert 0.498 <= np.mean(P > 0) <= 0.502


def test_heavy_tail_sample_mean():
    means = [np.abs(cauchy_matrix(RngSpec(s), 1000, 1000)).mean() for s in range(12)]
    assert np.mean([m > 5 for m in means]) >= 0.9


def test_stability_one_hot():
    x = np.zeros(50)
    x[0] = 1.0
    assert 0.9 <= stability_check(x, 10_000, RngSpec(5)) <= 1.1


def test_stability_scale_cancels_exactly():
    x = np.random.default_rng(0).integers(-20, 20, size=50).astype(float)
    rng = RngSpec(9)
    assert stability_check(x, 1000, rng) == stability_check(5 * x, 1000, rng)
    e1 = np.eye(30)[0]
    assert stability_check(e1, 1000, rng) == stability_check(5 * e1, 1000, rng)


def test_stability_random_direction():
    x = np.random.default_rng(1).standard_normal(50)
    assert 0.97 <= stability_check(x, 10_000, RngSpec(77)) <= 1.03


def test_stability_rejects_zero():
    with pytest.raises(ValueError, match="nonzero"):
        stability_check(np.zeros(4), 1000, RngSpec(0))
