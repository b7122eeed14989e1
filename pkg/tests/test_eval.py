import math
import os
import shutil
from pathlib import Path

import numpy as np
import pytest

from l1ns import eval as ev
from l1ns.core import DimensionError, SubspaceCollection, SubspaceModel
from l1ns.eval import (
    SWEEP_HEADER,
    SyntheticSpec,
    derive_seed,
    distortion_histogram,
    distortion_summary,
    exhaustive_winners,
    generate_instance,
    load_external_dataset,
    parse_spec,
    read_manifest,
    sweep_dimension,
    sweep_nback,
    write_dataset,
)
from l1ns.formats import FormatError
from l1ns.l1_solver import distance_to_subspace
from l1ns.search import SearchConfig, query_exhaustive

from conftest import random_basis

TOY = Path(__file__).parent / "data" / "toy"


@pytest.fixture(scope="module")
def small_instance():
    return generate_instance(SyntheticSpec(n=6, D=60, r=2, queries_per_run=24, seed=4))


def span_residual(A, B):
    """Largest l2 residual of B's columns projected onto span(A) (A orthonormal)."""
    return np.linalg.norm(B - A @ (A.T @ B), axis=0).max()


def test_parse_spec():
    spec = parse_spec("n=38,r=9,D=2000,eta=3")
    assert (spec.n, spec.r, spec.D, spec.target_eta) == (38, 9, 2000, 3.0)
    assert spec.eta_band == (3.0, 6.0)
    assert parse_spec("n=4,r=1,D=10", queries_per_run=7, seed=None).queries_per_run == 7
    with pytest.raises(ValueError, match="known keys"):
        parse_spec("n=4,r=1,D=10,foo=2")
    with pytest.raises(ValueError, match="missing D"):
        parse_spec("n=4,r=1")


@pytest.mark.parametrize("kw", [
    {"target_eta": 1.0}, {"corruption_fraction": 1.0}, {"D": 4}, {"n": 1}, {"eta_max": 2.0},
])
def test_spec_validation(kw):
    base = dict(n=3, D=10, r=2, target_eta=3.0)
    base.update(kw)
    with pytest.raises(ValueError):
        SyntheticSpec(**base)


def test_derive_seed_stable():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(1, 3) != derive_seed(2, 2)
    assert 0 <= derive_seed(0) < 2**64


def test_noise_free_queries():
    spec = SyntheticSpec(n=4, D=30, r=2, corruption_fraction=0.0, sigma=0.0, queries_per_run=8)
    col, qs = generate_instance(spec)
    for q in qs:
        assert distance_to_subspace(q, col[q.label]).distance <= 1e-9
    assert exhaustive_winners((col, qs)) == [q.label for q in qs]


def test_single_corruption_bounded_by_magnitude():
    basis = np.zeros((10, 2))
    basis[0, 0] = basis[1, 1] = 1.0
    other = np.zeros((10, 2))
    other[2, 0] = other[3, 1] = 1.0
    col = SubspaceCollection.from_bases([basis, other])
    for c in (0.5, 3.0, 40.0):
        q = basis @ np.array([1.5, -2.0])
        q[7] += c
        assert distance_to_subspace(q, col[0]).distance <= c * (1 + 1e-9)


def test_generator_postcondition():
    spec = SyntheticSpec(n=20, D=400, r=4, target_eta=3.0, queries_per_run=40, seed=1)
    col, qs = generate_instance(spec)
    assert (col.n, col.ambient_dim, col.rank) == (20, 400, 4)
    assert [q.label for q in qs] == [j % 20 for j in range(40)]
    for q in qs:
        res = query_exhaustive(col, q)
        assert res.winner_id == q.label
        assert 3.0 <= res.gap_eta <= 6.0


def test_generator_deterministic(small_instance):
    col, qs = generate_instance(SyntheticSpec(n=6, D=60, r=2, queries_per_run=24, seed=4))
    np.testing.assert_array_equal(col.stacked(), small_instance[0].stacked())
    for a, b in zip(qs, small_instance[1]):
        np.testing.assert_array_equal(a.values, b.values)


def test_generator_gives_up(monkeypatch):
    monkeypatch.setattr(ev, "MAX_ATTEMPTS", 1)
    with pytest.raises(RuntimeError, match="eta band"):
        generate_instance(SyntheticSpec(n=3, D=20, r=2, target_eta=3.0, eta_max=3.000001, queries_per_run=3))


def test_identity_sweep_is_exact(small_instance):
    D = small_instance[0].ambient_dim
    res = sweep_dimension(small_instance, [D], SearchConfig(d=D, identity_sketch=True))
    assert res.column("success_rate") == [1.0]


def test_sweep_rows_and_csv(small_instance):
    cfg = SearchConfig(d=3, seed=2)
    a = sweep_dimension(small_instance, [3, 10, 30], cfg)
    b = sweep_dimension(small_instance, [3, 10, 30], cfg)
    assert a.column("d") == [3, 10, 30]
    assert a.to_csv(timing=False) == b.to_csv(timing=False)
    lines = a.to_csv().splitlines()
    assert lines[0] == SWEEP_HEADER and len(lines) == 4
    for row in a.rows:
        assert 0.0 <= row.success_rate <= 1.0 and 0.0 <= row.recall <= 1.0
        assert row.wall_ms > 0
    with pytest.raises(ValueError, match="ascending"):
        sweep_dimension(small_instance, [10, 3], cfg)


def test_sweep_independent_of_threads(small_instance):
    cfg = SearchConfig(d=5, seed=2)
    one = sweep_dimension(small_instance, [5, 20], cfg, threads=1)
    four = sweep_dimension(small_instance, [5, 20], cfg, threads=4)
    assert one.to_csv(timing=False) == four.to_csv(timing=False)


def test_nback_recall_monotone(small_instance):
    res = sweep_nback(small_instance, [4, 12], [1, 2, 3, 6], SearchConfig(d=4, seed=8, verify=True))
    for d in (4, 12):
        recall = [row.recall for row in res.rows if row.d == d]
        assert recall == sorted(recall)
        assert recall[-1] == 1.0
        full = [row for row in res.rows if row.d == d and row.n_back == 6][0]
        assert full.success_rate == 1.0


@pytest.mark.slow
def test_dimension_trend_over_replicates():
    # pilot: 100 of 100 replicates satisfy the ordering
    inst = generate_instance(SyntheticSpec(n=20, D=400, r=4, target_eta=3.0, queries_per_run=100, seed=3))
    truth = exhaustive_winners(inst)
    ok = 0
    for rep in range(100):
        rates = sweep_dimension(inst, [4, 64], SearchConfig(d=4, seed=derive_seed(77, rep)), truth=truth)
        lo, hi = rates.column("success_rate")
        ok += hi >= lo
    assert ok >= 95


@pytest.fixture(scope="module")
def distortion_pair():
    rng = np.random.default_rng(21)
    S = SubspaceModel(random_basis(rng, 100, 3))
    return rng.standard_normal(100), S


def test_distortion_samples(distortion_pair):
    q, S = distortion_pair
    samples = distortion_histogram(q, S, 40, 200, seed=3)
    assert len(samples) == 200
    assert all(s.psi > 0 and math.isfinite(s.psi) for s in samples)
    assert {(s.d, s.r, s.seed) for s in samples} == {(40, 3, 3)}
    again = distortion_histogram(q, S, 40, 200, seed=3)
    assert [s.psi for s in samples] == [s.psi for s in again]


def test_distortion_asymmetry(distortion_pair):
    q, S = distortion_pair
    heavier = 0
    for seed in range(5):
        sm = distortion_summary(distortion_histogram(q, S, 40, 1000, seed=seed))
        heavier += (sm["q99"] - sm["median"]) > (sm["median"] - sm["q01"])
    assert heavier == 5


def test_distortion_median_band():
    # pilot over 8 instances at D=400, r=9, d=200: medians 2.64 to 2.74
    rng = np.random.default_rng(100)
    S = SubspaceModel(random_basis(rng, 400, 9))
    sm = distortion_summary(distortion_histogram(rng.standard_normal(400), S, 200, 1000, seed=0))
    assert 2.4 <= sm["median"] <= 3.0


def test_distortion_errors(distortion_pair):
    q, S = distortion_pair
    with pytest.raises(ValueError, match="lies in the subspace"):
        distortion_histogram(S.basis[:, 0], S, 10, 5, seed=0)
    with pytest.raises(ValueError, match="r < d < D"):
        distortion_histogram(q, S, 3, 5, seed=0)
    with pytest.raises(DimensionError):
        distortion_histogram(q[:50], S, 10, 5, seed=0)


def test_toy_dataset_loads():
    col, qs = load_external_dataset(TOY, 3)
    assert (col.n, col.ambient_dim, col.rank) == (2, 64, 3)
    assert sorted({q.label for q in qs}) == [0, 1]
    assert exhaustive_winners((col, qs)) == [q.label for q in qs]


@pytest.mark.parametrize("fmt", ["bin", "csv"])
def test_dataset_round_trip(tmp_path, small_instance, fmt):
    col, qs = small_instance
    write_dataset(tmp_path, col, qs, fmt=fmt)
    back, bqs = load_external_dataset(tmp_path, col.rank)
    assert back.n == col.n
    for a, b in zip(col.models, back.models):
        assert span_residual(a.basis, b.basis) <= 1e-8
        assert span_residual(b.basis, a.basis) <= 1e-8
    assert [q.label for q in bqs] == sorted(q.label for q in qs)


def test_missing_file_named(tmp_path):
    shutil.copytree(TOY, tmp_path / "toy")
    os.remove(tmp_path / "toy" / "class_1_test.csv")
    with pytest.raises(FileNotFoundError, match="class_1_test.csv"):
        load_external_dataset(tmp_path / "toy", 3)


def test_manifest_problems(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest"):
        read_manifest(tmp_path)
    (tmp_path / "manifest.csv").write_text("class_id,train_file,test_file\n0,a.csv,b.csv\n2,c.csv,\n")
    with pytest.raises(FormatError, match="0..n-1"):
        read_manifest(tmp_path)
    (tmp_path / "manifest.csv").write_text("zero,a.csv,b.csv\n")
    with pytest.raises(FormatError, match="not an integer"):
        read_manifest(tmp_path)


def test_dimension_mismatch_across_files(tmp_path):
    shutil.copytree(TOY, tmp_path / "toy")
    (tmp_path / "toy" / "class_1_test.csv").write_text("1.0,2.0,3.0\n")
    with pytest.raises(DimensionError, match="class_1_test.csv"):
        load_external_dataset(tmp_path / "toy", 3)
