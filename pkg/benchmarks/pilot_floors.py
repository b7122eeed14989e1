"""Pilot runs that fix the empirical floors and bands used in the tests.

Run from the repository root:

    python benchmarks/pilot_floors.py > benchmarks/pilot_floors.txt

Takes several minutes on one core.
"""
import time

import numpy as np

from l1ns.core import SubspaceModel, orthonormalize
from l1ns.eval import (
    SyntheticSpec,
    derive_seed,
    distortion_histogram,
    distortion_summary,
    exhaustive_winners,
    generate_instance,
    sweep_dimension,
    sweep_nback,
)
from l1ns.search import SearchConfig, build_index, query_exhaustive, query_sketched, suggest_dimension


def timed(label):
    start = time.perf_counter()
    return lambda: print(f"  [{label}: {time.perf_counter() - start:.1f} s]")


def search_floor():
    print("## n=20, r=4, D=400, eta>=3: sketched winner at suggested d, 100 seeded runs")
    done = timed("search floor")
    col, qs = generate_instance(SyntheticSpec(n=20, D=400, r=4, target_eta=3.0, queries_per_run=100, seed=3))
    truth = exhaustive_winners((col, qs))
    etas = [query_exhaustive(col, q).gap_eta for q in qs]
    d = suggest_dimension(4, 20)
    print(f"d={d} measured eta in [{min(etas):.3f}, {max(etas):.3f}]")
    for base in range(3):
        hits = 0
        for s in range(100):
            cfg = SearchConfig(d=d, seed=derive_seed(base, s))
            hits += query_sketched(build_index(col, cfg, keep_ambient=False), qs[s], cfg).winner_id == truth[s]
        print(f"base seed {base}: {hits}/100")
    ok = 0
    for rep in range(100):
        lo, hi = sweep_dimension((col, qs), [4, 64], SearchConfig(d=4, seed=derive_seed(77, rep)),
                                 truth=truth).column("success_rate")
        ok += hi >= lo
    print(f"success(64) >= success(4) in {ok}/100 replicates")
    done()


def dimension_floor():
    print("## n=38, r=9, D=2000, eta>=3, 100 queries: success rate versus d")
    done = timed("dimension floor")
    inst = generate_instance(SyntheticSpec(n=38, D=2000, r=9, target_eta=3.0, queries_per_run=100, seed=0))
    truth = exhaustive_winners(inst)
    etas = [query_exhaustive(inst[0], q).gap_eta for q in inst[1]]
    print(f"measured eta in [{min(etas):.3f}, {max(etas):.3f}]")
    print(sweep_dimension(inst, [5, 15, 25, 33, 50, 70], SearchConfig(d=5, seed=0), truth=truth).to_csv(timing=False),
          end="")
    rates5, rates33 = [], []
    for rep in range(100):
        a, b = sweep_dimension(inst, [5, 33], SearchConfig(d=5, seed=derive_seed(1000, rep)),
                               truth=truth).column("success_rate")
        rates5.append(a)
        rates33.append(b)
    rates33 = np.array(rates33)
    print(f"d=33 over 100 replicates: mean {rates33.mean():.4f} min {rates33.min():.2f} "
          f"5% quantile {np.quantile(rates33, 0.05):.2f} share >= 0.8 {np.mean(rates33 >= 0.8):.2f}")
    print(f"success(5) < success(33) in {sum(a < b for a, b in zip(rates5, rates33))}/100 replicates")
    done()


def weak_gap():
    print("## eta in [1.1, 1.3], n=38, D=2000, verify on: recall over (d, n_back)")
    for r in (9, 15):
        done = timed(f"weak gap r={r}")
        inst = generate_instance(SyntheticSpec(n=38, D=2000, r=r, target_eta=1.1, eta_max=1.3,
                                               queries_per_run=100, seed=5))
        res = sweep_nback(inst, [25, 70], [5, 10], SearchConfig(d=25, seed=5, verify=True))
        print(f"r={r}")
        print(res.to_csv(timing=False), end="")
        done()


def distortion():
    print("## distortion psi (sketched / (d * ambient)), 1000 sketches per seed")
    for D, r, d in [(100, 3, 40), (400, 9, 200)]:
        done = timed(f"distortion D={D}")
        meds, heavier = [], 0
        for s in range(8):
            rng = np.random.default_rng(100 + s)
            S = SubspaceModel(orthonormalize(rng.standard_normal((D, r))))
            sm = distortion_summary(distortion_histogram(rng.standard_normal(D), S, d, 1000, s))
            meds.append(sm["median"])
            heavier += (sm["q99"] - sm["median"]) > (sm["median"] - sm["q01"])
        print(f"D={D} r={r} d={d}: medians {np.round(meds, 3).tolist()} upper tail heavier in {heavier}/8")
        done()


if __name__ == "__main__":
    search_floor()
    dimension_floor()
    weak_gap()
    distortion()
