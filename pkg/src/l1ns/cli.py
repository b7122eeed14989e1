"""``l1ns`` command-line interface.

Exit codes: 0 success, 1 usage error (nothing written), 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import __version__
from ._backend import BACKEND
from .core import QueryVector
from .eval import (
    distortion_histogram,
    distortion_summary,
    generate_instance,
    load_external_dataset,
    parse_spec,
    sweep_dimension,
    sweep_nback,
    write_dataset,
)
from .formats import atomic_write, collection_from_bytes, collection_to_bytes, load_matrix
from .l1_solver import SolverOptions
from .search import SearchConfig, SketchedIndex, build_index, map_queries, query_sketched, suggest_dimension

logger = logging.getLogger("l1ns")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _default_threads():
    env = os.environ.get("L1NS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="base random seed (default: %(default)s)")
    g.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $L1NS_THREADS or the number of cores)")
    g.add_argument("--out", default=None, help="output path (default: %(default)s, meaning stdout where allowed)")
    g.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging level (default: %(default)s)")

    solver = _Parser(add_help=False)
    s = solver.add_argument_group("solver options")
    s.add_argument("--tol", type=float, default=1e-9, help="relative duality-gap tolerance (default: %(default)s)")
    s.add_argument("--max-iter", type=int, default=200, help="interior-point iteration cap (default: %(default)s)")

    source = _Parser(add_help=False)
    src = source.add_argument_group("subspace source")
    src.add_argument("--data", default=None, help="dataset directory with manifest.csv (default: %(default)s)")
    src.add_argument("--collection", default=None, help="fitted collection file from `l1ns fit` (default: %(default)s)")
    src.add_argument("--r", type=int, default=9, help="subspace rank when fitting --data (default: %(default)s)")

    evalsrc = _Parser(add_help=False)
    e = evalsrc.add_argument_group("instance")
    e.add_argument("--gen", default=None,
                   help='synthetic instance, e.g. "n=38,r=9,D=2000,eta=3" (default: %(default)s)')
    e.add_argument("--data", default=None, help="dataset directory instead of --gen (default: %(default)s)")
    e.add_argument("--r", type=int, default=9, help="subspace rank when fitting --data (default: %(default)s)")
    e.add_argument("--queries", type=int, default=None,
                   help="queries to generate with --gen (default: the spec's value, 100)")

    parser = _Parser(prog="l1ns", description="Nearest-subspace search in l1 distance by Cauchy random embedding.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernel)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset directory")
    p.add_argument("--spec", required=True, help='instance spec, e.g. "n=38,r=9,D=2000,eta=3"')
    p.add_argument("--queries", type=int, default=None, help="number of test queries (default: 100)")
    p.add_argument("--format", choices=["bin", "csv"], default="bin", help="matrix file format (default: %(default)s)")
    p.add_argument("--samples-per-class", type=int, default=None, help="training samples per class (default: 2r)")

    p = sub.add_parser("fit", parents=[common], help="fit one subspace per class and save the collection")
    p.add_argument("--data", required=True, help="dataset directory with manifest.csv")
    p.add_argument("--r", type=int, default=9, help="subspace rank (default: %(default)s)")

    p = sub.add_parser("index", parents=[common, source], help="build and save a sketched index")
    p.add_argument("--d", type=int, default=None, help="sketch dimension (default: suggested from r, n, alpha)")
    p.add_argument("--trials", type=int, default=1, help="independent sketches (default: %(default)s)")
    p.add_argument("--nback", type=int, default=1, help="candidates kept per trial (default: %(default)s)")
    p.add_argument("--alpha", type=float, default=0.9, help="exponent in the dimension rule (default: %(default)s)")
    p.add_argument("--no-ambient", action="store_true",
                   help="do not store ambient bases (queries then need --data/--collection to verify)")

    p = sub.add_parser("query", parents=[common, source, solver], help="answer queries against an index")
    p.add_argument("--index", required=True, help="index file from `l1ns index`")
    p.add_argument("--query", required=True, help="query matrix file: one query per row (or a single column)")
    p.add_argument("--nback", type=int, default=None, help="candidates kept per trial (default: the index's value)")
    p.add_argument("--verify", action="store_true", help="re-rank candidates by ambient l1 distance")

    p = sub.add_parser("eval-sweep", parents=[common, evalsrc, solver], help="success rate versus sketch dimension")
    p.add_argument("--d", type=_int_list, default=None, help="comma-separated sketch dimensions (default: suggested)")
    p.add_argument("--trials", type=int, default=1, help="independent sketches (default: %(default)s)")
    p.add_argument("--nback", type=int, default=1, help="candidates kept per trial (default: %(default)s)")
    p.add_argument("--verify", action="store_true", help="re-rank candidates by ambient l1 distance")
    p.add_argument("--timing", action="store_true", help="record wall_ms (otherwise 0, keeping output reproducible)")

    p = sub.add_parser("eval-nback", parents=[common, evalsrc, solver], help="recall over a (d, n_back) grid")
    p.add_argument("--d", type=_int_list, required=True, help="comma-separated sketch dimensions")
    p.add_argument("--nback", type=_int_list, required=True, help="comma-separated n_back values")
    p.add_argument("--trials", type=int, default=1, help="independent sketches (default: %(default)s)")
    p.add_argument("--verify", action="store_true", help="re-rank candidates by ambient l1 distance")
    p.add_argument("--timing", action="store_true", help="record wall_ms (otherwise 0, keeping output reproducible)")

    p = sub.add_parser("distort", parents=[common, evalsrc, solver], help="distortion ratio psi over random sketches")
    p.add_argument("--d", type=int, required=True, help="sketch dimension")
    p.add_argument("--matrices", type=int, default=1000, help="number of random sketches (default: %(default)s)")
    p.add_argument("--query-index", type=int, default=0, help="which query to use (default: %(default)s)")
    p.add_argument("--subspace", type=int, default=None, help="subspace id (default: the query's label)")
    return parser


def _emit(args, text):
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


def _load_collection(args):
    if args.collection and args.data:
        raise UsageError("give only one of --data and --collection")
    if args.collection:
        with open(args.collection, "rb") as f:
            return collection_from_bytes(f.read())
    if args.data:
        return load_external_dataset(args.data, args.r)[0]
    return None


def _load_instance(args):
    if bool(args.gen) == bool(args.data):
        raise UsageError("give exactly one of --gen and --data")
    if args.gen:
        return generate_instance(_spec(args.gen, args.queries, args.seed))
    return load_external_dataset(args.data, args.r)


def _spec(text, queries, seed):
    """Instance spec; an explicit seed= inside the spec wins over --seed."""
    spec = parse_spec(text, queries_per_run=queries)
    return spec if "seed=" in text else replace(spec, seed=seed)


def _solver(args):
    return SolverOptions(tolerance=args.tol, max_iterations=args.max_iter)


def _cmd_gen(args):
    if not args.out:
        raise UsageError("gen needs --out DIR")
    collection, queries = generate_instance(_spec(args.spec, args.queries, args.seed))
    write_dataset(args.out, collection, queries, args.samples_per_class, seed=args.seed, fmt=args.format)
    print(f"wrote n={collection.n} subspaces, {len(queries)} queries to {args.out}")


def _cmd_fit(args):
    if not args.out:
        raise UsageError("fit needs --out FILE")
    collection, _ = load_external_dataset(args.data, args.r)
    atomic_write(args.out, collection_to_bytes(collection))
    print(f"fitted n={collection.n} subspaces of rank {collection.rank} in R^{collection.ambient_dim}")


def _cmd_index(args):
    if not args.out:
        raise UsageError("index needs --out FILE")
    if not (args.data or args.collection):
        raise UsageError("index needs --data DIR or --collection FILE")
    collection = _load_collection(args)
    d = args.d
    if d is None:
        d = suggest_dimension(collection.rank, collection.n, args.alpha)
        print(f"using suggested sketch dimension d={d} (r={collection.rank}, n={collection.n}, alpha={args.alpha})",
              file=sys.stderr)
    config = SearchConfig(d=d, trials=args.trials, n_back=args.nback, alpha=args.alpha, seed=args.seed)
    index = build_index(collection, config, keep_ambient=not args.no_ambient)
    index.save(args.out)


def _read_queries(path, D):
    M = load_matrix(path)
    if M.shape == (D, 1):
        M = M.T
    if M.shape[1] != D:
        raise ValueError(f"query file {path} has shape {M.shape}; expected rows of length D={D}")
    return [QueryVector(row) for row in M]


def _cmd_query(args):
    index = SketchedIndex.load(args.index)
    collection = _load_collection(args)
    n_back = args.nback if args.nback is not None else index.n_back
    config = SearchConfig(d=index.d, trials=index.trials, n_back=n_back, alpha=index.alpha, seed=index.seed,
                          sketch_solver=_solver(args), ambient_solver=_solver(args), verify=args.verify)
    if args.verify and collection is None and index.ambient is None:
        raise UsageError("--verify needs ambient bases: index built with them, or --data/--collection")
    queries = _read_queries(args.query, index.D)
    results = map_queries(lambda q: query_sketched(index, q, config, collection=collection), queries, args.threads)
    lines = ["query,rank,subspace_id,distance,converged"]
    for k, res in enumerate(results):
        top = res.records[0]
        print(f"query {k}: winner={res.winner_id} distance={top.distance!r} "
              f"{'verified' if res.verified else 'sketched'}")
        for rank, rec in enumerate(res.records):
            lines.append(f"{k},{rank},{rec.subspace_id},{rec.distance!r},{int(rec.converged)}")
        if res.flagged:
            logger.warning("query %d: solver hit the iteration cap for subspaces %s", k, list(res.flagged))
    if args.out:
        atomic_write(args.out, "\n".join(lines) + "\n")


def _eval_config(args, d0, n_back=1):
    opts = _solver(args)
    return SearchConfig(d=d0, trials=args.trials, n_back=n_back, seed=args.seed,
                        sketch_solver=opts, ambient_solver=opts, verify=args.verify)


def _cmd_eval_sweep(args):
    instance = _load_instance(args)
    collection = instance[0]
    d_values = args.d
    if d_values is None:
        d_values = [suggest_dimension(collection.rank, collection.n, 0.9)]
        print(f"using suggested sketch dimension d={d_values[0]}", file=sys.stderr)
    config = _eval_config(args, d_values[0], args.nback)
    result = sweep_dimension(instance, sorted(d_values), config, threads=args.threads)
    _emit(args, result.to_csv(timing=args.timing))


def _cmd_eval_nback(args):
    instance = _load_instance(args)
    result = sweep_nback(instance, args.d, args.nback, _eval_config(args, args.d[0]), threads=args.threads)
    _emit(args, result.to_csv(timing=args.timing))


def _cmd_distort(args):
    collection, queries = _load_instance(args)
    if not 0 <= args.query_index < len(queries):
        raise UsageError(f"--query-index {args.query_index} out of range (have {len(queries)} queries)")
    q = queries[args.query_index]
    sid = args.subspace if args.subspace is not None else (q.label if q.label is not None else 0)
    if not 0 <= sid < collection.n:
        raise UsageError(f"--subspace {sid} out of range (n={collection.n})")
    samples = distortion_histogram(q, collection[sid], args.d, args.matrices, args.seed, _solver(args))
    _emit(args, "psi\n" + "".join(f"{s.psi!r}\n" for s in samples))
    summary = distortion_summary(samples)
    print("psi quantiles: " + " ".join(f"{k}={v:.4g}" for k, v in summary.items()), file=sys.stderr)


COMMANDS = {
    "gen": _cmd_gen,
    "fit": _cmd_fit,
    "index": _cmd_index,
    "query": _cmd_query,
    "eval-sweep": _cmd_eval_sweep,
    "eval-nback": _cmd_eval_nback,
    "distort": _cmd_distort,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads is None:
            args.threads = _default_threads()
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:
        # --help and --version
        return exc.code or 0
    logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"l1ns {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"l1ns {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
