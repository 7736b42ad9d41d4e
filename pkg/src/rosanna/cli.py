"""Command-line entry point: ``rosanna <subcommand> ...``.

Numeric output is CSV with a header row, written to ``--out`` or stdout.
Exit codes: 0 success, 1 usage error, 2 I/O error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from . import bench, osstats
from .dataset import (DISTRIBUTIONS, SyntheticSpec, VectorSet, gen_synthetic, linear_scan_batch,
                      load_vectors, read_ground_truth, save_vectors, write_ground_truth)
from .errors import DatasetError, IndexFormatError, InvariantViolation
from .index import build, load_index, save_index, search_batch
from .preprocess import intrinsic_dim, kmeans_fit, pca_fit

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3

log = logging.getLogger("rosanna")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return tuple(int(x) for x in str(text).split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _open_out(path):
    if hasattr(path, "write"):
        return path, False
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _write_rows(path, header, rows):
    f, own = _open_out(path)
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, (float, np.floating)) else v for v in row])
    finally:
        if own:
            f.close()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args):
    vs = gen_synthetic(SyntheticSpec(args.dist, args.n, args.k, args.seed))
    save_vectors(args.out, vs)
    log.info("wrote %d x %d vectors to %s", vs.n, vs.k, args.out)


def cmd_gt(args):
    base = load_vectors(args.base)
    queries = load_vectors(args.queries)
    gt = linear_scan_batch(base, queries.data, args.threads)
    if args.out in (None, "-"):
        sys.stdout.write("query,nn_id,nn_dist_sq\n")
        for q, (i, d) in enumerate(zip(gt.nn_id, gt.nn_dist_sq)):
            sys.stdout.write(f"{q},{int(i)},{float(d)!r}\n")
    else:
        write_ground_truth(args.out, gt)


def _pca_for(base, d_classify):
    return pca_fit(base) if d_classify else None


def cmd_build(args):
    base = load_vectors(args.base)
    pca = _pca_for(base, args.d_classify)
    index = build(base, args.g, args.r, args.seed, c_default=args.c, pca=pca,
                  d_classify=args.d_classify or 16)
    if index.total_entries != index.r_count * base.n:
        raise InvariantViolation("table entry count differs from r_count * n")
    save_index(args.out, index)
    _write_rows(None, ["n", "k", "g", "r", "cones_total", "entries", "build_seconds"],
                [[base.n, base.k, index.g, index.r_count, sum(index.cones_per_table()),
                  index.total_entries, index.build_seconds]])


def cmd_search(args):
    base = load_vectors(args.base)
    queries = load_vectors(args.queries)
    index = load_index(args.index, base)
    c = args.c or index.c_default
    res = search_batch(index, queries.data, c=c, k_nn=args.knn, threads=args.threads)
    ids, dists = res.ids.copy(), res.dists.copy()
    if args.fallback:
        empty = ids[:, 0] < 0
        if empty.any():
            gt_empty = linear_scan_batch(base, queries.data[empty])
            ids[empty, 0] = gt_empty.nn_id
            dists[empty, 0] = gt_empty.nn_dist_sq
    rows = [[q, j, int(ids[q, j]), float(dists[q, j])]
            for q in range(len(ids)) for j in range(ids.shape[1])]
    _write_rows(args.out, ["query", "rank", "id", "dist_sq"], rows)
    if args.check_gt:
        gt = read_ground_truth(args.check_gt)
        if len(gt) != len(ids):
            raise InvariantViolation(f"{len(ids)} queries but {len(gt)} ground-truth rows")
        recall = bench.recall_at_1(dists[:, 0], gt)
        frac = float(res.counters[:, 0].mean() / max(1, base.n))
        _write_rows(None if args.out not in (None, "-") else sys.stderr,
                    ["recall_at_1", "candidate_fraction"], [[recall, frac]])


def _grid_data(args):
    if args.base:
        base = load_vectors(args.base)
        if not args.queries:
            raise SystemExit(_usage(args, "--queries is required with --base"))
        queries = load_vectors(args.queries).data
    else:
        base = gen_synthetic(SyntheticSpec(args.dist, args.n, args.k, args.seed))
        queries = gen_synthetic(SyntheticSpec(args.dist, args.nq, args.k, args.seed + 1)).data
    return base, queries


def _usage(args, message):
    args._parser.print_usage(sys.stderr)
    sys.stderr.write(f"error: {message}\n")
    return EXIT_USAGE


def cmd_grid(args):
    base, queries = _grid_data(args)
    gt = read_ground_truth(args.gt) if args.gt else None
    spec = bench.GridSpec(
        base=base, queries=queries, g_list=args.g_list or (), r_list=args.r_list,
        c_list=args.c_list, seed=args.seed, ground_truth=gt, repeats=args.repeats,
        threads=args.threads, d_classify=args.d_classify, m=args.m, w_list=args.w_list,
    )
    records = bench.run_grid(spec, progress=lambda r: log.info(
        "g=%d r=%d c=%d recall=%.4f frac=%.4f", r.g, r.r, r.c, r.recall_at_1, r.candidate_fraction))
    f, own = _open_out(args.out)
    try:
        bench.write_csv(f, records)
    finally:
        if own:
            f.close()
    if args.pareto_out:
        bench.write_csv(args.pareto_out, bench.pareto_envelope(records))


def cmd_osstats(args):
    if args.mode in ("cdf", "pdf"):
        xs = np.linspace(0.0 if args.mode == "cdf" else -args.xmax, args.xmax, args.points)
        table = osstats.cdf_curves(args.k, xs) if args.mode == "cdf" else osstats.pdf_curves(args.k, xs)
        header = ["x"] + [f"{args.mode}_{i}" for i in range(1, args.k + 1)]
        _write_rows(args.out, header, table.tolist())
    elif args.mode == "energy":
        e = osstats.sorted_energy(args.k)
        frac = e / e.sum()
        rows = [[i + 1, e[i], frac[i], frac[:i + 1].sum()] for i in range(args.k)]
        _write_rows(args.out, ["rank", "energy", "fraction", "cumulative"], rows)
    else:
        g_list = args.g_list or tuple(range(args.f, args.k + 1))
        p_top, p_sign = osstats.agreement_table(args.k, args.log2n, args.f, g_list, args.r_list,
                                                args.trials, args.seed)
        rows = [[g, r, args.f, p_top[a, b], p_sign[a, b]]
                for a, g in enumerate(g_list) for b, r in enumerate(args.r_list)]
        _write_rows(args.out, ["g", "r", "f", "p_topf_in_topg", "p_sign_agree"], rows)


def cmd_pca(args):
    base = load_vectors(args.base)
    model = pca_fit(base)
    total = model.eigvals.sum()
    norm = model.eigvals / total if total > 0 else model.eigvals
    rows = [[i + 1, model.eigvals[i], norm[i], norm[:i + 1].sum()] for i in range(model.k)]
    _write_rows(args.out, ["component", "eigval", "normalized", "cumulative"], rows)
    _write_rows(None if args.out not in (None, "-") else sys.stderr,
                ["k", "intrinsic_dim", f"energy_first_{args.d}"],
                [[model.k, intrinsic_dim(model.eigvals), model.energy(args.d)]])


def cmd_kmeans(args):
    base = load_vectors(args.base)
    q = kmeans_fit(base, args.m, args.iters, args.seed)
    _write_rows(args.out, ["iteration", "distortion"], list(enumerate(q.distortion_history)))
    if args.centroids:
        save_vectors(args.centroids, VectorSet(q.centroids.astype(np.float32), "kmeans"))


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _globals(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(0), help="random seed")
    parser.add_argument("--threads", type=int, default=default(1), help="worker threads")
    parser.add_argument("--config", default=default(None), help="key=value defaults file")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False))


def make_parser():
    parser = _Parser(prog="rosanna", description=__doc__.splitlines()[0])
    _globals(parser, suppress=False)
    common = _Parser(add_help=False)
    _globals(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    p.add_argument("--dist", choices=DISTRIBUTIONS, default="gaussian")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True, help=".fvecs or raw output path")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("gt", parents=[common], help="exact nearest neighbors by linear scan")
    p.add_argument("--base", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gt)

    p = sub.add_parser("build", parents=[common], help="build and save an index")
    p.add_argument("--base", required=True)
    p.add_argument("--g", type=int, default=3)
    p.add_argument("--r", type=int, default=8)
    p.add_argument("--c", type=int, default=4, help="default probe depth stored in the index")
    p.add_argument("--d-classify", type=int, default=None,
                   help="classify on this many PCA components (enables PCA)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("search", parents=[common], help="query a saved index")
    p.add_argument("--index", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--c", type=int, default=None)
    p.add_argument("--knn", type=int, default=1)
    p.add_argument("--fallback", action="store_true", help="linear scan when no candidate")
    p.add_argument("--check-gt", help="ground-truth CSV; reports recall@1")
    p.add_argument("--out")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("grid", parents=[common], help="parameter grid benchmark")
    p.add_argument("--base")
    p.add_argument("--queries")
    p.add_argument("--gt", help="precomputed ground-truth CSV")
    p.add_argument("--dist", choices=DISTRIBUTIONS, default="gaussian")
    p.add_argument("--n", type=int, default=2**16)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--nq", type=int, default=1000)
    p.add_argument("--g-list", type=_int_list, default=None)
    p.add_argument("--r-list", type=_int_list, default=bench.DEFAULT_R_LIST)
    p.add_argument("--c-list", type=_int_list, default=bench.DEFAULT_C_LIST)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--d-classify", type=int, default=None)
    p.add_argument("--m", type=int, default=None, help="coarse k-means clusters (two-stage)")
    p.add_argument("--w-list", type=_int_list, default=(8,))
    p.add_argument("--out")
    p.add_argument("--pareto-out")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("osstats", parents=[common], help="order-statistics curves and tables")
    p.add_argument("mode", choices=("cdf", "pdf", "energy", "agreement"))
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--xmax", type=float, default=4.0)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--log2n", type=int, default=16)
    p.add_argument("--f", type=int, default=1)
    p.add_argument("--g-list", type=_int_list, default=None)
    p.add_argument("--r-list", type=_int_list, default=bench.DEFAULT_R_LIST)
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_osstats)

    p = sub.add_parser("pca", parents=[common], help="eigen-spectrum and intrinsic dimensionality")
    p.add_argument("--base", required=True)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("kmeans", parents=[common], help="coarse k-means quantizer")
    p.add_argument("--base", required=True)
    p.add_argument("--m", type=int, default=256)
    p.add_argument("--iters", type=int, default=25)
    p.add_argument("--centroids", help="write centroids to this vector file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_kmeans)

    return parser, sub


def _apply_config(parser, sub, argv, path):
    from .bench import read_config

    cfg = read_config(path)
    first = parser.parse_args(argv)
    subparser = sub.choices[first.command]
    known = {a.dest for a in subparser._actions} | {a.dest for a in parser._actions}
    unknown = sorted(set(cfg) - known)
    if unknown:
        parser.error(f"unknown config keys: {', '.join(unknown)}")
    parser.set_defaults(**{k: v for k, v in cfg.items() if k in {a.dest for a in parser._actions}})
    subparser.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, sub = make_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            args = _apply_config(parser, sub, argv, args.config)
    except OSError as exc:
        sys.stderr.write(f"rosanna: cannot read config: {exc}\n")
        return EXIT_IO
    except ValueError as exc:
        sys.stderr.write(f"rosanna: {exc}\n")
        return EXIT_USAGE
    args._parser = sub.choices[args.command]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads > 1:
        import numba
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        args.func(args)
    except (OSError, DatasetError, IndexFormatError) as exc:
        sys.stderr.write(f"rosanna: {exc}\n")
        return EXIT_IO
    except InvariantViolation as exc:
        sys.stderr.write(f"rosanna: invariant violated: {exc}\n")
        return EXIT_INVARIANT
    except (ValueError, OverflowError) as exc:
        sys.stderr.write(f"rosanna: {exc}\n")
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
