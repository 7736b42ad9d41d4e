"""Recall@1 / speed-up measurements over parameter grids.

A query is scored correct when the returned squared distance equals the
true NN distance (relative tolerance 1e-6), so duplicate points do not
penalize a search that returns a different copy. Wall-clock speed-up is
the best-of-``repeats`` linear scan time divided by the best-of-``repeats``
search time over the same query set; the candidate fraction (distinct
points whose distance was computed, over ``n``) is reported alongside as a
machine-independent proxy.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .cones import cone_count
from .dataset import GroundTruth, VectorSet, linear_scan_batch
from .index import RosannaIndex, build, search_batch
from .preprocess import (TwoStageIndex, build_two_stage, kmeans_fit, pca_fit,
                         two_stage_search)

log = logging.getLogger(__name__)

RECALL_RTOL = 1e-6
CSV_COLUMNS = ("g", "r", "c", "m", "w", "recall_at_1", "speedup_wallclock",
               "candidate_fraction", "build_time_rel", "memory_overhead_rel")

DEFAULT_R_LIST = (1, 2, 4, 8, 16)
DEFAULT_C_LIST = (1, 2, 4, 8, 16, 32, 64, 128)

# Published UBC SIFT 100K results: (label, g, r, c, recall, speed-up, memory, build time)
SIFT100K_REFERENCE = (
    ("pivot", 4, 8, 4, 0.905, 100, 0.36, 0.36),
    ("G-", 3, 8, 4, 0.961, 37, 0.16, 0.35),
    ("G+", 5, 8, 4, 0.814, 168, 0.69, 0.36),
    ("R-", 4, 4, 4, 0.788, 180, 0.18, 0.26),
    ("R+", 4, 16, 4, 0.966, 54, 0.71, 0.57),
    ("C-", 4, 8, 2, 0.841, 145, 0.36, 0.35),
    ("C+", 4, 8, 8, 0.946, 66, 0.36, 0.36),
    ("high speed", 6, 2, 16, 0.595, 404, 0.24, 0.20),
    ("high accu.", 3, 16, 8, 0.999, 14, 0.30, 0.56),
    ("low memory", 3, 1, 128, 0.901, 18, 0.03, 0.17),
)


@dataclass
class RunRecord:
    g: int
    r: int
    c: int
    recall_at_1: float
    speedup_wallclock: float
    candidate_fraction: float
    build_time_rel: float
    memory_overhead_rel: float
    m: int | None = None
    w: int | None = None
    d_classify: int | None = None

    def row(self):
        d = asdict(self)
        return {col: ("" if d[col] is None else d[col]) for col in CSV_COLUMNS}


def default_g_list(k):
    return tuple(range(1, max(1, k // 2) + 1))


@dataclass
class GridSpec:
    base: VectorSet
    queries: np.ndarray
    g_list: tuple = ()
    r_list: tuple = DEFAULT_R_LIST
    c_list: tuple = DEFAULT_C_LIST
    seed: int = 0
    ground_truth: GroundTruth | None = None
    repeats: int = 3
    threads: int = 1
    d_classify: int | None = None
    m: int | None = None
    w_list: tuple = (1,)
    kmeans_iters: int = 25

    def __post_init__(self):
        if not self.g_list:
            k = self.d_classify or self.base.k
            self.g_list = default_g_list(k)
        for name in ("g_list", "r_list", "c_list"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")


def correct_mask(dists, gt: GroundTruth, rtol=RECALL_RTOL):
    dists = np.asarray(dists, dtype=np.float64)
    true = np.asarray(gt.nn_dist_sq, dtype=np.float64)
    return np.isfinite(dists) & (np.abs(dists - true) <= rtol * np.maximum(true, 1e-30))


def recall_at_1(dists, gt: GroundTruth) -> float:
    if len(dists) != len(gt):
        raise ValueError(f"{len(dists)} results but {len(gt)} ground-truth entries")
    return float(correct_mask(dists, gt).mean()) if len(gt) else 0.0


def time_linear_scan(base: VectorSet, queries, repeats=3) -> float:
    q = np.ascontiguousarray(queries, dtype=np.float64)
    best = np.inf
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        _kernels.scan_batch_serial(base.data, q)
        best = min(best, time.perf_counter() - t0)
    return best


def evaluate(index: RosannaIndex, queries, ground_truth: GroundTruth, c: int,
             repeats: int = 3, scan_seconds: float | None = None, threads: int = 1,
             fallback: bool = False) -> RunRecord:
    """One grid cell: recall, speed-up and candidate fraction at probe depth ``c``."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if len(queries) != len(ground_truth):
        raise ValueError(f"{len(queries)} queries but {len(ground_truth)} ground-truth entries")
    if scan_seconds is None:
        scan_seconds = time_linear_scan(index.dataset, queries, repeats)
    best = None
    seconds = np.inf
    for _ in range(max(1, repeats)):
        res = search_batch(index, queries, c=c, threads=threads)
        seconds = min(seconds, res.seconds)
        best = res
    dists = best.nn_dist_sq.copy()
    if fallback:
        empty = best.nn_id < 0
        if empty.any():
            t0 = time.perf_counter()
            dists[empty] = linear_scan_batch(index.dataset, queries[empty]).nn_dist_sq
            seconds += time.perf_counter() - t0
    return RunRecord(
        g=index.g, r=index.r_count, c=c,
        recall_at_1=recall_at_1(dists, ground_truth),
        speedup_wallclock=scan_seconds / max(seconds, 1e-12),
        candidate_fraction=float(best.counters[:, 0].mean() / max(1, index.n)),
        build_time_rel=index.build_seconds / max(scan_seconds, 1e-12),
        memory_overhead_rel=index.memory_bytes() / max(1, index.dataset.nbytes),
        d_classify=index.d_classify or None,
    )


def evaluate_two_stage(ts: TwoStageIndex, queries, ground_truth: GroundTruth, w: int, c: int,
                       repeats: int = 1, scan_seconds: float | None = None,
                       build_seconds: float = 0.0) -> RunRecord:
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if scan_seconds is None:
        scan_seconds = time_linear_scan(ts.dataset, queries, repeats)
    scratch = ts.new_scratch()
    seconds = np.inf
    for _ in range(max(1, repeats)):
        dists = np.empty(len(queries))
        touched = np.empty(len(queries))
        t0 = time.perf_counter()
        for qi, q in enumerate(queries):
            _, dists[qi] = two_stage_search(ts, q, w, c, scratch)
            touched[qi] = scratch.distances_computed
        seconds = min(seconds, time.perf_counter() - t0)
    idx = next(x for x in ts.clusters if x is not None)
    mem = sum(x.memory_bytes() for x in ts.clusters if x is not None) + ts.quantizer.centroids.nbytes
    return RunRecord(
        g=idx.g, r=idx.r_count, c=c, m=ts.m, w=w,
        recall_at_1=recall_at_1(dists, ground_truth),
        speedup_wallclock=scan_seconds / max(seconds, 1e-12),
        candidate_fraction=float(touched.mean() / max(1, ts.dataset.n)),
        build_time_rel=build_seconds / max(scan_seconds, 1e-12),
        memory_overhead_rel=mem / max(1, ts.dataset.nbytes),
        d_classify=idx.d_classify or None,
    )


def _feasible(g, k_cls):
    if g > k_cls:
        return f"g={g} exceeds classification dimension {k_cls}"
    try:
        cone_count(k_cls, g)
    except OverflowError as exc:
        return str(exc)
    return None


def run_grid(spec: GridSpec, progress=None) -> list[RunRecord]:
    """Every (g, r, c) cell; indexes are rebuilt only when (g, r) changes."""
    queries = np.ascontiguousarray(spec.queries, dtype=np.float64)
    gt = spec.ground_truth or linear_scan_batch(spec.base, queries, spec.threads)
    scan_seconds = time_linear_scan(spec.base, queries, spec.repeats)
    pca = pca_fit(spec.base) if spec.d_classify else None
    k_cls = spec.d_classify or spec.base.k
    quantizer = None
    if spec.m:
        quantizer = kmeans_fit(spec.base, spec.m, spec.kmeans_iters, spec.seed)
    records = []
    for g in spec.g_list:
        reason = _feasible(g, k_cls)
        if reason:
            log.warning("skipping g=%d: %s", g, reason)
            continue
        for r in spec.r_list:
            if quantizer is None:
                index = build(spec.base, g, r, spec.seed, pca=pca,
                              d_classify=spec.d_classify or 16)
                for c in spec.c_list:
                    rec = evaluate(index, queries, gt, c, spec.repeats, scan_seconds, spec.threads)
                    records.append(rec)
                    if progress:
                        progress(rec)
            else:
                t0 = time.perf_counter()
                ts = build_two_stage(spec.base, quantizer, g, r, spec.seed, pca=pca,
                                     d_classify=spec.d_classify or 16)
                build_s = time.perf_counter() - t0
                for w in spec.w_list:
                    for c in spec.c_list:
                        rec = evaluate_two_stage(ts, queries, gt, w, c, spec.repeats,
                                                 scan_seconds, build_s)
                        records.append(rec)
                        if progress:
                            progress(rec)
    return records


def pareto_envelope(records):
    """Records not dominated in (recall, speed-up), sorted by increasing recall."""
    ordered = sorted(records, key=lambda x: (-x.recall_at_1, -x.speedup_wallclock))
    kept = []
    best_higher = -np.inf  # best speed among strictly higher recall
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].recall_at_1 == ordered[i].recall_at_1:
            j += 1
        group = ordered[i:j]
        top = group[0].speedup_wallclock
        for rec in group:
            if rec.speedup_wallclock == top and top > best_higher:
                kept.append(rec)
        best_higher = max(best_higher, top)
        i = j
    return sorted(kept, key=lambda x: (x.recall_at_1, -x.speedup_wallclock))


def write_csv(path_or_file, records) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for rec in records:
            row = rec.row()
            for key in ("recall_at_1", "speedup_wallclock", "candidate_fraction",
                        "build_time_rel", "memory_overhead_rel"):
                row[key] = f"{row[key]:.6g}"
            writer.writerow(row)
    finally:
        if own:
            f.close()


def read_csv(path) -> list[RunRecord]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            opt = {k: (int(row[k]) if row[k] else None) for k in ("m", "w")}
            out.append(RunRecord(
                g=int(row["g"]), r=int(row["r"]), c=int(row["c"]),
                recall_at_1=float(row["recall_at_1"]),
                speedup_wallclock=float(row["speedup_wallclock"]),
                candidate_fraction=float(row["candidate_fraction"]),
                build_time_rel=float(row["build_time_rel"]),
                memory_overhead_rel=float(row["memory_overhead_rel"]), **opt))
    return out


def read_config(path) -> dict:
    """``key=value`` lines; ``#`` starts a comment. Keys use dashes or underscores."""
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out
