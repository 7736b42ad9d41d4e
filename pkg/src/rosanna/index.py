"""Cone hash tables over several rotated bases, and the search that visits them.

For every rotation the data points are projected on the rotated basis,
classified into cones, and grouped into buckets. A query is projected on
each basis, each projection yields an ordered probe list, and buckets are
visited rank by rank across rotations (all rotations' first cones, then
all second cones, ...). Each point is analyzed at most once per query, with
partial distance elimination against the current best.

Tables are stored flat: ``keys`` holds the sorted integer cone codes of all
rotations back to back (``key_offsets`` delimits rotations), and
``bucket_offsets`` delimits each cone's slice of ``ids``.
"""

from __future__ import annotations

import io
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .cones import code_to_key, cone_count, decode_key, encode_key, key_code, key_nbytes
from .dataset import VectorSet, linear_scan_nn
from .errors import EmptyIndexError, IndexFormatError
from .rotations import BasisSet, OrthoBasis, gen_bases

PRUNED = None
NO_CANDIDATE = (_kernels.NO_ID, float("inf"))

MAGIC = b"ROSANNA\x00"
VERSION = 1


def pde_distance(x, y, bound=float("inf")):
    """Squared distance, or :data:`PRUNED` once the partial sum exceeds ``bound``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("pde_distance needs vectors of equal length")
    s = 0.0
    for a, b in zip(x, y):
        s += (a - b) * (a - b)
        if s > bound:
            return PRUNED
    return s


@dataclass
class SearchScratch:
    """Per-query mutable state, reused across queries by bumping ``epoch``.

    A point counts as analyzed for the current query iff
    ``visited[id] == epoch``.
    """

    visited: np.ndarray
    epoch: int = 0
    counters: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))

    @classmethod
    def for_size(cls, n):
        return cls(np.zeros(n, dtype=np.int32))

    def begin(self):
        if self.epoch >= np.iinfo(np.int32).max - 1:
            self.visited[:] = 0
            self.epoch = 0
        self.epoch += 1
        self.counters[:] = 0

    @property
    def distances_computed(self) -> int:
        return int(self.counters[0])

    @property
    def candidates_touched(self) -> int:
        return int(self.counters[1])

    @property
    def pruned(self) -> int:
        return int(self.counters[2])


@dataclass(eq=False)
class RosannaIndex:
    g: int
    r_count: int
    c_default: int
    bases: BasisSet
    keys: np.ndarray
    key_offsets: np.ndarray
    bucket_offsets: np.ndarray
    ids: np.ndarray
    dataset: VectorSet
    search_data: np.ndarray
    pca: object = None
    d_classify: int = 0
    seed: int = 0
    build_seconds: float = 0.0

    def __post_init__(self):
        self._binom = _kernels.binomial_table(self.bases.k, self.g)
        self._stacked = np.ascontiguousarray(self.bases.stacked())

    # -- structure -------------------------------------------------------

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def k(self) -> int:
        return self.dataset.k

    @property
    def k_classify(self) -> int:
        return self.bases.k

    @property
    def n_members(self) -> int:
        return len(self.ids) // self.r_count if self.r_count else 0

    @property
    def total_entries(self) -> int:
        return len(self.ids)

    def cones_per_table(self) -> list[int]:
        return [int(b - a) for a, b in zip(self.key_offsets[:-1], self.key_offsets[1:])]

    def table(self, r):
        """Rotation ``r`` as a dict ``code -> id array`` (for inspection)."""
        lo, hi = self.key_offsets[r], self.key_offsets[r + 1]
        return {
            int(self.keys[p]): self.ids[self.bucket_offsets[p]:self.bucket_offsets[p + 1]]
            for p in range(lo, hi)
        }

    def bucket(self, r, key) -> np.ndarray:
        code = key if isinstance(key, (int, np.integer)) else key_code(key)
        lo, hi = int(self.key_offsets[r]), int(self.key_offsets[r + 1])
        pos = _kernels._lookup(self.keys, lo, hi, np.int64(code))
        if pos < 0:
            return self.ids[:0]
        return self.ids[self.bucket_offsets[pos]:self.bucket_offsets[pos + 1]]

    def memory_bytes(self, ids_only=False) -> int:
        if ids_only:
            return self.ids.nbytes
        return self.ids.nbytes + self.keys.nbytes + self.bucket_offsets.nbytes + self.key_offsets.nbytes

    # -- queries ---------------------------------------------------------

    def prepare_queries(self, queries):
        """Map raw queries to (distance-space, classification-space) float64 arrays."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if q.shape[1] != self.k:
            raise ValueError(f"query length {q.shape[1]} does not match k={self.k}")
        if self.pca is None:
            q = np.ascontiguousarray(q)
            return q, q
        full = self.pca.transform(q)
        return np.ascontiguousarray(full), np.ascontiguousarray(full[:, :self.d_classify])

    def new_scratch(self) -> SearchScratch:
        return SearchScratch.for_size(self.search_data.shape[0])

    def exact_distance(self, i, query) -> float:
        return float(_kernels.sq_dist(self.dataset.data[i], np.asarray(query, dtype=np.float64)))


def _classification_space(dataset, pca, d_classify):
    if pca is None:
        return dataset.data, dataset.data
    full = pca.transform(dataset.data).astype(np.float32)
    return np.ascontiguousarray(full[:, :d_classify]), full


def _fill_tables(points, member_ids, g, bases, binom):
    keys, key_off, bucket_sizes, ids = [], [0], [], []
    for basis in bases:
        if len(points):
            projected = np.ascontiguousarray(points @ basis.matrix)
            codes = _kernels.classify_codes(projected, g, binom)
        else:
            codes = np.zeros(0, dtype=np.int64)
        order = np.argsort(codes, kind="stable")
        uniq, counts = np.unique(codes[order], return_counts=True)
        keys.append(uniq)
        bucket_sizes.append(counts)
        ids.append(member_ids[order])
        key_off.append(key_off[-1] + len(uniq))
    keys = np.concatenate(keys).astype(np.int64) if keys else np.zeros(0, np.int64)
    sizes = np.concatenate(bucket_sizes) if bucket_sizes else np.zeros(0, np.int64)
    bucket_off = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    ids = np.concatenate(ids).astype(np.int32) if ids else np.zeros(0, np.int32)
    return keys, np.asarray(key_off, dtype=np.int64), bucket_off, ids


def build(dataset: VectorSet, g: int, r_count: int, seed: int = 0, c_default: int = 1,
          pca=None, d_classify: int = 16, member_ids=None, bases: BasisSet | None = None,
          search_data=None) -> RosannaIndex:
    """Build the ``r_count`` cone tables.

    With ``pca`` set, points are classified on their first ``d_classify``
    principal coordinates, while distances use all principal coordinates.
    ``member_ids`` restricts the tables to a subset of rows (ids stay global).
    """
    if r_count < 1:
        raise ValueError("r_count must be >= 1")
    k_cls = min(d_classify, dataset.k) if pca is not None else dataset.k
    if pca is not None and not 1 <= d_classify <= dataset.k:
        raise ValueError(f"d_classify={d_classify} out of range for k={dataset.k}")
    if dataset.n > 0 and not 1 <= g <= k_cls:
        raise ValueError(f"g={g} out of range for k={k_cls}")
    if dataset.n > 0:
        cone_count(k_cls, g)  # raises OverflowError when codes cannot fit

    t0 = time.perf_counter()
    if bases is None:
        bases = gen_bases(max(k_cls, 1), r_count, seed)
    if search_data is None:
        cls_points, search_data = _classification_space(dataset, pca, d_classify)
    else:
        cls_points = search_data[:, :k_cls]
    if member_ids is None:
        member_ids = np.arange(dataset.n, dtype=np.int32)
    else:
        member_ids = np.asarray(member_ids, dtype=np.int32)
    points = np.asarray(cls_points, dtype=np.float64)[member_ids] if dataset.n else np.zeros((0, bases.k))
    binom = _kernels.binomial_table(bases.k, max(g, 1))
    keys, key_off, bucket_off, ids = _fill_tables(points, member_ids, max(g, 1), bases, binom)
    elapsed = time.perf_counter() - t0
    return RosannaIndex(
        g=g, r_count=r_count, c_default=c_default, bases=bases, keys=keys,
        key_offsets=key_off, bucket_offsets=bucket_off, ids=ids, dataset=dataset,
        search_data=np.ascontiguousarray(search_data), pca=pca,
        d_classify=d_classify if pca is not None else 0, seed=seed, build_seconds=elapsed,
    )


def _check_searchable(index, c):
    if index.total_entries == 0:
        raise EmptyIndexError("search on an empty index")
    if c < 1:
        raise ValueError("c must be >= 1")


def search_knn(index: RosannaIndex, query, k_nn: int = 1, c: int | None = None,
               scratch: SearchScratch | None = None, fallback: bool = False,
               use_pde: bool = True) -> list[tuple[int, float]]:
    """Up to ``k_nn`` nearest candidates as ``(id, squared distance)``, closest first.

    Returns an empty list when no probed cone holds any point, unless
    ``fallback`` is set, in which case an exact scan answers the query.
    """
    c = index.c_default if c is None else c
    _check_searchable(index, c)
    if k_nn < 1:
        raise ValueError("k_nn must be >= 1")
    scratch = scratch or index.new_scratch()
    qd, qc = index.prepare_queries(query)
    best_d = np.full(k_nn, np.inf)
    best_i = np.full(k_nn, _kernels.NO_ID, dtype=np.int64)
    scratch.begin()
    _kernels.search_into(qd[0], qc[0], index._stacked, index.g, c, index._binom, index.keys,
                         index.key_offsets, index.bucket_offsets, index.ids, index.search_data,
                         scratch.visited, scratch.epoch, best_d, best_i, scratch.counters, use_pde)
    found = [(int(i), float(d)) for i, d in zip(best_i, best_d) if i != _kernels.NO_ID]
    if not found and fallback:
        return [linear_scan_nn(index.dataset, query)]
    if index.pca is not None:
        q = np.asarray(query, dtype=np.float64)
        found = [(i, index.exact_distance(i, q)) for i, _ in found]
    return found


def search(index: RosannaIndex, query, c: int | None = None,
           scratch: SearchScratch | None = None, fallback: bool = False,
           use_pde: bool = True) -> tuple[int, float]:
    """Approximate NN as ``(id, squared distance)``.

    ``(-1, inf)`` (:data:`NO_CANDIDATE`) means every probed cone was empty.
    """
    found = search_knn(index, query, 1, c, scratch, fallback, use_pde)
    return found[0] if found else NO_CANDIDATE


@dataclass
class BatchResult:
    ids: np.ndarray        # (nq, k_nn), -1 where nothing was found
    dists: np.ndarray      # (nq, k_nn) squared distances in the original space
    counters: np.ndarray   # (nq, 3): distances started, entries touched, pruned
    seconds: float

    @property
    def nn_id(self):
        return self.ids[:, 0]

    @property
    def nn_dist_sq(self):
        return self.dists[:, 0]


def search_batch(index: RosannaIndex, queries, c: int | None = None, k_nn: int = 1,
                 threads: int = 1, use_pde: bool = True) -> BatchResult:
    """Search many queries inside one compiled loop; timing covers projection and probing."""
    c = index.c_default if c is None else c
    _check_searchable(index, c)
    t0 = time.perf_counter()
    qd, qc = index.prepare_queries(queries)
    kernel = _kernels.search_batch_parallel if threads > 1 else _kernels.search_batch_serial
    dists, ids, counters = kernel(qd, qc, index._stacked, index.g, c, index._binom, index.keys,
                                  index.key_offsets, index.bucket_offsets, index.ids,
                                  index.search_data, k_nn, max(1, threads), use_pde)
    seconds = time.perf_counter() - t0
    if index.pca is not None:
        raw = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        for q in range(ids.shape[0]):
            for j in range(k_nn):
                if ids[q, j] >= 0:
                    dists[q, j] = index.exact_distance(ids[q, j], raw[q])
    return BatchResult(ids, dists, counters, seconds)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------
#
# header:  magic[8] version:u32 n:u64 k:u64 k_classify:u64 g:u64 r_count:u64
#          c_default:u64 seed:i64
# bases:   r_count x (k_classify:u64 id:u64 k_classify^2 x f64 row-major)
# tables:  r_count x (cones:u64, cones x (key bytes, count:u32, count x i32 ids))
# sections: tag[4] length:u64 payload, until end of file ("PCA0" holds the model)


def _write_index_body(f, index):
    f.write(MAGIC)
    f.write(struct.pack("<I7Q", VERSION, index.n, index.k, index.k_classify, index.g,
                        index.r_count, index.c_default, index.seed & (2**64 - 1)))
    for basis in index.bases:
        f.write(struct.pack("<QQ", basis.k, basis.id))
        f.write(np.ascontiguousarray(basis.matrix, dtype="<f8").tobytes())
    for r in range(index.r_count):
        lo, hi = int(index.key_offsets[r]), int(index.key_offsets[r + 1])
        f.write(struct.pack("<Q", hi - lo))
        for p in range(lo, hi):
            f.write(encode_key(code_to_key(int(index.keys[p]), index.g)))
            ids = index.ids[index.bucket_offsets[p]:index.bucket_offsets[p + 1]]
            f.write(struct.pack("<I", len(ids)))
            f.write(ids.astype("<i4").tobytes())


def _pca_payload(pca, d_classify):
    buf = io.BytesIO()
    k = len(pca.mean)
    buf.write(struct.pack("<QQ", k, d_classify))
    for arr in (pca.mean, pca.eigvecs, pca.eigvals):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def _read_pca_payload(payload):
    from .preprocess import PcaModel

    k, d = struct.unpack_from("<QQ", payload)
    arr = np.frombuffer(payload, dtype="<f8", offset=16)
    if arr.size != k + k * k + k:
        raise IndexFormatError("PCA section has the wrong size")
    mean, vecs, vals = arr[:k], arr[k:k + k * k].reshape(k, k), arr[k + k * k:]
    return PcaModel(mean.copy(), vecs.copy(), vals.copy()), int(d)


def save_index(path, index: RosannaIndex, extra_sections=()) -> None:
    with open(path, "wb") as f:
        _write_index_body(f, index)
        sections = list(extra_sections)
        if index.pca is not None:
            sections.insert(0, (b"PCA0", _pca_payload(index.pca, index.d_classify)))
        for tag, payload in sections:
            f.write(tag + struct.pack("<Q", len(payload)) + payload)


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, nbytes):
        if self.pos + nbytes > len(self.raw):
            raise IndexFormatError(f"index file truncated at byte {self.pos}")
        chunk = self.raw[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def at_end(self):
        return self.pos == len(self.raw)


def _read_index_body(rd, dataset):
    if rd.take(len(MAGIC)) != MAGIC:
        raise IndexFormatError("not a ROSANNA index file (bad magic)")
    version, n, k, kc, g, r_count, c_default, seed = rd.unpack("<I7Q")
    if version != VERSION:
        raise IndexFormatError(f"unsupported index version {version}")
    if seed >= 2**63:
        seed -= 2**64
    if dataset.n != n or dataset.k != k:
        raise IndexFormatError(
            f"index was built for n={n}, k={k}; dataset has n={dataset.n}, k={dataset.k}")
    bases = []
    for _ in range(r_count):
        bk, bid = rd.unpack("<QQ")
        mat = np.frombuffer(rd.take(8 * bk * bk), dtype="<f8").reshape(bk, bk).astype(np.float64)
        bases.append(OrthoBasis(mat, int(bid), int(seed)))
    keys, key_off, sizes, ids = [], [0], [], []
    klen = key_nbytes(g)
    for _ in range(r_count):
        (cones,) = rd.unpack("<Q")
        for _ in range(cones):
            keys.append(key_code(decode_key(rd.take(klen))))
            (count,) = rd.unpack("<I")
            ids.append(np.frombuffer(rd.take(4 * count), dtype="<i4"))
            sizes.append(count)
        key_off.append(key_off[-1] + cones)
    return dict(
        g=int(g), r_count=int(r_count), c_default=int(c_default), seed=int(seed), kc=int(kc),
        bases=BasisSet(tuple(bases)), keys=np.asarray(keys, dtype=np.int64),
        key_offsets=np.asarray(key_off, dtype=np.int64),
        bucket_offsets=np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
        ids=(np.concatenate(ids) if ids else np.zeros(0)).astype(np.int32),
    )


def _read_sections(rd):
    sections = {}
    while not rd.at_end():
        tag = rd.take(4)
        (length,) = rd.unpack("<Q")
        sections[tag] = rd.take(length)
    return sections


def _assemble(body, dataset, pca=None, d_classify=0, search_data=None):
    if search_data is None:
        if pca is not None:
            _, search_data = _classification_space(dataset, pca, d_classify)
        else:
            search_data = dataset.data
    return RosannaIndex(
        g=body["g"], r_count=body["r_count"], c_default=body["c_default"], bases=body["bases"],
        keys=body["keys"], key_offsets=body["key_offsets"], bucket_offsets=body["bucket_offsets"],
        ids=body["ids"], dataset=dataset, search_data=np.ascontiguousarray(search_data),
        pca=pca, d_classify=d_classify, seed=body["seed"],
    )


def load_index(path, dataset: VectorSet) -> RosannaIndex:
    """Read an index file and attach it to ``dataset`` (vectors are not stored)."""
    rd = _Reader(Path(path).read_bytes())
    body = _read_index_body(rd, dataset)
    sections = _read_sections(rd)
    pca, d = None, 0
    if b"PCA0" in sections:
        pca, d = _read_pca_payload(sections[b"PCA0"])
    return _assemble(body, dataset, pca, d)
