"""Data-dependent preprocessing for structured corpora.

PCA rotates the data onto its principal axes so that cones can be formed
from the leading coordinates only; a coarse k-means quantizer splits the
data into clusters that are indexed separately and probed nearest-first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dataset import VectorSet
from .errors import EmptyIndexError
from .index import RosannaIndex, SearchScratch, _classification_space, build

DEFAULT_D_CLASSIFY = 16
DEFAULT_CLUSTERS = 256
DEFAULT_PROBED_CLUSTERS = 8


@dataclass(eq=False)
class PcaModel:
    """Mean, eigenvectors (columns, descending eigenvalue) and eigenvalues."""

    mean: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray

    @property
    def k(self) -> int:
        return len(self.mean)

    def transform(self, x) -> np.ndarray:
        """All ``k`` principal coordinates of ``x`` (rows), float64."""
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean) @ self.eigvecs

    def inverse(self, y) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) @ self.eigvecs.T + self.mean

    def energy(self, m) -> float:
        """Fraction of the total variance held by the first ``m`` components."""
        total = self.eigvals.sum()
        return float(self.eigvals[:m].sum() / total) if total > 0 else 0.0


def pca_fit(dataset: VectorSet) -> PcaModel:
    """Eigendecomposition of the ``k x k`` sample covariance.

    Each eigenvector is signed so that its largest-magnitude entry is positive.
    """
    if dataset.n < 2:
        raise ValueError("PCA needs at least two vectors")
    x = dataset.data.astype(np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (dataset.n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return PcaModel(mean, vecs * signs, vals)


def pca_transform(model: PcaModel, dataset: VectorSet, d_classify: int = DEFAULT_D_CLASSIFY):
    """``(classification space, full space)`` as two VectorSets."""
    if not 1 <= d_classify <= model.k:
        raise ValueError(f"d_classify={d_classify} out of range for k={model.k}")
    cls, full = _classification_space(dataset, model, d_classify)
    return (VectorSet(cls, source=f"pca{d_classify}:{dataset.source}"),
            VectorSet(full, source=f"pca:{dataset.source}"))


def intrinsic_dim(eigvals) -> float:
    """Two to the entropy (bits) of the normalized spectrum."""
    lam = np.asarray(eigvals, dtype=np.float64)
    lam = np.clip(lam, 0.0, None)
    total = lam.sum()
    if not total > 0:
        raise ValueError("intrinsic dimensionality needs a positive eigenvalue")
    p = lam[lam > 0] / total
    return float(2.0 ** (-(p * np.log2(p)).sum()))


# ---------------------------------------------------------------------------
# Coarse quantizer
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CoarseQuantizer:
    centroids: np.ndarray
    assignments: np.ndarray
    distortion_history: list = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.centroids)

    def members(self, j) -> np.ndarray:
        return np.flatnonzero(self.assignments == j)


def _sq_dists(x, centroids):
    # exact pairwise squared distances, chunked to bound memory
    out = np.empty((len(x), len(centroids)))
    step = max(1, 2**22 // max(1, len(centroids) * x.shape[1]))
    for s in range(0, len(x), step):
        diff = x[s:s + step, None, :] - centroids[None, :, :]
        out[s:s + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _assign(x, centroids):
    d = _sq_dists(x, centroids)
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(len(x)), labels]


def _kmeans_pp(x, m, rng):
    n = len(x)
    centers = [int(rng.integers(n))]
    closest = ((x - x[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, m):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            nxt = int(rng.integers(n))
        centers.append(nxt)
        closest = np.minimum(closest, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[centers].copy()


def kmeans_fit(dataset: VectorSet, m: int, max_iters: int = 25, seed: int = 0,
               tol: float = 1e-4) -> CoarseQuantizer:
    """Lloyd's algorithm from k-means++ seeds.

    Stops after ``max_iters`` rounds or when the distortion improves by less
    than ``tol`` (relative). An emptied cluster is re-seeded with the point
    farthest from its current centroid.
    """
    if not 1 <= m <= dataset.n:
        raise ValueError(f"cluster count m={m} must lie in [1, n={dataset.n}]")
    x = dataset.data.astype(np.float64)
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, m, rng)
    labels, dist = _assign(x, centroids)
    history = [float(dist.sum())]
    for _ in range(max_iters):
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        counts = np.bincount(labels, minlength=m)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        for j in np.flatnonzero(~nonempty):
            far = int(np.argmax(dist))
            centroids[j] = x[far]
            dist[far] = 0.0
        labels, dist = _assign(x, centroids)
        history.append(float(dist.sum()))
        prev, cur = history[-2], history[-1]
        if prev <= 0 or (prev - cur) / prev < tol:
            break
    return CoarseQuantizer(centroids, labels.astype(np.int64), history)


# ---------------------------------------------------------------------------
# Two-stage search
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class TwoStageIndex:
    quantizer: CoarseQuantizer
    clusters: list  # RosannaIndex per cluster, None for empty clusters
    dataset: VectorSet
    pca: PcaModel | None = None

    @property
    def m(self) -> int:
        return self.quantizer.m

    def new_scratch(self) -> SearchScratch:
        return SearchScratch.for_size(self.dataset.n)


def build_two_stage(dataset: VectorSet, quantizer: CoarseQuantizer, g: int, r_count: int,
                    seed: int = 0, pca: PcaModel | None = None,
                    d_classify: int = DEFAULT_D_CLASSIFY) -> TwoStageIndex:
    """One cone index per cluster; all clusters share the same rotations."""
    _, search_data = _classification_space(dataset, pca, d_classify)
    clusters = []
    bases = None
    for j in range(quantizer.m):
        members = quantizer.members(j)
        if len(members) == 0:
            clusters.append(None)
            continue
        idx = build(dataset, g, r_count, seed, pca=pca, d_classify=d_classify,
                    member_ids=members, bases=bases, search_data=search_data)
        bases = idx.bases
        clusters.append(idx)
    return TwoStageIndex(quantizer, clusters, dataset, pca)


def two_stage_search(ts: TwoStageIndex, query, w: int = DEFAULT_PROBED_CLUSTERS, c: int = 1,
                     scratch: SearchScratch | None = None) -> tuple[int, float]:
    """Search the ``w`` clusters whose centroids are nearest to the query.

    The running best is shared across clusters, so pruning carries over.
    Returns ``(-1, inf)`` when no candidate was found.
    """
    if not 1 <= w <= ts.m:
        raise ValueError(f"w={w} must lie in [1, m={ts.m}]")
    if ts.dataset.n == 0:
        raise EmptyIndexError("search on an empty index")
    q = np.asarray(query, dtype=np.float64)
    cdist = ((ts.quantizer.centroids - q) ** 2).sum(axis=1)
    nearest = np.argsort(cdist, kind="stable")[:w]
    scratch = scratch or ts.new_scratch()
    scratch.begin()
    best_d = np.full(1, np.inf)
    best_i = np.full(1, _kernels.NO_ID, dtype=np.int64)
    for j in nearest:
        idx: RosannaIndex = ts.clusters[j]
        if idx is None:
            continue
        qd, qc = idx.prepare_queries(q)
        _kernels.search_into(qd[0], qc[0], idx._stacked, idx.g, c, idx._binom, idx.keys,
                             idx.key_offsets, idx.bucket_offsets, idx.ids, idx.search_data,
                             scratch.visited, scratch.epoch, best_d, best_i, scratch.counters,
                             True)
    if best_i[0] == _kernels.NO_ID:
        return _kernels.NO_ID, float("inf")
    i = int(best_i[0])
    if ts.pca is not None:
        return i, float(_kernels.sq_dist(ts.dataset.data[i], q))
    return i, float(best_d[0])
