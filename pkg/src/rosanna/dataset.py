"""Vector corpora: file formats, synthetic generators and the exact-NN oracle.

Supported on-disk formats:

* ``.fvecs`` -- records of ``[int32 dim][dim x float32]``, little endian.
* ``.bvecs`` -- records of ``[int32 dim][dim x uint8]``, widened to float.
* raw -- ``[int64 n][int64 k]`` header followed by ``n*k`` float32 values.
* HDF5 -- the ``dataset``/``query`` (or ``train``/``test``) layout used by
  the FLANN and ann-benchmarks distributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DatasetError, EmptyIndexError

DISTRIBUTIONS = ("gaussian", "uniform", "laplace")


@dataclass(frozen=True, eq=False)
class VectorSet:
    """Dense ``n x k`` float32 matrix plus a tag describing where it came from."""

    data: np.ndarray
    source: str = ""

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(f"expected a 2-d array, got shape {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def k(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, VectorSet):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data.view(np.uint32), other.data.view(np.uint32))
        )

    def __hash__(self):
        return id(self)

    @property
    def nbytes(self) -> int:
        return self.data.nbytes


@dataclass(frozen=True)
class SyntheticSpec:
    distribution: str
    n: int
    k: int
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.n < 0 or self.k < 1:
            raise ValueError(f"need n >= 0 and k >= 1, got n={self.n}, k={self.k}")

    def tag(self) -> str:
        return f"synthetic:{self.distribution}:n={self.n}:k={self.k}:seed={self.seed}"


@dataclass
class GroundTruth:
    """Exact nearest neighbor of every query: ids and squared distances."""

    nn_id: np.ndarray
    nn_dist_sq: np.ndarray

    def __len__(self):
        return len(self.nn_id)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def _load_records(path, dtype, kind):
    raw = Path(path).read_bytes()
    if not raw:
        return VectorSet(np.zeros((0, 0), dtype=np.float32), source=str(path))
    if len(raw) < 4:
        raise DatasetError(f"truncated {kind} header", offset=0)
    dim = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if dim <= 0:
        raise DatasetError(f"invalid dimension {dim}", offset=0)
    width = np.dtype(dtype).itemsize
    rec = 4 + dim * width
    n_full = len(raw) // rec

    # every header must repeat the first dimension
    headers = np.frombuffer(raw, dtype=np.uint8, count=n_full * rec).reshape(n_full, rec)[:, :4]
    dims = headers.copy().view("<i4").ravel()
    bad = np.flatnonzero(dims != dim)
    if bad.size:
        i = int(bad[0])
        raise DatasetError(
            f"record {i} has dimension {int(dims[i])}, expected {dim}", offset=i * rec
        )
    if len(raw) % rec:
        tail = n_full * rec
        if len(raw) - tail >= 4:
            d_tail = int(np.frombuffer(raw, dtype="<i4", count=1, offset=tail)[0])
            if d_tail != dim:
                raise DatasetError(
                    f"record {n_full} has dimension {d_tail}, expected {dim}", offset=tail
                )
        raise DatasetError(f"truncated record {n_full}", offset=tail)

    body = np.frombuffer(raw, dtype=np.uint8).reshape(n_full, rec)[:, 4:]
    values = body.copy().view(np.dtype(dtype).newbyteorder("<")).reshape(n_full, dim)
    values = values.astype(np.float32)
    finite = np.isfinite(values)
    if not finite.all():
        i, j = np.argwhere(~finite)[0]
        raise DatasetError(
            f"non-finite value in record {i}, component {j}", offset=int(i * rec + 4 + j * width)
        )
    return VectorSet(values, source=str(path))


def load_fvecs(path) -> VectorSet:
    """Read an ``.fvecs`` file. An empty file gives ``n = k = 0``."""
    return _load_records(path, np.float32, "fvecs")


def load_bvecs(path) -> VectorSet:
    return _load_records(path, np.uint8, "bvecs")


def write_fvecs(path, vs: VectorSet) -> None:
    n, k = vs.data.shape
    if n == 0:
        Path(path).write_bytes(b"")
        return
    rec = np.empty((n, k + 1), dtype="<f4")
    rec[:, 1:] = vs.data
    rec[:, :1].view("<i4")[:] = k
    Path(path).write_bytes(rec.tobytes())


def write_raw(path, vs: VectorSet) -> None:
    header = np.array([vs.n, vs.k], dtype="<i8").tobytes()
    Path(path).write_bytes(header + vs.data.astype("<f4").tobytes())


def load_raw(path) -> VectorSet:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise DatasetError("truncated raw header", offset=len(raw))
    n, k = (int(x) for x in np.frombuffer(raw, dtype="<i8", count=2))
    if n < 0 or k < 0:
        raise DatasetError(f"invalid raw header n={n}, k={k}", offset=0)
    expected = 16 + 4 * n * k
    if len(raw) != expected:
        raise DatasetError(
            f"raw payload has {len(raw) - 16} bytes, expected {expected - 16}",
            offset=min(len(raw), expected),
        )
    values = np.frombuffer(raw, dtype="<f4", offset=16).reshape(n, k).astype(np.float32)
    bad = ~np.isfinite(values)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DatasetError(f"non-finite value in row {i}, column {j}", offset=int(16 + 4 * (i * k + j)))
    return VectorSet(values, source=str(path))


def load_hdf5(path, key="dataset"):
    """Load one matrix from an HDF5 benchmark file.

    ``dataset``/``query`` fall back to ``train``/``test`` when absent.
    """
    import h5py

    fallback = {"dataset": "train", "query": "test", "train": "dataset", "test": "query"}
    with h5py.File(path, "r") as f:
        name = key if key in f else fallback.get(key)
        if name is None or name not in f:
            raise DatasetError(f"{path}: no {key!r} matrix (have {sorted(f.keys())})")
        values = np.asarray(f[name], dtype=np.float32)
    if not np.isfinite(values).all():
        raise DatasetError(f"{path}:{name} contains non-finite values")
    return VectorSet(values, source=f"{path}:{name}")


def load_vectors(path) -> VectorSet:
    """Dispatch on file extension (``.fvecs``, ``.bvecs``, ``.h5``/``.hdf5``, else raw)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".fvecs":
        return load_fvecs(path)
    if suffix == ".bvecs":
        return load_bvecs(path)
    if suffix in (".h5", ".hdf5"):
        return load_hdf5(path)
    return load_raw(path)


def save_vectors(path, vs: VectorSet) -> None:
    if Path(path).suffix.lower() == ".fvecs":
        write_fvecs(path, vs)
    else:
        write_raw(path, vs)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def gen_synthetic(spec: SyntheticSpec) -> VectorSet:
    """i.i.d. zero-mean, unit-variance components, reproducible from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    shape = (spec.n, spec.k)
    if spec.distribution == "gaussian":
        values = rng.standard_normal(shape)
    elif spec.distribution == "uniform":
        half = math.sqrt(3.0)
        values = rng.uniform(-half, half, size=shape)
    else:
        values = rng.laplace(0.0, 1.0 / math.sqrt(2.0), size=shape)
    return VectorSet(values.astype(np.float32), source=spec.tag())


def density(n: int, k: int) -> float:
    """Point density ``log2(n) / k``."""
    if n < 1 or k < 1:
        raise ValueError("density needs n >= 1 and k >= 1")
    return math.log2(n) / k


# ---------------------------------------------------------------------------
# Exact nearest neighbor
# ---------------------------------------------------------------------------


def _as_query(base, query):
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (base.k,):
        raise ValueError(f"query has shape {q.shape}, expected ({base.k},)")
    return q


def linear_scan_nn(base: VectorSet, query) -> tuple[int, float]:
    """Exact nearest neighbor of one query; ties go to the lowest id."""
    if base.n == 0:
        raise EmptyIndexError("linear scan over an empty dataset")
    i, d = _kernels.scan_one(base.data, _as_query(base, query))
    return int(i), float(d)


def linear_scan_batch(base: VectorSet, queries, threads: int = 1) -> GroundTruth:
    if base.n == 0:
        raise EmptyIndexError("linear scan over an empty dataset")
    q = np.ascontiguousarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != base.k:
        raise ValueError(f"queries have shape {q.shape}, expected (*, {base.k})")
    scan = _kernels.scan_batch_parallel if threads > 1 else _kernels.scan_batch_serial
    ids, dists = scan(base.data, q)
    return GroundTruth(ids, dists)


def write_ground_truth(path, gt: GroundTruth) -> None:
    with open(path, "w") as f:
        f.write("query,nn_id,nn_dist_sq\n")
        for q, (i, d) in enumerate(zip(gt.nn_id, gt.nn_dist_sq)):
            f.write(f"{q},{int(i)},{float(d)!r}\n")


def read_ground_truth(path) -> GroundTruth:
    rows = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="ascii")
    rows = np.atleast_1d(rows)
    return GroundTruth(rows["nn_id"].astype(np.int64), rows["nn_dist_sq"].astype(np.float64))
