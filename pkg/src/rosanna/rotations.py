"""Random orthogonal bases for the multiple hash tables.

Basis 0 is always the identity (the original frame). The others are
Haar-distributed, obtained from the QR factorization of a Gaussian matrix
with the signs of ``diag(R)`` folded into ``Q``. Each basis draws from its
own ``SeedSequence(seed, spawn_key=(id,))`` stream, so a basis does not
depend on how many others were generated or in which order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class OrthoBasis:
    """``k x k`` orthogonal matrix whose columns are the rotated axes."""

    matrix: np.ndarray
    id: int
    seed: int

    @property
    def k(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class BasisSet:
    bases: tuple

    @property
    def r_count(self) -> int:
        return len(self.bases)

    @property
    def k(self) -> int:
        return self.bases[0].k

    def stacked(self) -> np.ndarray:
        """All matrices as one ``(r, k, k)`` float64 array."""
        return np.stack([b.matrix for b in self.bases])

    def __getitem__(self, i):
        return self.bases[i]

    def __len__(self):
        return len(self.bases)

    def __iter__(self):
        return iter(self.bases)


def haar_orthogonal(k, rng):
    """Haar-uniform ``k x k`` orthogonal matrix (reflections included)."""
    z = rng.standard_normal((k, k))
    q, r = np.linalg.qr(z)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def gen_basis(k: int, basis_id: int, seed: int) -> OrthoBasis:
    if basis_id == 0:
        return OrthoBasis(np.eye(k), 0, seed)
    ss = np.random.SeedSequence(seed, spawn_key=(basis_id,))
    return OrthoBasis(haar_orthogonal(k, np.random.default_rng(ss)), basis_id, seed)


def gen_bases(k: int, r_count: int, seed: int = 0) -> BasisSet:
    if k < 1 or r_count < 1:
        raise ValueError(f"need k >= 1 and r_count >= 1, got k={k}, r_count={r_count}")
    return BasisSet(tuple(gen_basis(k, r, seed) for r in range(r_count)))


def project(basis: OrthoBasis, v) -> np.ndarray:
    """Coordinates of ``v`` in the rotated frame, ``M^T v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != basis.k:
        raise ValueError(f"vector length {v.shape[-1]} does not match basis size {basis.k}")
    # rows of v @ M are (M^T v_row)^T, so this also handles batches
    return v @ basis.matrix


def unproject(basis: OrthoBasis, y) -> np.ndarray:
    """Inverse of :func:`project`: ``M y``."""
    y = np.asarray(y, dtype=np.float64)
    return y @ basis.matrix.T
