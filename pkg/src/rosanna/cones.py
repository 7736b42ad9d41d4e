"""Profiles, cones and the multi-probe visiting order.

A vector's *profile* is the set of positions of its ``g`` largest-magnitude
components; its *cone* further records the signs of those components. Both
are unordered with respect to magnitude inside the top-``g`` group, so a
cone is identified by the ascending index tuple plus one sign bit per index.

The probe sequence for a query starts at its own cone and then walks
through profiles by increasing profile distance, always using the query's
own signs. Once every profile has been listed, the sequence continues with
sign-flipped cones (one flip, then two, ...), which makes a long enough
sequence cover the whole space.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

MAX_KEY_DIM = 256
_CODE_LIMIT = 2**63 - 1


@dataclass(frozen=True)
class ConeKey:
    """``indices`` ascending; ``signs[j]`` is True when component ``indices[j]`` >= 0."""

    g: int
    indices: tuple
    signs: tuple

    def __post_init__(self):
        if len(self.indices) != self.g or len(self.signs) != self.g:
            raise ValueError("ConeKey needs exactly g indices and g signs")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError(f"indices must be strictly increasing: {self.indices}")

    @property
    def profile(self) -> frozenset:
        return frozenset(self.indices)

    @property
    def sign_label(self) -> int:
        """Sign pattern as an integer, first index in the most significant bit."""
        label = 0
        for s in self.signs:
            label = 2 * label + int(s)
        return label


@dataclass(frozen=True)
class ProbeSequence:
    cones: tuple
    distances: tuple

    def __len__(self):
        return len(self.cones)


def magnitude_order(v) -> np.ndarray:
    """Component indices by decreasing magnitude, lower index first on ties."""
    v = np.asarray(v, dtype=np.float64)
    return np.argsort(-np.abs(v), kind="stable")


def _key(v, positions, flipped=()):
    idx = sorted(int(i) for i in positions)
    signs = tuple((bool(v[i] >= 0)) ^ (i in flipped) for i in idx)
    return ConeKey(len(idx), tuple(idx), signs)


def classify(v, g: int) -> ConeKey:
    """Cone of ``v`` for the top-``g`` components; ``sign(0)`` counts as positive."""
    v = np.asarray(v, dtype=np.float64)
    if not 1 <= g <= v.shape[0]:
        raise ValueError(f"g={g} out of range for k={v.shape[0]}")
    return _key(v, magnitude_order(v)[:g])


def cone_count(k: int, g: int) -> int:
    """Number of cones ``C(k, g) * 2**g``.

    Raises OverflowError past the 64-bit range used for table keys.
    """
    if not 1 <= g <= k:
        raise ValueError(f"g={g} out of range for k={k}")
    count = math.comb(k, g) * 2**g
    if count > _CODE_LIMIT:
        raise OverflowError(f"cone count for k={k}, g={g} exceeds 64 bits")
    return count


def profile_distance(query_order, p) -> int:
    """``g`` minus the longest prefix of ``query_order`` contained in ``p``."""
    p = set(int(i) for i in p)
    level = 0
    for i in query_order:
        if int(i) not in p:
            break
        level += 1
    return len(p) - min(level, len(p))


def _profiles_by_distance(order, g):
    # Distance d keeps the top g-d ranks, drops rank g-d, and picks d of the
    # remaining lower ranks, lexicographically (largest replacements first).
    k = len(order)
    for d in range(g + 1):
        keep = g - d
        pool = range(keep + 1, k)
        for picked in itertools.combinations(pool, d):
            ranks = list(range(keep)) + list(picked)
            yield d, [int(order[r]) for r in ranks]


def iter_probes(query_proj, g):
    """Lazily yield ``(ConeKey, distance)`` in probe order.

    The reported distance is the profile distance for unflipped cones and
    ``t * (g + 1) + profile distance`` for cones with ``t`` flipped signs, so
    it never decreases along the sequence.
    """
    v = np.asarray(query_proj, dtype=np.float64)
    order = magnitude_order(v)
    for t in range(g + 1):
        for d, members in _profiles_by_distance(order, g):
            ascending_mag = members[::-1]
            for flipped in itertools.combinations(ascending_mag, t):
                yield _key(v, members, set(flipped)), t * (g + 1) + d


def probe_sequence(query_proj, g: int, c: int) -> ProbeSequence:
    """First ``c`` cones to visit (fewer if the space has fewer cones)."""
    if c < 1:
        raise ValueError("c must be >= 1")
    v = np.asarray(query_proj, dtype=np.float64)
    if not 1 <= g <= v.shape[0]:
        raise ValueError(f"g={g} out of range for k={v.shape[0]}")
    pairs = list(itertools.islice(iter_probes(v, g), c))
    return ProbeSequence(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))


# ---------------------------------------------------------------------------
# Encodings
# ---------------------------------------------------------------------------


def key_nbytes(g: int) -> int:
    return 2 + g + (g + 7) // 8


def encode_key(key: ConeKey) -> bytes:
    """Canonical bytes: ``[uint16 g][one byte per index][sign bits, MSB first]``."""
    if key.indices and key.indices[-1] >= MAX_KEY_DIM:
        raise ValueError(f"component index {key.indices[-1]} needs k > {MAX_KEY_DIM}")
    bits = np.packbits(np.array(key.signs, dtype=np.uint8), bitorder="big")
    return key.g.to_bytes(2, "little") + bytes(key.indices) + bits.tobytes()


def decode_key(buf: bytes) -> ConeKey:
    g = int.from_bytes(buf[:2], "little")
    if len(buf) != key_nbytes(g):
        raise ValueError(f"key of length {len(buf)} does not match g={g}")
    indices = tuple(buf[2:2 + g])
    bits = np.unpackbits(np.frombuffer(buf[2 + g:], dtype=np.uint8), bitorder="big")[:g]
    return ConeKey(g, indices, tuple(bool(b) for b in bits))


def key_code(key: ConeKey) -> int:
    """Dense integer id: combinadic rank of the profile, then the sign label."""
    rank = sum(math.comb(i, j + 1) for j, i in enumerate(key.indices))
    return (rank << key.g) | key.sign_label


def code_to_key(code: int, g: int) -> ConeKey:
    rank, label = divmod(int(code), 1 << g)
    indices = []
    for j in range(g, 0, -1):
        a = j - 1
        while math.comb(a + 1, j) <= rank:
            a += 1
        indices.append(a)
        rank -= math.comb(a, j)
    indices.reverse()
    signs = tuple(bool((label >> (g - 1 - j)) & 1) for j in range(g))
    return ConeKey(g, tuple(indices), signs)
