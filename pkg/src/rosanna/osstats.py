"""Order statistics of vector components sorted by magnitude.

For i.i.d. components with magnitude CDF ``F``, the i-th largest magnitude
``|V_i|`` is below ``x`` iff at least ``k - i + 1`` magnitudes are, which
gives a binomial sum. The Gaussian case uses ``F(x) = 1 - 2 Q(x)``.

Also included: a Monte Carlo estimate of how often a query and its exact
nearest neighbor agree on their top components and signs, across several
random frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .dataset import SyntheticSpec, gen_synthetic, linear_scan_batch
from .rotations import gen_bases

_LOG_BINOM_ABOVE = 60


def q_function(x):
    """Standard normal upper tail ``P(X > x)``."""
    return 0.5 * special.erfc(np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def gaussian_abs_cdf(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, 1.0 - 2.0 * q_function(np.maximum(x, 0.0)), 0.0)


def _binom_terms(f, i, k):
    f = np.clip(np.asarray(f, dtype=np.float64), 0.0, 1.0)
    total = np.zeros_like(f)
    for j in range(i):
        if k > _LOG_BINOM_ABOVE:
            with np.errstate(divide="ignore"):
                log_term = (special.gammaln(k + 1) - special.gammaln(j + 1)
                            - special.gammaln(k - j + 1)
                            + special.xlogy(k - j, f) + special.xlog1py(j, -f))
            total += np.exp(log_term)
        else:
            total += math.comb(k, j) * f ** (k - j) * (1.0 - f) ** j
    return np.clip(total, 0.0, 1.0)


def os_cdf(x, i: int, k: int, base_cdf):
    """CDF of the i-th largest magnitude (``i = 1`` is the maximum)."""
    if not 1 <= i <= k:
        raise ValueError(f"rank i={i} out of range for k={k}")
    out = _binom_terms(base_cdf(x), i, k)
    return float(out) if np.ndim(out) == 0 else out


def os_cdf_gaussian(x, i: int, k: int):
    return os_cdf(x, i, k, gaussian_abs_cdf)


def os_pdf_gaussian(x, i: int, k: int):
    """Density of the signed i-th sorted component (even in ``x``).

    Half the central-difference derivative of the magnitude CDF at ``|x|``.
    """
    ax = np.abs(np.asarray(x, dtype=np.float64))
    h = 1e-5 * np.maximum(1.0, ax)
    upper = os_cdf_gaussian(ax + h, i, k)
    lower = os_cdf_gaussian(ax - h, i, k)
    out = 0.5 * (np.asarray(upper) - np.asarray(lower)) / (2.0 * h)
    return float(out) if np.ndim(out) == 0 else out


def sorted_energy(k: int) -> np.ndarray:
    """``E[V_i^2]`` for each rank, integrating ``x^2`` against the density."""
    out = np.empty(k)
    for i in range(1, k + 1):
        val, _ = integrate.quad(lambda x: 2.0 * x * x * os_pdf_gaussian(x, i, k),
                                0.0, np.inf, limit=200)
        out[i - 1] = val
    return out


def energy_fractions(k: int) -> np.ndarray:
    e = sorted_energy(k)
    return e / e.sum()


def sorted_magnitudes(samples) -> np.ndarray:
    """Rows of ``|samples|`` sorted in decreasing order."""
    return -np.sort(-np.abs(np.asarray(samples, dtype=np.float64)), axis=1)


def empirical_cdf(values, x) -> np.ndarray:
    values = np.sort(np.asarray(values))
    return np.searchsorted(values, x, side="right") / len(values)


def cdf_curves(k: int, xs) -> np.ndarray:
    """Columns ``x, F_1 .. F_k`` for CSV output."""
    xs = np.asarray(xs, dtype=np.float64)
    cols = [xs] + [os_cdf_gaussian(xs, i, k) for i in range(1, k + 1)]
    return np.column_stack(cols)


def pdf_curves(k: int, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    cols = [xs] + [os_pdf_gaussian(xs, i, k) for i in range(1, k + 1)]
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Query / nearest-neighbor agreement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgreementSpec:
    k: int
    log2n: int
    f: int = 1
    g: int = 1
    r: int = 1
    trials: int = 1000
    seed: int = 0
    queries_per_dataset: int = 500

    def __post_init__(self):
        if not 1 <= self.f <= self.g <= self.k:
            raise ValueError("need 1 <= f <= g <= k")
        if self.trials < 1 or self.r < 1:
            raise ValueError("trials and r must be >= 1")
        if self.log2n < 0 or self.log2n > 24:
            raise ValueError(f"log2n={self.log2n} is outside the supported range [0, 24]")


def _frame_stats(q, nn, f):
    """Per query: max NN magnitude-rank of the query's top-f indices, and
    length of the leading run (in query order) with matching signs."""
    nq, k = q.shape
    q_order = np.argsort(-np.abs(q), axis=1, kind="stable")
    nn_order = np.argsort(-np.abs(nn), axis=1, kind="stable")
    nn_rank = np.empty_like(nn_order)
    rows = np.arange(nq)[:, None]
    nn_rank[rows, nn_order] = np.arange(k)[None, :]
    top_rank = nn_rank[rows, q_order[:, :f]].max(axis=1)
    same = (np.take_along_axis(q, q_order, 1) >= 0) == (np.take_along_axis(nn, q_order, 1) >= 0)
    run = np.where(same.all(axis=1), k, np.argmin(same, axis=1))
    return top_rank, run


def agreement_table(k, log2n, f, g_list, r_list, trials, seed=0, queries_per_dataset=500):
    """Agreement probabilities for every (g, r) pair.

    Returns ``(p_top, p_sign)`` arrays of shape ``(len(g_list), len(r_list))``.
    Frames are nested: the first ``r`` bases of one basis set, so values
    never decrease with ``r``.
    """
    n = 2 ** log2n
    r_max = max(r_list)
    best_rank = np.empty((trials, r_max), dtype=np.int64)
    best_run = np.empty((trials, r_max), dtype=np.int64)
    ss = np.random.SeedSequence(seed)
    done = 0
    for chunk_seq in ss.spawn((trials + queries_per_dataset - 1) // queries_per_dataset):
        nq = min(queries_per_dataset, trials - done)
        data_seed, query_seed, basis_seed = (int(s.generate_state(1)[0]) for s in chunk_seq.spawn(3))
        base = gen_synthetic(SyntheticSpec("gaussian", n, k, data_seed))
        queries = gen_synthetic(SyntheticSpec("gaussian", nq, k, query_seed)).data.astype(np.float64)
        gt = linear_scan_batch(base, queries)
        nn = base.data[gt.nn_id].astype(np.float64)
        for r, basis in enumerate(gen_bases(k, r_max, basis_seed)):
            rank, run = _frame_stats(queries @ basis.matrix, nn @ basis.matrix, f)
            best_rank[done:done + nq, r] = rank
            best_run[done:done + nq, r] = run
        done += nq
    # OR over the first r frames
    min_rank = np.minimum.accumulate(best_rank, axis=1)
    max_run = np.maximum.accumulate(best_run, axis=1)
    p_top = np.array([[np.mean(min_rank[:, r - 1] < g) for r in r_list] for g in g_list])
    p_sign = np.array([[np.mean(max_run[:, r - 1] >= g) for r in r_list] for g in g_list])
    return p_top, p_sign


def agreement_mc(spec: AgreementSpec) -> tuple[float, float]:
    """``(P[query top-f within NN top-g], P[first g signs agree])`` in some frame."""
    p_top, p_sign = agreement_table(spec.k, spec.log2n, spec.f, [spec.g], [spec.r],
                                    spec.trials, spec.seed, spec.queries_per_dataset)
    return float(p_top[0, 0]), float(p_sign[0, 0])
