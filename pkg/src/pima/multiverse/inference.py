"""Combination and multiplicity adjustment over a K x B matrix of |T_std|.

Column 0 of every matrix is the observed (identity flip) statistic. All
p-values are exact multiples of 1/B.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from ..signflip import critical_count

__all__ = [
    "COMBINING_FUNCTIONS",
    "rank_pvalues",
    "combine",
    "maxt_adjusted_pvalues",
    "ClosedTesting",
    "GroupResult",
    "closed_testing_oracle",
    "tdp_lower_bound",
    "grouped_posthoc",
]

COMBINING_FUNCTIONS = ("mean", "max", "fisher", "liptak")
MAX_ORACLE_K = 20


def _as_matrix(tstd) -> np.ndarray:
    a = np.abs(np.asarray(tstd, dtype=float))
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 2:
        raise ValueError(f"expected a K x B matrix with K >= 1 and B >= 2, got shape {a.shape}")
    return a


def rank_pvalues(tstd) -> np.ndarray:
    """p[k, b] = share of flips c with |T_k^c| >= |T_k^b|."""
    a = _as_matrix(tstd)
    K, B = a.shape
    srt = np.sort(a, axis=1)
    out = np.empty_like(a)
    for k in range(K):
        out[k] = B - np.searchsorted(srt[k], a[k], side="left")
    return out / B


def _statistic(a, method):
    K, B = a.shape
    if method == "mean":
        return a.mean(axis=0)
    if method == "max":
        return a.max(axis=0)
    p = rank_pvalues(a)
    if method == "fisher":
        return -2.0 * np.log(p).sum(axis=0)
    if method == "liptak":
        p = np.where(p >= 1.0, 1.0 - 1.0 / (2 * B), p)
        return -stats.norm.ppf(p).sum(axis=0)
    raise ValueError(f"unknown combining function {method!r}; expected one of {COMBINING_FUNCTIONS}")


def combine(tstd, method: str = "max") -> tuple[np.ndarray, float]:
    """Global statistics ``T^b`` and the global p-value ``mean(T^b >= T^1)``."""
    a = _as_matrix(tstd)
    t = _statistic(a, method)
    return t, float(np.count_nonzero(t >= t[0]) / t.size)


def maxt_adjusted_pvalues(tstd) -> np.ndarray:
    """Free step-down maxT adjusted p-values, returned in input order."""
    a = _as_matrix(tstd)
    K, B = a.shape
    order = np.argsort(-a[:, 0], kind="stable")
    # successive maxima over {(j), ..., (K)} built from the bottom up
    tail_max = np.maximum.accumulate(a[order][::-1], axis=0)[::-1]
    obs = a[order, 0]
    step = np.count_nonzero(tail_max >= obs[:, None], axis=1) / B
    adj_sorted = np.maximum.accumulate(step)
    out = np.empty(K)
    out[order] = adj_sorted
    return out


def _popcount(masks):
    masks = np.asarray(masks, dtype=np.int64)
    count = np.zeros_like(masks)
    while np.any(masks):
        count += masks & 1
        masks = masks >> 1
    return count


@dataclass(frozen=True)
class ClosedTesting:
    """Full closed-testing result for all ``2**K - 1`` intersection hypotheses.

    ``local_rejected[mask]`` is the local test decision for the subset encoded
    by the bits of ``mask`` (entry 0 unused).
    """

    K: int
    alpha: float
    method: str
    local_rejected: np.ndarray

    @property
    def _unrejected_masks(self) -> np.ndarray:
        masks = np.flatnonzero(~self.local_rejected)
        return masks[masks > 0]

    @property
    def rejected(self) -> np.ndarray:
        """Boolean length-K vector of hypotheses rejected by closed testing."""
        union = 0
        for m in self._unrejected_masks:
            union |= int(m)
        return np.array([not (union >> k) & 1 for k in range(self.K)], dtype=bool)

    def tdp(self, S: Iterable[int]) -> tuple[int, float]:
        """Lower confidence bound on the number (and share) of false nulls in S.

        d(S) = |S| - max{|I| : I subset of S, H_I not rejected by closed
        testing}, where H_I survives iff some superset of I is not locally
        rejected.
        """
        s_mask = 0
        for k in S:
            s_mask |= 1 << int(k)
        size = _popcount([s_mask])[0]
        if size == 0:
            raise ValueError("S must be nonempty")
        unrej = self._unrejected_masks
        if unrej.size == 0:
            return int(size), 1.0
        # the largest I within S contained in an unrejected J is J & S
        largest = int(_popcount(unrej & s_mask).max())
        d = int(size - largest)
        return d, d / size


def _subset_statistics(a, method, n_bits):
    """Max or sum over rows for every subset of the ``n_bits`` rows of ``a``."""
    B = a.shape[1]
    n_lo = 1 << n_bits
    if method == "max":
        acc = np.full((n_lo, B), -np.inf)
        op = np.maximum
    else:
        acc = np.zeros((n_lo, B))
        op = np.add
    for m in range(1, n_lo):
        low = m & -m
        k = low.bit_length() - 1
        acc[m] = op(acc[m ^ low], a[k])
    return acc


def closed_testing_oracle(tstd, alpha: float = 0.05, method: str = "max") -> ClosedTesting:
    """Brute-force closed testing with the combined-statistic local test.

    Every nonempty subset I is tested with ``psi`` restricted to I at level
    ``alpha``; the local test rejects iff the observed combined statistic
    exceeds the ``ceil((1 - alpha) B)``-th order statistic.
    """
    a = _as_matrix(tstd)
    K, B = a.shape
    if K > MAX_ORACLE_K:
        raise ValueError(
            f"closed-testing enumeration is limited to K <= {MAX_ORACLE_K}; "
            "use the maxT counting bound (tdp_lower_bound) for larger multiverses"
        )
    if method in ("fisher", "liptak"):
        p = rank_pvalues(a)
        if method == "fisher":
            a, method_red = -2.0 * np.log(p), "sum"
        else:
            a, method_red = -stats.norm.ppf(np.where(p >= 1.0, 1.0 - 1.0 / (2 * B), p)), "sum"
    elif method in ("max", "mean"):
        method_red = method
    else:
        raise ValueError(f"unknown combining function {method!r}")

    crit = critical_count(alpha, B)
    lo_bits = min(K, 10)
    hi_bits = K - lo_bits
    reduce = "max" if method_red == "max" else "sum"
    lo = _subset_statistics(a[:lo_bits], reduce, lo_bits)
    hi = _subset_statistics(a[lo_bits:], reduce, hi_bits)
    lo_size = _popcount(np.arange(1 << lo_bits))
    hi_size = _popcount(np.arange(1 << hi_bits))
    rejected = np.zeros(1 << K, dtype=bool)
    for h in range(1 << hi_bits):
        if method_red == "max":
            t = np.maximum(lo, hi[h])
        else:
            t = lo + hi[h]
            if method_red == "mean":
                size = lo_size + hi_size[h]
                t = t / np.maximum(size, 1)[:, None]
        count = np.count_nonzero(t >= t[:, :1], axis=1)
        rejected[h << lo_bits : (h + 1) << lo_bits] = count <= crit
    rejected[0] = True
    return ClosedTesting(K=K, alpha=alpha, method=method, local_rejected=rejected)


def tdp_lower_bound(
    tstd, S: Iterable[int], alpha: float = 0.05, adjusted=None, exact: bool | None = None
) -> tuple[int, float]:
    """Lower (1 - alpha) confidence bound on the true discoveries within S.

    Uses exact closed-testing enumeration for K <= 20 and otherwise the count
    of maxT-adjusted p-values <= alpha in S, which is the same bound under the
    max local test.
    """
    a = _as_matrix(tstd)
    S = sorted(set(int(k) for k in S))
    if not S:
        raise ValueError("S must be nonempty")
    if exact is None:
        exact = a.shape[0] <= MAX_ORACLE_K
    if exact:
        return closed_testing_oracle(a, alpha).tdp(S)
    adj = maxt_adjusted_pvalues(a) if adjusted is None else np.asarray(adjusted)
    d = int(np.count_nonzero(adj[S] <= alpha))
    return d, d / len(S)


@dataclass(frozen=True)
class GroupResult:
    group: Hashable
    n_specs: int
    statistic: float
    global_p: float
    adjusted_p: float


def grouped_posthoc(groups: Mapping[Hashable, Sequence[int]], tstd) -> dict[Hashable, GroupResult]:
    """Two-level maxT: max within each group, then step-down across groups."""
    a = _as_matrix(tstd)
    if not groups:
        raise ValueError("no groups given")
    names = list(groups)
    rows = []
    for g in names:
        idx = list(groups[g])
        if not idx:
            raise ValueError(f"group {g!r} is empty")
        rows.append(a[idx].max(axis=0))
    m = np.vstack(rows)
    adj = maxt_adjusted_pvalues(m)
    out = {}
    for i, g in enumerate(names):
        out[g] = GroupResult(
            group=g,
            n_specs=len(groups[g]),
            statistic=float(m[i, 0]),
            global_p=float(np.count_nonzero(m[i] >= m[i, 0]) / m.shape[1]),
            adjusted_p=float(adj[i]),
        )
    return out
