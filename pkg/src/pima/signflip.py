"""Sign-flip score test for a single GLM coefficient.

The flipped effective score of flip ``b`` is

    T^b = n^{-1/2} sum_i f_i^b nu_i,
    nu_i = (x_i - [Z (Z'WZ)^{-1} Z'W x]_i) (y_i - mu_i) d_i / v_i,

and each score is standardized by its flip-conditional standard deviation

    Var(T^b | F^b) = n^{-1} r' F (I - Q) F r,   r = (I - Q) W^{1/2} x,

with ``Q`` the hat matrix of ``W^{1/2} Z``. Row 0 of every flip matrix is the
identity, so index 0 always holds the observed statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .glm import Family, NullFit, fit_null

__all__ = [
    "CollinearityError",
    "FlipMatrix",
    "ScoreTable",
    "make_flip_matrix",
    "full_flip_matrix",
    "score_contributions",
    "score_table",
    "effective_scores",
    "flip_conditional_sd",
    "rank_pvalue",
    "critical_count",
    "univariate_test",
    "score_test",
]


class CollinearityError(ValueError):
    """The predictor of interest lies in the span of the confounders."""


@dataclass(frozen=True)
class FlipMatrix:
    """B x n matrix of random signs shared by every model in an analysis.

    Columns are tied to ``observation_ids`` so that a model fitted on a subset
    of the observations picks up exactly the same signs for the rows it keeps.
    """

    signs: np.ndarray
    seed: int | None
    observation_ids: tuple

    @property
    def B(self) -> int:
        return self.signs.shape[0]

    @property
    def n(self) -> int:
        return self.signs.shape[1]

    def restrict(self, ids: Sequence[Hashable]) -> "FlipMatrix":
        """Drop the columns of observations not in ``ids`` (kept in ``ids`` order)."""
        ids = tuple(ids)
        if ids == self.observation_ids:
            return self
        position = {obs: j for j, obs in enumerate(self.observation_ids)}
        try:
            cols = np.fromiter((position[i] for i in ids), dtype=np.intp, count=len(ids))
        except KeyError as exc:
            raise KeyError(f"observation id {exc.args[0]!r} not covered by the flip matrix") from None
        return FlipMatrix(self.signs[:, cols], self.seed, ids)


def make_flip_matrix(n: int, B: int, seed: int, ids: Sequence[Hashable] | None = None) -> FlipMatrix:
    """Draw ``B - 1`` uniform sign vectors after an all-ones identity row."""
    if B < 2:
        raise ValueError("need at least the identity plus one flip (B >= 2)")
    if n < 1:
        raise ValueError("need at least one observation")
    ids = tuple(range(1, n + 1)) if ids is None else tuple(ids)
    if len(ids) != n:
        raise ValueError(f"got {len(ids)} observation ids for n={n}")
    rng = np.random.default_rng(seed)
    signs = np.ones((B, n))
    signs[1:] = 2.0 * rng.integers(0, 2, size=(B - 1, n)) - 1.0
    return FlipMatrix(signs, seed, ids)


def full_flip_matrix(n: int, ids: Sequence[Hashable] | None = None) -> FlipMatrix:
    """All ``2**n`` sign vectors, identity first."""
    if n > 20:
        raise ValueError("full enumeration is limited to n <= 20")
    codes = np.arange(2**n)[:, None] >> np.arange(n)[None, :] & 1
    signs = 1.0 - 2.0 * codes
    ids = tuple(range(1, n + 1)) if ids is None else tuple(ids)
    return FlipMatrix(signs, None, ids)


@dataclass(frozen=True)
class ScoreTable:
    nu: np.ndarray
    t_eff: np.ndarray
    sd_flip: np.ndarray
    t_std: np.ndarray
    n_obs: int
    spec_id: Hashable = None

    @property
    def observed(self) -> float:
        return float(self.t_std[0])


def _weighted_residual(x, z, w):
    """x minus its W-weighted projection on span(z)."""
    sw = np.sqrt(w)
    a = z * sw[:, None]
    coef, *_ = np.linalg.lstsq(a, x * sw, rcond=None)
    return x - z @ coef


def score_contributions(x, z, y, fit: NullFit) -> np.ndarray:
    """Per-observation contributions ``nu_i`` to the effective score."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (len(x) == len(y) == z.shape[0] == len(fit.mu_hat)):
        raise ValueError("x, z, y and the null fit disagree on the number of observations")
    x_res = _weighted_residual(x, z, fit.w)
    sw = np.sqrt(fit.w)
    if np.linalg.norm(sw * x_res) < 1e-10 * np.linalg.norm(sw * x):
        raise CollinearityError("predictor of interest collinear with confounders")
    return x_res * (y - fit.mu_hat) * fit.d / fit.v


def effective_scores(nu, flips: FlipMatrix) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (flips.n,):
        raise ValueError(f"contributions have length {nu.size}, flip matrix has {flips.n} columns")
    return flips.signs @ nu / math.sqrt(flips.n)


def flip_conditional_sd(x, z, fit: NullFit, flips: FlipMatrix) -> np.ndarray:
    """Standard deviation of each flipped effective score given its flip."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    n = len(x)
    if flips.n != n:
        raise ValueError(f"flip matrix has {flips.n} columns, data has {n} rows")
    sw = np.sqrt(fit.w)
    basis, _ = np.linalg.qr(z * sw[:, None])
    r = sw * x
    r = r - basis @ (basis.T @ r)
    fr = flips.signs * r
    s = fr - (fr @ basis) @ basis.T
    var = np.einsum("bi,bi->b", fr, s) / n
    if np.any(var <= 1e-14 * max(float(r @ r) / n, 1e-300)):
        raise ValueError("non-positive flip-conditional variance; degenerate design")
    return np.sqrt(var)


def score_table(x, z, y, fit: NullFit, flips: FlipMatrix, spec_id: Hashable = None) -> ScoreTable:
    nu = score_contributions(x, z, y, fit)
    t_eff = effective_scores(nu, flips)
    sd = flip_conditional_sd(x, z, fit, flips)
    return ScoreTable(nu=nu, t_eff=t_eff, sd_flip=sd, t_std=t_eff / sd, n_obs=len(nu), spec_id=spec_id)


def score_test(x, z, y, family: Family | str, flips: FlipMatrix, spec_id: Hashable = None) -> ScoreTable:
    """Fit the null model and build the score table in one call."""
    fit = fit_null(z, y, family)
    if not fit.converged:
        raise RuntimeError(f"null model did not converge: {fit.message}")
    return score_table(x, z, y, fit, flips, spec_id)


def rank_pvalue(stats) -> float:
    """Share of entries at least as large as the first one."""
    stats = np.asarray(stats)
    return float(np.count_nonzero(stats >= stats[0]) / stats.size)


def critical_count(alpha: float, B: int) -> int:
    """floor(alpha * B), guarded against representation error."""
    return int(math.floor(alpha * B + 1e-9))


def univariate_test(table: ScoreTable, alpha: float = 0.05) -> tuple[float, bool]:
    """Two-sided rank p-value of ``|T_std|`` and the level-``alpha`` decision.

    Rejects iff the observed value exceeds the ``ceil((1 - alpha) B)``-th order
    statistic, which is the same as ``p <= floor(alpha B) / B``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    a = np.abs(table.t_std)
    count = int(np.count_nonzero(a >= a[0]))
    return count / a.size, count <= critical_count(alpha, a.size)
