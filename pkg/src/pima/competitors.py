"""Baselines: specification-curve bootstrap, p-value combinations, Bonferroni.

The linear-model bootstrap imposes the null by subtracting the estimated
effect (``y - beta_hat * x``), regenerates responses with a Rademacher wild
bootstrap on leverage-adjusted residuals and compares robust t statistics.
Its GLM extension builds null responses as ``g^-1(g(y) - beta_hat * x)``, which leaves 0/1 and zero-count
responses untouched; it is only available behind an explicit ``unsafe`` flag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .glm import Family, fit_full, irls_fit

__all__ = [
    "UnsafeMethodError",
    "BootstrapResult",
    "lm_bootstrap_draws",
    "lm_bootstrap_test",
    "glm_bootstrap_null_response",
    "glm_bootstrap_draws",
    "combine_pvalues",
    "bootstrap_multiverse",
]


class UnsafeMethodError(ValueError):
    """The GLM bootstrap was requested without acknowledging its failure mode."""


_UNSAFE_MSG = (
    "the GLM extension of the specification-curve bootstrap never removes the tested "
    "effect for 0/1 or zero-count responses, so its use is discouraged; pass "
    "unsafe=True (CLI: --unsafe-glm-bootstrap) to run it anyway"
)


@dataclass(frozen=True)
class BootstrapResult:
    per_spec_p: np.ndarray
    stouffer_p: float
    median_p: float
    B_boot: int
    seed: int | None


def _rademacher(B_boot, n, seed):
    rng = np.random.default_rng(seed)
    w = np.ones((B_boot, n))
    w[1:] = 2.0 * rng.integers(0, 2, size=(B_boot - 1, n)) - 1.0
    return w


def lm_bootstrap_draws(x, z, y, weights, studentize: bool = True) -> np.ndarray:
    """Observed statistic followed by its null bootstrap replicates.

    ``weights`` is a (B_boot x n) Rademacher matrix whose first row is ignored
    (slot 0 carries the observed value). With ``studentize`` the statistic is
    ``beta_hat / se`` with the leverage-corrected (HC2) standard error, and
    each replicate is studentized the same way; otherwise raw estimates are
    returned.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    design = np.column_stack([x, z])
    q, r = np.linalg.qr(design)
    # row of (X'X)^-1 X' belonging to x: OLS estimate of beta is c @ y
    c = np.linalg.solve(r, q.T)[0]
    beta_hat = float(c @ y)
    fitted = q @ (q.T @ y)
    resid = y - fitted
    lev = np.einsum("ij,ij->i", q, q)
    inv_1mh = 1.0 / np.clip(1.0 - lev, 1e-12, None)
    resid_adj = resid * np.sqrt(inv_1mh)
    # fitted values of the null response y - beta_hat * x
    null_fit = fitted - beta_hat * x
    y_star = null_fit + resid_adj * weights
    draws = y_star @ c
    draws[0] = beta_hat
    if not studentize:
        return draws
    e_star = y_star - (y_star @ q) @ q.T
    e_star[0] = resid
    se = np.sqrt((e_star**2 * inv_1mh) @ c**2)
    return draws / np.where(se > 0, se, np.inf)


def _tail_p(draws) -> float:
    a = np.abs(draws)
    return float(np.count_nonzero(a >= a[0]) / a.size)


def lm_bootstrap_test(x, z, y, B_boot: int, seed, family: Family | str = "gaussian", unsafe: bool = False) -> float:
    """Two-sided bootstrap p-value for the coefficient of ``x``.

    p = share of the ``B_boot`` draws (observed one included) whose absolute
    statistic reaches the observed one, so p lies in [1/B_boot, 1]. Gaussian
    models use the studentized wild bootstrap; GLMs (``unsafe`` only) the
    pairs bootstrap of the raw estimate.
    """
    family = Family.of(family)
    if B_boot < 2:
        raise ValueError("B_boot must be at least 2")
    if family.kind != "gaussian":
        if not unsafe:
            raise UnsafeMethodError(_UNSAFE_MSG)
        n = len(np.asarray(y))
        idx = _pairs_indices(B_boot, n, seed)
        return _tail_p(glm_bootstrap_draws(x, z, y, family, idx, unsafe=True))
    w = _rademacher(B_boot, len(np.asarray(y)), seed)
    return _tail_p(lm_bootstrap_draws(x, z, y, w))


def glm_bootstrap_null_response(y, x, beta_hat: float, family: Family | str, unsafe: bool = False) -> np.ndarray:
    """``g^-1(g(y) - beta_hat x)``; identity for binary responses and zero counts."""
    family = Family.of(family)
    if not unsafe and family.kind != "gaussian":
        raise UnsafeMethodError(_UNSAFE_MSG)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return family.linkinv(family.linkfun(y) - beta_hat * x)


def _pairs_indices(B_boot, n, seed):
    rng = np.random.default_rng(seed)
    idx = np.empty((B_boot, n), dtype=np.intp)
    idx[0] = np.arange(n)
    idx[1:] = rng.integers(0, n, size=(B_boot - 1, n))
    return idx


def glm_bootstrap_draws(x, z, y, family, indices, unsafe: bool = False) -> np.ndarray:
    """Pairs bootstrap of the GLM null response; refits the full model per draw."""
    family = Family.of(family)
    if not unsafe:
        raise UnsafeMethodError(_UNSAFE_MSG)
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    full = fit_full(x, z, y, family)
    y_null = glm_bootstrap_null_response(y, x, full.beta_hat, family, unsafe=True)
    design = np.column_stack([x, z])
    draws = np.empty(len(indices))
    draws[0] = full.beta_hat
    for b in range(1, len(indices)):
        i = indices[b]
        try:
            fit = irls_fit(design[i], y_null[i], family, check_support=False)
            draws[b] = fit.coef[0]
        except ValueError:
            # resample without full rank: count as uninformative (no exceedance)
            draws[b] = 0.0
    return draws


def _stouffer_stat(p, B=None):
    p = np.asarray(p, dtype=float)
    upper = 1.0 - 1.0 / (2 * B) if B else 1.0 - 1e-12
    lower = 1.0 / (2 * B) if B else 1e-12
    z = stats.norm.ppf(np.clip(1.0 - p, lower, upper))
    return z.sum(axis=-1) / np.sqrt(p.shape[-1])


def combine_pvalues(ps: Sequence[float], method: str = "stouffer", reference=None) -> float:
    """Combine per-spec p-values into one.

    Parameters
    ----------
    ps : sequence of float in (0, 1]
    method : {'stouffer', 'median', 'bonferroni'}
    reference : array (R x K), optional
        Null p-value vectors (e.g. from shared bootstrap draws). When given,
        Stouffer and median statistics are referred to the distribution of
        the same statistic over the reference rows instead of their
        independence-based null.
    """
    ps = np.asarray(ps, dtype=float)
    if ps.size == 0:
        raise ValueError("no p-values to combine")
    if np.any(ps <= 0) or np.any(ps > 1):
        raise ValueError("p-values must lie in (0, 1]")
    K = ps.size
    if method == "bonferroni":
        return float(min(1.0, K * ps.min()))
    if method == "stouffer":
        obs = _stouffer_stat(ps)
        if reference is None:
            return float(stats.norm.sf(obs))
        ref = _stouffer_stat(np.asarray(reference, dtype=float))
        return float((1 + np.count_nonzero(ref >= obs)) / (1 + ref.size))
    if method == "median":
        obs = float(np.median(ps))
        if reference is None:
            # lower-median order statistic of K uniforms; conservative for even K
            j = (K + 1) // 2
            return float(stats.beta.cdf(obs, j, K - j + 1))
        ref = np.median(np.asarray(reference, dtype=float), axis=-1)
        return float((1 + np.count_nonzero(ref <= obs)) / (1 + ref.size))
    raise ValueError(f"unknown combination method {method!r}")


def bootstrap_multiverse(
    designs: Sequence[tuple],
    B_boot: int,
    seed,
    family: Family | str = "gaussian",
    unsafe: bool = False,
    n_total=None,
    weights=None,
) -> BootstrapResult:
    """Bootstrap every spec with shared resampling and combine.

    ``designs`` holds ``(x, z, y, rows)`` tuples where ``rows`` indexes the
    spec's observations within the full sample of size ``n_total``, so the
    same Rademacher weight (or pairs draw) hits the same observation across
    specs. Per-draw p-values are ranks within each spec's draws; Stouffer and
    median statistics are referred to their distribution over the draws.
    ``weights`` optionally supplies the (B_boot x n_total) Rademacher matrix
    for the Gaussian case instead of drawing it from ``seed``.
    """
    family = Family.of(family)
    if family.kind != "gaussian" and not unsafe:
        raise UnsafeMethodError(_UNSAFE_MSG)
    if n_total is None:
        n_total = max(int(np.max(rows)) for *_, rows in designs) + 1
    all_draws = []
    if family.kind == "gaussian":
        w = _rademacher(B_boot, n_total, seed) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (B_boot, n_total):
            raise ValueError(f"weights must have shape {(B_boot, n_total)}, got {w.shape}")
        for x, z, y, rows in designs:
            all_draws.append(lm_bootstrap_draws(x, z, y, w[:, rows]))
    else:
        idx = _pairs_indices(B_boot, n_total, seed)
        for x, z, y, rows in designs:
            pos = np.full(n_total, -1)
            pos[rows] = np.arange(len(rows))
            sub = [pos[i][pos[i] >= 0] for i in idx]
            all_draws.append(glm_bootstrap_draws(x, z, y, family, sub, unsafe=True))
    a = np.abs(np.vstack(all_draws))
    srt = np.sort(a, axis=1)
    p = np.vstack([(B_boot - np.searchsorted(srt[k], a[k], side="left")) / B_boot for k in range(len(a))])
    per_draw = p.T
    stouffer = _stouffer_stat(per_draw, B_boot)
    med = np.median(per_draw, axis=1)
    return BootstrapResult(
        per_spec_p=p[:, 0],
        stouffer_p=float(np.count_nonzero(stouffer >= stouffer[0]) / B_boot),
        median_p=float(np.count_nonzero(med <= med[0]) / B_boot),
        B_boot=B_boot,
        seed=seed if isinstance(seed, (int, type(None))) else None,
    )
