"""Exponential-family GLM machinery.

Families with canonical links, an IRLS solver, the null fit that carries the
diagonal ``D``, ``V`` and ``W = D V^-1 D`` matrices used by the score test,
and a Wald/t test on the full fit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special, stats

__all__ = [
    "Family",
    "GLMFit",
    "NullFit",
    "FullFit",
    "RankDeficientError",
    "NotConvergedError",
    "irls_fit",
    "fit_null",
    "fit_full",
    "wald_test",
]

_CANONICAL = {"gaussian": "identity", "binomial": "logit", "poisson": "log"}
_MU_EPS = 1e-10


class RankDeficientError(ValueError):
    """Design matrix without full column rank."""


class NotConvergedError(RuntimeError):
    """Raised when a downstream computation requires a converged fit."""


@dataclass(frozen=True)
class Family:
    """A GLM family paired with its canonical link.

    Parameters
    ----------
    kind : {'gaussian', 'binomial', 'poisson'}
    link : str, optional
        Defaults to the canonical link. Non-canonical pairs are rejected.
    """

    kind: str
    link: str = ""

    def __post_init__(self):
        if self.kind not in _CANONICAL:
            raise ValueError(f"unknown family {self.kind!r}; expected one of {sorted(_CANONICAL)}")
        canonical = _CANONICAL[self.kind]
        if not self.link:
            object.__setattr__(self, "link", canonical)
        elif self.link != canonical:
            raise ValueError(
                f"non-canonical link {self.link!r} for {self.kind} family is not supported"
            )

    @classmethod
    def of(cls, family: "Family | str") -> "Family":
        return family if isinstance(family, Family) else cls(family)

    @property
    def has_dispersion(self) -> bool:
        return self.kind == "gaussian"

    def linkfun(self, mu):
        if self.link == "identity":
            return np.asarray(mu, dtype=float)
        if self.link == "logit":
            return special.logit(mu)
        return np.log(mu)

    def linkinv(self, eta):
        if self.link == "identity":
            return np.asarray(eta, dtype=float)
        if self.link == "logit":
            return special.expit(eta)
        return np.exp(eta)

    def mu_eta(self, mu):
        """Mean derivative dmu/deta, expressed through mu."""
        mu = np.asarray(mu, dtype=float)
        if self.link == "identity":
            return np.ones_like(mu)
        if self.link == "logit":
            return mu * (1.0 - mu)
        return mu

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.kind == "gaussian":
            return np.ones_like(mu)
        if self.kind == "binomial":
            return mu * (1.0 - mu)
        return mu

    def clip_mu(self, mu):
        if self.kind == "binomial":
            return np.clip(mu, _MU_EPS, 1.0 - _MU_EPS)
        if self.kind == "poisson":
            return np.maximum(mu, _MU_EPS)
        return mu

    def deviance(self, y, mu) -> float:
        y = np.asarray(y, dtype=float)
        if self.kind == "gaussian":
            return float(np.sum((y - mu) ** 2))
        if self.kind == "binomial":
            return float(2.0 * np.sum(special.xlogy(y, y / mu) + special.xlogy(1 - y, (1 - y) / (1 - mu))))
        return float(2.0 * np.sum(special.xlogy(y, y / mu) - (y - mu)))

    def loglik(self, y, mu) -> float:
        """Log-likelihood up to terms free of mu (dispersion taken as 1)."""
        y = np.asarray(y, dtype=float)
        if self.kind == "gaussian":
            return float(-0.5 * np.sum((y - mu) ** 2))
        if self.kind == "binomial":
            return float(np.sum(special.xlogy(y, mu) + special.xlogy(1 - y, 1 - mu)))
        return float(np.sum(special.xlogy(y, mu) - mu))

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError("response contains non-finite values")
        if self.kind == "binomial" and not np.all((y == 0) | (y == 1)):
            raise ValueError("binomial response must be coded 0/1")
        if self.kind == "poisson" and (np.any(y < 0) or np.any(y != np.round(y))):
            raise ValueError("poisson response must be non-negative integers")

    def start_mu(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "gaussian":
            return y.copy()
        return self.clip_mu((y + y.mean()) / 2.0)


@dataclass(frozen=True)
class GLMFit:
    """Raw IRLS output."""

    coef: np.ndarray
    mu: np.ndarray
    eta: np.ndarray
    converged: bool
    iterations: int
    deviance: float
    dispersion: float
    cov: np.ndarray
    df_resid: int
    message: str = ""


@dataclass(frozen=True)
class NullFit:
    """Fit of the response on the nuisance design only.

    ``d``, ``v`` and ``w`` hold the diagonals of D, V (dispersion included)
    and W = D V^-1 D evaluated at the fitted means.
    """

    family: Family
    mu_hat: np.ndarray
    eta_hat: np.ndarray
    d: np.ndarray
    v: np.ndarray
    w: np.ndarray
    converged: bool
    iterations: int
    dispersion: float
    gamma_hat: np.ndarray
    message: str = ""


@dataclass(frozen=True)
class FullFit:
    family: Family
    beta_hat: float
    se_beta: float
    coef: np.ndarray
    cov: np.ndarray
    converged: bool
    n_obs: int
    df_resid: int
    message: str = ""


def _check_rank(design, column_names=None):
    n, m = design.shape
    if n <= m:
        raise RankDeficientError(f"need more observations than columns (n={n}, columns={m})")
    scale = np.linalg.norm(design, axis=0)
    if np.any(scale == 0):
        bad = np.flatnonzero(scale == 0)
    else:
        _, r = np.linalg.qr(design / scale)
        diag = np.abs(np.diag(r))
        bad = np.flatnonzero(diag < 1e-10 * max(diag.max(), 1.0))
    if bad.size:
        names = [column_names[j] if column_names is not None else str(j) for j in bad]
        raise RankDeficientError(f"design is rank deficient; collinear columns: {', '.join(names)}")


def irls_fit(
    design,
    y,
    family: Family | str,
    offset=None,
    *,
    tol: float = 1e-8,
    max_iter: int = 50,
    column_names: Sequence[str] | None = None,
    check_support: bool = True,
) -> GLMFit:
    """Maximum-likelihood GLM fit by iteratively reweighted least squares.

    Convergence is declared when the relative deviance change drops below
    ``tol``. Failure to converge (including complete separation in binomial
    models) is reported through ``converged=False`` and ``message``, never
    silently.
    """
    family = Family.of(family)
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    if y.shape != (n,):
        raise ValueError(f"response has shape {y.shape}, expected ({n},)")
    if check_support:
        family.check_support(y)
    _check_rank(X, column_names)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)

    mu = family.start_mu(y)
    eta = family.linkfun(mu)
    dev_old = np.inf
    converged = False
    coef = np.zeros(m)
    it = 0
    for it in range(1, max_iter + 1):
        d = family.mu_eta(mu)
        w = d**2 / family.variance(mu)
        z = eta - off + (y - mu) / d
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        eta = X @ coef + off
        mu = family.clip_mu(family.linkinv(eta))
        dev = family.deviance(y, mu)
        if abs(dev - dev_old) / (abs(dev) + 0.1) < tol:
            converged = True
            break
        dev_old = dev

    message = ""
    if not converged:
        message = f"IRLS did not converge in {max_iter} iterations"
    if family.kind == "binomial":
        edge = (mu <= 10 * _MU_EPS) | (mu >= 1 - 10 * _MU_EPS)
        if np.any(edge):
            converged = False
            message = f"complete or quasi-complete separation: {int(edge.sum())} fitted probabilities at 0 or 1"

    df_resid = n - m
    if family.has_dispersion:
        dispersion = float(np.sum((y - mu) ** 2 / family.variance(mu)) / df_resid)
    else:
        dispersion = 1.0
    d = family.mu_eta(mu)
    w = d**2 / family.variance(mu)
    info = X.T @ (X * w[:, None])
    cov = np.linalg.inv(info) * dispersion
    return GLMFit(
        coef=coef,
        mu=mu,
        eta=eta,
        converged=converged,
        iterations=it,
        deviance=family.deviance(y, mu),
        dispersion=dispersion,
        cov=cov,
        df_resid=df_resid,
        message=message,
    )


def fit_null(z, y, family: Family | str, **kwargs) -> NullFit:
    """Fit ``y`` on the nuisance design ``z`` (the model under beta = 0)."""
    family = Family.of(family)
    fit = irls_fit(z, y, family, **kwargs)
    mu = fit.mu
    d = family.mu_eta(mu)
    v = family.variance(mu) * fit.dispersion
    return NullFit(
        family=family,
        mu_hat=mu,
        eta_hat=fit.eta,
        d=d,
        v=v,
        w=d**2 / v,
        converged=fit.converged,
        iterations=fit.iterations,
        dispersion=fit.dispersion,
        gamma_hat=fit.coef,
        message=fit.message,
    )


def fit_full(x, z, y, family: Family | str, **kwargs) -> FullFit:
    """Fit ``y`` on ``[x, z]``; the coefficient of interest is that of ``x``."""
    family = Family.of(family)
    x = np.asarray(x, dtype=float)
    design = np.column_stack([x, np.asarray(z, dtype=float)])
    names = kwargs.pop("column_names", None)
    if names is not None:
        names = ["<interest>", *names]
    fit = irls_fit(design, y, family, column_names=names, **kwargs)
    return FullFit(
        family=family,
        beta_hat=float(fit.coef[0]),
        se_beta=float(np.sqrt(fit.cov[0, 0])),
        coef=fit.coef,
        cov=fit.cov,
        converged=fit.converged,
        n_obs=len(x),
        df_resid=fit.df_resid,
        message=fit.message,
    )


def wald_test(full_fit: FullFit) -> tuple[float, float]:
    """Two-sided Wald test of the interest coefficient.

    Gaussian fits use the t distribution on the residual degrees of freedom,
    other families the standard normal.
    """
    if not full_fit.converged:
        raise NotConvergedError(f"cannot test a non-converged fit: {full_fit.message}")
    if full_fit.beta_hat == 0.0:
        return 0.0, 1.0
    z = full_fit.beta_hat / full_fit.se_beta
    if full_fit.family.kind == "gaussian":
        p = 2.0 * stats.t.sf(abs(z), full_fit.df_resid)
    else:
        p = 2.0 * stats.norm.sf(abs(z))
    return float(z), float(min(1.0, p))

