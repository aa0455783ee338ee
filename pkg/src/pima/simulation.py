"""Scenario generators and Monte Carlo drivers for size and power studies.

Data follow a latent-proxy design: a latent predictor ``XL`` and confounder
``Z`` are standard bivariate normal with correlation 0.6, the response comes
from a GLM in ``XL`` and ``Z``, and each of five observed proxies
``X_k = 0.85 XL + sqrt(1 - 0.85^2) e_k`` is tested in its own model with
``Z`` as confounder.

Two cautionary designs use three confounders ``Z1..Z3`` (each correlated 0.6
with ``XL``) and a linear Gaussian response: ``omitted_confounder`` fits
models that adjust for ``Z1`` only, ``median_split`` runs the 2^3 multiverse
in which each confounder enters linearly or median-split.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .competitors import UnsafeMethodError, bootstrap_multiverse
from .data import Dataset
from .glm import Family, fit_full, fit_null, wald_test
from .multiverse.inference import combine
from .multiverse.spec import median_split
from .signflip import critical_count, make_flip_matrix, score_table

__all__ = [
    "SCENARIO_KINDS",
    "METHODS",
    "ALTERNATIVE_BETA",
    "Scenario",
    "generate",
    "run_simulation",
    "run_cautionary",
    "alpha_band",
    "negbin_theta_mu",
]

SCENARIO_KINDS = ("lm", "binomial", "poisson", "negbin_fit_poisson", "omitted_confounder", "median_split")
METHODS = (
    "signflip_uni",
    "parametric_uni",
    "bootstrap_uni",
    "pima_mean",
    "pima_max",
    "pima_fisher",
    "pima_liptak",
    "boot_stouffer",
    "boot_median",
)
ALTERNATIVE_BETA = {"lm": 0.2, "binomial": 0.5, "poisson": 0.08, "negbin_fit_poisson": 0.25}

_FIT_FAMILY = {
    "lm": "gaussian",
    "binomial": "binomial",
    "poisson": "poisson",
    "negbin_fit_poisson": "poisson",
    "omitted_confounder": "gaussian",
    "median_split": "gaussian",
}

# Effect of each of the three confounders in the cautionary designs. The
# value sets the strength of the residual confounding left by a median split;
# it is chosen so the all-median-split model rejects about 21% of the time at
# n = 200.
CAUTIONARY_CONFOUNDER_EFFECT = 0.185


@dataclass(frozen=True)
class Scenario:
    kind: str
    n: int
    beta: float = 0.0
    gamma: float = 2.0
    gamma0: float | None = None
    rho_latent_confounder: float = 0.6
    rho_latent_proxy: float = 0.85
    n_proxies: int = 5
    confounder_effect: float = CAUTIONARY_CONFOUNDER_EFFECT

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario {self.kind!r}; expected one of {SCENARIO_KINDS}")
        if self.n < 10:
            raise ValueError("scenarios need n >= 10")
        for rho in (self.rho_latent_confounder, self.rho_latent_proxy):
            if not -1.0 < rho < 1.0:
                raise ValueError("correlation parameters must lie in (-1, 1)")
        if self.gamma0 is None:
            object.__setattr__(self, "gamma0", -2.0 if self.kind == "negbin_fit_poisson" else 0.0)

    @classmethod
    def alternative(cls, kind: str, n: int, **kwargs) -> "Scenario":
        return cls(kind, n, beta=ALTERNATIVE_BETA[kind], **kwargs)

    @property
    def family(self) -> Family:
        return Family(_FIT_FAMILY[self.kind])

    @property
    def cautionary(self) -> bool:
        return self.kind in ("omitted_confounder", "median_split")

    def specs(self) -> list[tuple[str, str, tuple]]:
        """(label, interest column, ((confounder, transform), ...)) per model."""
        if self.kind == "median_split":
            out = []
            for combo in itertools.product(("identity", "median_split"), repeat=3):
                conf = tuple((f"Z{j + 1}", t) for j, t in enumerate(combo))
                out.append(("|".join(f"{c}={t}" for c, t in conf), "X1", conf))
            return out
        conf = (("Z1", "identity"),) if self.kind == "omitted_confounder" else (("Z", "identity"),)
        return [(f"X{k}", f"X{k}", conf) for k in range(1, self.n_proxies + 1)]


def _draw(s: Scenario, rng: np.random.Generator) -> dict[str, np.ndarray]:
    n = s.n
    rho = s.rho_latent_confounder
    xl = rng.standard_normal(n)
    cols = {"XL": xl}
    if s.cautionary:
        zs = [rho * xl + math.sqrt(1 - rho**2) * rng.standard_normal(n) for _ in range(3)]
        for j, zj in enumerate(zs, start=1):
            cols[f"Z{j}"] = zj
        eta = xl * s.beta + s.confounder_effect * sum(zs) + s.gamma0
    else:
        z = rho * xl + math.sqrt(1 - rho**2) * rng.standard_normal(n)
        cols["Z"] = z
        eta = xl * s.beta + z * s.gamma + s.gamma0
    r = s.rho_latent_proxy
    for k in range(1, s.n_proxies + 1):
        cols[f"X{k}"] = r * xl + math.sqrt(1 - r**2) * rng.standard_normal(n)

    if s.kind in ("lm", "omitted_confounder", "median_split"):
        y = eta + rng.standard_normal(n)
    elif s.kind == "binomial":
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    elif s.kind == "poisson":
        y = rng.poisson(np.exp(eta)).astype(float)
    else:
        y = negbin_theta_mu(np.exp(eta), rng)
    cols["Y"] = y
    return cols


def negbin_theta_mu(mu, rng: np.random.Generator) -> np.ndarray:
    """Negative binomial draws with mean mu and theta = mu, i.e. variance 2 mu."""
    # numpy's (r, p) form: mean r (1 - p) / p, variance r (1 - p) / p^2
    mu = np.asarray(mu, dtype=float)
    return rng.negative_binomial(mu, 0.5).astype(float)


def generate(scenario: Scenario, seed) -> Dataset:
    """Simulate one dataset with columns XL, Z (or Z1..Z3), X1..X5 and Y."""
    return Dataset.from_columns(_draw(scenario, np.random.default_rng(seed)))


def _design(cols, conf):
    parts = [np.ones(len(cols["Y"]))]
    for name, how in conf:
        parts.append(median_split(cols[name]) if how == "median_split" else cols[name])
    return np.column_stack(parts)


def _rejects(p: float, alpha: float, B: int) -> bool:
    return int(round(p * B)) <= critical_count(alpha, B)


def alpha_band(alpha: float, n_reps: int, z: float = 1.96) -> tuple[float, float]:
    """alpha +- z * sqrt(alpha (1 - alpha) / n_reps)."""
    se = math.sqrt(alpha * (1 - alpha) / n_reps)
    return alpha - z * se, alpha + z * se


def _one_rep(s: Scenario, rep_seed: np.random.SeedSequence, B, B_boot, alpha, methods, unsafe):
    data_ss, flip_ss, boot_ss = rep_seed.spawn(3)
    cols = _draw(s, np.random.default_rng(data_ss))
    y = cols["Y"]
    n = len(y)
    family = s.family
    specs = s.specs()
    flips = make_flip_matrix(n, B, int(flip_ss.generate_state(1)[0]))
    out: dict[tuple[str, str], bool] = {}

    nulls = {}
    tables = []
    designs = []
    for label, xname, conf in specs:
        z = _design(cols, conf)
        designs.append((cols[xname], z))
        if conf not in nulls:
            nulls[conf] = fit_null(z, y, family)
        fit = nulls[conf]
        if not fit.converged:
            return None
        tables.append(score_table(cols[xname], z, y, fit, flips))

    labels = [lab for lab, _, _ in specs]
    tstd = np.abs(np.vstack([t.t_std for t in tables]))
    if "signflip_uni" in methods:
        for k, lab in enumerate(labels):
            a = tstd[k]
            out[("signflip_uni", lab)] = int(np.count_nonzero(a >= a[0])) <= critical_count(alpha, B)
    if "parametric_uni" in methods:
        for (x, z), lab in zip(designs, labels):
            full = fit_full(x, z, y, family)
            if not full.converged:
                return None
            out[("parametric_uni", lab)] = wald_test(full)[1] <= alpha
    for m in ("mean", "max", "fisher", "liptak"):
        if f"pima_{m}" in methods:
            out[(f"pima_{m}", "combined")] = _rejects(combine(tstd, m)[1], alpha, B)

    boot_methods = {"bootstrap_uni", "boot_stouffer", "boot_median"} & set(methods)
    if boot_methods:
        if family.kind != "gaussian" and not unsafe:
            raise UnsafeMethodError(
                "bootstrap methods on GLM scenarios need unsafe=True (--unsafe-glm-bootstrap)"
            )
        boot_seed = int(boot_ss.generate_state(1)[0])
        rows = np.arange(n)
        res = bootstrap_multiverse(
            [(x, z, y, rows) for x, z in designs], B_boot, boot_seed, family, unsafe=unsafe, n_total=n
        )
        if "bootstrap_uni" in methods:
            for k, lab in enumerate(labels):
                out[("bootstrap_uni", lab)] = _rejects(res.per_spec_p[k], alpha, B_boot)
        if "boot_stouffer" in methods:
            out[("boot_stouffer", "combined")] = _rejects(res.stouffer_p, alpha, B_boot)
        if "boot_median" in methods:
            out[("boot_median", "combined")] = _rejects(res.median_p, alpha, B_boot)
    return out


def run_simulation(
    scenario: Scenario,
    n_reps: int,
    B: int = 250,
    alpha: float = 0.05,
    methods: Sequence[str] = ("signflip_uni", "parametric_uni", "pima_mean", "pima_max"),
    seed: int = 0,
    B_boot: int | None = None,
    unsafe: bool = False,
) -> list[dict]:
    """Empirical rejection rates per method and model (or 'combined').

    Replication ``r`` draws all of its randomness from
    ``SeedSequence([seed, r])``, so tables do not depend on execution order.
    Replications whose fits fail to converge are skipped and counted in
    ``n_failed``.
    """
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}; expected a subset of {METHODS}")
    B_boot = B if B_boot is None else B_boot
    counts: dict[tuple[str, str], int] = {}
    done = failed = 0
    for r in range(n_reps):
        res = _one_rep(scenario, np.random.SeedSequence([seed, r]), B, B_boot, alpha, methods, unsafe)
        if res is None:
            failed += 1
            continue
        done += 1
        for key, rej in res.items():
            counts[key] = counts.get(key, 0) + int(rej)
    rows = []
    for (method, spec), c in counts.items():
        rate = c / done if done else float("nan")
        rows.append(
            {
                "kind": scenario.kind,
                "n": scenario.n,
                "beta": scenario.beta,
                "method": method,
                "spec": spec,
                "rejections": c,
                "n_reps": done,
                "n_failed": failed,
                "rate": rate,
                "se": math.sqrt(rate * (1 - rate) / done) if done else float("nan"),
            }
        )
    return rows


def run_cautionary(
    kind: str,
    n: int = 200,
    n_reps: int = 2000,
    seed: int = 0,
    B: int = 250,
    alpha: float = 0.05,
    **scenario_kwargs,
) -> list[dict]:
    """Size of the sign-flip, parametric and PIMA tests under bad confounder handling."""
    if kind not in ("omitted_confounder", "median_split"):
        raise ValueError("cautionary kind must be 'omitted_confounder' or 'median_split'")
    scenario = Scenario(kind, n, **scenario_kwargs)
    return run_simulation(
        scenario,
        n_reps,
        B=B,
        alpha=alpha,
        methods=("signflip_uni", "parametric_uni", "pima_mean", "pima_max"),
        seed=seed,
    )

