"""Shared-flip score computation across a multiverse and the full PIMA run."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from ..data import Dataset
from ..glm import fit_full, fit_null
from ..signflip import FlipMatrix, ScoreTable, make_flip_matrix, score_table
from .inference import (
    COMBINING_FUNCTIONS,
    GroupResult,
    combine,
    grouped_posthoc,
    maxt_adjusted_pvalues,
    rank_pvalues,
    tdp_lower_bound,
)
from .spec import ExpandedSpec, ModelSpec, expand_spec

__all__ = ["SpecFailure", "NoSpecScoredError", "multiverse_scores", "MultiverseResult", "run_multiverse"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpecFailure:
    spec_id: str
    stage: str
    message: str


class NoSpecScoredError(RuntimeError):
    """Every spec failed; ``failures`` says why."""

    def __init__(self, failures):
        super().__init__("no specification could be scored")
        self.failures = list(failures)


@dataclass
class _Scored:
    spec: ModelSpec
    expanded: ExpandedSpec
    table: ScoreTable


def _score_specs(specs, data, flips):
    scored, failures = [], []
    null_cache = {}
    for spec in specs:
        try:
            ex = expand_spec(spec, data)
        except Exception as exc:  # reported per spec, never silently dropped
            failures.append(SpecFailure(spec.spec_id, "expand", str(exc)))
            warnings.warn(f"spec {spec.spec_id} excluded: {exc}", RuntimeWarning, stacklevel=3)
            continue
        # specs differing only in the predictor of interest share their null fit
        key = (ex.ids, ex.z.tobytes(), ex.z.shape, ex.y.tobytes(), ex.family)
        try:
            fit = null_cache.get(key)
            if fit is None:
                fit = fit_null(ex.z, ex.y, ex.family, column_names=ex.z_names)
                null_cache[key] = fit
            if not fit.converged:
                raise RuntimeError(f"null model did not converge: {fit.message}")
            table = score_table(ex.x, ex.z, ex.y, fit, flips.restrict(ex.ids), spec.spec_id)
        except Exception as exc:
            failures.append(SpecFailure(spec.spec_id, "fit", str(exc)))
            warnings.warn(f"spec {spec.spec_id} excluded: {exc}", RuntimeWarning, stacklevel=3)
            continue
        scored.append(_Scored(spec, ex, table))
    return scored, failures


def multiverse_scores(
    specs: Sequence[ModelSpec], data: Dataset, flips: FlipMatrix
) -> tuple[list[ScoreTable], list[SpecFailure]]:
    """Score tables for every spec, all driven by the one flip matrix.

    A spec fitted on a subset of the rows uses the flip columns of the rows it
    keeps. Specs that cannot be expanded or whose null fit fails are excluded
    and reported in the returned failure list.
    """
    if tuple(data.ids) != tuple(flips.observation_ids):
        raise ValueError("flip matrix must be generated over the dataset's observation ids")
    scored, failures = _score_specs(specs, data, flips)
    return [s.table for s in scored], failures


@dataclass
class MultiverseResult:
    """Everything a PIMA run produces.

    ``tstd`` holds |T_std| with one row per successfully scored spec and the
    observed statistic in column 0.
    """

    spec_ids: list
    groups: dict
    tstd: np.ndarray
    t_obs: np.ndarray
    n_obs: np.ndarray
    beta_hat: np.ndarray
    raw_p: np.ndarray
    global_tests: dict
    adjusted_p: np.ndarray
    tdp: dict
    group_results: dict
    failures: list = field(default_factory=list)
    alpha: float = 0.05
    B: int = 0
    seed: int | None = None

    @property
    def K(self) -> int:
        return len(self.spec_ids)

    def group_of(self, k: int) -> Hashable:
        for g, idx in self.groups.items():
            if k in idx:
                return g
        return None

    def rows(self) -> list[dict]:
        """One record per (group, spec) in the stable output column order."""
        out = []
        for g, idx in self.groups.items():
            for k in idx:
                out.append(
                    {
                        "spec_id": self.spec_ids[k],
                        "group": g,
                        "n_obs": int(self.n_obs[k]),
                        "beta_hat": float(self.beta_hat[k]),
                        "t_obs": float(self.t_obs[k]),
                        "raw_p": float(self.raw_p[k]),
                        "adjusted_p": float(self.adjusted_p[k]),
                    }
                )
        return out

    def summary(self) -> dict:
        return {
            "K": self.K,
            "B": self.B,
            "seed": self.seed,
            "alpha": self.alpha,
            "global": self.global_tests,
            "min_adjusted_p": float(self.adjusted_p.min()) if self.K else None,
            "tdp": self.tdp,
            "groups": {
                str(g): {
                    "n_specs": r.n_specs,
                    "statistic": r.statistic,
                    "global_p": r.global_p,
                    "adjusted_p": r.adjusted_p,
                }
                for g, r in self.group_results.items()
            },
            "failures": [f.__dict__ for f in self.failures],
        }


def _beta_hat(ex: ExpandedSpec) -> float:
    try:
        fit = fit_full(ex.x, ex.z, ex.y, ex.family)
    except Exception as exc:
        log.warning("spec %s: full fit failed (%s)", ex.spec_id, exc)
        return float("nan")
    if not fit.converged:
        log.warning("spec %s: full fit did not converge (%s)", ex.spec_id, fit.message)
    return fit.beta_hat


def run_multiverse(
    specs: Sequence[ModelSpec],
    data: Dataset,
    *,
    B: int = 1000,
    seed: int,
    alpha: float = 0.05,
    groups: Mapping[Hashable, Sequence[str]] | None = None,
    methods: Sequence[str] = COMBINING_FUNCTIONS,
    flips: FlipMatrix | None = None,
    with_beta: bool = True,
) -> MultiverseResult:
    """Score every spec with shared flips and run all PIMA inferences.

    ``groups`` maps a group name to spec ids (default: a single group
    ``"all"``). Per-spec adjusted p-values are computed over the union of all
    groups, i.e. the closure of every hypothesis in the run; TDP bounds are
    reported per group and overall.
    """
    if flips is None:
        flips = make_flip_matrix(data.n, B, seed, data.ids)
    scored, failures = _score_specs(specs, data, flips)
    if not scored:
        raise NoSpecScoredError(failures)
    ids = [s.spec.spec_id for s in scored]
    if len(set(ids)) != len(ids):
        raise ValueError("spec ids must be unique")
    index = {sid: k for k, sid in enumerate(ids)}
    if groups is None:
        group_idx = {"all": list(range(len(ids)))}
    else:
        group_idx = {g: [index[s] for s in members if s in index] for g, members in groups.items()}
        group_idx = {g: idx for g, idx in group_idx.items() if idx}

    t_signed = np.vstack([s.table.t_std for s in scored])
    tstd = np.abs(t_signed)
    raw_p = rank_pvalues(tstd)[:, 0]
    adjusted = maxt_adjusted_pvalues(tstd)

    global_tests = {}
    for g, idx in group_idx.items():
        global_tests[str(g)] = {}
        for m in methods:
            stat, p = combine(tstd[idx], m)
            global_tests[str(g)][m] = {"statistic": float(stat[0]), "p_value": p}
    if len(group_idx) > 1:
        global_tests["all"] = {}
        for m in methods:
            stat, p = combine(tstd, m)
            global_tests["all"][m] = {"statistic": float(stat[0]), "p_value": p}

    tdp = {}
    for g, idx in group_idx.items():
        d, prop = tdp_lower_bound(tstd, idx, alpha, adjusted=adjusted, exact=len(ids) <= 20)
        tdp[str(g)] = {"n_specs": len(idx), "true_discoveries": d, "proportion": prop}

    group_results: dict[Hashable, GroupResult] = grouped_posthoc(group_idx, tstd)
    beta = np.array([_beta_hat(s.expanded) for s in scored]) if with_beta else np.full(len(ids), np.nan)

    return MultiverseResult(
        spec_ids=ids,
        groups=group_idx,
        tstd=tstd,
        t_obs=t_signed[:, 0],
        n_obs=np.array([s.table.n_obs for s in scored]),
        beta_hat=beta,
        raw_p=raw_p,
        global_tests=global_tests,
        adjusted_p=adjusted,
        tdp=tdp,
        group_results=group_results,
        failures=failures,
        alpha=alpha,
        B=flips.B,
        seed=flips.seed,
    )
