"""Multiverse layer: specifications, shared-flip scoring and PIMA inference."""

from .core import MultiverseResult, NoSpecScoredError, SpecFailure, multiverse_scores, run_multiverse
from .inference import (
    COMBINING_FUNCTIONS,
    ClosedTesting,
    GroupResult,
    closed_testing_oracle,
    combine,
    grouped_posthoc,
    maxt_adjusted_pvalues,
    rank_pvalues,
    tdp_lower_bound,
)
from .spec import (
    TRANSFORMS,
    Contrast,
    ExpandedSpec,
    ModelSpec,
    RowFilter,
    bspline_basis,
    expand_grid,
    expand_spec,
    median_split,
)

__all__ = [
    "COMBINING_FUNCTIONS",
    "TRANSFORMS",
    "ClosedTesting",
    "Contrast",
    "ExpandedSpec",
    "GroupResult",
    "ModelSpec",
    "MultiverseResult",
    "NoSpecScoredError",
    "RowFilter",
    "SpecFailure",
    "bspline_basis",
    "closed_testing_oracle",
    "combine",
    "expand_grid",
    "expand_spec",
    "grouped_posthoc",
    "maxt_adjusted_pvalues",
    "median_split",
    "multiverse_scores",
    "rank_pvalues",
    "run_multiverse",
    "tdp_lower_bound",
]
