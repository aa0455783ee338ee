"""Sign-flip score tests for GLMs and their combination over a multiverse of specifications."""

from .data import DataError, Dataset, ingest_csv
from .glm import Family, FullFit, GLMFit, NotConvergedError, NullFit, RankDeficientError, fit_full, fit_null, irls_fit, wald_test
from .multiverse import (
    COMBINING_FUNCTIONS,
    Contrast,
    ModelSpec,
    MultiverseResult,
    RowFilter,
    closed_testing_oracle,
    combine,
    expand_grid,
    grouped_posthoc,
    maxt_adjusted_pvalues,
    run_multiverse,
    tdp_lower_bound,
)
from .signflip import FlipMatrix, make_flip_matrix, score_table, score_test

__version__ = "0.1.0"

__all__ = [
    "COMBINING_FUNCTIONS",
    "Contrast",
    "DataError",
    "Dataset",
    "Family",
    "FlipMatrix",
    "FullFit",
    "GLMFit",
    "ModelSpec",
    "MultiverseResult",
    "NotConvergedError",
    "NullFit",
    "RankDeficientError",
    "RowFilter",
    "closed_testing_oracle",
    "combine",
    "expand_grid",
    "fit_full",
    "fit_null",
    "grouped_posthoc",
    "ingest_csv",
    "irls_fit",
    "make_flip_matrix",
    "maxt_adjusted_pvalues",
    "run_multiverse",
    "score_table",
    "score_test",
    "tdp_lower_bound",
    "wald_test",
]
