"""Model specifications (universes) and their expansion into design matrices."""

from __future__ import annotations

import itertools
import logging
import operator
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import BSpline

from ..data import DataError, Dataset
from ..glm import Family

__all__ = [
    "TRANSFORMS",
    "Contrast",
    "RowFilter",
    "ModelSpec",
    "ExpandedSpec",
    "bspline_basis",
    "median_split",
    "expand_spec",
    "expand_grid",
]

log = logging.getLogger(__name__)

TRANSFORMS = ("identity", "bspline3", "bspline4", "median_split")

_OPS: dict[str, Callable] = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}


def _normalize_transform(name: str) -> str:
    key = str(name).lower().replace(" ", "").replace("(", "").replace(")", "").replace("_df", "")
    aliases = {"raw": "identity", "linear": "identity", "median": "median_split", "mediansplit": "median_split"}
    key = aliases.get(key, key)
    if key not in TRANSFORMS:
        raise ValueError(f"unknown transform {name!r}; expected one of {TRANSFORMS}")
    return key


@dataclass(frozen=True)
class Contrast:
    """Zero-centred contrast over the levels of a categorical column.

    Levels not listed get weight 0 and receive their own dummy in the
    confounder design, so that the contrast only compares the weighted levels.
    """

    column: str
    weights: Mapping[str, float]
    name: str = ""

    def __post_init__(self):
        w = {str(k): float(v) for k, v in self.weights.items()}
        object.__setattr__(self, "weights", w)
        nonzero = [v for v in w.values() if v != 0]
        if not nonzero:
            raise ValueError(f"contrast on {self.column!r} has no nonzero weight")
        if len(nonzero) > 1 and abs(sum(nonzero)) > 1e-12:
            raise ValueError(f"contrast weights on {self.column!r} must sum to zero, got {sum(nonzero)}")
        if not self.name:
            pos = "+".join(k for k, v in w.items() if v > 0)
            neg = "+".join(k for k, v in w.items() if v < 0)
            object.__setattr__(self, "name", f"{pos}-{neg}" if neg else pos)


@dataclass(frozen=True)
class RowFilter:
    """Keep rows where ``column <op> value``; ``op`` may also be 'in' / 'not in'."""

    column: str
    op: str
    value: object

    def __post_init__(self):
        if self.op not in _OPS and self.op not in ("in", "not in"):
            raise ValueError(f"unknown filter operator {self.op!r}")

    def mask(self, data: Dataset) -> np.ndarray:
        col = data[self.column]
        present = ~data.missing(self.column)
        out = np.zeros(data.n, dtype=bool)
        vals = col[present]
        if self.op in ("in", "not in"):
            allowed = set(self.value)
            hit = np.array([v in allowed for v in vals], dtype=bool)
            out[present] = hit if self.op == "in" else ~hit
        else:
            out[present] = _OPS[self.op](vals, self.value)
        return out

    def __str__(self):
        return f"{self.column}{self.op}{self.value}"


@dataclass(frozen=True)
class ModelSpec:
    """One universe of the multiverse.

    ``confounders`` is an ordered sequence of ``(column, transform)`` pairs with
    transform in :data:`TRANSFORMS`. An intercept is always included.
    """

    spec_id: str
    response: str
    interest: str | Contrast
    confounders: tuple = ()
    extra_dummies: tuple = ()
    family: Family = field(default_factory=lambda: Family("gaussian"))
    row_filter: RowFilter | Callable[[Dataset], np.ndarray] | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family.of(self.family))
        conf = tuple((str(c), _normalize_transform(t)) for c, t in self.confounders)
        object.__setattr__(self, "confounders", conf)
        object.__setattr__(self, "extra_dummies", tuple(self.extra_dummies))
        if isinstance(self.row_filter, RowFilter) and self.row_filter.column == self.response:
            log.warning(
                "spec %s filters on the response %r; the error-rate guarantee does not cover "
                "response-dependent filters",
                self.spec_id,
                self.response,
            )

    def columns(self) -> list[str]:
        cols = [self.response]
        cols.append(self.interest.column if isinstance(self.interest, Contrast) else self.interest)
        cols += [c for c, _ in self.confounders]
        cols += list(self.extra_dummies)
        return list(dict.fromkeys(cols))


@dataclass(frozen=True)
class ExpandedSpec:
    spec_id: str
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    ids: tuple
    z_names: tuple
    family: Family
    n_missing_dropped: int = 0


def _full_basis(x, df):
    lo, hi = float(np.min(x)), float(np.max(x))
    inner = np.quantile(x, np.arange(1, df - 2) / (df - 2)) if df > 3 else np.empty(0)
    knots = np.r_[[lo] * 4, inner, [hi] * 4]
    return BSpline.design_matrix(np.asarray(x, dtype=float), knots, 3).toarray()


def bspline_basis(x, df: int, drop_first: bool = True) -> np.ndarray:
    """Cubic B-spline basis with ``df`` columns and no intercept column.

    Boundary knots sit at min/max of ``x`` and the ``df - 3`` interior knots at
    its quantiles (the median for ``df = 4``). With ``drop_first=False`` the full
    ``df + 1`` column basis, which sums to one row-wise, is returned.
    """
    if df not in (3, 4):
        raise ValueError("bspline df must be 3 or 4")
    x = np.asarray(x, dtype=float)
    n_distinct = np.unique(x).size
    if n_distinct == 1:
        raise ValueError("cannot build a spline basis on a constant predictor")
    if n_distinct < df:
        raise ValueError(f"need at least {df} distinct values for a {df}-df spline, got {n_distinct}")
    full = _full_basis(x, df)
    return full[:, 1:] if drop_first else full


def median_split(x) -> np.ndarray:
    """1 for values at or above the sample median, else 0."""
    x = np.asarray(x, dtype=float)
    return (x >= np.median(x)).astype(float)


def _transform(x, name):
    if name == "identity":
        return x[:, None], [""]
    if name == "median_split":
        return median_split(x)[:, None], ["[>median]"]
    df = int(name[-1])
    return bspline_basis(x, df), [f"[bs{df}.{j + 1}]" for j in range(df)]


def _numeric(name, values):
    if values.dtype == object:
        raise DataError(f"column {name!r} is categorical where a numeric column is required")
    return values.astype(float)


def expand_spec(spec: ModelSpec, data: Dataset) -> ExpandedSpec:
    """Apply filtering, missing-data deletion and transforms for one spec.

    Transforms (median, spline knots) are computed on the rows that survive,
    and the surviving observation ids are returned for flip alignment.
    """
    used = spec.columns()
    if spec.row_filter is not None and isinstance(spec.row_filter, RowFilter):
        used.append(spec.row_filter.column)
    for c in used:
        data[c]  # raises DataError on unknown columns
    complete = np.ones(data.n, dtype=bool)
    for c in dict.fromkeys(used):
        complete &= ~data.missing(c)
    n_missing = int(data.n - complete.sum())
    if n_missing:
        log.info("spec %s: dropped %d rows with missing values", spec.spec_id, n_missing)
    keep = complete
    if spec.row_filter is not None:
        fmask = spec.row_filter.mask(data) if isinstance(spec.row_filter, RowFilter) else spec.row_filter(data)
        keep = keep & np.asarray(fmask, dtype=bool)
    if not keep.any():
        raise DataError(f"spec {spec.spec_id}: no observations left after filtering")
    rows = np.flatnonzero(keep)
    ids = tuple(data.ids[i] for i in rows)

    y = _numeric(spec.response, data[spec.response][rows])
    z_cols = [np.ones(rows.size)]
    z_names = ["(Intercept)"]

    if isinstance(spec.interest, Contrast):
        con = spec.interest
        col = data[con.column]
        if col.dtype != object:
            raise DataError(f"contrast column {con.column!r} is not categorical")
        all_levels = set(data.levels(con.column))
        for lev in con.weights:
            if lev not in all_levels:
                raise DataError(f"spec {spec.spec_id}: contrast references missing level {lev!r}")
        vals = col[rows]
        present = set(vals)
        for lev, wgt in con.weights.items():
            if wgt != 0 and lev not in present:
                raise DataError(f"spec {spec.spec_id}: level {lev!r} has no rows after filtering")
        x = np.array([con.weights.get(v, 0.0) for v in vals])
        for lev in sorted(present):
            if con.weights.get(lev, 0.0) == 0.0:
                z_cols.append((vals == lev).astype(float))
                z_names.append(f"{con.column}[{lev}]")
    else:
        x = _numeric(spec.interest, data[spec.interest][rows])

    for name, how in spec.confounders:
        raw = _numeric(name, data[name][rows])
        cols, suffixes = _transform(raw, how)
        z_cols.extend(cols.T)
        z_names.extend(f"{name}{s}" for s in suffixes)

    for name in spec.extra_dummies:
        col = data[name]
        if col.dtype != object:
            raise DataError(f"extra dummy column {name!r} is not categorical")
        vals = col[rows]
        for lev in sorted(set(vals))[1:]:
            z_cols.append((vals == lev).astype(float))
            z_names.append(f"{name}[{lev}]")

    z = np.column_stack(z_cols)
    if rows.size <= z.shape[1] + 1:
        raise DataError(
            f"spec {spec.spec_id}: {rows.size} observations for {z.shape[1] + 1} coefficients"
        )
    return ExpandedSpec(
        spec_id=spec.spec_id,
        x=x,
        z=z,
        y=y,
        ids=ids,
        z_names=tuple(z_names),
        family=spec.family,
        n_missing_dropped=n_missing,
    )


def expand_grid(
    response: str,
    interests: Sequence[str | Contrast],
    confounder_grid: Mapping[str, Sequence[str]],
    family: Family | str = "gaussian",
    extra_dummies: Sequence[str] = (),
    filters: Sequence[RowFilter | None] = (None,),
) -> list[ModelSpec]:
    """Cartesian product of interests x filters x confounder transforms.

    With four confounders and three transforms each this gives 81 specs per
    interest. Spec ids read ``<interest>|<filter>|col=transform|...``.
    """
    names = list(confounder_grid)
    choices = [[_normalize_transform(t) for t in confounder_grid[c]] for c in names]
    specs = []
    for interest in interests:
        label = interest.name if isinstance(interest, Contrast) else str(interest)
        for filt in filters:
            for combo in itertools.product(*choices):
                parts = [label]
                if filt is not None:
                    parts.append(str(filt))
                parts += [f"{c}={t}" for c, t in zip(names, combo)]
                specs.append(
                    ModelSpec(
                        spec_id="|".join(parts),
                        response=response,
                        interest=interest,
                        confounders=tuple(zip(names, combo)),
                        extra_dummies=tuple(extra_dummies),
                        family=family,
                        row_filter=filt,
                    )
                )
    return specs
