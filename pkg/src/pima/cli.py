"""Command-line entry point: ``pima {test,multiverse,simulate,compare}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
On exit code 3 any partial results are still written, together with a
``<output>.failures.json`` manifest listing each failed spec.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .competitors import UnsafeMethodError, bootstrap_multiverse, combine_pvalues
from .data import DataError, Dataset, ingest_csv
from .glm import Family
from .multiverse import (
    COMBINING_FUNCTIONS,
    Contrast,
    ModelSpec,
    NoSpecScoredError,
    RowFilter,
    expand_grid,
    expand_spec,
    run_multiverse,
)
from .signflip import make_flip_matrix
from .simulation import ALTERNATIVE_BETA, METHODS, SCENARIO_KINDS, Scenario, run_simulation

log = logging.getLogger("pima")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

SPEC_CSV_COLUMNS = ("spec_id", "group", "n_obs", "beta_hat", "t_obs", "raw_p", "adjusted_p")
COMPARE_CSV_COLUMNS = SPEC_CSV_COLUMNS + ("bootstrap_p",)
SIM_CSV_COLUMNS = ("kind", "n", "beta", "method", "spec", "rejections", "n_reps", "n_failed", "rate", "se")


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    def __init__(self, failures):
        super().__init__(f"{len(failures)} spec(s) failed")
        self.failures = failures


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    subcommand: str
    data_path: str | None = None
    spec_path: str | None = None
    alpha: float = 0.05
    B: int = 1000
    seed: int | None = None
    combine: tuple = COMBINING_FUNCTIONS
    out_csv: str | None = None
    out_json: str | None = None
    unsafe_glm_bootstrap: bool = False
    extra: dict = field(default_factory=dict)

    def validate(self):
        if not 0 < self.alpha < 1:
            raise UsageError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.B < 2:
            raise UsageError("B must be at least 2")
        if self.seed is None:
            raise UsageError("a seed is required (--seed or 'seed' in the spec file)")
        if self.B < math.ceil(1 / self.alpha):
            log.warning("B=%d is below 1/alpha=%d; the test cannot reject", self.B, math.ceil(1 / self.alpha))
        bad = set(self.combine) - set(COMBINING_FUNCTIONS)
        if bad:
            raise UsageError(f"unknown combining functions {sorted(bad)}")


# -- spec file ---------------------------------------------------------------


def _parse_filter(obj):
    if obj is None:
        return None
    try:
        return RowFilter(obj["column"], obj["op"], obj["value"])
    except (KeyError, TypeError) as exc:
        raise UsageError(f"bad filter {obj!r}: needs column, op and value") from exc


def _parse_interest(obj) -> list:
    if isinstance(obj, str):
        return [obj]
    if isinstance(obj, list) and all(isinstance(o, str) for o in obj):
        return list(obj)
    if isinstance(obj, dict) and "column" in obj and "contrasts" in obj:
        return [Contrast(obj["column"], w, name) for name, w in obj["contrasts"].items()]
    raise UsageError("'interest' must be a column, a list of columns or {column, contrasts}")


def _parse_confounders(obj) -> dict:
    if obj is None:
        return {}
    if isinstance(obj, dict):
        return {c: [t] if isinstance(t, str) else list(t) for c, t in obj.items()}
    if isinstance(obj, list):
        out = {}
        for item in obj:
            if isinstance(item, str):
                out[item] = ["identity"]
            else:
                out[item[0]] = [item[1]] if isinstance(item[1], str) else list(item[1])
        return out
    raise UsageError("'confounders' must map columns to transform lists")


def load_spec_file(path) -> dict:
    """Parse a JSON multiverse description into specs, groups and settings."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read spec file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"spec file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError("spec file must hold a JSON object")
    for key in ("response", "interest"):
        if key not in raw:
            raise UsageError(f"spec file lacks required key {key!r}")
    try:
        family = Family.of(raw.get("family", "gaussian"))
        interests = _parse_interest(raw["interest"])
        filters = [_parse_filter(f) for f in raw.get("filters", [None])] or [None]
        specs = expand_grid(
            raw["response"],
            interests,
            _parse_confounders(raw.get("confounders")),
            family=family,
            extra_dummies=raw.get("extra_dummies", ()),
            filters=filters,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    groups = raw.get("groups", "interest")
    if groups == "interest":
        groups = {}
        for s in specs:
            label = s.interest.name if isinstance(s.interest, Contrast) else s.interest
            groups.setdefault(label, []).append(s.spec_id)
    elif groups in (None, "all"):
        groups = None
    elif not isinstance(groups, dict):
        raise UsageError("'groups' must be 'interest', 'all' or a mapping of names to spec ids")
    return {
        "specs": specs,
        "groups": groups,
        "data": raw.get("data"),
        "alpha": raw.get("alpha"),
        "B": raw.get("B"),
        "seed": raw.get("seed"),
    }


# -- output ------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, float):
        return None if not math.isfinite(obj) else obj
    if isinstance(obj, (np.floating,)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _write_json(path, obj):
    text = json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _write_csv(path, rows, columns):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if isinstance(v, float) and not math.isfinite(v) else v) for k, v in r.items()})
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _manifest_path(cfg: RunConfig) -> Path:
    base = cfg.out_json or cfg.out_csv or "pima"
    return Path(f"{base}.failures.json")


def _write_manifest(cfg, failures):
    path = _manifest_path(cfg)
    _write_json(path, [f.__dict__ for f in failures])
    log.error("%d spec(s) failed; manifest written to %s", len(failures), path)


# -- subcommands -------------------------------------------------------------


def _load_data(path) -> Dataset:
    if path is None:
        raise UsageError("no dataset given (--data or 'data' in the spec file)")
    return ingest_csv(path)


def _check_columns(specs, data):
    for spec in specs:
        cols = spec.columns()
        if isinstance(spec.row_filter, RowFilter):
            cols.append(spec.row_filter.column)
        for c in cols:
            if c not in data.columns:
                raise DataError(f"spec {spec.spec_id}: unknown column {c!r}")


def _resolve(cfg: RunConfig, spec_info: dict | None):
    """Flags override values from the spec file."""
    if spec_info:
        for key in ("alpha", "B", "seed"):
            if cfg.extra.get(f"{key}_given") is False and spec_info.get(key) is not None:
                setattr(cfg, key, spec_info[key])
        if cfg.data_path is None:
            cfg.data_path = spec_info.get("data")
    cfg.validate()


def cmd_test(cfg: RunConfig, args) -> int:
    if cfg.spec_path:
        info = load_spec_file(cfg.spec_path)
        _resolve(cfg, info)
        if len(info["specs"]) != 1:
            raise UsageError(f"'test' needs exactly one spec, the file expands to {len(info['specs'])}")
        spec = info["specs"][0]
    else:
        if not args.response or not args.interest:
            raise UsageError("'test' needs --spec or both --response and --interest")
        _resolve(cfg, None)
        conf = []
        for item in args.confounders or ():
            col, _, how = item.partition(":")
            conf.append((col, how or "identity"))
        spec = ModelSpec(
            spec_id=args.interest,
            response=args.response,
            interest=args.interest,
            confounders=tuple(conf),
            family=args.family,
        )
    data = _load_data(cfg.data_path)
    _check_columns([spec], data)
    try:
        res = run_multiverse([spec], data, B=cfg.B, seed=cfg.seed, alpha=cfg.alpha, methods=("max",))
    except NoSpecScoredError as exc:
        raise NumericFailure(exc.failures) from exc
    row = res.rows()[0]
    print(f"spec={row['spec_id']} n={row['n_obs']} T_obs={row['t_obs']:.6f} p={row['raw_p']:.6f}")
    if cfg.out_json:
        _write_json(cfg.out_json, {"B": res.B, "seed": res.seed, "alpha": res.alpha, **row})
    if cfg.out_csv:
        _write_csv(cfg.out_csv, [row], SPEC_CSV_COLUMNS)
    return EXIT_OK


def _finish(cfg, failures) -> int:
    if failures:
        _write_manifest(cfg, failures)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_multiverse(cfg: RunConfig, args) -> int:
    if not cfg.spec_path:
        raise UsageError("'multiverse' needs --spec")
    info = load_spec_file(cfg.spec_path)
    _resolve(cfg, info)
    data = _load_data(cfg.data_path)
    _check_columns(info["specs"], data)
    try:
        res = run_multiverse(
            info["specs"], data, B=cfg.B, seed=cfg.seed, alpha=cfg.alpha, groups=info["groups"], methods=cfg.combine
        )
    except NoSpecScoredError as exc:
        raise NumericFailure(exc.failures) from exc
    rows = res.rows()
    if cfg.out_csv:
        _write_csv(cfg.out_csv, rows, SPEC_CSV_COLUMNS)
    if cfg.out_json:
        _write_json(cfg.out_json, res.summary())
    for g, tests in res.global_tests.items():
        for m, r in tests.items():
            print(f"group={g} combine={m} T={r['statistic']:.6f} p={r['p_value']:.6f}")
    for g, t in res.tdp.items():
        print(f"group={g} true_discoveries>={t['true_discoveries']} of {t['n_specs']}")
    return _finish(cfg, res.failures)


def cmd_compare(cfg: RunConfig, args) -> int:
    if not cfg.spec_path:
        raise UsageError("'compare' needs --spec")
    info = load_spec_file(cfg.spec_path)
    _resolve(cfg, info)
    data = _load_data(cfg.data_path)
    specs = info["specs"]
    _check_columns(specs, data)
    family = specs[0].family
    if family.kind != "gaussian" and not cfg.unsafe_glm_bootstrap:
        raise UsageError(
            "the bootstrap competitor is unreliable for GLMs; pass --unsafe-glm-bootstrap to run it"
        )
    flips = make_flip_matrix(data.n, cfg.B, cfg.seed, data.ids)
    try:
        res = run_multiverse(
            specs, data, B=cfg.B, seed=cfg.seed, alpha=cfg.alpha, groups=info["groups"],
            methods=cfg.combine, flips=flips,
        )
    except NoSpecScoredError as exc:
        raise NumericFailure(exc.failures) from exc
    by_id = {s.spec_id: s for s in specs}
    pos = {i: k for k, i in enumerate(data.ids)}
    designs = []
    for sid in res.spec_ids:
        ex = expand_spec(by_id[sid], data)
        designs.append((ex.x, ex.z, ex.y, np.array([pos[i] for i in ex.ids])))
    # the wild bootstrap reuses the sign-flip matrix as its Rademacher weights
    boot = bootstrap_multiverse(
        designs, cfg.B, cfg.seed, family, unsafe=cfg.unsafe_glm_bootstrap, n_total=data.n,
        weights=flips.signs if family.kind == "gaussian" else None,
    )
    rows = res.rows()
    index = {sid: k for k, sid in enumerate(res.spec_ids)}
    for r in rows:
        r["bootstrap_p"] = float(boot.per_spec_p[index[r["spec_id"]]])
    if cfg.out_csv:
        _write_csv(cfg.out_csv, rows, COMPARE_CSV_COLUMNS)
    summary = {
        "K": res.K,
        "B": res.B,
        "seed": res.seed,
        "alpha": res.alpha,
        "pima": res.global_tests,
        "bootstrap": {
            "stouffer": boot.stouffer_p,
            "median": boot.median_p,
            "bonferroni": combine_pvalues(boot.per_spec_p, "bonferroni"),
        },
        "failures": [f.__dict__ for f in res.failures],
    }
    if cfg.out_json:
        _write_json(cfg.out_json, summary)
    for m, r in res.global_tests.get("all", next(iter(res.global_tests.values()))).items():
        print(f"pima_{m} p={r['p_value']:.6f}")
    for m, p in summary["bootstrap"].items():
        print(f"bootstrap_{m} p={p:.6f}")
    return _finish(cfg, res.failures)


def cmd_simulate(cfg: RunConfig, args) -> int:
    _resolve(cfg, None)
    methods = tuple(args.methods.split(",")) if args.methods else ("signflip_uni", "parametric_uni", "pima_mean", "pima_max")
    bad = set(methods) - set(METHODS)
    if bad:
        raise UsageError(f"unknown methods {sorted(bad)}; choose from {','.join(METHODS)}")
    rows = []
    for n in args.n:
        if args.beta == "alt":
            if args.scenario not in ALTERNATIVE_BETA:
                raise UsageError(f"no alternative beta defined for {args.scenario}")
            beta = ALTERNATIVE_BETA[args.scenario]
        else:
            try:
                beta = float(args.beta)
            except ValueError as exc:
                raise UsageError(f"--beta must be a number or 'alt', got {args.beta!r}") from exc
        try:
            scenario = Scenario(args.scenario, n, beta=beta)
            rows += run_simulation(
                scenario, args.reps, B=cfg.B, alpha=cfg.alpha, methods=methods, seed=cfg.seed,
                B_boot=args.B_boot, unsafe=cfg.unsafe_glm_bootstrap,
            )
        except UnsafeMethodError as exc:
            raise UsageError(str(exc)) from exc
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if cfg.out_csv:
        _write_csv(cfg.out_csv, rows, SIM_CSV_COLUMNS)
    if cfg.out_json:
        _write_json(cfg.out_json, {"B": cfg.B, "seed": cfg.seed, "alpha": cfg.alpha, "rows": rows})
    for r in rows:
        print(f"{r['kind']} n={r['n']} beta={r['beta']} {r['method']} {r['spec']}: {r['rate']:.4f} (se {r['se']:.4f})")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pima", description="Sign-flip score tests combined over a multiverse of GLMs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(sp, data=True):
        if data:
            sp.add_argument("--data", help="CSV file with a header row")
            sp.add_argument("--spec", help="JSON multiverse description")
        sp.add_argument("--alpha", type=float, default=None, help="significance level (default 0.05)")
        sp.add_argument("--B", type=int, default=None, help="number of sign flips (default 1000)")
        sp.add_argument("--seed", type=int, default=None, help="master seed (required here or in the spec)")
        sp.add_argument("--out-csv", help="per-row results")
        sp.add_argument("--out-json", help="summary")
        sp.add_argument(
            "--unsafe-glm-bootstrap",
            action="store_true",
            help="allow the bootstrap competitor on non-Gaussian families",
        )

    t = sub.add_parser("test", help="one sign-flip score test")
    common(t)
    t.add_argument("--response")
    t.add_argument("--interest")
    t.add_argument("--confounders", nargs="*", metavar="COL[:TRANSFORM]")
    t.add_argument("--family", default="gaussian", choices=("gaussian", "binomial", "poisson"))

    m = sub.add_parser("multiverse", help="PIMA over a spec grid")
    common(m)
    m.add_argument("--combine", default=",".join(COMBINING_FUNCTIONS), help="comma-separated combining functions")

    c = sub.add_parser("compare", help="PIMA next to the specification-curve bootstrap")
    common(c)
    c.add_argument("--combine", default=",".join(COMBINING_FUNCTIONS))

    s = sub.add_parser("simulate", help="Monte Carlo size/power study")
    common(s, data=False)
    s.add_argument("--scenario", required=True, choices=SCENARIO_KINDS)
    s.add_argument("--n", type=int, nargs="+", default=[100])
    s.add_argument("--reps", type=int, default=200)
    s.add_argument("--beta", default="0", help="effect of the latent predictor, or 'alt' for the default alternative")
    s.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    s.add_argument("--B-boot", type=int, default=None, help="bootstrap draws (default: B)")
    return p


def _config(args) -> RunConfig:
    cfg = RunConfig(
        subcommand=args.subcommand,
        data_path=getattr(args, "data", None),
        spec_path=getattr(args, "spec", None),
        alpha=0.05 if args.alpha is None else args.alpha,
        B=1000 if args.B is None else args.B,
        seed=args.seed,
        out_csv=args.out_csv,
        out_json=args.out_json,
        unsafe_glm_bootstrap=args.unsafe_glm_bootstrap,
    )
    cfg.extra = {"alpha_given": args.alpha is not None, "B_given": args.B is not None, "seed_given": args.seed is not None}
    if getattr(args, "combine", None):
        cfg.combine = tuple(c.strip() for c in args.combine.split(",") if c.strip())
    return cfg


_COMMANDS = {"test": cmd_test, "multiverse": cmd_multiverse, "compare": cmd_compare, "simulate": cmd_simulate}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    cfg = _config(args)
    try:
        return _COMMANDS[args.subcommand](cfg, args)
    except UsageError as exc:
        print(f"pima: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"pima: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailure as exc:
        _write_manifest(cfg, exc.failures)
        for f in exc.failures:
            print(f"pima: spec {f.spec_id} failed at {f.stage}: {f.message}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
