"""Command-line interface: ``rerand {design,calibrate,test,ci,theory,simulate,enumerate}``.

Covariates and outcomes are read from CSV; every result is written as JSON
that embeds the tool version, the full configuration, the seed and the
criterion, so a run can be replayed exactly.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings

import numpy as np

from . import __version__, theory
from .balance import CovariateMatrix, build_context, with_interactions
from .criteria import (ALWAYS, Criterion, calibrate_threshold_asymptotic, calibrate_threshold_empirical,
                       from_dict)
from .harness import EXPERIMENTS
from .inference import BracketError, NotAcceptableError, confidence_interval, randomization_test
from .sampler import (DEFAULT_MAX_PROPOSALS, MIN_ACCEPTABLE, ProposalBudgetExceeded, RngSpec, assignment_matrix,
                      count_acceptable, rerandomize, support_size)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BUDGET = 3


class InputError(ValueError):
    pass


def _read_rows(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise InputError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise InputError(f"{path}: no data rows")
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise InputError(f"{path}: row {i} has {len(r)} cells, header has {len(header)}")
    return [h.strip() for h in header], body


def _parse_float(cell: str, path: str, row: int, col: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise InputError(f"{path}: non-numeric value {cell!r} at row {row}, column {col!r}") from None
    if not math.isfinite(value):
        raise InputError(f"{path}: non-finite value at row {row}, column {col!r}")
    return value


def ingest_covariates(path: str, id_column: str | None = None, squares: bool = False,
                      interactions: bool = False) -> tuple[CovariateMatrix, list[str]]:
    """Read a covariate CSV (header row, numeric cells, optional unit-id column)."""
    header, body = _read_rows(path)
    if id_column is not None and id_column not in header:
        raise InputError(f"{path}: id column {id_column!r} not found")
    id_idx = header.index(id_column) if id_column else None
    cols = [j for j in range(len(header)) if j != id_idx]
    if not cols:
        raise InputError(f"{path}: no covariate columns")
    data = np.array([[_parse_float(r[j], path, i, header[j]) for j in cols]
                     for i, r in enumerate(body, start=2)])
    ids = [r[id_idx].strip() for r in body] if id_idx is not None else [str(i + 1) for i in range(len(body))]
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate unit ids")
    x = CovariateMatrix(data, tuple(header[j] for j in cols))
    if squares or interactions:
        x = with_interactions(x, squares=squares, interactions=interactions)
    return x, ids


def ingest_outcomes(path: str, ids: list[str], id_column: str | None = None,
                    outcome_column: str | None = None) -> np.ndarray:
    """Read outcomes and align them to ``ids``."""
    header, body = _read_rows(path)
    if id_column is not None and id_column not in header:
        raise InputError(f"{path}: id column {id_column!r} not found")
    candidates = [h for h in header if h != id_column]
    if outcome_column is None:
        if len(candidates) != 1:
            raise InputError(f"{path}: pass --outcome-column to pick one of {candidates}")
        outcome_column = candidates[0]
    if outcome_column not in header:
        raise InputError(f"{path}: outcome column {outcome_column!r} not found")
    j = header.index(outcome_column)
    values = [_parse_float(r[j], path, i, outcome_column) for i, r in enumerate(body, start=2)]
    if id_column is None:
        if len(values) != len(ids):
            raise InputError(f"{path}: {len(values)} outcomes for {len(ids)} units")
        return np.array(values)
    k = header.index(id_column)
    by_id = {r[k].strip(): v for r, v in zip(body, values)}
    missing = [i for i in ids if i not in by_id]
    extra = set(by_id) - set(ids)
    if missing or extra:
        raise InputError(f"{path}: unit ids do not match the design (missing {missing[:5]}, "
                         f"unexpected {sorted(extra)[:5]})")
    return np.array([by_id[i] for i in ids])


def _load_criterion(text: str | None) -> dict | None:
    if text is None:
        return None
    if os.path.exists(text):
        with open(text) as fh:
            text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"criterion is neither a file nor valid JSON: {exc}") from None


def _config(args) -> dict:
    skip = {"func"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _envelope(args, payload: dict, criterion: dict | None = None) -> dict:
    return {"tool": "rerand", "version": __version__, "command": args.command, "config": _config(args),
            "seed": RngSpec(args.seed).to_dict(), "criterion": criterion, "result": payload}


def _emit(args, doc) -> None:
    text = doc if isinstance(doc, str) else json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n"
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _resolve_criterion(args, ctx) -> tuple[Criterion, dict | None]:
    """Criterion from --criterion JSON, or a Mahalanobis threshold calibrated from --pa."""
    spec = _load_criterion(getattr(args, "criterion", None))
    calibration = None
    if spec is not None:
        if "p_a" in spec and spec.get("type") == "mahalanobis" and "a" not in spec:
            args.pa = spec["p_a"]
        else:
            return from_dict(spec), None
    if args.pa is None:
        raise InputError("give --criterion or --pa")
    if args.pa >= 1.0:
        return ALWAYS, None
    cal = _calibrate(ctx, args.pa, args.calibration, args.draws, args.seed)
    calibration = cal.to_dict()
    return cal.criterion(), calibration


def _calibrate(ctx, p_a, method, draws, seed):
    if method == "asymptotic":
        return calibrate_threshold_asymptotic(ctx.rank, p_a)
    if method == "exact":
        return calibrate_threshold_empirical(ctx, p_a, exact=True)
    return calibrate_threshold_empirical(ctx, p_a, draws, RngSpec(seed, 1))


def _n_treated(args, n):
    return args.n_treated if args.n_treated is not None else n // 2


def cmd_design(args) -> int:
    x, ids = ingest_covariates(args.covariates, args.id_column, args.squares, args.interactions)
    ctx = build_context(x, _n_treated(args, x.n))
    crit, calibration = _resolve_criterion(args, ctx)
    max_prop = args.max_proposals
    if max_prop is None:
        p = args.pa if args.pa else 1.0
        max_prop = int(max(DEFAULT_MAX_PROPOSALS, math.ceil(1000 / p)))
    result = rerandomize(ctx, crit, RngSpec(args.seed), max_prop)
    notes = []
    if support_size(ctx.n, ctx.n_t) <= args.enumeration_limit:
        acceptable = count_acceptable(ctx, crit)
        if acceptable < MIN_ACCEPTABLE:
            msg = (f"only {acceptable} acceptable assignments; a randomization test needs at least "
                   f"{MIN_ACCEPTABLE} for useful resolution")
            warnings.warn(msg)
            notes.append(msg)
    payload = result.to_dict()
    payload.update({"unit_ids": ids, "covariate_names": list(x.column_names), "calibration": calibration,
                    "notes": notes})
    _emit(args, _envelope(args, payload, crit.to_dict()))
    if args.assignment_out:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["unit", "treated"])
        writer.writerows(zip(ids, result.assignment.tolist()))
        with open(args.assignment_out, "w", newline="") as fh:
            fh.write(buf.getvalue())
    return EXIT_OK


def cmd_calibrate(args) -> int:
    x, _ = ingest_covariates(args.covariates, args.id_column, args.squares, args.interactions)
    ctx = build_context(x, _n_treated(args, x.n))
    cal = _calibrate(ctx, args.pa, args.calibration, args.draws, args.seed)
    _emit(args, _envelope(args, cal.to_dict(), cal.criterion().to_dict()))
    return EXIT_OK


def _analysis_inputs(args):
    with open(args.design) as fh:
        design = json.load(fh)
    result = design.get("result", design)
    x, ids = ingest_covariates(args.covariates, args.id_column, args.squares, args.interactions)
    if "unit_ids" in result and result["unit_ids"] != ids:
        raise InputError("unit ids in the covariate file do not match the design file")
    w = np.array(result["assignment"])
    if w.size != x.n:
        raise InputError(f"design has {w.size} units, covariates have {x.n}")
    spec = _load_criterion(args.criterion) or design.get("criterion") or result.get("criterion")
    if spec is None:
        raise InputError("no criterion in the design file; pass --criterion")
    crit = from_dict(spec)
    ctx = build_context(x, int(w.sum()))
    y = ingest_outcomes(args.outcomes, ids, args.outcome_id_column, args.outcome_column)
    if not crit.evaluate(ctx, w):
        raise NotAcceptableError(f"the design's assignment fails criterion {crit.to_json()}; "
                                 "analysis must use the criterion applied at design time")
    return ctx, crit, w, y


def cmd_test(args) -> int:
    ctx, crit, w, y = _analysis_inputs(args)
    report = randomization_test(ctx, crit, w, y, args.n_sim, RngSpec(args.seed), args.tail, args.exact)
    _emit(args, _envelope(args, report.to_dict(), crit.to_dict()))
    return EXIT_OK


def cmd_ci(args) -> int:
    ctx, crit, w, y = _analysis_inputs(args)
    report = confidence_interval(ctx, crit, w, y, args.level, args.n_sim, RngSpec(args.seed), args.exact)
    payload = report.to_dict()
    payload["trace"] = [list(t) for t in payload["trace"]]
    _emit(args, _envelope(args, payload, crit.to_dict()))
    return EXIT_OK


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def cmd_theory(args) -> int:
    if args.grid == "covariate":
        _emit(args, _csv(theory.covariate_grid(range(1, args.max_k + 1), args.pa_grid)))
        return EXIT_OK
    if args.grid == "tau":
        _emit(args, _csv(theory.tau_grid(range(1, args.max_k + 1), args.pa_grid, args.r2_grid)))
        return EXIT_OK
    if args.a is not None:
        a = math.inf if args.a == "inf" else float(args.a)
        p_a = theory.chi2_cdf(args.k, a) if math.isfinite(a) else 1.0
    else:
        p_a = args.pa
        a = theory.threshold_for(args.k, p_a)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        va = theory.v_a(args.k, a)
    out = {"k": args.k, "p_a": p_a, "a": "inf" if math.isinf(a) else a, "v_a": va,
           "priv_covariate": 100.0 * (1.0 - va), "priv_tau": 100.0 * (1.0 - va) * args.r2,
           "r_squared": args.r2,
           "expected_m_given_accept": args.k * va}
    if args.m is not None:
        out["priv_regression"] = theory.priv_regression(args.m, args.n, args.r2)
    _emit(args, _envelope(args, out))
    return EXIT_OK


def cmd_simulate(args) -> int:
    names = list(EXPERIMENTS) if args.experiments == ["all"] else args.experiments
    reports = []
    for name in names:
        fn = EXPERIMENTS[name]
        rep = fn(rng=args.seed) if args.seed_override and name != "h5" else fn()
        reports.append(rep)
        sys.stderr.write(rep.table() + "\n")
    _emit(args, _envelope(args, {"reports": [r.to_dict() for r in reports],
                                 "passed": all(r.passed for r in reports)}))
    return EXIT_OK


def cmd_enumerate(args) -> int:
    total = support_size(args.n, args.n_treated)
    out = {"n": args.n, "n_treated": args.n_treated, "support_size": total}
    if args.covariates:
        x, _ = ingest_covariates(args.covariates, args.id_column, args.squares, args.interactions)
        if x.n != args.n:
            raise InputError(f"--n {args.n} does not match {x.n} covariate rows")
        ctx = build_context(x, args.n_treated)
        spec = _load_criterion(args.criterion)
        crit = from_dict(spec) if spec else ALWAYS
        W = assignment_matrix(args.n, args.n_treated, args.enumeration_limit)
        ok = crit.accepts(ctx, W)
        out["criterion"] = crit.to_dict()
        out["acceptable"] = int(ok.sum())
        if args.list:
            out["assignments"] = W[ok].tolist()
    elif args.list:
        out["assignments"] = assignment_matrix(args.n, args.n_treated, args.enumeration_limit).tolist()
    _emit(args, _envelope(args, out))
    return EXIT_OK


def _data_args(p, required=True):
    p.add_argument("--covariates", required=required, help="CSV with a header row")
    p.add_argument("--id-column", help="column holding unit ids")
    p.add_argument("--squares", action="store_true", help="append squared covariates")
    p.add_argument("--interactions", action="store_true", help="append pairwise products")


def _criterion_args(p):
    p.add_argument("--criterion", help="criterion JSON, inline or a file path")
    p.add_argument("--pa", type=float, help="target acceptance probability for a Mahalanobis threshold")
    p.add_argument("--calibration", choices=("asymptotic", "empirical", "exact"), default="asymptotic")
    p.add_argument("--draws", type=int, default=100_000, help="draws for empirical calibration")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rerand", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="recorded; computation is vectorised in-process")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--n-treated", type=int)
    common.add_argument("--enumeration-limit", type=int, default=10 ** 6)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", parents=[common], help="draw an acceptable assignment")
    _data_args(p)
    _criterion_args(p)
    p.add_argument("--max-proposals", type=int)
    p.add_argument("--assignment-out", help="also write a unit,treated CSV")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("calibrate", parents=[common], help="threshold for a target acceptance probability")
    _data_args(p)
    p.add_argument("--pa", type=float, required=True)
    p.add_argument("--calibration", choices=("asymptotic", "empirical", "exact"), default="empirical")
    p.add_argument("--draws", type=int, default=100_000)
    p.set_defaults(func=cmd_calibrate)

    for name, func, helptext in (("test", cmd_test, "randomization test"),
                                 ("ci", cmd_ci, "confidence interval by test inversion")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        _data_args(p)
        p.add_argument("--design", required=True, help="JSON written by `rerand design`")
        p.add_argument("--outcomes", required=True, help="outcome CSV")
        p.add_argument("--outcome-column")
        p.add_argument("--outcome-id-column", help="id column of the outcome CSV")
        p.add_argument("--criterion", help="override the criterion stored in the design file")
        p.add_argument("--n-sim", type=int, default=10_000)
        p.add_argument("--exact", action="store_true", help="enumerate every acceptable assignment")
        if name == "test":
            p.add_argument("--tail", choices=("two-sided", "lower", "upper"), default="two-sided")
        else:
            p.add_argument("--level", type=float, default=0.95)
        p.set_defaults(func=func)

    p = sub.add_parser("theory", parents=[common], help="v_a and percent reduction in variance")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--pa", type=float, default=0.1)
    p.add_argument("--a", help="threshold instead of --pa (number or 'inf')")
    p.add_argument("--r2", type=float, default=0.0)
    p.add_argument("--m", type=float, help="observed M for the regression-adjustment comparison")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--grid", choices=("covariate", "tau"), help="emit a CSV grid instead")
    p.add_argument("--max-k", type=int, default=50)
    p.add_argument("--pa-grid", type=float, nargs="+",
                   default=[0.001, 0.005, 0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0])
    p.add_argument("--r2-grid", type=float, nargs="+", default=[0.1, 0.25, 0.5, 0.75, 0.9])
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("simulate", parents=[common], help="run verification experiments")
    p.add_argument("experiments", nargs="+", choices=list(EXPERIMENTS) + ["all"])
    p.add_argument("--seed-override", action="store_true", help="use --seed instead of per-experiment defaults")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("enumerate", parents=[common], help="list or count assignments")
    p.add_argument("--n", type=int, required=True)
    _data_args(p, required=False)
    p.add_argument("--criterion")
    p.add_argument("--list", action="store_true")
    p.set_defaults(func=cmd_enumerate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "n_treated", None) is None and args.command == "enumerate":
        args.n_treated = args.n // 2
    try:
        return args.func(args)
    except (ProposalBudgetExceeded, BracketError) as exc:
        sys.stderr.write(f"rerand: {exc}\n")
        return EXIT_BUDGET
    except (ValueError, KeyError, OSError) as exc:
        sys.stderr.write(f"rerand: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
