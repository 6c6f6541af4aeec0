"""Command-line interface: ``ccmed estimate | simulate | diagnose``.

Exit codes: 0 success, 2 input error, 3 denominator gate failed,
4 singular model, 1 any other failure.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__, rng
from .adjust import CoefficientCovariances, adjust, covariances_from_table
from .data import ROLES, load_dataset, validate
from .errors import CcmError, DegenerateEstimandError, GateError, InputError, SingularityError
from .estimators import (CONFOUNDING_NOTE, ESTIMAND1, ESTIMAND1_TREATED, ESTIMAND2,
                         ESTIMAND2_TREATED, NONE, TREATED, acme_naive, ate, ccm_point,
                         classify_anatomy, proportion_mediated)
from .inference import (GATE_DENOMINATORS, MIN_VALID, bootstrap_statistics,
                        conservatism_diagnostic, delta_ci, gate_from_distribution,
                        interaction_test, percentile_ci)
from .ols import fit_all, homoskedastic_covariances

EXIT_OK, EXIT_FAILURE, EXIT_INPUT, EXIT_GATE, EXIT_SINGULAR = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


# ---------------------------------------------------------------------------
# helpers

def _clean(obj):
    """Make a report JSON-safe: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _fmt(v):
    if isinstance(v, bool) or v is None:
        return "null" if v is None else str(v).lower()
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _text_lines(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _text_lines(v, f"{prefix}{k}.")
    elif isinstance(obj, list) and any(isinstance(v, (dict, list)) for v in obj):
        for i, v in enumerate(obj):
            yield from _text_lines(v, f"{prefix}{i}.")
    elif isinstance(obj, list):
        yield f"{prefix[:-1]}: [{', '.join(_fmt(v) for v in obj)}]"
    else:
        yield f"{prefix[:-1]}: {_fmt(obj)}"


def _emit(report, fmt, out):
    report = _clean(report)
    if fmt == "json":
        out.write(json.dumps(report, indent=2) + "\n")
    else:
        out.write("\n".join(_text_lines(report)) + "\n")


def _seed(args, err):
    if args.seed is None:
        args.seed = rng.fresh_seed()
        err.write(f"seed: {args.seed}\n")
    return args.seed


def _load(args):
    schema = {role: getattr(args, role) for role in ROLES}
    try:
        return load_dataset(args.input, schema=schema, delimiter=args.delimiter)
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {args.input}: {exc}") from None
    except InputError as exc:
        raise CliError(EXIT_INPUT, f"input error: {exc}") from None


def _inputs(args, extra=()):
    flags = {k: getattr(args, k) for k in ("alpha", "boot", "stratified") + tuple(extra)}
    return {"file": args.input, "delimiter": args.delimiter,
            "columns": {role: getattr(args, role) for role in ROLES},
            "flags": flags, "seed": args.seed, "rng_scheme": rng.SCHEME}


# ---------------------------------------------------------------------------
# estimate

def _choose_form(args, test, warnings):
    if args.interaction == "on":
        return TREATED, "requested with --interaction on"
    if args.interaction == "off":
        return NONE, "requested with --interaction off"
    if not test.available:
        warnings.append(f"interaction test unavailable ({test.message}); "
                        "keeping the no-interaction form")
        return NONE, "interaction test unavailable"
    if test.reject:
        return TREATED, f"interaction test rejected no interaction (p = {test.p_value:.4g})"
    return NONE, f"interaction test did not reject no interaction (p = {test.p_value:.4g})"


def _naive(f, mode):
    out = {}
    for j in (1, 2):
        out[f"ate{j}"] = {"value": ate(f, j), "confounding_sensitive": False}
        for key, fn in ((f"acme{j}", acme_naive), (f"pm{j}", proportion_mediated)):
            try:
                value = fn(f, j, mode)
            except DegenerateEstimandError:
                value = None
            out[key] = {"value": value, "confounding_sensitive": True}
    out["note"] = CONFOUNDING_NOTE
    return out


def _gate_for(dists, label, alpha, b):
    stat = GATE_DENOMINATORS[label]
    return gate_from_distribution(dists[stat], alpha)


def _ci_or_none(bd, alpha, b):
    if bd.b_valid < MIN_VALID * b:
        return None
    try:
        return percentile_ci(bd, alpha)
    except ValueError:
        return None


def cmd_estimate(args, out=sys.stdout, err=sys.stderr):
    seed = _seed(args, err)
    d = _load(args)
    report_validation = validate(d)
    warnings = list(report_validation.flags)
    if any("underpopulated" in flag for flag in report_validation.flags):
        raise CliError(EXIT_INPUT, "input error: " + "; ".join(report_validation.flags))

    test = interaction_test(d, args.alpha, b=max(args.boot, 200), seed=seed,
                            stratified=args.stratified)
    mode, reason = _choose_form(args, test, warnings)
    treated = mode == TREATED
    try:
        f = fit_all(d, include_interactions=treated)
    except SingularityError as exc:
        raise CliError(EXIT_SINGULAR, f"singular model: {exc}") from None

    ids = (ESTIMAND1_TREATED, ESTIMAND2_TREATED) if treated else (ESTIMAND1, ESTIMAND2)
    names = sorted({GATE_DENOMINATORS[i.label] for i in ids} | {i.label for i in ids}
                   | {"ate_diff"})
    dists, table = bootstrap_statistics(d, names, args.boot, seed, args.stratified, check=False)
    gates = {i.label: _gate_for(dists, i.label, args.alpha, args.boot) for i in ids}
    failed = [g for g in gates.values() if not g.passed]
    if failed and not args.force:
        raise CliError(EXIT_GATE, "denominator gate failed: " + "; ".join(g.message for g in failed)
                       + ". CCM estimates refused (use --force to inspect them anyway)")
    if failed:
        warnings.append("WARNING: the denominator gate FAILED; the estimates below are not "
                        "meaningful and are shown only because --force was given")

    if treated:
        cov = covariances_from_table(table, interactions=True, b_reps=args.boot)
    else:
        cov = CoefficientCovariances(homoskedastic_covariances(d), "analytic_homoskedastic")

    estimates = []
    for eid in ids:
        try:
            est = ccm_point(f, eid)
        except DegenerateEstimandError as exc:
            warnings.append(f"{eid.label}: {exc}")
            continue
        est.adjusted_value = adjust(f, cov, eid)
        est.gate = gates[eid.label]
        est.ci_alpha = args.alpha
        est.ci_method = args.ci
        if args.ci == "delta":
            try:
                est.ci = delta_ci(f, cov, eid, args.alpha, gate=est.gate)
            except GateError as exc:
                est.notes.append(str(exc))
        else:
            est.ci = _ci_or_none(dists[eid.label], args.alpha, args.boot)
            if est.ci is None:
                est.notes.append("too few usable bootstrap replicates for an interval")
        if treated:
            est.notes.append(CONFOUNDING_NOTE)
        estimates.append(est)

    # anatomy classification from the three tests
    ate_ci = _ci_or_none(dists["ate_diff"], args.alpha, args.boot)
    by_label = {e.id.label: e for e in estimates}
    anatomy = None
    if ate_ci is not None and all(i.label in by_label and by_label[i.label].ci for i in ids):
        ate_cmp = "greater" if ate_ci[0] > 0 else ("equal" if ate_ci[1] >= 0 else "less")
        anatomy = classify_anatomy(ate_cmp, by_label[ids[0].label].ci[0] > 1,
                                   by_label[ids[1].label].ci[0] > 1)

    report = {
        "inputs": _inputs(args, ("interaction", "ci", "force")),
        "validation": report_validation.to_dict(),
        "interaction_form": {"requested": args.interaction, "chosen": mode, "reason": reason},
        "fits": f.summary(),
        "naive": _naive(f, mode),
        "estimates": [e.to_dict() for e in estimates],
        "gate": gates[ids[0].label].to_dict(),
        "gates": {k: g.to_dict() for k, g in gates.items()},
        "covariance": cov.to_dict(),
        "ate_difference_ci": None if ate_ci is None else list(ate_ci),
        "interaction_test": test.to_dict(),
        "diagnostic": conservatism_diagnostic(d).to_dict() if treated else None,
        "anatomy": anatomy,
        "warnings": warnings,
    }
    _emit(report, args.format, out)
    return report


# ---------------------------------------------------------------------------
# diagnose

def cmd_diagnose(args, out=sys.stdout, err=sys.stderr):
    seed = _seed(args, err)
    d = _load(args)
    rep = validate(d)
    names = [GATE_DENOMINATORS[ESTIMAND1.label], GATE_DENOMINATORS[ESTIMAND2.label]]
    dists, _ = bootstrap_statistics(d, names, args.boot, seed, args.stratified, check=False)
    gates = {i.label: _gate_for(dists, i.label, args.alpha, args.boot).to_dict()
             for i in (ESTIMAND1, ESTIMAND2)}
    test = interaction_test(d, args.alpha, b=max(args.boot, 200), seed=seed,
                            stratified=args.stratified)
    report = {
        "inputs": _inputs(args),
        "validation": rep.to_dict(),
        "gates": gates,
        "interaction_test": test.to_dict(),
        "diagnostic": conservatism_diagnostic(d).to_dict(),
        "warnings": list(rep.flags),
    }
    _emit(report, args.format, out)
    return report


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args, out=sys.stdout, err=sys.stderr):
    from . import simulate as sim

    try:
        cfg = sim.load_config(args.config) if args.config else sim.PRESETS[args.preset]
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {args.config}: {exc}") from None
    except InputError as exc:
        raise CliError(EXIT_INPUT, f"invalid config: {exc}") from None
    if args.seed is None and cfg.seed is not None:
        args.seed = cfg.seed
    seed = _seed(args, err)
    if args.reps < 2:
        raise CliError(EXIT_INPUT, "--reps must be at least 2")
    summary = sim.monte_carlo(cfg, args.reps, args.boot, seed, alpha=args.alpha,
                              stratified=args.stratified)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "summary.json"), "w") as fh:
        fh.write(json.dumps(_clean(summary.to_dict()), indent=2, sort_keys=True) + "\n")
    with open(os.path.join(args.out_dir, "replicates.csv"), "w", newline="") as fh:
        fh.write(summary.table_csv())
    n = summary.naive
    out.write(f"replicates: {summary.r_reps} (failed {summary.failures})\n"
              f"naive ACME bias: {n['mean_bias_acme1']:.6g}, {n['mean_bias_acme2']:.6g}\n"
              f"naive ACME coverage: {n['coverage_acme1']:.6g}, {n['coverage_acme2']:.6g}\n")
    for name, rec in summary.estimands.items():
        if name.startswith("estimand"):
            out.write(f"{name}: mean {rec['mean_estimate']:.6g}, truth {rec['true_value']:.6g}, "
                      f"coverage {rec['coverage_95']:.6g}\n")
    out.write(f"wrote {args.out_dir}/summary.json and {args.out_dir}/replicates.csv\n")
    return summary


# ---------------------------------------------------------------------------
# argument parsing

def _positive_alpha(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("alpha must lie strictly between 0 and 1")
    return v


def _data_flags(p):
    p.add_argument("--input", required=True, help="delimited text file with a header row")
    for role in ROLES:
        p.add_argument(f"--{role}", default=role, help=f"column holding {role} (default {role})")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--format", choices=("json", "text"), default="json")


def _common_flags(p, boot):
    p.add_argument("--alpha", type=_positive_alpha, default=0.05)
    p.add_argument("--boot", type=int, default=boot, help="bootstrap replicates")
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (drawn from system entropy and printed if omitted)")
    p.add_argument("--stratified", action="store_true", help="resample within arms")


def build_parser():
    parser = argparse.ArgumentParser(prog="ccmed",
                                     description="Comparative causal mediation for three-arm "
                                                 "randomized experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate the CCM ratios from a data file")
    _data_flags(p)
    _common_flags(p, 2000)
    p.add_argument("--interaction", choices=("auto", "on", "off"), default="auto")
    p.add_argument("--ci", choices=("percentile", "delta"), default="percentile")
    p.add_argument("--force", action="store_true",
                   help="emit estimates even when the denominator gate fails")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("diagnose", help="run the gate, interaction test and diagnostics only")
    _data_flags(p)
    _common_flags(p, 2000)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("simulate", help="run a Monte Carlo study")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="JSON configuration file")
    src.add_argument("--preset", choices=("paper-fig1", "paper-figD1"), default="paper-fig1")
    p.add_argument("--reps", type=int, default=100)
    _common_flags(p, 1000)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        args.func(args, out=out, err=err)
    except CliError as exc:
        err.write(f"ccmed: {exc}\n")
        return exc.code
    except SingularityError as exc:
        err.write(f"ccmed: singular model: {exc}\n")
        return EXIT_SINGULAR
    except InputError as exc:
        err.write(f"ccmed: input error: {exc}\n")
        return EXIT_INPUT
    except (CcmError, ValueError) as exc:
        err.write(f"ccmed: {exc}\n")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
