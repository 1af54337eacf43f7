"""Command-line interface.

Subcommands cover the full workflow: validate inputs, certify a target
regime, fit the density model, draw samples, estimate outcome means,
compute conformal bands, and run the simulation benchmark. All results
are printed (or written) as JSON except sample output, which is CSV.

Exit codes: 0 success (including a definite "not identifiable" answer),
1 usage error, 2 rejected input or failed precondition, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import __version__, algebraic, junction
from .errors import ConditionsNotMet, DomainError
from .estimators import (
    conformal_band,
    estimate_covshift,
    estimate_direct,
    estimate_ipw,
    fit_outcome,
    load_outcome,
    save_outcome,
)
from .energy import (
    FORMAT_VERSION as MODEL_FORMAT_VERSION,
    discretize,
    fit as fit_energy,
    load_model,
    new_model,
    save_model,
)
from .fileio import (
    fingerprint,
    load_graph,
    load_manifest,
    parse_regime_text,
    write_dataset_csv,
)
from .model import RegimeDataset, RegimeSet, RegimeVector, normalize_factors, sigma_graph
from .sampling import gibbs_sample
from .simbench import run_benchmark

CERT_FORMAT = "regimecast-certificate"
ESTIMATE_FORMAT = "regimecast-estimate"
BAND_FORMAT = "regimecast-band"
FORMAT_VERSION = 1


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _finite_or_none(v):
    """Band edges can be infinite; JSON output carries them as null."""
    v = float(v)
    return v if math.isfinite(v) else None


def _emit(obj, out) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _regime_key(regime: RegimeVector) -> str:
    return ",".join(str(v) for v in regime.levels)


def _load_train(path, space) -> RegimeSet:
    """Training regimes from JSON: a list of level vectors, an object with
    a "regimes" list, or a data manifest (its level values are used)."""
    with open(path) as fh:
        obj = json.load(fh)
    if isinstance(obj, dict):
        entries = obj["regimes"] if "regimes" in obj else list(obj.values())
    else:
        entries = obj
    regimes = []
    for entry in entries:
        if isinstance(entry, str):
            regimes.append(parse_regime_text(entry, space))
        else:
            regime = RegimeVector(tuple(int(v) for v in entry))
            space.check_regime(regime)
            regimes.append(regime)
    return RegimeSet.of([r.levels for r in regimes])


def _conditions_dict(report: junction.ConditionReport) -> dict:
    return {
        "passed": report.passed,
        "cliques": [
            {
                "interventions": list(entry.clique),
                "missing": [_regime_key(r) for r in entry.missing],
            }
            for entry in report.entries
        ],
    }


def _certificate(cert, train, target, route, conditions=None, support=None) -> dict:
    out = {
        "format": CERT_FORMAT,
        "format_version": FORMAT_VERSION,
        "identifiable": True,
        "route": route,
        "target": _regime_key(target),
        "train": [_regime_key(r) for r in train],
        "exponents": [float(q) for q in cert.exponents],
        "solution_dim": cert.solution_dim,
        "reason": None,
    }
    if conditions is not None:
        out["conditions"] = conditions
    if support is not None:
        out["support"] = support
    return out


def _no_certificate(train, target, route, reason, conditions=None) -> dict:
    out = {
        "format": CERT_FORMAT,
        "format_version": FORMAT_VERSION,
        "identifiable": False,
        "route": route,
        "target": _regime_key(target),
        "train": [_regime_key(r) for r in train],
        "exponents": None,
        "solution_dim": None,
        "reason": reason,
    }
    if conditions is not None:
        out["conditions"] = conditions
    return out


def _cmd_identify(args) -> int:
    ifm = load_graph(args.graph)
    train = _load_train(args.train, ifm.space)
    target = parse_regime_text(args.target, ifm.space)
    norm = normalize_factors(ifm)

    conditions = None
    if args.route in ("auto", "tree"):
        conditions = _conditions_dict(junction.check_conditions(norm, train))

    if args.route == "tree" or (args.route == "auto" and conditions["passed"]):
        try:
            cert = junction.message_passing_identify(norm, train, target)
        except ConditionsNotMet as exc:
            _emit(_no_certificate(train, target, "junction-tree", str(exc), conditions),
                  args.out)
            return 0
        result = _certificate(cert, train, target, "junction-tree", conditions)
    else:
        solved = algebraic.solve_pr(norm, train, target)
        if isinstance(solved, algebraic.Unidentifiable):
            _emit(_no_certificate(train, target, "algebraic", solved.reason, conditions),
                  args.out)
            return 0
        if args.reduce:
            kept = algebraic.greedy_reduce(norm, train, target)
            solved = algebraic.solve_pr(norm, kept, target)
            support = [_regime_key(r) for r in kept]
            # exponents stay aligned with "train", which is the kept set here
            result = _certificate(solved, kept, target, "algebraic", conditions, support)
        else:
            result = _certificate(solved, train, target, "algebraic", conditions)
    _emit(result, args.out)
    return 0


def _cmd_fit(args) -> int:
    ifm = load_graph(args.graph)
    datasets = load_manifest(args.data_manifest, ifm)
    grid = discretize(datasets, bins=args.bins)
    model0 = new_model(ifm, grid, hidden=args.hidden, seed=args.seed)
    model, log = fit_energy(model0, datasets, steps=args.steps, lr=args.lr,
                            batch=args.batch)
    save_model(args.out, model)
    summary = {
        "model": str(args.out),
        "steps": log.steps,
        "objective_start": log.objectives[0],
        "objective_end": log.objectives[-1],
        "regressions": len(log.regressions),
    }
    if args.outcome_out:
        outcome = fit_outcome(datasets, hidden=args.outcome_hidden,
                              steps=args.outcome_steps, lr=args.outcome_lr,
                              seed=args.seed)
        save_outcome(args.outcome_out, outcome)
        summary["outcome_model"] = str(args.outcome_out)
    _emit(summary, None)
    return 0


def _cmd_sample(args) -> int:
    model = load_model(args.model)
    regime = parse_regime_text(args.regime, model.ifm.space)
    draws = gibbs_sample(model, regime, args.n, burn=args.burn, thin=args.thin,
                         seed=args.seed)
    write_dataset_csv(args.out, model.ifm, RegimeDataset(regime, draws))
    return 0


def _cmd_estimate(args) -> int:
    if args.method != "ipw" and args.seed is None:
        print("estimate: error: --seed is required for this method", file=sys.stderr)
        return 1
    model = load_model(args.model)
    datasets = load_manifest(args.data_manifest, model.ifm)
    target = parse_regime_text(args.target, model.ifm.space)

    if args.method == "direct":
        if args.outcome:
            outcome = load_outcome(args.outcome)
        else:
            outcome = fit_outcome(datasets, seed=args.seed)
        est = estimate_direct(model, outcome, target, nsamples=args.nsamples,
                              burn=args.burn, thin=args.thin, seed=args.seed)
    elif args.method == "ipw":
        est = estimate_ipw(model, datasets, target)
    else:
        est = estimate_covshift(model, datasets, target, nsamples=args.nsamples,
                                seed=args.seed, burn=args.burn, thin=args.thin)

    result = {
        "format": ESTIMATE_FORMAT,
        "format_version": FORMAT_VERSION,
        "method": args.method,
        "target": _regime_key(target),
        "mu_hat": est.mu,
        "se": est.se,
        "per_regime": None,
        "band": None,
    }
    if est.per_regime is not None:
        result["per_regime"] = [
            {"regime": _regime_key(r.regime), "mu": r.mu, "var_proxy": r.var_proxy}
            for r in est.per_regime
        ]
    if args.alpha is not None:
        band = conformal_band(model, datasets, target, args.alpha,
                              seed=args.seed if args.seed is not None else 0,
                              nsamples=args.nsamples, burn=args.burn, thin=args.thin)
        result["band"] = {
            "lo": _finite_or_none(band.lo),
            "hi": _finite_or_none(band.hi),
            "alpha": band.alpha,
            "half_width": _finite_or_none(band.half_width),
        }
    _emit(result, args.out)
    return 0


def _cmd_conformal(args) -> int:
    model = load_model(args.model)
    datasets = load_manifest(args.data_manifest, model.ifm)
    target = parse_regime_text(args.target, model.ifm.space)
    band = conformal_band(model, datasets, target, args.alpha, seed=args.seed,
                          nsamples=args.nsamples, burn=args.burn, thin=args.thin,
                          hidden=args.hidden, steps=args.steps, lr=args.lr)
    _emit({
        "format": BAND_FORMAT,
        "format_version": FORMAT_VERSION,
        "target": _regime_key(target),
        "alpha": band.alpha,
        "center": band.center,
        "half_width": _finite_or_none(band.half_width),
        "lo": _finite_or_none(band.lo),
        "hi": _finite_or_none(band.hi),
        "n_scores": band.n_scores,
    }, args.out)
    return 0


def _cmd_benchmark(args) -> int:
    config = {}
    if args.config:
        with open(args.config) as fh:
            config = json.load(fh)
    report = run_benchmark(config, jobs=args.jobs)
    report.write_json(args.out)
    if args.csv:
        report.write_csv(args.csv)
    print(json.dumps(report.data["summary"], indent=2, sort_keys=True))
    return 0


def _cmd_validate(args) -> int:
    ifm = load_graph(args.graph)
    result = {
        "ok": True,
        "variables": ifm.m,
        "interventions": ifm.space.d,
        "factors": len(ifm.factors),
        "chordal": junction.is_decomposable(sigma_graph(normalize_factors(ifm))),
        "fingerprint": fingerprint(ifm),
    }
    if args.data_manifest:
        datasets = load_manifest(args.data_manifest, ifm)
        result["n_datasets"] = len(datasets)
        result["n_rows"] = int(sum(ds.n for ds in datasets))
        result["with_outcome"] = all(ds.y is not None for ds in datasets)
    _emit(result, None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regimecast")
    parser.add_argument(
        "--version", action="version",
        version=f"regimecast {__version__} (model format {MODEL_FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("identify", help="certify a target regime from training regimes")
    p.add_argument("--graph", required=True)
    p.add_argument("--train", required=True, help="JSON list of level vectors or a manifest")
    p.add_argument("--target", required=True, help='comma-separated levels, e.g. "1,1,0"')
    p.add_argument("--route", choices=("auto", "tree", "algebraic"), default="auto")
    p.add_argument("--reduce", action="store_true",
                   help="greedily drop training regimes the certificate does not need")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_identify)

    p = sub.add_parser("fit", help="fit the density model to a data manifest")
    p.add_argument("--graph", required=True)
    p.add_argument("--data-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", type=int, default=15)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--outcome-out", help="also fit and save a pooled outcome regression")
    p.add_argument("--outcome-hidden", type=int, default=15)
    p.add_argument("--outcome-steps", type=int, default=2000)
    p.add_argument("--outcome-lr", type=float, default=1e-2)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("sample", help="draw rows from a fitted model under a regime")
    p.add_argument("--model", required=True)
    p.add_argument("--regime", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--burn", type=int, default=500)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("estimate", help="estimate the outcome mean under a target regime")
    p.add_argument("--model", required=True)
    p.add_argument("--data-manifest", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--method", choices=("direct", "ipw", "covshift"), default="direct")
    p.add_argument("--outcome", help="saved outcome model (direct method only)")
    p.add_argument("--alpha", type=float, default=None,
                   help="also report a conformal band at this miscoverage")
    p.add_argument("--nsamples", type=int, default=2000)
    p.add_argument("--burn", type=int, default=500)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("conformal", help="weighted split conformal band for a target")
    p.add_argument("--model", required=True)
    p.add_argument("--data-manifest", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--nsamples", type=int, default=2000)
    p.add_argument("--burn", type=int, default=500)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--hidden", type=int, default=15)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_conformal)

    p = sub.add_parser("benchmark", help="run the simulation benchmark")
    p.add_argument("--config", help="JSON overrides for the default config")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also write per-estimate rows as CSV")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("validate", help="check a graph file (and optionally data)")
    p.add_argument("--graph", required=True)
    p.add_argument("--data-manifest")
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort boundary for exit code 3
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
