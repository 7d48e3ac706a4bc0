"""Command-line entry point: ``ebh <subcommand> ...``.

Exit status is 0 on success, 2 for invalid arguments and 1 when a command
fails while running (for instance on a malformed input file).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import boosting, portfolio, procedures, simulation
from .core import EvidenceError, Kind, Weights, kind_from_path, read_evidence_csv, read_values_csv

SCHEMA_VERSION = 1

E_PROCEDURES = {"ebh", "weighted-ebh", "post-selection"}
P_PROCEDURES = {"bh", "by", "cbh", "step-up"}


# --- argument types -------------------------------------------------------------

def _open_unit(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _unit_closed(text: str) -> float:
    v = float(text)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be a nonnegative integer, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0 or math.isinf(v):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text}")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"must lie in [0, 2^64), got {text}")
    return v


def _universe(text: str):
    if text == "all":
        return "all"
    return str(_positive_int(text))


def _index_list(text: str) -> list[int]:
    try:
        idx = [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated indices, got {text!r}") from None
    if not idx or min(idx) < 1:
        raise argparse.ArgumentTypeError("indices are 1-based and the list must be nonempty")
    return idx


def _model(text: str):
    try:
        return boosting.parse_model(text)
    except (EvidenceError, ValueError, OSError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebh", description="False discovery rate control with e-values.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    t = sub.add_parser("test", help="run a multiple testing procedure on a CSV of e-values or p-values")
    t.add_argument("input", help="CSV with header 'value'; *.evals.csv or *.pvals.csv sets the kind")
    t.add_argument("--procedure", required=True,
                   choices=sorted(E_PROCEDURES | P_PROCEDURES), help="procedure to run")
    t.add_argument("--alpha", type=_open_unit, help="target FDR level in (0, 1); required except for step-up")
    t.add_argument("--kind", choices=["e", "p"], help="evidence kind, overriding the file name")
    t.add_argument("--weights", help="CSV of nonnegative weights summing to K (weighted-ebh)")
    t.add_argument("--select", type=_index_list, help="comma-separated 1-based indices (post-selection)")
    t.add_argument("--levels", help="CSV of K nondecreasing levels in [0, 1] (step-up)")
    t.set_defaults(subparser=t, func=cmd_test)

    b = sub.add_parser("boost", help="boosting factor for a null e-value distribution")
    b.add_argument("--model", type=_model, required=True,
                   help="calibrator:LAMBDA with LAMBDA in (0,1), lognormal-lr:DELTA with DELTA > 0, or empirical:FILE")
    b.add_argument("--alpha", type=_open_unit, required=True, help="target FDR level in (0, 1)")
    b.add_argument("--k", type=_positive_int, help="number of hypotheses K >= 1; enables the exact criteria")
    b.add_argument("--dependence", choices=["ad", "prds"], default="ad",
                   help="arbitrary dependence (ad) or PRDS (default: ad)")
    b.add_argument("--mode", choices=["exact", "conservative"],
                   help="exact needs --k; default exact with --k, conservative without")
    b.set_defaults(subparser=b, func=cmd_boost)

    sb = sub.add_parser("simulate-bandit", help="ordered multi-armed bandit testing study")
    sb.add_argument("--K", type=_positive_int, default=500, help="number of arms >= 1 (default 500)")
    sb.add_argument("--n", type=_positive_int, default=50, help="pulls per arm >= 1 (default 50)")
    sb.add_argument("--theta", type=_unit_closed, default=0.5, help="non-null scale in [0, 1] (default 0.5)")
    sb.add_argument("--mu", type=_positive_float, default=1.0, help="mean signal strength > 0 (default 1)")
    sb.add_argument("--alpha", type=_open_unit, default=0.05, help="FDR level in (0, 1) (default 0.05)")
    sb.add_argument("--procedures", nargs="+", choices=simulation.BANDIT_PROCEDURES,
                    default=list(simulation.BANDIT_PROCEDURES), help="procedures to compare")
    _add_study_flags(sb, default_trials=500)
    sb.set_defaults(subparser=sb, func=cmd_bandit)

    sz = sub.add_parser("simulate-ztest", help="correlated one-sided z-test study")
    sz.add_argument("--K", type=_positive_int, default=1000, help="number of hypotheses >= 1 (default 1000)")
    sz.add_argument("--K0", type=_nonneg_int, default=800, help="number of nulls in [0, K] (default 800)")
    sz.add_argument("--delta", type=float, default=-3.0, help="alternative mean, nonzero (default -3)")
    sz.add_argument("--correlation", choices=["equi", "negexch", "banded"], default="equi",
                    help="equi: common factor with --rho; negexch: rho=-1/(K-1); banded: lag-1 rho=-0.5")
    sz.add_argument("--rho", type=_unit_closed, default=0.0, help="equicorrelation in [0, 1] (default 0)")
    sz.add_argument("--alpha", type=_open_unit, action="append",
                    help="FDR level in (0, 1); repeatable (default 0.1, 0.05, 0.02)")
    sz.add_argument("--methods", nargs="+", choices=simulation.ZTEST_METHODS,
                    default=list(simulation.ZTEST_METHODS), help="methods to compare")
    sz.add_argument("--ad-mode", choices=["exact", "conservative"], default="exact",
                    help="criterion for arbitrary-dependence boosting (default exact)")
    sz.add_argument("--prds-mode", choices=["exact", "conservative"], default="exact",
                    help="criterion for PRDS boosting (default exact)")
    _add_study_flags(sz, default_trials=1000)
    sz.set_defaults(subparser=sz, func=cmd_ztest)

    ap = sub.add_parser("analyze-prices", help="select assets with wealth-process evidence")
    ap.add_argument("input", help="CSV: asset_id, rank, then one price per period (empty cell = dead)")
    ap.add_argument("--lambda", dest="lam", type=_unit_closed, default=1.0,
                    help="invested fraction in [0, 1] (default 1)")
    ap.add_argument("--alpha", type=_open_unit, action="append",
                    help="FDR level in (0, 1); repeatable (default 0.05, 0.1)")
    ap.add_argument("--universe", type=_universe, action="append",
                    help="top-N by rank, N >= 1, or 'all'; repeatable (default all)")
    ap.add_argument("--out", help="CSV table path (default: standard output)")
    ap.add_argument("--ids", help="write the selected asset ids as JSON to this path")
    ap.set_defaults(subparser=ap, func=cmd_prices)
    return parser


def _add_study_flags(p, default_trials):
    p.add_argument("--trials", type=_positive_int, default=default_trials,
                   help=f"number of trials >= 1 (default {default_trials})")
    p.add_argument("--seed", type=_seed, help="master seed in [0, 2^64); drawn and reported if absent")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker processes >= 1 (default: logical CPU count); results do not depend on it")
    p.add_argument("--out", help="CSV table path (default: standard output)")


# --- output helpers -------------------------------------------------------------

def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _json(obj) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **obj}, indent=2) + "\n"


def _csv(header, rows, comments=()) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x))


def read_table_csv(path_or_text: str, is_text: bool = False) -> list[dict]:
    """Parse a table written by the simulate-* or analyze-prices commands."""
    text = path_or_text if is_text else open(path_or_text, newline="").read()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _resolve_seed(seed):
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % 2**63)
        print(f"seed: {seed}", file=sys.stderr)
    return seed


# --- commands -------------------------------------------------------------------

def cmd_test(args, parser) -> int:
    proc = args.procedure
    if proc != "step-up" and args.alpha is None:
        parser.error("--alpha is required for this procedure")
    if proc == "weighted-ebh" and not args.weights:
        parser.error("--weights is required for weighted-ebh")
    if proc == "post-selection" and not args.select:
        parser.error("--select is required for post-selection")
    if proc == "step-up" and not args.levels:
        parser.error("--levels is required for step-up")

    expected = Kind.EVALUES if proc in E_PROCEDURES else Kind.PVALUES
    kind = args.kind or (None if kind_from_path(args.input) else expected)
    evidence = read_evidence_csv(args.input, kind)
    if evidence.kind is not expected:
        raise EvidenceError(f"{proc} needs {expected.name.lower()}, but {args.input} holds {evidence.kind.name.lower()}")

    if proc == "ebh":
        out = procedures.e_bh(evidence, args.alpha)
    elif proc == "bh":
        out = procedures.bh(evidence, args.alpha)
    elif proc == "by":
        out = procedures.by(evidence, args.alpha)
    elif proc == "cbh":
        out = procedures.cbh(evidence, args.alpha)
    elif proc == "weighted-ebh":
        out = procedures.weighted_e_bh(evidence, Weights(read_values_csv(args.weights)), args.alpha)
    elif proc == "post-selection":
        if max(args.select) > evidence.K:
            parser.error(f"--select index {max(args.select)} exceeds K={evidence.K}")
        out = procedures.post_selection_e_bh(evidence, [i - 1 for i in args.select], args.alpha)
    else:
        out = procedures.step_up_psi(evidence, procedures.LevelTable(read_values_csv(args.levels)))
    _emit(_json(out.to_dict()), None)
    return 0


def cmd_boost(args, parser) -> int:
    if args.mode == "exact" and args.k is None:
        parser.error("--mode exact requires --k")
    res = boosting.boost_factor(args.model, args.alpha, args.k, args.dependence, args.mode)
    _emit(_json(res.to_dict()), None)
    return 0


def cmd_bandit(args, parser) -> int:
    seed = _resolve_seed(args.seed)
    cfg = simulation.BanditConfig(args.K, args.n, args.theta, args.mu, args.alpha, args.trials, seed,
                                  tuple(args.procedures))
    rows = simulation.run_bandit_study(cfg, threads=args.threads)
    body = [[r.name, _fmt(r.means["R"]), _fmt(r.means["B_pct"]), _fmt(r.means["TD"]), _fmt(r.means["FDP_pct"])]
            for r in rows]
    meta = [f"seed: {seed}", f"trials: {cfg.trials}", f"K: {cfg.K}, n: {cfg.n}, theta: {cfg.theta}, "
            f"mu: {cfg.mu}, alpha: {cfg.alpha}"]
    _emit(_csv(["procedure", "R", "B%", "TD", "FDP%"], body, meta), args.out)
    return 0


def cmd_ztest(args, parser) -> int:
    if args.K0 > args.K:
        parser.error("--K0 must not exceed --K")
    if args.delta == 0:
        parser.error("--delta must be nonzero")
    if args.correlation != "equi" and args.K < 2:
        parser.error("--correlation negexch/banded needs --K >= 2")
    seed = _resolve_seed(args.seed)
    alphas = tuple(args.alpha) if args.alpha else (0.1, 0.05, 0.02)
    cfg = simulation.ZTestConfig(args.K, args.K0, args.delta, args.correlation, args.rho, alphas,
                                 args.trials, seed, tuple(args.methods), args.ad_mode, args.prds_mode)
    rows = simulation.run_ztest_study(cfg, threads=args.threads)
    body = [[r.method, _fmt(r.alpha), _fmt(r.rejections), _fmt(r.FDP_pct)] for r in rows]
    meta = [f"seed: {seed}", f"trials: {cfg.trials}", f"K: {cfg.K}, K0: {cfg.K0}, delta: {cfg.delta}, "
            f"correlation: {cfg.correlation}, rho: {cfg.effective_rho}"]
    _emit(_csv(["method", "alpha", "rejections", "FDP%"], body, meta), args.out)
    return 0


def cmd_prices(args, parser) -> int:
    series = portfolio.read_prices_csv(args.input)
    alphas = args.alpha or [0.05, 0.1]
    universes = args.universe or ["all"]
    table = portfolio.selection_table(series, args.lam, alphas, universes)
    body, listing = [], []
    for (method, alpha), cells in table.items():
        body.append([method, _fmt(alpha)] + [str(cells[u].count) for u in universes])
        for u in universes:
            listing.append({"method": method, "alpha": alpha, "universe": u,
                            "K": cells[u].universe, "selected": list(cells[u].selected)})
    _emit(_csv(["method", "alpha"] + list(universes), body, [f"lambda: {args.lam}"]), args.out)
    if args.ids:
        _emit(_json({"selections": listing}), args.ids)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, args.subparser)
    except (EvidenceError, OSError, ValueError) as exc:
        print(f"ebh {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
