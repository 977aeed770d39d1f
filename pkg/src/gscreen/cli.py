"""Command-line front end: ``gscreen {select,exponents,phase,experiment,omega}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import lasso_cd, ups
from .exponents import BLOCK_RATES, TABLE1_COLUMNS, omega_min, phase_boundary, table1
from .graphs import EnumerationAbort
from .model import Q_RULES, TuningParams, read_design, read_matrix_csv
from .selector import SasViolation, graphlet_screening, iterative_gs
from .simlab import EXPERIMENT_IDS, experiment_config, header_line, run_experiment, write_report

EXIT_OK, EXIT_USAGE, EXIT_ABORT = 0, 2, 3


class UsageError(Exception):
    """Bad flags or malformed input; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def resolve_seed(seed: int | None) -> int:
    """``--seed`` if given, else ``GS_SEED``, else 0."""
    if seed is not None:
        return seed
    env = os.environ.get("GS_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"GS_SEED must be an integer, got {env!r}") from None


def _outdir(path: str | None) -> Path | None:
    if path is None:
        return None
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit_csv(rows: list[dict], fields: list[str], header: str, path: Path | None) -> None:
    fh = open(path, "w", newline="") if path is not None else sys.stdout
    try:
        fh.write(header + "\n")
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if path is not None:
            fh.close()


# ------------------------------------------------------------ select


def _select_tuning(args, p: int) -> TuningParams:
    if args.sigma is None:
        raise UsageError("--sigma is required")
    if not args.sigma > 0:
        raise UsageError("--sigma must be positive")
    log_p = math.log(p)
    theta, r = args.theta, args.r
    explicit = args.u is not None and args.v is not None
    if theta is None or r is None:
        if not explicit or args.q is None:
            raise UsageError("supply --theta and --r, or explicit --u, --v and --q")
        theta = args.u**2 / (2 * args.sigma**2 * log_p) if theta is None else theta
        r = args.v**2 / (2 * args.sigma**2 * log_p) if r is None else r
    q_rule = args.q_rule
    if args.q is not None and q_rule != "fixed":
        if args.theta is not None and args.r is not None:
            raise UsageError("--q needs --q-rule fixed")
        q_rule = "fixed"
    m0 = 1 if args.method == "ups" else args.m0
    try:
        return TuningParams(vartheta=theta, r=r, p=p, sigma=args.sigma, m0=m0, delta=args.delta,
                            q_rule=q_rule, q0=args.q0, q_fixed=args.q, u=args.u, v=args.v,
                            max_iterations=args.max_iter, component_cap=args.component_cap)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_select(args) -> int:
    if args.input is None:
        raise UsageError("--input is required")
    path = Path(args.input)
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")
    sigma = args.sigma if args.sigma is not None else 1.0
    try:
        design = read_design(path, sigma=sigma)
    except (ValueError, OSError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    if design.Y is None:
        raise UsageError("input has no response column")
    tuning = None if args.method == "lasso" else _select_tuning(args, design.p)
    if args.sigma is None:
        raise UsageError("--sigma is required")
    out = _outdir(args.output_dir) or Path(".")
    settings = {k: v for k, v in vars(args).items() if k not in ("func", "output_dir")}
    head = header_line(_hash(settings), resolve_seed(args.seed))

    if args.method == "lasso":
        lam = args.lam if args.lam is not None else args.sigma * math.sqrt(2 * math.log(design.p))
        if not lam >= 0:
            raise UsageError("--lambda must be non-negative")
        path_fit = lasso_cd(design, [lam])
        beta_hat = path_fit.coefs[0]
        diagnostics = {"method": "lasso", "lambda": lam,
                       "converged": bool(path_fit.converged[0]),
                       "sweeps": int(path_fit.sweeps[0])}
    else:
        try:
            if args.method == "ups":
                res = ups(design, tuning=tuning, iterative=args.max_iter > 1,
                          max_iter=args.max_iter)
            elif args.max_iter > 1:
                res = iterative_gs(design, tuning=tuning, max_iter=args.max_iter)
            else:
                res = graphlet_screening(design, tuning=tuning)
        except (SasViolation, EnumerationAbort) as exc:
            print(f"gscreen: aborted: {exc}", file=sys.stderr)
            return EXIT_ABORT
        beta_hat = res.beta_hat
        diagnostics = {"method": args.method, **res.diagnostics,
                       "retained": [int(j) + 1 for j in res.retained],
                       "components": [[int(j) + 1 for j in c] for c in res.components]}
    diagnostics.update(version=__version__, n=design.n, p=design.p, sigma=args.sigma)
    if tuning is not None:
        diagnostics.update(vartheta=tuning.vartheta, r=tuning.r, u=tuning.u_gs, v=tuning.v_gs,
                           q_rule=tuning.q_rule, q0=tuning.q0, m0=tuning.m0)
    selected = np.flatnonzero(beta_hat)
    _emit_csv([{"index": j + 1, "beta_hat": repr(float(b))} for j, b in enumerate(beta_hat)],
              ["index", "beta_hat"], head, out / "beta_hat.csv")
    _emit_csv([{"index": j + 1} for j in selected], ["index"], head, out / "selected.csv")
    with open(out / "diagnostics.json", "w") as fh:
        json.dump({"header": head, **diagnostics}, fh, indent=2, default=_jsonable)
    print(f"selected {len(selected)} of {design.p} variables; outputs in {out}")
    return EXIT_OK


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


# ------------------------------------------------------------ exponents


EXPONENT_FIELDS = ["theta", "r", "h0", "rho_gs", "rho_ss", "rho_lasso",
                   "branch_gs", "branch_ss", "branch_lasso"]


def exponent_row(theta: float, r: float, h0: float) -> dict:
    row = {"theta": theta, "r": r, "h0": h0}
    for name, fn in BLOCK_RATES.items():
        rep = fn(theta, r, h0)
        row[f"rho_{name}"] = rep.value
        row[f"branch_{name}"] = rep.branch
    return row


def _read_triples(path: Path) -> list[tuple[float, float, float]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    reader = csv.reader(lines)
    triples = []
    for row in reader:
        try:
            vals = [float(x) for x in row]
        except ValueError:
            continue  # header line
        if len(vals) != 3:
            raise UsageError(f"expected theta,r,h0 per line, got {row}")
        triples.append(tuple(vals))
    if not triples:
        raise UsageError(f"no triples in {path}")
    return triples


def table1_wide() -> list[dict]:
    """Rows gs, ss, lasso; one column per published (theta, r, h0) cell."""
    cells = table1()
    labels = [f"{t:g}/{r:g}/{h:g}" for t, r, h in TABLE1_COLUMNS]
    out = []
    for name in BLOCK_RATES:
        row = {"method": name}
        for lab, c in zip(labels, cells):
            row[lab] = f"{c[f'rho_{name}']:.4f}"
        out.append(row)
    return out


def cmd_exponents(args) -> int:
    out = _outdir(args.output_dir)
    seed = resolve_seed(args.seed)
    if args.table1:
        rows = table1_wide()
        fields = list(rows[0])
        head = header_line(_hash({"table1": True}), seed)
        _emit_csv(rows, fields, head, out / "table1.csv" if out else None)
        return EXIT_OK
    if args.input is not None:
        path = Path(args.input)
        if not path.is_file():
            raise UsageError(f"input file not found: {path}")
        triples = _read_triples(path)
    elif None not in (args.theta, args.r, args.h0):
        triples = [(args.theta, args.r, args.h0)]
    else:
        raise UsageError("give --table1, --input, or all of --theta, --r, --h0")
    try:
        rows = [exponent_row(*t) for t in triples]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    head = header_line(_hash(triples), seed)
    _emit_csv(rows, EXPONENT_FIELDS, head, out / "exponents.csv" if out else None)
    return EXIT_OK


# ------------------------------------------------------------ phase


def cmd_phase(args) -> int:
    if args.method not in BLOCK_RATES:
        raise UsageError(f"--method must be one of {sorted(BLOCK_RATES)}")
    if not 2 <= args.points:
        raise UsageError("--points must be >= 2")
    grid = np.linspace(0, 1, args.points + 2)[1:-1]
    try:
        pts = phase_boundary(args.method, args.h0, grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = [{"theta": t, "r": r, "method": args.method, "h0": args.h0} for t, r in pts]
    head = header_line(_hash({"method": args.method, "h0": args.h0, "points": args.points}),
                       resolve_seed(args.seed))
    out = _outdir(args.output_dir)
    _emit_csv(rows, ["theta", "r", "method", "h0"], head, out / f"phase_{args.method}.csv" if out else None)
    return EXIT_OK


# ------------------------------------------------------------ experiment


def cmd_experiment(args) -> int:
    if args.id not in EXPERIMENT_IDS:
        raise UsageError(f"unknown experiment id {args.id!r}; choose from {', '.join(EXPERIMENT_IDS)}")
    overrides = {}
    if args.config is not None:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    if args.m0 is not None:
        overrides["m0"] = args.m0
    if args.q_rule is not None:
        overrides["q_rule"] = args.q_rule
    if args.q0 is not None:
        overrides["q0"] = args.q0
    if args.p is not None and args.p < 10:
        raise UsageError("--p must be >= 10")
    if args.reps is not None and args.reps < 1:
        raise UsageError("--reps must be >= 1")
    try:
        config = experiment_config(args.id, reduced=args.reduced, p=args.p, reps=args.reps,
                                   seed=resolve_seed(args.seed), **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    workers = args.workers or os.cpu_count() or 1

    def progress(done, total):
        print(f"\r{done}/{total} replications", end="", file=sys.stderr, flush=True)

    report = run_experiment(config, workers=workers, progress=None if args.quiet else progress)
    if not args.quiet:
        print(file=sys.stderr)
    out = _outdir(args.output_dir) or Path(f"experiment_{args.id}")
    paths = write_report(report, out)
    for row in report.summary:
        label = " ".join(f"{k}={row[k]}" for k in ("method", "vartheta", "tau", "r") if k in row)
        print(f"{label} mean_hamming={row['mean_hamming']:.3f} sd={row['sd_hamming']:.3f}")
    print(f"report written to {paths['summary'].parent}")
    return EXIT_OK


# ------------------------------------------------------------ omega


def cmd_omega(args) -> int:
    if args.input is None:
        raise UsageError("--input is required")
    try:
        M = read_matrix_csv(args.input)
        value, xi = omega_min(M)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    result = {"header": header_line(_hash(M.tolist()), resolve_seed(args.seed)),
              "omega": value, "argmin": xi.tolist()}
    out = _outdir(args.output_dir)
    if out is not None:
        with open(out / "omega.json", "w") as fh:
            json.dump(result, fh, indent=2)
    else:
        json.dump(result, sys.stdout, indent=2)
        print()
    return EXIT_OK


# ------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gscreen", description="Graphlet screening for rare, weak signals.")
    parser.add_argument("--version", action="version", version=f"gscreen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--output-dir", help="directory for output files")
        p.add_argument("--seed", type=int, help="random seed (fallback: GS_SEED, then 0)")

    s = sub.add_parser("select", help="run variable selection on a design file")
    common(s)
    s.add_argument("--input", help="CSV (X columns then Y) or binary design file")
    s.add_argument("--method", choices=["gs", "ups", "lasso"], default="gs")
    s.add_argument("--sigma", type=float, help="noise level (required)")
    s.add_argument("--theta", type=float, help="sparsity exponent vartheta")
    s.add_argument("--r", type=float, help="signal strength exponent r")
    s.add_argument("--u", type=float, help="cleaning penalty level u")
    s.add_argument("--v", type=float, help="minimum signal magnitude v")
    s.add_argument("--q", type=float, help="fixed screening constant")
    s.add_argument("--m0", type=int, default=3)
    s.add_argument("--q-rule", choices=Q_RULES, default="max")
    s.add_argument("--q0", type=float, default=0.25)
    s.add_argument("--delta", type=float, help="GOSD threshold (default 1/log p)")
    s.add_argument("--max-iter", type=int, default=1, choices=range(1, 6), metavar="{1..5}")
    s.add_argument("--component-cap", type=int, default=20)
    s.add_argument("--lambda", dest="lam", type=float,
                   help="lasso penalty (default sigma sqrt(2 log p))")
    s.set_defaults(func=cmd_select)

    e = sub.add_parser("exponents", help="block-model risk exponents")
    common(e)
    e.add_argument("--table1", action="store_true", help="emit the 8-column reference table")
    e.add_argument("--input", help="CSV of theta,r,h0 triples")
    e.add_argument("--theta", type=float)
    e.add_argument("--r", type=float)
    e.add_argument("--h0", type=float)
    e.set_defaults(func=cmd_exponents)

    ph = sub.add_parser("phase", help="curve where the block exponent equals 1")
    common(ph)
    ph.add_argument("--method", default="gs", help="gs, ss or lasso")
    ph.add_argument("--h0", type=float, default=0.0)
    ph.add_argument("--points", type=int, default=99, help="interior theta grid points")
    ph.set_defaults(func=cmd_phase)

    x = sub.add_parser("experiment", help="run a simulation experiment")
    common(x)
    x.add_argument("id", help=f"one of {', '.join(EXPERIMENT_IDS)}")
    x.add_argument("--reduced", action="store_true", help="p = 2000, 20 replications")
    x.add_argument("--p", type=int)
    x.add_argument("--reps", type=int)
    x.add_argument("--workers", type=int, help="parallel processes (default: all cores)")
    x.add_argument("--m0", type=int)
    x.add_argument("--q-rule", choices=Q_RULES)
    x.add_argument("--q0", type=float)
    x.add_argument("--config", help="JSON file of experiment config overrides")
    x.add_argument("--quiet", action="store_true")
    x.set_defaults(func=cmd_experiment)

    o = sub.add_parser("omega", help="constrained minimum of a quadratic form")
    common(o)
    o.add_argument("--input", help="CSV of a positive definite matrix")
    o.set_defaults(func=cmd_omega)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"gscreen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
