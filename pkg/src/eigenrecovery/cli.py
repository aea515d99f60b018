"""Command-line front end: ``eigenrecovery CONFIG COMMAND [options]``.

Exit codes: 0 success, 2 invalid input, 3 an outcome the numerics could not decide.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys

from .boundary import Classification, classify_model
from .config import Config, ConfigError, dumps, format_number, load_config
from .exprdsl import ExprError
from .martcrit import MartingaleStatus, martingale_check
from .model import ModelError, derive
from .odesolve import HypothesisViolation, OdeSolveError, critical_lambda, slope_bounds, solve
from .recover import NotAdmissibleError, admissible_set, recover_agent
from .simulate import SimulationError, simulate
from .usualset import UsualStatus, usual_check

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_UNDECIDED = 3

COMMANDS = ("classify", "critical", "slice", "admissible", "recover", "simulate", "check")
RECOVER_COLUMNS = ("x", "phi", "marginal_utility", "utility", "objective_drift")


class UsageError(ValueError):
    pass


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) if not isinstance(v, (str, bool)) else v for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _need_lambda(args) -> float:
    if args.lam is None:
        raise UsageError(f"--lambda is required for '{args.command}'")
    if not math.isfinite(args.lam):
        raise UsageError("--lambda must be finite")
    return args.lam


def _crit(cfg: Config):
    num = cfg.numerics
    return critical_lambda(cfg.model, tol=num.bisect_tol_lambda, rtol=num.ode_rel_tol)


def cmd_classify(cfg: Config, args):
    report = classify_model(cfg.model, schedule=cfg.numerics.schedule)
    undecided = Classification.INDETERMINATE in (report.left, report.right)
    return report.to_dict(), undecided


def cmd_critical(cfg: Config, args):
    crit = _crit(cfg)
    out = {
        "lambda_bar": crit.value,
        "rate_floor": crit.rate_floor,
        "bracket": list(crit.bracket),
        "evaluations": crit.evaluations,
        "indeterminate": crit.indeterminate,
    }
    return out, crit.indeterminate


def cmd_slice(cfg: Config, args):
    lam = _need_lambda(args)
    num = cfg.numerics
    sl = slope_bounds(cfg.model, lam, rtol=num.ode_rel_tol, slope_tol=num.bisect_tol_slope)
    out = {
        "lambda": sl.lam,
        "m_slope": sl.m_lambda,
        "M_slope": sl.M_lambda,
        "nonempty": sl.nonempty,
        "width": sl.width,
        "truncation_sensitivity": sl.truncation_sensitivity,
        "indeterminate": sl.indeterminate,
        "diagnostics": sl.diagnostics,
    }
    return out, sl.indeterminate


def _admissible(cfg: Config, grid=9):
    num = cfg.numerics
    return admissible_set(
        cfg.model,
        grid=grid,
        lambda_tol=num.bisect_tol_lambda,
        rtol=num.ode_rel_tol,
        slope_tol=num.bisect_tol_slope,
        schedule=num.schedule,
    )


def cmd_admissible(cfg: Config, args):
    grid = 9 if args.grid is None else args.grid
    if grid < 2:
        raise UsageError("--grid must be at least 2")
    adm = _admissible(cfg, grid)
    if args.out:
        write_csv(args.out, ("lambda", "m_slope"), [(lam, m) for lam, m, _ in adm.samples])
    undecided = adm.reason.endswith("undecided") or any(ind for _, _, ind in adm.samples)
    return adm.to_dict(), undecided


def cmd_recover(cfg: Config, args):
    lam = _need_lambda(args)
    admissible = None
    if not args.force:
        admissible = _admissible(cfg, grid=())
        if admissible.contains(lam) is None:
            return {
                "error": f"membership of lambda={format_number(lam)} is undecided; rerun with --force",
                "admissible": admissible.to_dict(),
            }, True
    agent = recover_agent(cfg.model, lam, force=args.force, admissible=admissible)
    if args.out:
        table = agent.table()
        write_csv(args.out, RECOVER_COLUMNS, zip(*(table[c] for c in RECOVER_COLUMNS)))
    return agent.summary(), False


def cmd_simulate(cfg: Config, args):
    sim = cfg.simulation
    measure = (args.measure or "q").upper()
    solution = None
    if args.lam is not None:
        solution = solve(cfg.model, _need_lambda(args), "M", rtol=cfg.numerics.ode_rel_tol)
    elif measure == "P":
        raise UsageError("--measure p needs --lambda")
    seed = sim.seed if args.seed is None else args.seed
    res = simulate(
        cfg.model,
        measure,
        sim.horizon,
        sim.n_paths,
        sim.n_steps,
        seed,
        solution=solution,
        thresholds=sim.thresholds,
    )
    return res.to_dict(), False


def cmd_check(cfg: Config, args):
    lam = _need_lambda(args)
    num = cfg.numerics
    model = cfg.model
    derived = derive(model)
    sol = solve(model, lam, "M", rtol=num.ode_rel_tol)
    mart = martingale_check(model, sol, derived, num.schedule)
    report = classify_model(model, derived, num.schedule)
    usual = usual_check(model, sol, report, derived=derived)
    out = {
        "lambda": lam,
        "M_slope": sol.slope,
        "martingale": mart.to_dict(),
        "usual": usual.to_dict(),
        "boundaries": {"left": report.left.value, "right": report.right.value},
    }
    undecided = mart.status == MartingaleStatus.INDETERMINATE or usual.status == UsualStatus.INDETERMINATE
    return out, undecided


HANDLERS = {
    "classify": cmd_classify,
    "critical": cmd_critical,
    "slice": cmd_slice,
    "admissible": cmd_admissible,
    "recover": cmd_recover,
    "simulate": cmd_simulate,
    "check": cmd_check,
}


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eigenrecovery", description="Recover a representative agent from a diffusion market.")
    p.add_argument("config", help="JSON configuration file")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--lambda", dest="lam", type=_float, help="eigenvalue")
    p.add_argument("--grid", type=int, help="number of eigenvalue samples (admissible)")
    p.add_argument("--measure", choices=("q", "p", "Q", "P"), help="simulation measure")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--force", action="store_true", help="recover even if admissibility is not established")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        out, undecided = HANDLERS[args.command](cfg, args)
    except (ConfigError, UsageError, ExprError, ModelError, NotAdmissibleError, HypothesisViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OdeSolveError, SimulationError) as exc:
        print(f"undecided: {exc}", file=sys.stderr)
        return EXIT_UNDECIDED
    sys.stdout.write(dumps(out))
    sys.stdout.flush()
    return EXIT_UNDECIDED if undecided else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
