"""Command-line driver: ``dlc {theory,sweep,optimal,gapscan,selftest}``.

Exit codes: 0 success, 1 usage or config error, 2 domain error,
3 numerical failure (or a failed self-test criterion).
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

import numpy as np

from . import harness
from .harness import DOMAIN, NUMERICAL, OK, USAGE
from .model import Architecture, DomainError, ModelKind, Scenario
from .optimal import nn_width_monotonicity, rf_optimal_depth, rf_optimal_width


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; usage errors are 1 here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE, f"{self.prog}: error: {message}\n")


def _widths(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _gamma_range(text: str) -> tuple[float, float, int]:
    try:
        lo, hi, n = text.split(":")
        return float(lo), float(hi), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:n, got {text!r}")


def _add_scenario(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--sigma2", type=float, required=True)
    p.add_argument("--eta", type=float, default=0.0)


def _add_output(p: argparse.ArgumentParser, default_out: str = "-") -> None:
    p.add_argument("--out", default=default_out, help="output path, '-' for standard output")
    p.add_argument("--format", choices=harness.FORMATS, default="csv")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dlc", description="Learning curves of deep Bayesian linear regression.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("theory", help="one theory row")
    p.add_argument("--model", choices=[m.value for m in ModelKind], required=True)
    _add_scenario(p)
    p.add_argument("--widths", type=_widths, help="g1,g2,... (width / input dimension)")
    _add_output(p)

    p = sub.add_parser("sweep", help="grid sweep from a TOML config")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="override output.path")
    p.add_argument("--format", choices=harness.FORMATS, default=None)

    p = sub.add_parser("optimal", help="optimal width/depth or NN width regime")
    p.add_argument("--model", choices=["rf", "nn"], required=True)
    _add_scenario(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--depth", type=int, help="RF: optimal width at this depth")
    g.add_argument("--width", type=float, help="RF: optimal depth at this width")
    _add_output(p)

    p = sub.add_parser("gapscan", help="RF minus NN gap, theory and paired simulation")
    _add_scenario(p)
    p.add_argument("--gammas", type=_gamma_range, required=True, help="lo:hi:n, log spaced")
    p.add_argument("--d", type=int, default=100)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    _add_output(p)

    p = sub.add_parser("selftest", help="run the acceptance criteria")
    p.add_argument("--only", type=lambda t: [int(x) for x in t.split(",")], default=None,
                   help="comma-separated criterion numbers")
    return ap


def _err(msg: str) -> None:
    print(f"dlc: {msg}", file=sys.stderr)


def cmd_theory(args) -> int:
    model = ModelKind(args.model)
    try:
        s = Scenario(args.alpha, args.sigma2, args.eta)
        arch = None
        if model is not ModelKind.LR:
            if not args.widths:
                _err(f"--widths is required for model {model.value}")
                return USAGE
            arch = Architecture(args.widths)
    except DomainError as exc:
        _err(str(exc))
        return DOMAIN
    row = harness.evaluate_point(harness.GridPoint(model, s, arch))
    harness.write_atomic(harness.render_rows([row], args.format), args.out)
    if "divergent" in row["flags"]:
        _err(f"alpha={s.alpha} sits on a pole of the learning curve")
        return DOMAIN
    code = harness.exit_code([row])
    if code != OK:
        _err(f"evaluation failed: {';'.join(row['flags'])}")
    return code


def cmd_sweep(args) -> int:
    try:
        grid = harness.load_config(args.config)
    except harness.ConfigError as exc:
        for problem in exc.problems:
            _err(problem)
        return USAGE
    code, _ = harness.run_sweep(grid, args.out, args.format)
    return code


OPTIMAL_COLUMNS = ("model", "alpha", "sigma2", "eta", "regime", "gamma_star", "ell_star", "sigma_tilde2")


def cmd_optimal(args) -> int:
    try:
        s = Scenario(args.alpha, args.sigma2, args.eta)
        row = {"model": args.model, "alpha": s.alpha, "sigma2": s.sigma2, "eta": s.eta}
        if args.model == "nn":
            if args.depth is not None or args.width is not None:
                _err("--depth/--width apply to the rf model only")
                return USAGE
            rep = nn_width_monotonicity(s)
        elif args.depth is not None:
            rep = rf_optimal_width(args.depth, s)
            row["gamma_star"] = rep.optimum[0] if rep.optimum else None
        elif args.width is not None:
            rep = rf_optimal_depth(args.width, s)
            row["ell_star"] = ";".join(str(j) for j in rep.optimum)
        else:
            _err("rf model needs --depth or --width")
            return USAGE
    except DomainError as exc:
        _err(str(exc))
        return DOMAIN
    row.update(regime=rep.regime.value, sigma_tilde2=rep.sigma_tilde2)
    text = harness.render_rows(
        [row], args.format, OPTIMAL_COLUMNS,
    )
    harness.write_atomic(text, args.out)
    return OK


def cmd_gapscan(args) -> int:
    lo, hi, n = args.gammas
    if not (0 < lo <= hi) or n < 1 or args.d < 1 or args.reps < 2:
        _err("need 0 < lo <= hi, n >= 1, d >= 1 and reps >= 2")
        return USAGE
    try:
        s = Scenario(args.alpha, args.sigma2, args.eta)
        if s.alpha >= 1:
            raise DomainError("the two-layer gap needs alpha < 1")
        gammas = np.geomspace(lo, hi, n).tolist()
        rows = harness.pool_map(
            lambda g: harness.gap_row(g, s, args.d, args.reps, args.seed), gammas
        )
    except DomainError as exc:
        _err(str(exc))
        return DOMAIN
    meta = {
        "alpha": s.alpha, "sigma2": s.sigma2, "eta": s.eta, "d": args.d,
        "n_reps": args.reps, "base_seed": args.seed,
        "pairing": "RF and NN replicates share X, w* and xi; gap_sim_se is the paired se",
    }
    harness.write_atomic(harness.render_gap_rows(rows, args.format, meta), args.out)
    return harness.exit_code(rows)


def cmd_selftest(args) -> int:
    from . import acceptance

    results = acceptance.run_all(args.only, stream=sys.stdout)
    return OK if all(r.passed for r in results) else NUMERICAL


COMMANDS = {
    "theory": cmd_theory,
    "sweep": cmd_sweep,
    "optimal": cmd_optimal,
    "gapscan": cmd_gapscan,
    "selftest": cmd_selftest,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.cmd](args)


if __name__ == "__main__":
    sys.exit(main())
