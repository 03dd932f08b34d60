"""Command-line interface.

Exit codes: 0 success, 1 invalid input, 2 solver did not converge,
3 file could not be read or written.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import abm, dynamics, equilibrium, pricing, stability, statics
from .eigen import QRConvergenceError
from .model import ModelParams, StateError, ValidationError, load_params, reduced_to_full

log = logging.getLogger("darkmkt")

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_IO = 0, 1, 2, 3

# published values for the bundled two-asset example, used by `report`
REFERENCE = {
    "mu_hn": [0.0991, 0.0720],
    "mu_lo": [0.0011, 0.0116],
    "mu_ho": [0.2989, 0.5883],
    "mu_ln": 0.0289,
    "Psi": [5.6366, 0.3026],
    "Gamma": [5.7159, 0.3075],
    "Lambda": [0.9861, 0.9837],
    "Omega": [0.0011, 0.0677],
    "P": [50.0031, 69.6551],
    "days": [2.0, 1.7],
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        self.code = code
        super().__init__(message)


def _clean(obj):
    """Round floats to 12 significant digits; non-finite values become null."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(f"{v:.12g}") if math.isfinite(v) else None
    return obj


def emit_json(data: dict, out: str | None) -> None:
    text = json.dumps(_clean(data), indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as err:
        raise CliError(f"cannot write {out}: {err}", EXIT_IO) from err


def _write_csv(writer, out: str | None) -> None:
    if out is None:
        raise CliError("--out is required for CSV output", EXIT_INVALID)
    try:
        writer(out)
    except OSError as err:
        raise CliError(f"cannot write {out}: {err}", EXIT_IO) from err


def _load(path: str) -> ModelParams:
    try:
        return load_params(path)
    except OSError as err:
        raise CliError(f"cannot read {path}: {err}", EXIT_IO) from err
    except json.JSONDecodeError as err:
        raise CliError(f"{path} is not valid JSON: {err}", EXIT_INVALID) from err


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:count`` -> evenly spaced grid including both ends."""
    try:
        start, stop, count = text.split(":")
        start, stop, count = float(start), float(stop), int(count)
    except ValueError as err:
        raise CliError(f"grid must be start:stop:count, got {text!r}", EXIT_INVALID) from err
    if not start < stop or count < 2:
        raise CliError("grid needs start < stop and count >= 2", EXIT_INVALID)
    return np.linspace(start, stop, count)


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as err:
        raise CliError(f"expected comma-separated numbers, got {text!r}", EXIT_INVALID) from err


def cmd_solve(args) -> None:
    p = _load(args.config)
    s = equilibrium.solve_steady_state(p, tol=args.tol)
    out = {"steady_state": s.to_dict(), "full_state": reduced_to_full(s.x, p).to_dict()}
    if args.scan:
        out["uniqueness"] = equilibrium.verify_uniqueness_scan(p, args.scan, seed=args.seed).to_dict()
    emit_json(out, args.out)


def cmd_simulate(args) -> None:
    p = _load(args.config)
    x0 = equilibrium.default_start(p) if args.x0 is None else _floats(args.x0)
    traj = dynamics.integrate(x0, p, dt=args.dt, t_max=args.t_max, store_every=args.every)
    _write_csv(traj.to_csv, args.out)


def cmd_stability(args) -> None:
    p = _load(args.config)
    emit_json(stability.stability_certificate(p).to_dict(), args.out)


def cmd_price(args) -> None:
    p = _load(args.config)
    s = equilibrium.solve_steady_state(p)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", pricing.PriceDisagreementWarning)
        report = pricing.equilibrium_prices(p, s, q_hat=args.q_hat, days_per_year=args.days_per_year)
    for w in caught:
        log.warning("%s", w.message)
    out = {"steady_state": s.to_dict(), **report.to_dict()}
    out["warnings"] = [str(w.message) for w in caught]
    emit_json(out, args.out)


def cmd_sweep(args) -> None:
    p = _load(args.config)
    s = equilibrium.solve_steady_state(p)
    try:
        result = statics.price_sweep(
            p, s, args.param, parse_grid(args.grid), args.price, args.mode, args.formula, args.jobs, args.warm_start
        )
    except ValueError as err:
        raise CliError(str(err), EXIT_INVALID) from err
    _write_csv(result.to_csv, args.out)
    log.info("classification of P_%d: %s", args.price, result.classification)


def cmd_limits(args) -> None:
    p = _load(args.config)
    s = equilibrium.solve_steady_state(p)
    if args.kind == "gamma_tilde_u":
        emit_json({"kind": "gamma_tilde_u", **statics.gamma_tilde_u_path_dependence(p, s).to_dict()}, args.out)
    else:
        emit_json(statics.LIMIT_FUNCTIONS[args.kind](p, s).to_dict(), args.out)


def cmd_abm(args) -> None:
    p = _load(args.config)
    try:
        series = abm.simulate(p, args.agents, args.t_max, seed=args.seed, sample_dt=args.sample_dt)
    except abm.InitializationError as err:
        raise CliError(str(err), EXIT_INVALID) from err
    _write_csv(series.to_csv, args.out)
    if args.compare:
        s = equilibrium.solve_steady_state(p)
        cmp = abm.compare_to_meanfield(series, s, p, burn_in=args.burn_in)
        emit_json({"n_events": series.n_events, "trades": series.trades, **cmp.to_dict()}, args.compare)


def _row(label, computed, published):
    computed = np.atleast_1d(computed)
    published = np.atleast_1d(published)
    cells = "  ".join(f"{c:>12.6g} ({r:g})" for c, r in zip(computed, published))
    return f"  {label:<10}{cells}"


def cmd_report(args) -> None:
    p = _load(args.config)
    s = equilibrium.solve_steady_state(p)
    full = reduced_to_full(s.x, p)
    cert = stability.stability_certificate(p, s)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", pricing.PriceDisagreementWarning)
        rep = pricing.equilibrium_prices(p, s)
    it = rep.intermediates
    ref = REFERENCE if p.K == 2 else None
    lines = [f"steady state (residual {s.residual:.2e}, {s.method}); computed (published)"]
    rows = [
        ("mu(h,n)", full.mu_hn, "mu_hn"),
        ("mu(l,o)", full.mu_lo, "mu_lo"),
        ("mu(h,o)", full.mu_ho, "mu_ho"),
        ("mu(l,n)", full.mu_ln, "mu_ln"),
    ]
    price_rows = [
        ("Psi", it.Psi, "Psi"),
        ("Gamma", it.Gamma, "Gamma"),
        ("Lambda", it.Lambda, "Lambda"),
        ("Omega", it.Omega, "Omega"),
        ("P", rep.prices, "P"),
        ("P display", rep.price_theorem, "P"),
        ("days", rep.timing.days, "days"),
    ]
    for label, value, key in rows:
        lines.append(_row(label, value, ref[key] if ref else np.full(np.size(value), np.nan)))
    lines.append(f"stability: {cert.verdict}; max Re(eig) = {cert.max_real:.6g}; minors = {np.round(cert.minors, 6).tolist()}")
    lines.append("prices and intermediates; computed (published)")
    for label, value, key in price_rows:
        lines.append(_row(label, value, ref[key] if ref else np.full(np.size(value), np.nan)))
    if not rep.theorem_agrees:
        lines.append("note: the displayed closed-form price differs from the bargained price")
    text = "\n".join(lines) + "\n"
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as err:
            raise CliError(f"cannot write {args.out}: {err}", EXIT_IO) from err
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darkmkt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", required=True, help="parameter file (JSON)")
        sp.add_argument("--out", help="output path (JSON commands default to stdout)")
        sp.set_defaults(func=func)
        return sp

    sp = add("solve", cmd_solve, "solve for the steady state")
    sp.add_argument("--tol", type=float, default=equilibrium.DEFAULT_TOL, help="max-norm residual tolerance")
    sp.add_argument("--scan", type=int, default=0, metavar="N", help="also run a uniqueness scan from N starts")
    sp.add_argument("--seed", type=int, default=0, help="seed for the scan's start points")

    sp = add("simulate", cmd_simulate, "integrate the mean-field ODE with RK4 and write a CSV trajectory")
    sp.add_argument("--x0", help="initial reduced state, comma-separated (default: solver start point)")
    sp.add_argument("--dt", type=float, default=dynamics.DEFAULT_DT)
    sp.add_argument("--t-max", type=float, default=10.0)
    sp.add_argument("--every", type=int, default=1, help="store every n-th step")

    add("stability", cmd_stability, "stability certificate of the steady state")

    sp = add("price", cmd_price, "equilibrium prices, value functions and seller timing")
    sp.add_argument("--q-hat", type=float, default=None, help="raw bargaining power for the blended value")
    sp.add_argument("--days-per-year", type=float, default=pricing.DAYS_PER_YEAR)

    sp = add("sweep", cmd_sweep, "price sweep over one parameter, written as CSV")
    sp.add_argument("--param", required=True, help="parameter and 1-based asset, e.g. lambda.2")
    sp.add_argument("--grid", required=True, help="start:stop:count")
    sp.add_argument("--price", type=int, default=1, help="1-based asset whose price is classified")
    sp.add_argument("--mode", choices=("frozen", "self-consistent"), default="frozen")
    sp.add_argument("--formula", choices=statics.FORMULAS, default="theorem")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes for self-consistent sweeps")
    sp.add_argument("--warm-start", action="store_true", help="sequential self-consistent sweep reusing the last solution")

    sp = add("limits", cmd_limits, "price limits under joint parameter scaling")
    sp.add_argument("--kind", choices=(*statics.LIMIT_KINDS, "gamma_tilde_u"), required=True)

    sp = add("abm", cmd_abm, "finite-population event simulation, written as CSV")
    sp.add_argument("--agents", type=int, default=100_000)
    sp.add_argument("--t-max", type=float, default=20.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--sample-dt", type=float, default=0.01)
    sp.add_argument("--compare", metavar="JSON", help="also write a mean-field comparison here")
    sp.add_argument("--burn-in", type=float, default=5.0)

    add("report", cmd_report, "solve, certify and price; print computed values beside the published ones")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except (ValidationError, StateError, equilibrium.UnsupportedError, ValueError) as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (equilibrium.ConvergenceError, QRConvergenceError, dynamics.BlowUpError) as err:
        print(f"not converged: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
