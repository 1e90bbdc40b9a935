"""Command-line driver: ``csaprice {bootstrap,price,experiment}``.

Data goes to files under ``--out``; progress and summaries go to stderr.
A ``--config`` JSON file overrides any flag of the same name (dashes or
underscores both accepted).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Sequence

from .adjustments import CollateralTerms, PartyTerms, price_adjustments
from .curves import (
    CalibrationError,
    CurveFileError,
    bootstrap_collateral_curve,
    bootstrap_spread_curve,
    mtmccois_par,
    ois_par,
    read_quotes_csv,
    schedule,
    write_curve_csv,
)
from .dynamics import ExtrapolationError, SimulationConfig, fit_theta
from .experiments import (
    DEFAULT_SWEEP_BP,
    mtmccois_cca_experiment,
    netting_experiment,
    ois_cca_experiment,
    ois_sigma_c_experiment,
    pde_compare_experiment,
    write_netting_csv,
    write_pde_csv,
    write_sweep_csv,
)
from .instruments import MtMCCOISSpec, OISSpec, load_spec, mtmccois_par_spread, ois_par_rate
from .market import default_market, load_market

log = logging.getLogger("csaprice")

EXPERIMENTS = ("mtmccois-cca", "ois-cca", "pde-compare", "netting-check")
EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--config", help="JSON file whose keys override flags")


def _sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--paths", type=int, default=50_000, help="Monte Carlo paths (default 50000)")
    p.add_argument("--steps-per-year", type=int, default=52, help="simulation steps per year (default 52)")
    p.add_argument("--seed", type=int, default=20101130, help="RNG seed (default 20101130)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads (default: cores)")
    p.add_argument("--market", help="market JSON (default: packaged JPY/USD market)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csaprice", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bootstrap", help="fit curves to OIS and cross-currency quotes")
    b.add_argument("--ois", action="append", default=[], metavar="CCY=FILE", help="OIS par quotes per currency")
    b.add_argument("--ccs", metavar="FILE", help="MtMCCOIS basis quotes for domestic/foreign")
    b.add_argument("--domestic", default="JPY")
    b.add_argument("--foreign", default="USD")
    b.add_argument("--ois-frequency", type=int, default=1)
    b.add_argument("--ccs-frequency", type=int, default=4)
    _common(b)

    pr = sub.add_parser("price", help="clean value, CCA and CVA of one instrument")
    pr.add_argument("--instrument", required=True, help="instrument JSON")
    pr.add_argument("--terms", help="collateral terms JSON (default: asymmetric two-currency option)")
    _sim_flags(pr)
    _common(pr)

    e = sub.add_parser("experiment", help="run a named study")
    e.add_argument("name", help=f"one of {', '.join(EXPERIMENTS)}")
    e.add_argument("--sweep-bp", type=float, nargs="+", default=list(DEFAULT_SWEEP_BP), help="volatilities in bp")
    e.add_argument("--maturity", type=float, default=10.0)
    e.add_argument("--trials", type=int, default=20, help="netting-check portfolios")
    _sim_flags(e)
    _common(e)
    return parser


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    if not getattr(args, "config", None):
        return args
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for key, value in raw.items():
        name = key.replace("-", "_")
        if hasattr(args, name):
            setattr(args, name, value)
        else:
            raise UsageError(f"unknown config key {key!r}")
    return args


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _market(args):
    return load_market(args.market) if args.market else default_market()


def cmd_bootstrap(args) -> int:
    out = _out_dir(args)
    if not args.ois:
        raise UsageError("bootstrap needs at least one --ois CCY=FILE")
    curves = {}
    report = []
    for item in args.ois:
        ccy, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--ois expects CCY=FILE, got {item!r}")
        quotes = read_quotes_csv(path)
        curve = bootstrap_collateral_curve(quotes, args.ois_frequency)
        curves[ccy] = curve
        target = out / f"{ccy.lower()}_collateral.csv"
        write_curve_csv(target, curve)
        for m, q in quotes:
            err = ois_par(curve, schedule(m, args.ois_frequency)) - q
            report.append((f"{ccy} OIS", m, q, err))
        log.info("wrote %s", target)
    if args.ccs:
        for ccy in (args.domestic, args.foreign):
            if ccy not in curves:
                raise UsageError(f"--ccs needs OIS quotes for {ccy}")
        quotes = read_quotes_csv(args.ccs)
        dom = curves[args.domestic]
        spread = bootstrap_spread_curve(quotes, dom, curves[args.foreign], args.ccs_frequency)
        target = out / f"{args.domestic.lower()}_{args.foreign.lower()}_spread.csv"
        write_curve_csv(target, spread)
        for m, q in quotes:
            err = mtmccois_par(dom, spread, schedule(m, args.ccs_frequency)) - q
            report.append((f"{args.domestic}/{args.foreign} MtMCCOIS", m, q, err))
        log.info("wrote %s", target)
    with open(out / "bootstrap_report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["instrument", "maturity_years", "quote", "repricing_error"])
        w.writerows(report)
    worst = max(abs(r[3]) for r in report)
    print(f"max repricing error: {worst:.3e}", file=sys.stderr)
    return EXIT_OK


def _terms_from_json(path: str | None, model, spec):
    if path is None:
        both = frozenset(model.currencies)
        other = frozenset({spec.collateral})
        return CollateralTerms(PartyTerms(both), PartyTerms(other)), None
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    parties = []
    for key in ("party1", "party2"):
        p = dict(raw[key])
        p["eligible"] = frozenset(p.get("eligible", ()))
        parties.append(PartyTerms(**p))
    bench = raw.get("benchmark")
    return CollateralTerms(*parties), (frozenset(bench) if bench else None)


def cmd_price(args) -> int:
    out = _out_dir(args)
    model = _market(args)
    spec = load_spec(args.instrument)
    if isinstance(spec, OISSpec) and spec.fixed_rate is None:
        spec = spec.with_rate(ois_par_rate(model, spec))
    if isinstance(spec, MtMCCOISSpec) and spec.spread is None:
        spec = spec.with_spread(mtmccois_par_spread(model, spec))
    terms, bench = _terms_from_json(args.terms, model, spec)
    cfg = SimulationConfig(
        n_paths=args.paths, steps_per_year=args.steps_per_year, horizon=spec.maturity, seed=args.seed
    )
    dyn = fit_theta(model, cfg)
    price = price_adjustments(dyn, spec, terms, bench, args.threads)
    rate = spec.fixed_rate if isinstance(spec, OISSpec) else spec.spread
    with open(out / "price.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["instrument", "side", "rate", "clean", "cca", "cva", "total", "stderr_cca", "stderr_cva"])
        kind = "ois" if isinstance(spec, OISSpec) else "mtmccois"
        w.writerow([kind, spec.side, rate, price.clean, price.cca, price.cva, price.total, price.stderr_cca, price.stderr_cva])
    print(
        f"clean {price.clean:.8f}  cca {price.cca:.8f} (+/- {price.stderr_cca:.2e})  "
        f"cva {price.cva:.8f} (+/- {price.stderr_cva:.2e})  total {price.total:.8f}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.name!r}; choose from {', '.join(EXPERIMENTS)}")
    if any(v < 0 for v in args.sweep_bp):
        raise UsageError("sweep values must be nonnegative")
    out = _out_dir(args)
    model = _market(args)
    sim = dict(n_paths=args.paths, steps_per_year=args.steps_per_year, seed=args.seed, threads=args.threads)
    if args.name == "mtmccois-cca":
        rows = mtmccois_cca_experiment(model, args.sweep_bp, args.maturity, **sim)
        write_sweep_csv(out / "mtmccois_cca.csv", rows)
    elif args.name == "ois-cca":
        rows = ois_cca_experiment(model, args.sweep_bp, args.maturity, **sim)
        write_sweep_csv(out / "ois_cca.csv", rows)
        rows_c = ois_sigma_c_experiment(model, args.sweep_bp, 0.0075, args.maturity, **sim)
        write_sweep_csv(out / "ois_cca_sigma_c.csv", rows_c, "sigma_c_bp")
    elif args.name == "pde-compare":
        rows = pde_compare_experiment(model, args.sweep_bp, args.maturity, **sim)
        write_pde_csv(out / "pde_compare.csv", rows)
    else:
        reports = netting_experiment(model, args.trials, seed=args.seed)
        write_netting_csv(out / "netting_check.csv", reports)
        failed = sum(not r.holds for r in reports)
        print(f"netting inequality held in {len(reports) - failed}/{len(reports)} portfolios", file=sys.stderr)
    log.info("wrote results to %s", out)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    handlers = {"bootstrap": cmd_bootstrap, "price": cmd_price, "experiment": cmd_experiment}
    start = time.perf_counter()
    try:
        args = _apply_config(args)
        code = handlers[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"csaprice: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CurveFileError as exc:
        print(f"csaprice: malformed input at line {exc.line}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CalibrationError, ExtrapolationError) as exc:
        print(f"csaprice: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"csaprice: bad input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    log.info("done in %.1fs", time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
