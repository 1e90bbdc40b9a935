"""Experiment drivers behind the command line.

Each driver returns plain rows and has a matching CSV writer, so the same
numbers can be produced from Python or from ``csaprice experiment``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .adjustments import Estimate, NettingReport, cca_asym_mtmccois, cca_asym_ois, netting_inequality_check
from .dynamics import SimulationConfig, fit_theta, map_blocks
from .instruments import MtMCCOISSpec, OISSpec, clean_values, mtmccois_par_spread, ois_par_rate
from .market import MarketModel
from .pde import ContinuousMtMCCOIS, GateauxRow, PDEGrid, continuous_par_spread, gateaux_vs_pde_report

__all__ = [
    "SweepRow",
    "DEFAULT_SWEEP_BP",
    "mtmccois_cca_experiment",
    "ois_cca_experiment",
    "ois_sigma_c_experiment",
    "pde_compare_experiment",
    "netting_experiment",
    "random_portfolios",
    "write_sweep_csv",
    "write_pde_csv",
    "write_netting_csv",
]

DEFAULT_SWEEP_BP = (25.0, 50.0, 75.0, 100.0, 150.0, 200.0)


@dataclass(frozen=True)
class SweepRow:
    experiment: str
    sigma_bp: float
    side: str
    clean: float
    cca: float
    cva: float
    stderr_cca: float
    stderr_cva: float


def _config(horizon: float, n_paths: int, steps_per_year: int, seed: int) -> SimulationConfig:
    return SimulationConfig(n_paths=n_paths, steps_per_year=steps_per_year, horizon=horizon, seed=seed)


def _both_sides(dyn, spec, cca_fn, threads: int) -> dict[str, Estimate]:
    """CCA for ``spec`` and its mirror on the same paths; the mirror's clean
    value is the negative."""
    mirror = spec.flipped()

    def block(paths):
        clean = clean_values(paths, spec)
        return cca_fn(paths, spec, clean), cca_fn(paths, mirror, -clean)

    parts = map_blocks(dyn, block, threads)
    return {
        spec.side: Estimate.combine(p[0] for p in parts),
        mirror.side: Estimate.combine(p[1] for p in parts),
    }


def mtmccois_cca_experiment(
    model: MarketModel,
    sweep_bp: Sequence[float] = DEFAULT_SWEEP_BP,
    maturity: float = 10.0,
    n_paths: int = 50_000,
    steps_per_year: int = 52,
    seed: int = 20101130,
    threads: int = 1,
) -> list[SweepRow]:
    """CCA of a par MtMCCOIS for party 1 holding the two-currency option,
    both as spread payer and receiver, across spread volatilities."""
    rows = []
    for bp in sweep_bp:
        m = model.with_vols(sigma_y=bp * 1e-4)
        spec = MtMCCOISSpec.standard(m.domestic, m.foreign, maturity, 4, side="payer")
        spec = spec.with_spread(mtmccois_par_spread(m, spec))
        dyn = fit_theta(m, _config(maturity, n_paths, steps_per_year, seed))
        est = _both_sides(dyn, spec, cca_asym_mtmccois, threads)
        for side in ("payer", "receiver"):
            e = est[side]
            rows.append(SweepRow(f"mtmccois-cca-{maturity:g}y", bp, side, 0.0, e.mean, 0.0, e.stderr, 0.0))
    return rows


def _ois_rows(model, label, bp, maturity, n_paths, steps_per_year, seed, threads):
    spec = OISSpec.standard(model.domestic, maturity, 1, side="receiver")
    spec = spec.with_rate(ois_par_rate(model, spec))
    dyn = fit_theta(model, _config(maturity, n_paths, steps_per_year, seed))
    est = _both_sides(dyn, spec, cca_asym_ois, threads)
    return [
        SweepRow(label, bp, side, 0.0, est[side].mean, 0.0, est[side].stderr, 0.0)
        for side in ("receiver", "payer")
    ]


def ois_cca_experiment(
    model: MarketModel,
    sweep_bp: Sequence[float] = DEFAULT_SWEEP_BP,
    maturity: float = 10.0,
    n_paths: int = 50_000,
    steps_per_year: int = 52,
    seed: int = 20101130,
    threads: int = 1,
) -> list[SweepRow]:
    """CCA of a par domestic OIS, party 1 posting either currency and
    party 2 only the domestic one, across spread volatilities."""
    rows = []
    for bp in sweep_bp:
        m = model.with_vols(sigma_y=bp * 1e-4)
        rows += _ois_rows(m, f"ois-cca-{maturity:g}y", bp, maturity, n_paths, steps_per_year, seed, threads)
    return rows


def ois_sigma_c_experiment(
    model: MarketModel,
    sweep_bp: Sequence[float] = DEFAULT_SWEEP_BP,
    sigma_y: float = 0.0075,
    maturity: float = 20.0,
    n_paths: int = 50_000,
    steps_per_year: int = 52,
    seed: int = 20101130,
    threads: int = 1,
) -> list[SweepRow]:
    """As :func:`ois_cca_experiment` but sweeping the collateral-rate
    volatility with the spread volatility held fixed."""
    rows = []
    for bp in sweep_bp:
        m = model.with_vols(sigma_y=sigma_y, sigma_c=bp * 1e-4)
        label = f"ois-cca-sigma-c-{maturity:g}y"
        rows += _ois_rows(m, label, bp, maturity, n_paths, steps_per_year, seed, threads)
    return rows


def pde_compare_experiment(
    model: MarketModel,
    sweep_bp: Sequence[float] = DEFAULT_SWEEP_BP,
    maturity: float = 10.0,
    grid: PDEGrid | None = None,
    n_paths: int = 20_000,
    steps_per_year: int = 52,
    seed: int = 20101130,
    threads: int = 1,
) -> list[GateauxRow]:
    sigmas = [bp * 1e-4 for bp in sweep_bp]
    rows: list[GateauxRow] = []
    for side in ("payer", "receiver"):
        rows += gateaux_vs_pde_report(
            model, None, sigmas, side, maturity, grid, n_paths, steps_per_year, seed, threads
        )
    return rows


def random_portfolios(model: MarketModel, n: int, seed: int, max_maturity: float = 10.0):
    """Pairs of one- or two-leg continuous MtMCCOIS portfolios with spreads
    scattered around par."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        pair = []
        for _ in range(2):
            legs = []
            for _ in range(int(rng.integers(1, 3))):
                T = float(rng.integers(2, int(max_maturity) + 1))
                B = continuous_par_spread(model, T) + float(rng.normal(0.0, 0.002))
                side = "payer" if rng.random() < 0.5 else "receiver"
                legs.append(ContinuousMtMCCOIS(B, T, side, float(rng.uniform(0.5, 2.0))))
            pair.append(legs)
        pairs.append(tuple(pair))
    return pairs


def netting_experiment(
    model: MarketModel,
    n_trials: int = 20,
    sigma_y: float = 0.01,
    seed: int = 20101130,
    grid: PDEGrid | None = None,
) -> list[NettingReport]:
    """Netting check with party 1 posting only the domestic currency and
    party 2 either currency, so that ``y^1 >= y^2``."""
    m = model.with_vols(sigma_y=sigma_y, sigma_c=0.0)
    grid = PDEGrid(n_space=201, steps_per_year=50) if grid is None else grid
    e1 = {m.domestic}
    e2 = {m.domestic, m.foreign}
    return [netting_inequality_check(m, a, b, e1, e2, grid) for a, b in random_portfolios(m, n_trials, seed)]


def write_sweep_csv(path: str | Path, rows: Sequence[SweepRow], sigma_column: str = "sigma_y_bp") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", sigma_column, "side", "clean", "cca", "cva", "stderr_cca", "stderr_cva"])
        for r in rows:
            w.writerow([r.experiment, f"{r.sigma_bp:g}", r.side, r.clean, r.cca, r.cva, r.stderr_cca, r.stderr_cva])


def write_pde_csv(path: str | Path, rows: Sequence[GateauxRow]) -> None:
    """All value columns in bp of notional."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sigma_y_bp", "side", "pde_minus_clean", "gateaux", "discrepancy_bp"])
        for r in rows:
            w.writerow([f"{r.sigma_y * 1e4:g}", r.side, r.pde_minus_clean * 1e4, r.gateaux * 1e4, r.discrepancy * 1e4])


def write_netting_csv(path: str | Path, rows: Sequence[NettingReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "v_ab", "v_a", "v_b", "difference", "error", "holds"])
        for i, r in enumerate(rows):
            w.writerow([i, r.v_ab, r.v_a, r.v_b, r.difference, r.error, int(r.holds)])
