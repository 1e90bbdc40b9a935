"""Correlated four-factor Hull-White simulation under the domestic
spot-martingale measure.

State, in this order: domestic collateral rate ``c_dom``, foreign collateral
rate ``c_for``, cross-currency funding spread ``y = y^(dom, for)`` and
``log_fx`` (log of domestic units per foreign unit).

Each rate factor is written as ``phi(t) + x_t`` where ``x`` is a zero-start
Ornstein-Uhlenbeck deviation stepped with Euler on a uniform grid and
``phi`` is the continuous Hull-White fitted mean.  Accumulated integrals use
the trapezoid rule on ``x`` plus a deterministic per-step increment chosen so
that, under the discrete scheme itself, ``E[exp(-int c)]`` equals the input
curve's discount factor at every grid date.  The same discrete recursion
gives the affine bond formula used for on-path revaluation, which is
therefore exact for the simulated model.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Iterator, Sequence, TypeVar

import numpy as np
from scipy.signal import lfilter

from .curves import TermStructure

if TYPE_CHECKING:
    from .market import MarketModel

__all__ = [
    "HullWhiteParams",
    "SimulationConfig",
    "FactorFit",
    "FittedDynamics",
    "PathSet",
    "ExtrapolationError",
    "correlation_factor",
    "validate_correlation",
    "hw_b",
    "fit_theta",
    "simulate",
    "simulate_block",
    "simulate_from",
    "iter_blocks",
    "map_blocks",
    "write_paths_csv",
]

C_DOM, C_FOR, Y, FX = range(4)
T = TypeVar("T")


class ExtrapolationError(ValueError):
    """Simulation horizon runs past the calibrated end of a curve."""


@dataclass(frozen=True)
class HullWhiteParams:
    """Mean reversion ``kappa`` (1/yr), absolute volatility ``sigma`` and,
    once fitted, the drift ``theta`` on the simulation grid."""

    kappa: float
    sigma: float
    theta: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.kappa < 0 or self.sigma < 0:
            raise ValueError("kappa and sigma must be nonnegative")
        if self.theta is not None and not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")


@dataclass(frozen=True)
class SimulationConfig:
    n_paths: int = 10_000
    steps_per_year: int = 52
    horizon: float = 10.0
    seed: int = 20101130
    block_size: int = 2_000
    allow_extrapolation: bool = False

    def __post_init__(self) -> None:
        if self.n_paths < 1 or self.steps_per_year < 1 or self.block_size < 1:
            raise ValueError("path, step and block counts must be >= 1")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        steps = self.horizon * self.steps_per_year
        if abs(steps - round(steps)) > 1e-6:
            raise ValueError("horizon must be a whole number of simulation steps")

    @property
    def dt(self) -> float:
        return 1.0 / self.steps_per_year

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon * self.steps_per_year))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def n_blocks(self) -> int:
        return -(-self.n_paths // self.block_size)


def hw_b(kappa: float, tau):
    """``(1 - exp(-kappa tau)) / kappa`` with the ``kappa -> 0`` limit."""
    tau = np.asarray(tau, dtype=float)
    if kappa == 0.0:
        return tau
    return -np.expm1(-kappa * tau) / kappa


def validate_correlation(rho) -> np.ndarray:
    rho = np.array(rho, dtype=float)
    if rho.shape != (4, 4):
        raise ValueError("correlation must be 4x4")
    if not np.allclose(rho, rho.T, atol=1e-12):
        raise ValueError("correlation must be symmetric")
    if not np.allclose(np.diag(rho), 1.0):
        raise ValueError("correlation must have unit diagonal")
    if np.any(np.abs(np.delete(rho[Y], Y)) > 0.0):
        raise ValueError("the funding spread must be uncorrelated with the other factors")
    if np.linalg.eigvalsh(rho).min() < -1e-10:
        raise ValueError("correlation matrix is not positive semidefinite")
    rho.setflags(write=False)
    return rho


def correlation_factor(rho) -> np.ndarray:
    """Matrix ``L`` with ``L L^T = rho``; works for singular PSD matrices."""
    rho = validate_correlation(rho)
    w, v = np.linalg.eigh(rho)
    return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class FactorFit:
    """One fitted rate factor on the simulation grid.

    ``bond(k, n, x)`` is the discrete-model conditional expectation of
    ``exp(-int_{t_k}^{t_n} r)`` given the deviation ``x`` at step ``k``.
    """

    params: HullWhiteParams
    curve: TermStructure
    times: np.ndarray
    mean: np.ndarray  # phi(t_k)
    step_integral: np.ndarray  # deterministic part of int over step k
    log_discount: np.ndarray  # -ln D(0, t_k)
    slope: np.ndarray  # d(int over m steps)/dx_start
    variance: np.ndarray  # Var(int over m steps | x_start)
    quanto: float = 0.0

    @classmethod
    def build(
        cls, curve: TermStructure, params: HullWhiteParams, times: np.ndarray, quanto: float = 0.0
    ) -> "FactorFit":
        h = times[1] - times[0]
        n = times.size - 1
        kappa, sigma = params.kappa, params.sigma
        b = 1.0 - kappa * h
        s2 = sigma * sigma * h
        var_x = np.zeros(n + 1)
        cov = np.zeros(n + 1)
        var_s = np.zeros(n + 1)
        for k in range(n):
            var_s[k + 1] = (
                var_s[k]
                + 0.25 * h * h * ((1.0 + b) ** 2 * var_x[k] + s2)
                + h * (1.0 + b) * cov[k]
            )
            cov[k + 1] = b * cov[k] + 0.5 * h * b * (1.0 + b) * var_x[k] + 0.5 * h * s2
            var_x[k + 1] = b * b * var_x[k] + s2
        powers = b ** np.arange(n + 1)
        slope = np.concatenate(([0.0], 0.5 * h * np.cumsum(powers[:-1] + powers[1:])))
        log_discount = curve.integral(times)
        step_integral = np.diff(log_discount) + 0.5 * np.diff(var_s)
        mean = curve.forward(times) + 0.5 * sigma * sigma * hw_b(kappa, times) ** 2
        theta = np.empty(n + 1)
        theta[:-1] = np.diff(mean) / h + kappa * mean[:-1]
        theta[-1] = theta[-2] if n > 0 else kappa * mean[-1]
        for arr in (mean, step_integral, log_discount, slope, var_s):
            arr.setflags(write=False)
        return cls(
            HullWhiteParams(kappa, sigma, theta),
            curve,
            times,
            mean,
            step_integral,
            log_discount,
            slope,
            var_s,
            quanto,
        )

    def log_bond(self, k: int, n, x):
        """``ln E[exp(-int_{t_k}^{t_n} r) | x_k = x]`` (``n >= k``)."""
        n = np.asarray(n)
        m = n - k
        base = -(self.log_discount[n] - self.log_discount[k]) - 0.5 * (
            self.variance[n] - self.variance[k]
        ) + 0.5 * self.variance[m]
        x = np.asarray(x, dtype=float)
        return base - np.multiply.outer(x, self.slope[m]) if x.ndim else base - self.slope[m] * x

    def bond(self, k: int, n, x):
        return np.exp(self.log_bond(k, n, x))


@dataclass(frozen=True, eq=False)
class FittedDynamics:
    model: "MarketModel"
    config: SimulationConfig
    c_dom: FactorFit
    c_for: FactorFit
    y: FactorFit
    chol: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.c_dom.times

    @property
    def dt(self) -> float:
        return self.config.dt

    def index_of(self, t: float) -> int:
        k = int(round(t * self.config.steps_per_year))
        if k < 0 or k >= self.times.size or abs(self.times[k] - t) > 1e-9:
            raise ValueError(f"time {t} is not on the simulation grid")
        return k


def fit_theta(model: "MarketModel", config: SimulationConfig) -> FittedDynamics:
    """Fit every factor's drift to its initial curve on ``config``'s grid.

    Raises:
        ExtrapolationError: If a curve's calibrated end precedes the horizon
            and ``config.allow_extrapolation`` is off.
    """
    curves = {
        "domestic collateral": model.collateral[model.domestic],
        "foreign collateral": model.collateral[model.foreign],
        "funding spread": model.spread(model.domestic, model.foreign),
    }
    if not config.allow_extrapolation:
        for name, curve in curves.items():
            if not curve.covers(config.horizon):
                raise ExtrapolationError(
                    f"{name} curve ends at {curve.end}y, before the {config.horizon}y horizon"
                )
    times = config.times
    quanto = -model.correlation[C_FOR, FX] * model.c_for.sigma * model.sigma_fx
    return FittedDynamics(
        model=model,
        config=config,
        c_dom=FactorFit.build(curves["domestic collateral"], model.c_dom, times),
        c_for=FactorFit.build(curves["foreign collateral"], model.c_for, times, quanto),
        y=FactorFit.build(curves["funding spread"], model.y, times),
        chol=correlation_factor(model.correlation),
    )


@dataclass(frozen=True, eq=False)
class PathSet:
    """Simulated trajectories, shape ``(n_paths, n_times)`` per field.

    Accumulated integrals are measured from ``times[0]``.  ``start_index``
    locates ``times[0]`` on the fitted grid.
    """

    dynamics: FittedDynamics
    start_index: int
    times: np.ndarray
    c_dom: np.ndarray
    c_for: np.ndarray
    y: np.ndarray
    log_fx: np.ndarray
    int_c_dom: np.ndarray
    int_c_for: np.ndarray
    int_y: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.c_dom.shape[0]

    @cached_property
    def x_dom(self) -> np.ndarray:
        return self.c_dom - self.dynamics.c_dom.mean[self.start_index :]

    @cached_property
    def x_y(self) -> np.ndarray:
        return self.y - self.dynamics.y.mean[self.start_index :]

    def local(self, t: float) -> int:
        return self.dynamics.index_of(t) - self.start_index


def _evolve(fit: FactorFit, x0, noise: np.ndarray, k0: int):
    """Deviation path and accumulated integral for one factor."""
    h = fit.times[1] - fit.times[0]
    b = 1.0 - fit.params.kappa * h
    n_paths, n = noise.shape
    drive = np.empty((n_paths, n + 1))
    drive[:, 0] = x0
    drive[:, 1:] = fit.quanto * h + fit.params.sigma * math.sqrt(h) * noise
    x = lfilter([1.0], [1.0, -b], drive, axis=1)
    steps = fit.step_integral[k0 : k0 + n] + 0.5 * h * (x[:, :-1] + x[:, 1:])
    integral = np.zeros_like(x)
    np.cumsum(steps, axis=1, out=integral[:, 1:])
    return x + fit.mean[k0 : k0 + n + 1], integral


def _run(
    dyn: FittedDynamics,
    n_paths: int,
    rng: np.random.Generator,
    k0: int = 0,
    x0: Sequence[float] = (0.0, 0.0, 0.0),
    log_fx0: float | None = None,
) -> PathSet:
    n = dyn.times.size - 1 - k0
    if n < 1:
        raise ValueError("nothing to simulate past the start index")
    eps = rng.standard_normal((4, n_paths, n))
    z = np.tensordot(dyn.chol, eps, axes=1)
    del eps
    c_dom, i_dom = _evolve(dyn.c_dom, x0[0], z[C_DOM], k0)
    c_for, i_for = _evolve(dyn.c_for, x0[1], z[C_FOR], k0)
    y, i_y = _evolve(dyn.y, x0[2], z[Y], k0)
    sx = dyn.model.sigma_fx
    h = dyn.dt
    l0 = math.log(dyn.model.fx_spot) if log_fx0 is None else log_fx0
    shocks = np.zeros((n_paths, n + 1))
    np.cumsum(sx * math.sqrt(h) * z[FX], axis=1, out=shocks[:, 1:])
    log_fx = l0 + i_dom - i_for + i_y - 0.5 * sx * sx * h * np.arange(n + 1) + shocks
    return PathSet(dyn, k0, dyn.times[k0:], c_dom, c_for, y, log_fx, i_dom, i_for, i_y)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    # Philox is counter-based: jumping gives disjoint substreams per block.
    return np.random.Generator(np.random.Philox(key=seed).jumped(block))


def simulate_block(dyn: FittedDynamics, block: int) -> PathSet:
    cfg = dyn.config
    if not 0 <= block < cfg.n_blocks:
        raise IndexError(f"block {block} out of range")
    size = min(cfg.block_size, cfg.n_paths - block * cfg.block_size)
    return _run(dyn, size, _block_rng(cfg.seed, block))


def iter_blocks(dyn: FittedDynamics) -> Iterator[PathSet]:
    for block in range(dyn.config.n_blocks):
        yield simulate_block(dyn, block)


def map_blocks(dyn: FittedDynamics, fn: Callable[[PathSet], T], threads: int = 1) -> list[T]:
    """Apply ``fn`` to every path block; results come back in block order so
    reductions do not depend on ``threads``."""
    blocks = range(dyn.config.n_blocks)
    if threads <= 1:
        return [fn(simulate_block(dyn, b)) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(simulate_block(dyn, b)), blocks))


def _concat(parts: list[PathSet]) -> PathSet:
    first = parts[0]
    names = ("c_dom", "c_for", "y", "log_fx", "int_c_dom", "int_c_for", "int_y")
    arrays = {n: np.concatenate([getattr(p, n) for p in parts]) for n in names}
    return PathSet(first.dynamics, first.start_index, first.times, **arrays)


def simulate(model: "MarketModel", config: SimulationConfig) -> PathSet:
    """All paths in memory at once; use :func:`map_blocks` for large runs."""
    dyn = fit_theta(model, config)
    return _concat(list(iter_blocks(dyn)))


def simulate_from(
    dyn: FittedDynamics,
    start_index: int,
    state: Sequence[float],
    n_paths: int,
    seed: int,
) -> PathSet:
    """Inner paths restarted from ``state = (c_dom, c_for, y, log_fx)`` at
    grid step ``start_index``; integrals restart at zero."""
    k = start_index
    x0 = (
        state[0] - dyn.c_dom.mean[k],
        state[1] - dyn.c_for.mean[k],
        state[2] - dyn.y.mean[k],
    )
    rng = np.random.Generator(np.random.Philox(key=seed))
    return _run(dyn, n_paths, rng, k, x0, state[3])


def write_paths_csv(path: str | Path, paths: PathSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "time", "c_dom", "c_for", "y", "log_fx"])
        for p in range(paths.n_paths):
            for k, t in enumerate(paths.times):
                writer.writerow(
                    [p, f"{t:.10g}", paths.c_dom[p, k], paths.c_for[p, k], paths.y[p, k], paths.log_fx[p, k]]
                )
