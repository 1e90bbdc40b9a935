"""Finite-difference oracle for the continuous-coupon MtMCCOIS.

With a deterministic domestic collateral rate ``c`` and a Hull-White funding
spread ``y = y^(dom, for)``, the pre-default value ``V(t, y)`` of a swap
paying ``w (y - B)`` continuously solves::

    V_t + L V - R(t, y, V) V + sum_k w_k (y - B_k) 1{t < T_k} = 0,  V(T) = 0

where ``L`` is the Hull-White generator and ``R`` is the effective discount
rate of whichever party posts collateral: ``c + max_{k in C_p} y^(dom,k)``
with ``C_p`` the party's eligible currencies (party 1 when ``V < 0``,
party 2 otherwise).

The grid is uniform in the deviation ``x = y - phi(t)`` from the fitted
mean, so drift terms carry no curve shape.  Time stepping is Crank-Nicolson
with the reaction indicator first taken from the previous level and then
re-solved by policy iteration until the sign pattern is stable.  Boundary
values come from the closed form of the regime that holds at each edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .curves import TermStructure
from .dynamics import hw_b
from .market import MarketModel

__all__ = [
    "ContinuousMtMCCOIS",
    "PDEGrid",
    "PDESolution",
    "PDEConvergenceError",
    "SpreadFactor",
    "continuous_par_spread",
    "clean_value_continuous",
    "regime_value",
    "solve_nonlinear_pde",
    "gateaux_vs_pde_report",
    "GateauxRow",
]

MAX_POLICY_ITERATIONS = 10


class PDEConvergenceError(RuntimeError):
    """The reaction-term sign pattern did not settle within the iteration cap."""


@dataclass(frozen=True)
class ContinuousMtMCCOIS:
    """Swap paying ``w (y - B)`` continuously until ``maturity``.

    ``side`` is from the basis-spread payer's view (``w = +notional``);
    the receiver has ``w = -notional``.
    """

    spread: float
    maturity: float
    side: str = "payer"
    notional: float = 1.0

    def __post_init__(self) -> None:
        if self.side not in ("payer", "receiver"):
            raise ValueError("side must be 'payer' or 'receiver'")
        if self.maturity <= 0:
            raise ValueError("maturity must be positive")

    @property
    def weight(self) -> float:
        return self.notional if self.side == "payer" else -self.notional


Portfolio = Sequence[ContinuousMtMCCOIS]


def _legs(contract) -> list[ContinuousMtMCCOIS]:
    legs = [contract] if isinstance(contract, ContinuousMtMCCOIS) else list(contract)
    if not legs:
        raise ValueError("empty portfolio")
    return legs


@dataclass(frozen=True, eq=False)
class SpreadFactor:
    """Continuous Hull-White spread factor plus the deterministic collateral curve."""

    collateral: TermStructure
    curve: TermStructure
    kappa: float
    sigma: float

    @classmethod
    def from_model(cls, model: MarketModel) -> "SpreadFactor":
        return cls(
            model.collateral[model.domestic],
            model.spread(model.domestic, model.foreign),
            model.y.kappa,
            model.y.sigma,
        )

    def phi(self, t):
        return self.curve.forward(t) + 0.5 * self.sigma**2 * hw_b(self.kappa, t) ** 2

    def sd(self, t: float) -> float:
        """Standard deviation of ``x_t``."""
        if self.kappa == 0.0:
            return self.sigma * math.sqrt(t)
        return self.sigma * math.sqrt(-math.expm1(-2.0 * self.kappa * t) / (2.0 * self.kappa))

    def breakpoints(self) -> np.ndarray:
        return np.union1d(self.collateral.tenors, self.curve.tenors)

    def log_bond(self, t: float, s: np.ndarray, x):
        """``ln Y(t, s)`` for deviation ``x`` (broadcast ``x[..., None]`` against ``s``)."""
        b = hw_b(self.kappa, s - t)
        v = self.sd(t) ** 2
        shift = 0.5 * self.sigma**2 * float(hw_b(self.kappa, t)) ** 2
        base = -(self.curve.integral(s) - self.curve.integral(t))
        return base - b * (x + shift) - 0.5 * v * b * b

    def bond_forward(self, t: float, s: np.ndarray, x):
        """``-d/ds ln Y(t, s)``."""
        b = hw_b(self.kappa, s - t)
        db = np.exp(-self.kappa * (s - t))
        v = self.sd(t) ** 2
        shift = 0.5 * self.sigma**2 * float(hw_b(self.kappa, t)) ** 2
        return self.curve.forward(s) + db * (x + shift) + v * b * db

    def mean(self, t: float, s: np.ndarray, x):
        """``E[y_s | x_t = x]``."""
        return self.phi(s) + x * np.exp(-self.kappa * (s - t))


def _gauss_nodes(a: float, b: float, breaks: np.ndarray, order: int, max_piece: float):
    if b <= a:
        return np.empty(0), np.empty(0)
    cuts = np.concatenate(([a], breaks[(breaks > a) & (breaks < b)], [b]))
    gx, gw = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        m = max(1, int(math.ceil((hi - lo) / max_piece - 1e-12)))
        edges = np.linspace(lo, hi, m + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes.append((mid[:, None] + half[:, None] * gx).ravel())
        weights.append((half[:, None] * gw).ravel())
    return np.concatenate(nodes), np.concatenate(weights)


def regime_value(
    factor: SpreadFactor,
    legs: Portfolio,
    t: float,
    x,
    with_spread: bool,
    order: int = 8,
    max_piece: float = 0.25,
) -> np.ndarray:
    """Value at ``(t, x)`` when the discount rate stays ``c`` (``with_spread``
    False) or ``c + y`` (True) for the rest of the trade.

    With ``c + y``::

        sum_k w_k int_t^{T_k} D(t,s) Y(t,s) (F(t,s) - B_k) ds,   F = -d ln Y / ds

    With ``c`` alone the spread term is the conditional mean of ``y_s``.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    breaks = factor.breakpoints()
    for leg in _legs(legs):
        s, w = _gauss_nodes(t, leg.maturity, breaks, order, max_piece)
        if s.size == 0:
            continue
        disc = np.exp(-(factor.collateral.integral(s) - factor.collateral.integral(t)))
        xx = x[..., None]
        if with_spread:
            y_bond = np.exp(factor.log_bond(t, s, xx))
            integrand = disc * y_bond * (factor.bond_forward(t, s, xx) - leg.spread)
        else:
            integrand = disc * (factor.mean(t, s, xx) - leg.spread)
        out = out + leg.weight * np.sum(integrand * w, axis=-1)
    return out


def clean_value_continuous(model: MarketModel, contract, t: float, x) -> np.ndarray:
    """Perfectly collateralized value in the foreign currency (discount ``c + y``)."""
    return regime_value(SpreadFactor.from_model(model), _legs(contract), t, x, True)


def continuous_par_spread(model: MarketModel, maturity: float) -> float:
    """Spread that zeroes the clean value at time 0."""
    factor = SpreadFactor.from_model(model)
    s, w = _gauss_nodes(0.0, maturity, factor.breakpoints(), 8, 0.25)
    dy = np.exp(-factor.collateral.integral(s) + factor.log_bond(0.0, s, 0.0))
    return float(np.sum(w * dy * factor.bond_forward(0.0, s, 0.0)) / np.sum(w * dy))


@dataclass(frozen=True)
class PDEGrid:
    """Uniform grid in ``x = y - phi(t)`` on ``[-M, M]``.

    ``M`` is ``n_std`` standard deviations of ``x`` at the horizon (at least
    ``min_width``) unless ``width`` is given.  ``n_space`` is forced odd so
    a node sits at ``x = 0``.
    """

    n_space: int = 401
    steps_per_year: int = 100
    n_std: float = 6.0
    width: float | None = None
    min_width: float = 0.01

    def __post_init__(self) -> None:
        if self.n_space < 3 or self.steps_per_year < 1:
            raise ValueError("grid counts must be >= 3 in space and >= 1 per year in time")
        if self.n_space % 2 == 0:
            object.__setattr__(self, "n_space", self.n_space + 1)

    def half_width(self, factor: SpreadFactor, horizon: float) -> float:
        if self.width is not None:
            return self.width
        return max(self.n_std * factor.sd(horizon), self.min_width)

    def coarsened(self) -> "PDEGrid":
        return PDEGrid((self.n_space - 1) // 2 + 1, max(1, self.steps_per_year // 2), self.n_std, self.width, self.min_width)

    def refined(self) -> "PDEGrid":
        return PDEGrid(2 * (self.n_space - 1) + 1, 2 * self.steps_per_year, self.n_std, self.width, self.min_width)


@dataclass(frozen=True, eq=False)
class PDESolution:
    times: np.ndarray
    x: np.ndarray
    phi: np.ndarray  # fitted mean of y at each time
    values: np.ndarray  # (n_times, n_space)
    iterations: int  # worst policy-iteration count over the steps
    warnings: tuple[str, ...] = field(default=())

    @property
    def value(self) -> float:
        """``V(0, y0)`` with ``y0`` the initial spread."""
        return float(self.values[0, self.x.size // 2])

    def y_grid(self, n: int = 0) -> np.ndarray:
        return self.x + self.phi[n]

    def at(self, y0: float, n: int = 0) -> float:
        """Cubic-spline interpolation of ``V(t_n, y)``."""
        y = self.y_grid(n)
        if not y[0] <= y0 <= y[-1]:
            raise ValueError(f"y0 = {y0} is outside the grid [{y[0]:.4g}, {y[-1]:.4g}]")
        return float(CubicSpline(y, self.values[n])(y0))


def _time_grid(legs: Portfolio, steps_per_year: int, breaks: np.ndarray) -> np.ndarray:
    """Uniform-ish steps that land on every maturity and curve pillar."""
    horizon = max(leg.maturity for leg in legs)
    stops = sorted({0.0, *(leg.maturity for leg in legs), *(b for b in breaks if 0.0 < b < horizon)})
    parts = [np.array([0.0])]
    for a, b in zip(stops[:-1], stops[1:]):
        m = max(1, int(math.ceil((b - a) * steps_per_year - 1e-9)))
        parts.append(np.linspace(a, b, m + 1)[1:])
    return np.concatenate(parts)


def _rate(factor: SpreadFactor, domestic: str, eligible: frozenset[str], c: float, y: np.ndarray):
    """``c + max_{k in eligible} y^(dom, k)`` with ``y^(dom, dom) = 0``."""
    if not eligible:
        raise ValueError("each party needs at least one eligible currency")
    spreads = [np.zeros_like(y) if k == domestic else y for k in eligible]
    return c + np.max(spreads, axis=0)


def _edge_uses_spread(eligible: frozenset[str], domestic: str, foreign: str, upper: bool) -> bool:
    """Whether the cheapest-to-deliver rate is ``c + y`` at a far edge."""
    has_dom, has_for = domestic in eligible, foreign in eligible
    if upper:
        return has_for
    return not has_dom


def solve_nonlinear_pde(
    model: MarketModel,
    contract,
    grid: PDEGrid | None = None,
    party1_eligible: Iterable[str] | None = None,
    party2_eligible: Iterable[str] | None = None,
    symmetric: bool = False,
) -> PDESolution:
    """Backward solve from ``V(T) = 0``.

    Defaults follow the asymmetric cross-currency setup: party 1 may post
    either currency, party 2 only the foreign one.  ``symmetric=True``
    replaces the reaction rate by ``c + y`` everywhere, which reproduces the
    clean value.
    """
    grid = PDEGrid() if grid is None else grid
    legs = _legs(contract)
    dom, fgn = model.domestic, model.foreign
    e1 = frozenset({dom, fgn}) if party1_eligible is None else frozenset(party1_eligible)
    e2 = frozenset({fgn}) if party2_eligible is None else frozenset(party2_eligible)
    if symmetric:
        e1 = e2 = frozenset({fgn})
    for e in (e1, e2):
        if not e or not e <= set(model.currencies):
            raise ValueError(f"eligible set {sorted(e)} must be a nonempty subset of {model.currencies}")
    factor = SpreadFactor.from_model(model)
    horizon = max(leg.maturity for leg in legs)
    for curve, name in ((factor.collateral, "collateral"), (factor.curve, "spread")):
        if not curve.covers(horizon):
            raise ValueError(f"{name} curve ends before {horizon}y")

    M = grid.half_width(factor, horizon)
    n = grid.n_space
    x = np.linspace(-M, M, n)
    dx = x[1] - x[0]
    times = _time_grid(legs, grid.steps_per_year, factor.breakpoints())
    phi = np.asarray(factor.phi(times), dtype=float)
    # forwards are flat inside each step; sample them at the midpoint so
    # both ends of a step see the same piece
    mids = 0.5 * (times[1:] + times[:-1])
    f_mid = np.asarray(factor.curve.forward(mids), dtype=float)
    c_mid = np.asarray(factor.collateral.forward(mids), dtype=float)
    smooth = phi - np.asarray(factor.curve.forward(times), dtype=float)
    kappa, sigma = factor.kappa, factor.sigma
    warnings: list[str] = []

    # generator coefficients for interior nodes; upwind where central
    # differences would lose monotonicity
    drift = -kappa * x[1:-1]
    diff = 0.5 * sigma * sigma / dx**2
    central = sigma * sigma >= np.abs(drift) * dx
    lower = np.where(central, diff - drift / (2 * dx), diff + np.maximum(-drift, 0.0) / dx)
    upper = np.where(central, diff + drift / (2 * dx), diff + np.maximum(drift, 0.0) / dx)
    mid = -(lower + upper)
    if not np.all(central):
        warnings.append(f"upwind drift used at {int(np.sum(~central))} nodes (low volatility)")

    edge_spread = {
        (p, up): _edge_uses_spread(e, dom, fgn, up) for p, e in ((1, e1), (2, e2)) for up in (False, True)
    }

    def boundary(k: int) -> tuple[float, float]:
        out = []
        for up, xe in ((False, x[0]), (True, x[-1])):
            v1 = float(regime_value(factor, legs, times[k], xe, edge_spread[(1, up)]))
            v2 = float(regime_value(factor, legs, times[k], xe, edge_spread[(2, up)]))
            if v1 < 0:
                out.append(v1)
            elif v2 >= 0:
                out.append(v2)
            else:
                out.append(0.5 * (v1 + v2))
                msg = "boundary regime inconsistent; widen the grid"
                if msg not in warnings:
                    warnings.append(msg)
        return out[0], out[1]

    def coupon(y: np.ndarray, active: list[ContinuousMtMCCOIS]) -> np.ndarray:
        return sum((leg.weight * (y - leg.spread) for leg in active), np.zeros(n))

    def reaction(c: float, y: np.ndarray, negative: np.ndarray) -> np.ndarray:
        return np.where(negative, _rate(factor, dom, e1, c, y), _rate(factor, dom, e2, c, y))

    values = np.zeros((times.size, n))
    values[-1] = 0.0
    worst = 0
    theta = 0.5
    for k in range(times.size - 2, -1, -1):
        dt = times[k + 1] - times[k]
        active = [leg for leg in legs if leg.maturity > times[k] + 1e-12]
        v_next = values[k + 1]
        y_now = x + f_mid[k] + smooth[k]
        y_next = x + f_mid[k] + smooth[k + 1]
        src = dt * (theta * coupon(y_now, active) + (1 - theta) * coupon(y_next, active))
        r_next = reaction(c_mid[k], y_next, v_next < 0)
        rhs = v_next.copy()
        rhs[1:-1] += (1 - theta) * dt * (
            lower * v_next[:-2] + mid * v_next[1:-1] + upper * v_next[2:] - r_next[1:-1] * v_next[1:-1]
        )
        rhs += src
        lo_b, hi_b = boundary(k)
        rhs[0], rhs[-1] = lo_b, hi_b
        signs = v_next < 0
        for it in range(1, MAX_POLICY_ITERATIONS + 1):
            r_now = reaction(c_mid[k], y_now, signs)
            ab = np.zeros((3, n))
            ab[1, 0] = ab[1, -1] = 1.0
            ab[1, 1:-1] = 1.0 - theta * dt * (mid - r_now[1:-1])
            ab[0, 2:] = -theta * dt * upper
            ab[2, :-2] = -theta * dt * lower
            v = solve_banded((1, 1), ab, rhs)
            new_signs = v < 0
            if np.array_equal(new_signs, signs):
                break
            signs = new_signs
        else:
            raise PDEConvergenceError(f"reaction sign pattern unsettled at t = {times[k]:.6g}")
        worst = max(worst, it)
        values[k] = v
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite PDE solution")
    return PDESolution(times, x, phi, values, worst, tuple(warnings))


# ---------------------------------------------------------------------------
# comparison with the first-order expansion


@dataclass(frozen=True)
class GateauxRow:
    sigma_y: float
    side: str
    pde_minus_clean: float
    gateaux: float
    gateaux_stderr: float

    @property
    def discrepancy(self) -> float:
        return self.pde_minus_clean - self.gateaux


def _gateaux_mc(model, contract, e1, e2, n_paths, steps_per_year, seed, threads, table_points=801):
    """Monte Carlo first-order correction around the ``c + y`` benchmark.

    Clean values on paths come from the closed form tabulated in ``x`` at
    every simulation date and interpolated linearly.
    """
    from .adjustments import Estimate, gateaux_core
    from .dynamics import SimulationConfig, fit_theta, map_blocks

    legs = _legs(contract)
    horizon = max(leg.maturity for leg in legs)
    cfg = SimulationConfig(
        n_paths=n_paths,
        steps_per_year=steps_per_year,
        horizon=horizon,
        seed=seed,
        block_size=min(n_paths, 5_000),
    )
    dyn = fit_theta(model, cfg)
    factor = SpreadFactor.from_model(model)
    width = max(8.0 * factor.sd(horizon), 0.02)
    xs = np.linspace(-width, width, table_points)
    table = np.array([clean_value_continuous(model, legs, t, xs) for t in dyn.times])
    dom = model.domestic

    def block(paths):
        xdev = paths.x_y
        clean = np.empty_like(xdev)
        for k in range(xdev.shape[1]):
            clean[:, k] = np.interp(xdev[:, k], xs, table[k])
        disc = np.exp(-paths.int_c_dom - paths.int_y)
        y = paths.y
        bench = y
        d1 = bench - np.max([np.zeros_like(y) if k == dom else y for k in e1], axis=0)
        d2 = bench - np.max([np.zeros_like(y) if k == dom else y for k in e2], axis=0)
        return Estimate.from_samples(gateaux_core(paths.times, disc, clean, d1, d2))

    return Estimate.combine(map_blocks(dyn, block, threads))


def gateaux_vs_pde_report(
    model: MarketModel,
    spread: float | None,
    sigmas: Sequence[float],
    side: str = "payer",
    maturity: float = 10.0,
    grid: PDEGrid | None = None,
    n_paths: int = 20_000,
    steps_per_year: int = 52,
    seed: int = 20101130,
    threads: int = 1,
    party1_eligible: Iterable[str] | None = None,
    party2_eligible: Iterable[str] | None = None,
) -> list[GateauxRow]:
    """Compare the PDE price shift with the first-order expansion.

    ``pde_minus_clean`` is the nonlinear solve minus the symmetric solve on
    the same grid, so discretization error largely cancels.  The collateral
    rate is frozen at its forward curve in both methods.  ``spread=None``
    uses the continuous par spread.
    """
    grid = PDEGrid() if grid is None else grid
    dom, fgn = model.domestic, model.foreign
    e1 = frozenset({dom, fgn}) if party1_eligible is None else frozenset(party1_eligible)
    e2 = frozenset({fgn}) if party2_eligible is None else frozenset(party2_eligible)
    rows = []
    for sig in sigmas:
        m = model.with_vols(sigma_y=sig, sigma_c=0.0)
        B = continuous_par_spread(m, maturity) if spread is None else spread
        contract = ContinuousMtMCCOIS(B, maturity, side)
        v_nl = solve_nonlinear_pde(m, contract, grid, e1, e2).value
        v_sym = solve_nonlinear_pde(m, contract, grid, symmetric=True).value
        est = _gateaux_mc(m, contract, e1, e2, n_paths, steps_per_year, seed, threads)
        rows.append(GateauxRow(sig, side, v_nl - v_sym, est.mean, est.stderr))
    return rows
