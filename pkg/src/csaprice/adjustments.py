"""Collateral cost (CCA) and credit (CVA) adjustments.

The pre-default value under imperfect or asymmetric collateral discounts at
``r - mu(t, V)``.  Expanding to first order around a symmetric, perfectly
collateralized benchmark with spread ``ybar`` gives::

    V ~ Vbar + CCA + CVA
    CCA + CVA = E int exp(-int (r - ybar)) Vbar_s
                (dy1_s 1{Vbar_s < 0} + dy2_s 1{Vbar_s >= 0}) ds

where ``dy^p = ytilde^p - ybar``.  CCA collects the collateral-cost part
``delta^p y^p - ybar`` and CVA the default part.  Everything here is linear
in ``dy`` by construction.

Funding spreads ``y^(k)`` follow the anchor convention of the market model;
a party's spread is the cheapest-to-deliver choice over its eligible
currencies, ``min_k y^(k)``, and the benchmark is the same over its set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .curves import TermStructure
from .dynamics import FittedDynamics, PathSet, map_blocks
from .instruments import InstrumentSpec, MtMCCOISSpec, OISSpec, clean_price, clean_values

__all__ = [
    "Estimate",
    "PartyTerms",
    "CollateralTerms",
    "EffectiveSpread",
    "AdjustedPrice",
    "effective_spreads",
    "mu_effective",
    "mu_threshold",
    "trapezoid",
    "gateaux_core",
    "cca_cva_core",
    "threshold_core",
    "funding_on_path",
    "benchmark_discount",
    "cca_generic",
    "cva_generic",
    "cca_asym_mtmccois",
    "cca_asym_ois",
    "cca_cva_threshold",
    "one_way_csa",
    "asym_mtmccois_terms",
    "asym_ois_terms",
    "price_adjustments",
    "netting_inequality_check",
    "NettingReport",
]

TimeFunction = float | TermStructure


def _on(value: TimeFunction, times: np.ndarray) -> np.ndarray:
    if isinstance(value, TermStructure):
        return np.asarray(value.forward(times), dtype=float)
    return np.full(np.shape(times), float(value))


@dataclass(frozen=True)
class Estimate:
    """Streaming sample mean with Chan/Welford merging."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def from_samples(cls, values) -> "Estimate":
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            return cls()
        mean = float(values.mean())
        return cls(values.size, mean, float(np.sum((values - mean) ** 2)))

    def merge(self, other: "Estimate") -> "Estimate":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return Estimate(n, mean, m2)

    @classmethod
    def combine(cls, parts: Iterable["Estimate"]) -> "Estimate":
        out = cls()
        for p in parts:
            out = out.merge(p)
        return out

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n > 1 else 0.0

    def __float__(self) -> float:
        return self.mean


@dataclass(frozen=True)
class PartyTerms:
    """One party's side of the CSA.

    ``coverage`` is the collateralized fraction of the exposure; ``hazard``
    and ``recovery`` describe the party's own default; ``threshold`` is the
    uncollateralized band (threshold agreements only).  Time-dependent
    quantities may be given as piecewise-flat curves.
    """

    eligible: frozenset[str]
    coverage: TimeFunction = 1.0
    recovery: TimeFunction = 0.4
    hazard: TimeFunction = 0.0
    threshold: TimeFunction = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "eligible", frozenset(self.eligible))
        for name in ("coverage", "hazard", "threshold"):
            v = getattr(self, name)
            lo = np.min(v.rates) if isinstance(v, TermStructure) else v
            if lo < 0:
                raise ValueError(f"{name} must be nonnegative")
        r = self.recovery
        rs = r.rates if isinstance(r, TermStructure) else np.array([r])
        if np.any(rs < 0) or np.any(rs > 1):
            raise ValueError("recovery must lie in [0, 1]")


@dataclass(frozen=True)
class CollateralTerms:
    party1: PartyTerms
    party2: PartyTerms

    def __post_init__(self) -> None:
        for p in (self.party1, self.party2):
            if not p.eligible and _positive(p.coverage):
                raise ValueError("a party that posts collateral needs an eligible currency")

    @classmethod
    def symmetric(cls, currency: str, **kw) -> "CollateralTerms":
        p = PartyTerms(frozenset({currency}), **kw)
        return cls(p, p)

    def with_parties(self, **changes) -> "CollateralTerms":
        p1 = replace(self.party1, **{k[:-1]: v for k, v in changes.items() if k.endswith("1")})
        p2 = replace(self.party2, **{k[:-1]: v for k, v in changes.items() if k.endswith("2")})
        return CollateralTerms(p1, p2)


def _positive(value: TimeFunction) -> bool:
    return bool(np.max(value.rates) > 0) if isinstance(value, TermStructure) else value > 0


@dataclass(frozen=True)
class EffectiveSpread:
    """``ytilde^p = delta^p y^p - (1-R^p)(1-delta^p)^+ h^p + (1-R^q)(delta^p-1)^+ h^q``
    for each party, the benchmark ``ybar`` and the deltas ``dy^p = ytilde^p - ybar``."""

    ytilde1: np.ndarray
    ytilde2: np.ndarray
    ybar: np.ndarray
    dy1: np.ndarray
    dy2: np.ndarray


def _parties(terms: CollateralTerms, t):
    t = np.asarray(t, dtype=float)
    p1, p2 = terms.party1, terms.party2
    d1, d2 = _on(p1.coverage, t), _on(p2.coverage, t)
    l1 = (1.0 - _on(p1.recovery, t)) * _on(p1.hazard, t)
    l2 = (1.0 - _on(p2.recovery, t)) * _on(p2.hazard, t)
    return d1, d2, l1, l2


def _credit_parts(terms: CollateralTerms, t):
    d1, d2, l1, l2 = _parties(terms, t)
    c1 = -l1 * np.maximum(1.0 - d1, 0.0) + l2 * np.maximum(d1 - 1.0, 0.0)
    c2 = -l2 * np.maximum(1.0 - d2, 0.0) + l1 * np.maximum(d2 - 1.0, 0.0)
    return d1, d2, c1, c2


def effective_spreads(terms: CollateralTerms, y1, y2, ybar, t) -> EffectiveSpread:
    d1, d2, c1, c2 = _credit_parts(terms, t)
    yt1 = d1 * y1 + c1
    yt2 = d2 * y2 + c2
    ybar = np.broadcast_to(np.asarray(ybar, dtype=float), np.broadcast(yt1, yt2).shape)
    return EffectiveSpread(yt1, yt2, ybar, yt1 - ybar, yt2 - ybar)


def mu_effective(terms: CollateralTerms, y1, y2, t, v):
    """``ytilde^1 1{v < 0} + ytilde^2 1{v >= 0}``; ``v = 0`` takes the second branch."""
    d1, d2, c1, c2 = _credit_parts(terms, t)
    return np.where(np.asarray(v) < 0, d1 * y1 + c1, d2 * y2 + c2)


def _ratio(num, v):
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(v != 0.0, num / np.where(v != 0.0, v, 1.0), 0.0)
    return out


def mu_threshold(terms: CollateralTerms, y1, y2, t, v):
    """Effective spread with thresholds ``Gamma^1, Gamma^2``.

    Inside ``[-Gamma^1, Gamma^2)`` no collateral is posted; beyond it only
    the excess over the threshold is collateralized.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    p1, p2 = terms.party1, terms.party2
    g1, g2 = _on(p1.threshold, t), _on(p2.threshold, t)
    _, _, l1, l2 = _parties(terms, t)
    neg_band = ((-g1 <= v) & (v < 0)).astype(float) - _ratio(g1, v) * (v < -g1)
    pos_band = ((0 <= v) & (v < g2)).astype(float) + _ratio(g2, v) * (v >= g2)
    return np.where(v < 0, y1, y2) - (y1 + l1) * neg_band - (y2 + l2) * pos_band


# ---------------------------------------------------------------------------
# estimator cores on arrays of shape (n_paths, n_times)


def trapezoid(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Trapezoid over the last axis."""
    h = np.diff(times)
    return np.sum(0.5 * h * (values[..., 1:] + values[..., :-1]), axis=-1)


def gateaux_core(times, discount, clean, dy1, dy2) -> np.ndarray:
    """Per-path ``int disc Vbar (dy1 1{Vbar<0} + dy2 1{Vbar>=0}) ds``."""
    clean = np.asarray(clean, dtype=float)
    rate = np.where(clean < 0, dy1, dy2)
    return trapezoid(times, discount * clean * rate)


def cca_cva_core(times, discount, clean, terms: CollateralTerms, y1, y2, ybar):
    """Per-path CCA and CVA integrals.

    ``y1``, ``y2``, ``ybar`` broadcast against ``clean``; ``terms`` supplies
    coverage, hazards and recoveries on ``times``.
    """
    d1, d2, c1, c2 = _credit_parts(terms, times)
    cca = gateaux_core(times, discount, clean, d1 * y1 - ybar, d2 * y2 - ybar)
    cva = gateaux_core(times, discount, clean, c1, c2)
    return cca, cva


def threshold_core(times, discount, clean, terms: CollateralTerms, y):
    """Per-path CCA and CVA under thresholds, both parties posting the deal
    currency whose spread is ``y`` (also the benchmark)."""
    clean = np.asarray(clean, dtype=float)
    p1, p2 = terms.party1, terms.party2
    g1, g2 = _on(p1.threshold, times), _on(p2.threshold, times)
    _, _, l1, l2 = _parties(terms, times)
    band = (-g1 <= clean) & (clean < g2)
    caps = g1 * (clean < -g1) - g2 * (clean >= g2)
    cca = trapezoid(times, discount * y * (caps - clean * band))
    own = clean * ((-g1 <= clean) & (clean < 0)) - g1 * (clean < -g1)
    other = clean * ((0 < clean) & (clean <= g2)) + g2 * (clean > g2)
    cva = -trapezoid(times, discount * (l1 * own + l2 * other))
    return cca, cva


# ---------------------------------------------------------------------------
# path-level quantities


def funding_on_path(paths: PathSet, currency: str) -> tuple[np.ndarray, np.ndarray]:
    """Spread ``y^(k)`` and its integral from ``times[0]`` under the anchor convention."""
    model = paths.dynamics.model
    if currency not in model.currencies:
        raise KeyError(f"unknown currency {currency}")
    if currency == model.anchor:
        zero = np.zeros_like(paths.y)
        return zero, zero
    sign = 1.0 if currency == model.domestic else -1.0
    return sign * paths.y, sign * paths.int_y


def _pair_on_path(paths: PathSet, k: str) -> tuple[np.ndarray, np.ndarray]:
    """``y^(dom, k)`` and its integral."""
    model = paths.dynamics.model
    if k == model.domestic:
        zero = np.zeros_like(paths.y)
        return zero, zero
    if k == model.foreign:
        return paths.y, paths.int_y
    raise KeyError(f"unknown currency {k}")


def benchmark_discount(paths: PathSet, benchmark: Iterable[str]) -> np.ndarray:
    """``exp(-int (r^(dom) - ybar))`` with ``ybar = min_{k in benchmark} y^(k)``,
    i.e. ``exp(-int c^(dom) + max_k y^(dom,k))``."""
    bench = sorted(set(benchmark))
    if not bench:
        raise ValueError("empty benchmark set")
    if len(bench) == 1:
        _, integral = _pair_on_path(paths, bench[0])
        return np.exp(-paths.int_c_dom - integral)
    spread = np.max([_pair_on_path(paths, k)[0] for k in bench], axis=0)
    steps = 0.5 * np.diff(paths.times) * (spread[:, 1:] + spread[:, :-1])
    integral = np.zeros_like(spread)
    np.cumsum(steps, axis=1, out=integral[:, 1:])
    return np.exp(-paths.int_c_dom - integral)


def _min_spread(paths: PathSet, currencies: Iterable[str]) -> np.ndarray:
    cur = sorted(set(currencies))
    if not cur:
        return np.zeros_like(paths.y)
    return np.min([funding_on_path(paths, k)[0] for k in cur], axis=0)


def _horizon(paths: PathSet, spec: InstrumentSpec) -> int:
    if paths.start_index != 0:
        raise ValueError("adjustments are computed from time 0")
    if paths.times[-1] < spec.maturity - 1e-12:
        raise ValueError(
            f"paths end at {paths.times[-1]}y but the instrument matures at {spec.maturity}y"
        )
    return paths.local(spec.maturity) + 1


def _default_benchmark(spec: InstrumentSpec) -> frozenset[str]:
    return frozenset({spec.collateral})


def _check_benchmark(spec: InstrumentSpec, benchmark: frozenset[str]) -> None:
    if benchmark != _default_benchmark(spec):
        raise NotImplementedError(
            "on-path clean values are discounted with the instrument's own collateral; "
            "pass clean values explicitly for other benchmarks"
        )


def _inputs(paths: PathSet, spec: InstrumentSpec, terms: CollateralTerms, benchmark, clean):
    benchmark = _default_benchmark(spec) if benchmark is None else frozenset(benchmark)
    n = _horizon(paths, spec)
    if clean is None:
        _check_benchmark(spec, benchmark)
        clean = clean_values(paths, spec)
    clean = clean[:, :n]
    times = paths.times[:n]
    disc = benchmark_discount(paths, benchmark)[:, :n]
    y1 = _min_spread(paths, terms.party1.eligible)[:, :n]
    y2 = _min_spread(paths, terms.party2.eligible)[:, :n]
    ybar = _min_spread(paths, benchmark)[:, :n]
    return times, disc, clean, y1, y2, ybar


def _cca_cva_paths(paths, spec, terms, benchmark=None, clean=None):
    times, disc, clean, y1, y2, ybar = _inputs(paths, spec, terms, benchmark, clean)
    return cca_cva_core(times, disc, clean, terms, y1, y2, ybar)


def cca_generic(paths: PathSet, spec: InstrumentSpec, terms: CollateralTerms, benchmark=None, clean=None) -> Estimate:
    """Collateral cost adjustment from party 1's viewpoint.

    ``benchmark`` is the set of currencies defining ``ybar`` (default: the
    instrument's collateral currency).  ``clean`` may carry precomputed
    clean values on the path grid.
    """
    return Estimate.from_samples(_cca_cva_paths(paths, spec, terms, benchmark, clean)[0])


def cva_generic(paths: PathSet, spec: InstrumentSpec, terms: CollateralTerms, benchmark=None, clean=None) -> Estimate:
    """Bilateral credit value adjustment from party 1's viewpoint."""
    return Estimate.from_samples(_cca_cva_paths(paths, spec, terms, benchmark, clean)[1])


def asym_mtmccois_terms(model) -> CollateralTerms:
    """Party 1 may post either currency, party 2 only the refreshed one."""
    both = frozenset(model.currencies)
    return CollateralTerms(PartyTerms(both), PartyTerms(frozenset({model.foreign})))


def asym_ois_terms(model) -> CollateralTerms:
    """Party 1 may post either currency, party 2 only the domestic one."""
    both = frozenset(model.currencies)
    return CollateralTerms(PartyTerms(both), PartyTerms(frozenset({model.domestic})))


def cca_asym_mtmccois(paths: PathSet, spec: MtMCCOISSpec, clean=None) -> Estimate:
    """``E int exp(-int (c + y)) [-Vbar]^+ max(-y^(j,i), 0) ds`` for party 1
    holding the two-currency cheapest-to-deliver option."""
    model = paths.dynamics.model
    terms = asym_mtmccois_terms(model)
    return cca_generic(paths, spec, terms, frozenset({model.foreign}), clean)


def cca_asym_ois(paths: PathSet, spec: OISSpec, clean=None) -> Estimate:
    """``E int exp(-int c) [-Vbar]^+ max(y^(j,i), 0) ds`` for a domestic OIS."""
    model = paths.dynamics.model
    terms = asym_ois_terms(model)
    return cca_generic(paths, spec, terms, frozenset({model.domestic}), clean)


def _deal_currency(paths: PathSet, spec: InstrumentSpec) -> str:
    model = paths.dynamics.model
    deal = spec.currency
    if spec.collateral != deal or deal != model.domestic:
        raise ValueError("deal and collateral currency must both be the domestic currency")
    return deal


def cca_cva_threshold(paths: PathSet, spec: InstrumentSpec, terms: CollateralTerms, clean=None):
    """(CCA, CVA) under collateral thresholds with deal and collateral in
    one currency; the benchmark is perfect collateral in that currency."""
    deal = _deal_currency(paths, spec)
    times, disc, clean, _, _, _ = _inputs(paths, spec, terms, {deal}, clean)
    y = funding_on_path(paths, deal)[0][:, : times.size]
    cca, cva = threshold_core(times, disc, clean, terms, y)
    return Estimate.from_samples(cca), Estimate.from_samples(cva)


def one_way_csa(paths: PathSet, spec: InstrumentSpec, terms: CollateralTerms, clean=None):
    """(CCA, CVA) when only party 1 posts collateral, in the deal currency."""
    deal = _deal_currency(paths, spec)
    one_way = CollateralTerms(
        replace(terms.party1, eligible=frozenset({deal})),
        replace(terms.party2, eligible=frozenset({deal}), coverage=0.0),
    )
    cca, cva = _cca_cva_paths(paths, spec, one_way, {deal}, clean)
    return Estimate.from_samples(cca), Estimate.from_samples(cva)


@dataclass(frozen=True)
class AdjustedPrice:
    clean: float
    cca: float
    cva: float
    stderr_cca: float
    stderr_cva: float

    @property
    def total(self) -> float:
        return self.clean + self.cca + self.cva


def price_adjustments(
    dyn: FittedDynamics,
    spec: InstrumentSpec,
    terms: CollateralTerms,
    benchmark=None,
    threads: int = 1,
) -> AdjustedPrice:
    """Clean value plus first-order CCA and CVA over all path blocks."""

    def block(paths: PathSet):
        cca, cva = _cca_cva_paths(paths, spec, terms, benchmark)
        return Estimate.from_samples(cca), Estimate.from_samples(cva)

    parts = map_blocks(dyn, block, threads)
    cca = Estimate.combine(p[0] for p in parts)
    cva = Estimate.combine(p[1] for p in parts)
    clean = clean_price(dyn.model, spec).value
    return AdjustedPrice(clean, cca.mean, cva.mean, cca.stderr, cva.stderr)


# ---------------------------------------------------------------------------
# netting


@dataclass(frozen=True)
class NettingReport:
    """``V^{ab} - V^a - V^b`` with a discretization error bar."""

    v_ab: float
    v_a: float
    v_b: float
    difference: float
    error: float
    holds: bool


def netting_inequality_check(
    model,
    a: Sequence,
    b: Sequence,
    party1_eligible: Iterable[str],
    party2_eligible: Iterable[str],
    grid=None,
) -> NettingReport:
    """Check ``V^{ab} >= V^a + V^b`` with the PDE solver.

    ``a`` and ``b`` are lists of continuous-coupon MtMCCOIS legs; both
    parties are perfectly collateralized with cheapest-to-deliver choice over
    their eligible sets.  The error bar is the change of the difference from
    a coarse grid to ``grid``.  A violation is flagged only below
    ``-3 * error``.
    """
    from .pde import PDEGrid, solve_nonlinear_pde

    grid = PDEGrid() if grid is None else grid
    coarse = grid.coarsened()
    e1, e2 = frozenset(party1_eligible), frozenset(party2_eligible)

    def diff(g):
        v = [solve_nonlinear_pde(model, legs, g, e1, e2).value for legs in (list(a) + list(b), a, b)]
        return v, v[0] - v[1] - v[2]

    (v_ab, v_a, v_b), d = diff(grid)
    _, d_coarse = diff(coarse)
    error = abs(d - d_coarse) + 1e-12
    return NettingReport(v_ab, v_a, v_b, d, error, bool(d >= -3.0 * error))
