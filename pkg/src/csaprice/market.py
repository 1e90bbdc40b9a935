"""Market model: curves, spot FX and factor dynamics for a currency pair.

The packaged default (``default_market``) is an approximate transcription of
a JPY/USD market with an upward-sloping USD curve, a flatter JPY curve and a
negative JPY/USD funding spread.  Its levels are indicative only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .curves import TermStructure, decompose_single_currency_spreads, pair_spread, read_curve_csv
from .dynamics import HullWhiteParams, validate_correlation

__all__ = ["MarketModel", "default_market", "default_correlation", "load_market"]

DEFAULT_CURVE_END = 30.0


def default_correlation() -> np.ndarray:
    """Order: c_dom, c_for, y, log_fx."""
    return np.array(
        [
            [1.00, 0.35, 0.0, 0.10],
            [0.35, 1.00, 0.0, -0.10],
            [0.0, 0.0, 1.0, 0.0],
            [0.10, -0.10, 0.0, 1.00],
        ]
    )


@dataclass(frozen=True, eq=False)
class MarketModel:
    """Everything the simulator and the closed forms need.

    Attributes:
        domestic: Simulation-measure and deal currency, written (j).
        foreign: Notional-refreshed currency of cross-currency swaps, (i).
        collateral: Collateral-rate forward curve per currency.
        funding: Per-currency funding spreads ``y^(k)``, zero for ``anchor``.
        fx_spot: Domestic units per unit of foreign currency.
        c_dom, c_for, y: Hull-White parameters of the three rate factors,
            ``y`` being the pair spread ``y^(dom, for)``.
        sigma_fx: Log-FX volatility.
        correlation: 4x4 matrix ordered (c_dom, c_for, y, log_fx).
    """

    domestic: str
    foreign: str
    collateral: Mapping[str, TermStructure]
    funding: Mapping[str, TermStructure]
    anchor: str
    fx_spot: float
    c_dom: HullWhiteParams
    c_for: HullWhiteParams
    y: HullWhiteParams
    sigma_fx: float
    correlation: np.ndarray = field(default_factory=default_correlation)

    def __post_init__(self) -> None:
        if not self.domestic or not self.foreign or self.domestic == self.foreign:
            raise ValueError("domestic and foreign currencies must be distinct, nonempty codes")
        for ccy in (self.domestic, self.foreign):
            if ccy not in self.collateral:
                raise KeyError(f"missing collateral curve for {ccy}")
            if ccy not in self.funding:
                raise KeyError(f"missing funding spread for {ccy}")
        if self.anchor not in self.funding:
            raise KeyError(f"anchor {self.anchor} has no funding curve")
        if np.max(np.abs(self.funding[self.anchor].rates)) != 0.0:
            raise ValueError("the anchor currency's funding spread must be zero")
        if not self.fx_spot > 0:
            raise ValueError("fx_spot must be positive")
        if self.sigma_fx < 0:
            raise ValueError("sigma_fx must be nonnegative")
        object.__setattr__(self, "correlation", validate_correlation(self.correlation))

    @classmethod
    def from_pair_spread(
        cls,
        domestic: str,
        foreign: str,
        c_dom_curve: TermStructure,
        c_for_curve: TermStructure,
        spread: TermStructure,
        fx_spot: float,
        c_dom: HullWhiteParams,
        c_for: HullWhiteParams,
        y: HullWhiteParams,
        sigma_fx: float,
        correlation=None,
        anchor: str | None = None,
    ) -> "MarketModel":
        """Build from the pair spread ``y^(domestic, foreign)``."""
        anchor = domestic if anchor is None else anchor
        funding = decompose_single_currency_spreads({(domestic, foreign): spread}, anchor)
        return cls(
            domestic,
            foreign,
            {domestic: c_dom_curve, foreign: c_for_curve},
            funding,
            anchor,
            fx_spot,
            c_dom,
            c_for,
            y,
            sigma_fx,
            default_correlation() if correlation is None else correlation,
        )

    @property
    def currencies(self) -> tuple[str, str]:
        return (self.domestic, self.foreign)

    def spread(self, a: str, b: str) -> TermStructure:
        """Pair spread ``y^(a, b)``."""
        return pair_spread(self.funding, a, b)

    def discount(self, currency: str, T, collateral: str | None = None):
        """``D^(currency, collateral)(0, T)``; same-currency collateral by default."""
        collateral = currency if collateral is None else collateral
        curve = self.collateral[currency]
        if collateral == currency:
            return curve.discount(T)
        return curve.discount(T) * self.spread(currency, collateral).discount(T)

    def horizon(self) -> float | None:
        ends = [c.end for c in (*self.collateral.values(), *self.funding.values()) if c.end is not None]
        return min(ends) if ends else None

    def with_vols(
        self,
        sigma_y: float | None = None,
        sigma_c: float | None = None,
        sigma_fx: float | None = None,
    ) -> "MarketModel":
        """Copy with the spread vol, both collateral-rate vols or the FX vol replaced."""
        changes: dict = {}
        if sigma_y is not None:
            changes["y"] = HullWhiteParams(self.y.kappa, sigma_y)
        if sigma_c is not None:
            changes["c_dom"] = HullWhiteParams(self.c_dom.kappa, sigma_c)
            changes["c_for"] = HullWhiteParams(self.c_for.kappa, sigma_c)
        if sigma_fx is not None:
            changes["sigma_fx"] = sigma_fx
        return replace(self, **changes)


def _curve_from(value, base: Path, end: float) -> TermStructure:
    if isinstance(value, (int, float)):
        return TermStructure.flat(float(value), end)
    if isinstance(value, Mapping):
        return TermStructure.from_pillars({float(k): float(v) for k, v in value.items()}, end)
    path = Path(value)
    return read_curve_csv(path if path.is_absolute() else base / path, end)


def _params(raw: Mapping) -> HullWhiteParams:
    return HullWhiteParams(float(raw["kappa"]), float(raw["sigma"]))


def load_market(path: str | Path) -> MarketModel:
    """Read a market JSON file.

    Schema::

        {"domestic": "JPY", "foreign": "USD", "anchor": "JPY",
         "fx_spot": 90.0, "curve_end": 30.0,
         "collateral_curves": {"JPY": "jpy.csv", "USD": {"0": 0.002, "5": 0.04}},
         "spread_curve": -0.003,
         "hull_white": {"c_dom": {"kappa": 0.015, "sigma": 0.01},
                        "c_for": {...}, "y": {...}},
         "sigma_fx": 0.12,
         "correlation": [[...4 rows...]]}

    Curves may be a CSV path (relative to the JSON file), a pillar map or a
    flat number.  ``spread_curve`` is ``y^(domestic, foreign)``.
    """
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    end = float(raw.get("curve_end", DEFAULT_CURVE_END))
    dom, fgn = raw["domestic"], raw["foreign"]
    curves = raw["collateral_curves"]
    hw = raw["hull_white"]
    return MarketModel.from_pair_spread(
        dom,
        fgn,
        _curve_from(curves[dom], base, end),
        _curve_from(curves[fgn], base, end),
        _curve_from(raw["spread_curve"], base, end),
        float(raw["fx_spot"]),
        _params(hw["c_dom"]),
        _params(hw["c_for"]),
        _params(hw["y"]),
        float(raw["sigma_fx"]),
        raw.get("correlation"),
        raw.get("anchor"),
    )


def _data_curve(name: str) -> TermStructure:
    with resources.as_file(resources.files("csaprice") / "data" / name) as p:
        return read_curve_csv(p, DEFAULT_CURVE_END)


def default_market(sigma_y: float = 0.005, sigma_c: float = 0.01) -> MarketModel:
    """JPY (domestic) / USD (foreign) market used by the experiments."""
    kappa = 0.015
    return MarketModel.from_pair_spread(
        "JPY",
        "USD",
        _data_curve("jpy_collateral.csv"),
        _data_curve("usd_collateral.csv"),
        _data_curve("jpy_usd_spread.csv"),
        fx_spot=90.0,
        c_dom=HullWhiteParams(kappa, sigma_c),
        c_for=HullWhiteParams(kappa, sigma_c),
        y=HullWhiteParams(kappa, sigma_y),
        sigma_fx=0.12,
        correlation=default_correlation(),
        anchor="JPY",
    )
