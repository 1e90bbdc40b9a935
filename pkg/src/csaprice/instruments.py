"""Clean values of collateralized OIS and mark-to-market cross-currency OIS.

"Clean" means perfectly and symmetrically collateralized: each cashflow is
discounted with the collateral rate of the posted currency, converted with the
funding spread when the collateral is foreign.  Closed forms at time 0 use the
initial curves; on-path values rebuild conditional bonds from the simulated
state through the discrete affine formula of :mod:`csaprice.dynamics`.

Time is in ACT/365-fixed years.  Values are per unit notional of the
domestic leg and in domestic currency.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .curves import TermStructure, schedule
from .dynamics import PathSet
from .market import MarketModel

__all__ = [
    "OISSpec",
    "MtMCCOISSpec",
    "InstrumentSpec",
    "CleanPrice",
    "fx_forward",
    "ois_par_rate",
    "ois_value",
    "mtmccois_par_spread",
    "mtmccois_value",
    "clean_price",
    "clean_value_ois_on_path",
    "clean_value_mtmccois_on_path",
    "clean_values",
    "load_spec",
    "dump_spec",
]

_SIDES_OIS = {"receiver": 1.0, "payer": -1.0}
_SIDES_CCS = {"payer": 1.0, "receiver": -1.0}


def _dates(dates: Sequence[float], start: float) -> tuple[float, ...]:
    dates = tuple(float(d) for d in dates)
    if not dates:
        raise ValueError("empty schedule")
    if dates[0] <= start or any(b <= a for a, b in zip(dates, dates[1:])):
        raise ValueError("payment dates must be ascending and after the start")
    return dates


@dataclass(frozen=True)
class OISSpec:
    """Fixed-vs-compounded-overnight swap in ``currency``.

    ``side`` is from the fixed-rate viewpoint; ``collateral`` defaults to
    the swap currency.
    """

    currency: str
    dates: tuple[float, ...]
    fixed_rate: float | None = None
    side: str = "receiver"
    collateral: str | None = None
    start: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "dates", _dates(self.dates, self.start))
        if self.side not in _SIDES_OIS:
            raise ValueError(f"side must be one of {sorted(_SIDES_OIS)}")
        if self.collateral is None:
            object.__setattr__(self, "collateral", self.currency)

    @classmethod
    def standard(cls, currency: str, maturity: float, frequency: int = 1, **kw) -> "OISSpec":
        return cls(currency, tuple(schedule(maturity, frequency, kw.get("start", 0.0))), **kw)

    @property
    def accruals(self) -> np.ndarray:
        return np.diff((self.start, *self.dates))

    @property
    def sign(self) -> float:
        return _SIDES_OIS[self.side]

    @property
    def maturity(self) -> float:
        return self.dates[-1]

    def with_rate(self, rate: float) -> "OISSpec":
        return OISSpec(self.currency, self.dates, rate, self.side, self.collateral, self.start)

    def flipped(self) -> "OISSpec":
        side = "payer" if self.side == "receiver" else "receiver"
        return OISSpec(self.currency, self.dates, self.fixed_rate, side, self.collateral, self.start)


@dataclass(frozen=True)
class MtMCCOISSpec:
    """Mark-to-market cross-currency OIS.

    The ``spread_currency`` leg (j) pays compounded overnight plus the basis
    spread on a fixed notional; the ``refreshed_currency`` leg (i) pays
    compounded overnight flat with its notional reset to the spot FX rate at
    every period start.  ``side`` is from the spread-payer viewpoint.
    """

    spread_currency: str
    refreshed_currency: str
    dates: tuple[float, ...]
    spread: float | None = None
    side: str = "payer"
    collateral: str | None = None
    start: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "dates", _dates(self.dates, self.start))
        if self.side not in _SIDES_CCS:
            raise ValueError(f"side must be one of {sorted(_SIDES_CCS)}")
        if self.spread_currency == self.refreshed_currency:
            raise ValueError("a cross-currency swap needs two currencies")
        if self.collateral is None:
            object.__setattr__(self, "collateral", self.refreshed_currency)

    @classmethod
    def standard(
        cls, spread_currency: str, refreshed_currency: str, maturity: float, frequency: int = 4, **kw
    ) -> "MtMCCOISSpec":
        dates = tuple(schedule(maturity, frequency, kw.get("start", 0.0)))
        return cls(spread_currency, refreshed_currency, dates, **kw)

    @property
    def accruals(self) -> np.ndarray:
        return np.diff((self.start, *self.dates))

    @property
    def currency(self) -> str:
        return self.spread_currency

    @property
    def sign(self) -> float:
        return _SIDES_CCS[self.side]

    @property
    def maturity(self) -> float:
        return self.dates[-1]

    def with_spread(self, spread: float) -> "MtMCCOISSpec":
        return MtMCCOISSpec(
            self.spread_currency, self.refreshed_currency, self.dates, spread, self.side, self.collateral, self.start
        )

    def flipped(self) -> "MtMCCOISSpec":
        side = "receiver" if self.side == "payer" else "payer"
        return MtMCCOISSpec(
            self.spread_currency, self.refreshed_currency, self.dates, self.spread, side, self.collateral, self.start
        )


InstrumentSpec = OISSpec | MtMCCOISSpec


@dataclass(frozen=True)
class CleanPrice:
    """Time-0 clean value with its per-period breakdown (sums to ``value``)."""

    value: float
    breakdown: np.ndarray


def fx_forward(model: MarketModel, pair: tuple[str, str], collateral: str, T: float) -> float:
    """``f^(a,b)(0, T; k) = f^(a,b)(0) D^(b,k)(0,T) / D^(a,k)(0,T)``.

    ``f^(a,b)`` is the price of one unit of ``b`` in units of ``a``.
    """
    a, b = pair
    if T < 0:
        raise ValueError("T must be nonnegative")
    if {a, b} != set(model.currencies):
        raise KeyError(f"no spot for pair {pair}")
    spot = model.fx_spot if (a, b) == (model.domestic, model.foreign) else 1.0 / model.fx_spot
    return float(spot * model.discount(b, T, collateral) / model.discount(a, T, collateral))


def _require_rate(value: float | None, name: str) -> float:
    if value is None:
        raise ValueError(f"spec has no {name}; compute the par value first")
    return value


def _ois_curves(model: MarketModel, spec: OISSpec) -> tuple[TermStructure, TermStructure]:
    return model.collateral[spec.currency], model.spread(spec.currency, spec.collateral)


def ois_par_rate(model: MarketModel, spec: OISSpec) -> float:
    """Par fixed rate ``sum [D(T_{n-1}) Y(T_n) - D(T_n) Y(T_n)] / sum Delta_n D(T_n) Y(T_n)``.

    With same-currency collateral ``Y = 1`` and this is the familiar
    ``(D(T_0) - D(T_N)) / sum Delta_n D(T_n)``.
    """
    curve, spread = _ois_curves(model, spec)
    t = np.array((spec.start, *spec.dates))
    D, Y = curve.discount(t), spread.discount(t)
    num = np.sum((D[:-1] - D[1:]) * Y[1:])
    return float(num / np.sum(spec.accruals * D[1:] * Y[1:]))


def _ois_flows(model: MarketModel, spec: OISSpec) -> np.ndarray:
    S = _require_rate(spec.fixed_rate, "fixed rate")
    curve, spread = _ois_curves(model, spec)
    t = np.array((spec.start, *spec.dates))
    D, Y = curve.discount(t), spread.discount(t)
    return spec.sign * (S * spec.accruals * D[1:] * Y[1:] - (D[:-1] - D[1:]) * Y[1:])


def ois_value(model: MarketModel, spec: OISSpec) -> float:
    return float(np.sum(_ois_flows(model, spec)))


def _ccs_curves(model: MarketModel, spec: MtMCCOISSpec):
    j, i = spec.spread_currency, spec.refreshed_currency
    if spec.collateral != i:
        raise NotImplementedError("clean MtMCCOIS values are implemented for refreshed-currency collateral")
    return model.collateral[j], model.spread(j, i)


def mtmccois_par_spread(model: MarketModel, spec: MtMCCOISSpec) -> float:
    """Par basis spread under independence of ``c^(j)`` and ``y^(j,i)``:
    ``sum D^(j,i)(T_{n-1}) (1 - e^{-int y}) / sum delta_n D^(j,i)(T_n)``."""
    curve, spread = _ccs_curves(model, spec)
    t = np.array((spec.start, *spec.dates))
    D, Y = curve.discount(t), spread.discount(t)
    num = np.sum(D[:-1] * (Y[:-1] - Y[1:]))
    return float(num / np.sum(spec.accruals * D[1:] * Y[1:]))


def _ccs_flows(model: MarketModel, spec: MtMCCOISSpec) -> np.ndarray:
    B = _require_rate(spec.spread, "spread")
    curve, spread = _ccs_curves(model, spec)
    t = np.array((spec.start, *spec.dates))
    D, Y = curve.discount(t), spread.discount(t)
    return spec.sign * (D[:-1] * (Y[:-1] - Y[1:]) - B * spec.accruals * D[1:] * Y[1:])


def mtmccois_value(model: MarketModel, spec: MtMCCOISSpec) -> float:
    return float(np.sum(_ccs_flows(model, spec)))


def clean_price(model: MarketModel, spec: InstrumentSpec) -> CleanPrice:
    flows = _ois_flows(model, spec) if isinstance(spec, OISSpec) else _ccs_flows(model, spec)
    return CleanPrice(float(np.sum(flows)), flows)


# ---------------------------------------------------------------------------
# on-path revaluation


def _grid_dates(paths: PathSet, spec: InstrumentSpec) -> np.ndarray:
    if spec.start != 0.0:
        raise NotImplementedError("on-path revaluation supports spot-starting swaps only")
    dyn = paths.dynamics
    return np.array([dyn.index_of(t) for t in (0.0, *spec.dates)])


def _locate(paths: PathSet, spec: InstrumentSpec, k: int):
    """Absolute grid index of ``t``, of each date, and ``gamma`` (first
    date strictly after ``t``)."""
    g = paths.start_index + k
    t = paths.dynamics.times[g]
    if t > spec.maturity + 1e-12:
        raise ValueError(f"t = {t} is beyond maturity {spec.maturity}")
    idx = _grid_dates(paths, spec)
    gamma = int(np.searchsorted(idx[1:], g, side="right"))  # 0-based into dates
    return g, idx, gamma


def clean_value_ois_on_path(paths: PathSet, spec: OISSpec, k: int) -> np.ndarray:
    """Clean OIS value at local step ``k`` of every path.

    Receiver of fixed, domestic-currency swap::

        sum_{n>=gamma} Delta_n S D(t,T_n) Y(t,T_n)
          - [A Y(t,T_gamma) - D(t,T_gamma) Y(t,T_gamma)]
          - sum_{n>gamma} [D(t,T_{n-1}) - D(t,T_n)] Y(t,T_n)

    with ``A = exp(int_{T_{gamma-1}}^t c)`` the accrual since the last
    reset and ``Y = 1`` under same-currency collateral, which reduces to
    ``sum Delta_n S D - A + D(t,T_N)``.
    """
    S = _require_rate(spec.fixed_rate, "fixed rate")
    dyn = paths.dynamics
    if spec.currency != dyn.model.domestic:
        raise NotImplementedError("on-path OIS revaluation is for domestic-currency swaps")
    if spec.collateral not in dyn.model.currencies:
        raise KeyError(f"unknown collateral {spec.collateral}")
    g, idx, gamma = _locate(paths, spec, k)
    n = paths.n_paths
    if gamma == len(spec.dates):
        return np.zeros(n)
    live = idx[1 + gamma :]
    D = dyn.c_dom.bond(g, live, paths.x_dom[:, k])
    if spec.collateral == dyn.model.domestic:
        Y = np.ones_like(D)
    else:
        Y = dyn.y.bond(g, live, paths.x_y[:, k])
    reset = idx[gamma] - paths.start_index
    if reset < 0:
        raise ValueError("path block starts after the last reset; accrual unknown")
    A = np.exp(paths.int_c_dom[:, k] - paths.int_c_dom[:, reset])
    delta = spec.accruals[gamma:]
    fixed = S * np.sum(delta * D * Y, axis=1)
    first = (A - D[:, 0]) * Y[:, 0]
    rest = np.sum((D[:, :-1] - D[:, 1:]) * Y[:, 1:], axis=1)
    return spec.sign * (fixed - first - rest)


def clean_value_mtmccois_on_path(paths: PathSet, spec: MtMCCOISSpec, k: int) -> np.ndarray:
    """Clean MtMCCOIS value at local step ``k`` (spread-payer view)::

        - B sum_{n>=gamma} delta_n D(t,T_n) Y(t,T_n)
          + sum_{n>gamma} D(t,T_{n-1}) [Y(t,T_{n-1}) - Y(t,T_n)]
          - Y(t,T_gamma) exp(int_{T_{gamma-1}}^t c^(j))
          + f_x(t) / f_x(T_{gamma-1}) exp(int_{T_{gamma-1}}^t c^(i))

    The last two terms carry the advance reset of the current period.
    """
    B = _require_rate(spec.spread, "spread")
    dyn = paths.dynamics
    model = dyn.model
    if (spec.spread_currency, spec.refreshed_currency) != (model.domestic, model.foreign):
        raise NotImplementedError("on-path MtMCCOIS needs spread leg domestic, refreshed leg foreign")
    if spec.collateral != model.foreign:
        raise NotImplementedError("clean MtMCCOIS values are implemented for refreshed-currency collateral")
    g, idx, gamma = _locate(paths, spec, k)
    n = paths.n_paths
    if gamma == len(spec.dates):
        return np.zeros(n)
    live = idx[1 + gamma :]
    D = dyn.c_dom.bond(g, live, paths.x_dom[:, k])
    Y = dyn.y.bond(g, live, paths.x_y[:, k])
    reset = idx[gamma] - paths.start_index
    if reset < 0:
        raise ValueError("path block starts after the last reset; accrual unknown")
    acc_j = np.exp(paths.int_c_dom[:, k] - paths.int_c_dom[:, reset])
    acc_i = np.exp(paths.int_c_for[:, k] - paths.int_c_for[:, reset])
    fx_ratio = np.exp(paths.log_fx[:, k] - paths.log_fx[:, reset])
    delta = spec.accruals[gamma:]
    value = (
        -B * np.sum(delta * D * Y, axis=1)
        + np.sum(D[:, :-1] * (Y[:, :-1] - Y[:, 1:]), axis=1)
        - Y[:, 0] * acc_j
        + fx_ratio * acc_i
    )
    return spec.sign * value


def clean_values(paths: PathSet, spec: InstrumentSpec) -> np.ndarray:
    """Clean value at every grid time of ``paths``, zero after maturity.

    Shape ``(n_paths, n_times)``.
    """
    fn = clean_value_ois_on_path if isinstance(spec, OISSpec) else clean_value_mtmccois_on_path
    out = np.zeros((paths.n_paths, paths.times.size))
    for k, t in enumerate(paths.times):
        if t >= spec.maturity - 1e-12:
            break
        out[:, k] = fn(paths, spec, k)
    return out


# ---------------------------------------------------------------------------
# spec files


def dump_spec(spec: InstrumentSpec) -> dict:
    kind = "ois" if isinstance(spec, OISSpec) else "mtmccois"
    return {"type": kind, **asdict(spec), "dates": list(spec.dates)}


def load_spec(source: str | Path | dict) -> InstrumentSpec:
    """Build a spec from a JSON file or an already-parsed mapping.

    Either give ``dates`` explicitly or ``maturity`` plus ``frequency``.
    Example::

        {"type": "mtmccois", "spread_currency": "JPY",
         "refreshed_currency": "USD", "maturity": 10, "frequency": 4,
         "side": "payer", "spread": null}
    """
    raw = dict(source) if isinstance(source, dict) else json.loads(Path(source).read_text(encoding="utf-8"))
    kind = raw.pop("type", None)
    cls = {"ois": OISSpec, "mtmccois": MtMCCOISSpec}.get(kind)
    if cls is None:
        raise ValueError(f"unknown instrument type {kind!r}; expected 'ois' or 'mtmccois'")
    if "dates" not in raw:
        if "maturity" not in raw:
            raise ValueError("instrument needs 'dates' or 'maturity'")
        freq = raw.pop("frequency", 1 if cls is OISSpec else 4)
        raw["dates"] = tuple(schedule(float(raw.pop("maturity")), int(freq), float(raw.get("start", 0.0))))
    else:
        raw.pop("frequency", None)
        raw.pop("maturity", None)
    return cls(**raw)
