"""Term structures with piecewise-flat instantaneous forwards.

Collateral-rate curves ``c(0, t)`` and funding-spread curves ``y(0, t)`` share
one representation: a set of pillars ``(tenor, forward)`` where the forward
holds on ``[tenor_k, tenor_{k+1})`` and the last forward extends flat.  All
discount integrals are therefore exact sums, and bootstrapping is local: each
new quote only moves the forward of its own pillar.

Time is measured in ACT/365-fixed years throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "TermStructure",
    "SpreadCurve",
    "CalibrationError",
    "CurveFileError",
    "discount_factor",
    "foreign_collateral_df",
    "schedule",
    "ois_par",
    "mtmccois_par",
    "bootstrap_collateral_curve",
    "bootstrap_spread_curve",
    "decompose_single_currency_spreads",
    "pair_spread",
    "read_curve_csv",
    "write_curve_csv",
    "read_quotes_csv",
    "write_quotes_csv",
]

PAR_TOLERANCE = 1e-12


class CalibrationError(RuntimeError):
    """A bootstrap pillar could not be solved."""


class CurveFileError(ValueError):
    """Malformed curve or quote file; carries the offending line number."""

    def __init__(self, path: str | Path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


def _frozen(values: Iterable[float]) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TermStructure:
    """Piecewise-flat instantaneous forward curve.

    Attributes:
        tenors: Pillar start times in years, strictly ascending, first is 0.
        rates: Forward rate (1/year) holding from each pillar to the next.
        end: Last tenor the curve was calibrated to.  ``None`` means the
            curve is taken as valid at every horizon.
    """

    tenors: np.ndarray
    rates: np.ndarray
    end: float | None = None
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        tenors = _frozen(np.atleast_1d(self.tenors))
        rates = _frozen(np.atleast_1d(self.rates))
        if tenors.ndim != 1 or tenors.shape != rates.shape or tenors.size == 0:
            raise ValueError("tenors and rates must be equal-length, nonempty 1-d arrays")
        if tenors[0] != 0.0:
            raise ValueError(f"first tenor must be 0, got {tenors[0]}")
        if np.any(np.diff(tenors) <= 0.0):
            raise ValueError("tenors must be strictly ascending")
        if not np.all(np.isfinite(rates)) or not np.all(np.isfinite(tenors)):
            raise ValueError("tenors and rates must be finite")
        if self.end is not None and self.end < tenors[-1]:
            raise ValueError(f"end {self.end} precedes the last pillar {tenors[-1]}")
        cum = np.concatenate(([0.0], np.cumsum(rates[:-1] * np.diff(tenors))))
        object.__setattr__(self, "tenors", tenors)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "_cum", _frozen(cum))

    @classmethod
    def flat(cls, rate: float, end: float | None = None) -> "TermStructure":
        return cls([0.0], [rate], end)

    @classmethod
    def from_pillars(
        cls, pillars: Mapping[float, float] | Sequence[tuple[float, float]], end: float | None = None
    ) -> "TermStructure":
        items = sorted(dict(pillars).items())
        return cls([t for t, _ in items], [r for _, r in items], end)

    def covers(self, horizon: float) -> bool:
        return self.end is None or horizon <= self.end + 1e-12

    def forward(self, t):
        """Instantaneous forward ``f(0, t)``, right-continuous at pillars."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.tenors, t, side="right") - 1
        out = self.rates[np.clip(k, 0, None)]
        return float(out) if out.ndim == 0 else out

    def integral(self, T):
        """Exact ``int_0^T f(0, s) ds``."""
        T = np.asarray(T, dtype=float)
        if np.any(T < 0.0):
            raise ValueError("maturity must be nonnegative")
        k = np.searchsorted(self.tenors, T, side="right") - 1
        out = self._cum[k] + self.rates[k] * (T - self.tenors[k])
        return float(out) if out.ndim == 0 else out

    def discount(self, T):
        return np.exp(-self.integral(T))

    def _combine(self, other: "TermStructure", sign: float) -> "TermStructure":
        tenors = np.union1d(self.tenors, other.tenors)
        rates = self.forward(tenors) + sign * other.forward(tenors)
        ends = [e for e in (self.end, other.end) if e is not None]
        return TermStructure(tenors, rates, min(ends) if ends else None)

    def __add__(self, other: "TermStructure") -> "TermStructure":
        return self._combine(other, 1.0)

    def __sub__(self, other: "TermStructure") -> "TermStructure":
        return self._combine(other, -1.0)

    def __neg__(self) -> "TermStructure":
        return TermStructure(self.tenors, -self.rates, self.end)

    def scaled(self, factor: float) -> "TermStructure":
        return TermStructure(self.tenors, factor * self.rates, self.end)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TermStructure):
            return NotImplemented
        return (
            np.array_equal(self.tenors, other.tenors)
            and np.array_equal(self.rates, other.rates)
            and self.end == other.end
        )

    __hash__ = None  # type: ignore[assignment]


# Funding spreads share the representation; negative values are legitimate.
SpreadCurve = TermStructure


def discount_factor(curve: TermStructure, T: float) -> float:
    """``exp(-int_0^T c(0, s) ds)`` computed exactly."""
    if T < 0:
        raise ValueError(f"maturity must be nonnegative, got {T}")
    return math.exp(-curve.integral(float(T)))


def foreign_collateral_df(dom: TermStructure, spread: TermStructure, T: float) -> float:
    """Discount factor for a unit paid in the domestic currency but
    collateralized in a foreign one (``c`` and ``y`` taken independent)."""
    if T < 0:
        raise ValueError(f"maturity must be nonnegative, got {T}")
    return math.exp(-dom.integral(float(T)) - spread.integral(float(T)))


def schedule(maturity: float, frequency: int, start: float = 0.0) -> np.ndarray:
    """Payment dates ``T_1..T_N`` rolled forward from ``start`` at ``1/frequency``
    year steps; a short final stub absorbs any remainder."""
    if frequency < 1:
        raise ValueError("frequency must be >= 1")
    if maturity <= start:
        raise ValueError("maturity must be after start")
    step = 1.0 / frequency
    n_full = int(math.floor((maturity - start) * frequency + 1e-9))
    dates = [start + step * (n + 1) for n in range(n_full)]
    if not dates or maturity - dates[-1] > 1e-9:
        dates.append(maturity)
    else:
        dates[-1] = maturity
    return np.array(dates)


def ois_par(curve: TermStructure, dates: Sequence[float], start: float = 0.0) -> float:
    """Par fixed rate of a ``start``-start OIS discounted on ``curve``."""
    dates = np.asarray(dates, dtype=float)
    if dates.size == 0:
        raise ValueError("empty schedule")
    accruals = np.diff(np.concatenate(([start], dates)))
    dfs = curve.discount(dates)
    return float((curve.discount(start) - dfs[-1]) / np.dot(accruals, dfs))


def mtmccois_par(
    dom: TermStructure, spread: TermStructure, dates: Sequence[float], start: float = 0.0
) -> float:
    """Par basis spread of a MtM cross-currency OIS collateralized in the
    notional-refreshed currency, with ``c`` independent of ``y``."""
    dates = np.asarray(dates, dtype=float)
    if dates.size == 0:
        raise ValueError("empty schedule")
    all_dates = np.concatenate(([start], dates))
    accruals = np.diff(all_dates)
    d = dom.discount(all_dates)
    y = spread.discount(all_dates)
    numerator = np.sum(d[:-1] * (y[:-1] - y[1:]))
    return float(numerator / np.dot(accruals, d[1:] * y[1:]))


def _solve_pillar(objective, guess: float, label: str) -> float:
    lo, hi = guess - 0.05, guess + 0.05
    f_lo, f_hi = objective(lo), objective(hi)
    widenings = 0
    while f_lo * f_hi > 0.0:
        widenings += 1
        if widenings > 8:
            raise CalibrationError(f"root not bracketed for pillar {label}")
        width = hi - lo
        lo, hi = lo - width, hi + width
        f_lo, f_hi = objective(lo), objective(hi)
    root = brentq(objective, lo, hi, xtol=1e-16, rtol=1e-15, maxiter=200)
    if abs(objective(root)) > PAR_TOLERANCE:
        raise CalibrationError(f"par error above tolerance at pillar {label}")
    return root


def _check_quotes(quotes) -> np.ndarray:
    q = np.asarray(quotes, dtype=float).reshape(-1, 2) if len(quotes) else np.empty((0, 2))
    if q.shape[0] == 0:
        raise ValueError("no quotes to bootstrap")
    if q[0, 0] <= 0.0 or np.any(np.diff(q[:, 0]) <= 0.0):
        raise ValueError("quote maturities must be positive and strictly ascending")
    return q


def bootstrap_collateral_curve(
    ois_quotes: Sequence[tuple[float, float]], frequency: int = 1
) -> TermStructure:
    """Collateral-rate curve from OIS par rates, one flat forward per quote.

    Args:
        ois_quotes: ``(maturity_years, par_rate)`` pairs, maturities ascending.
        frequency: Fixed-leg payments per year.

    Raises:
        CalibrationError: If a pillar's root cannot be bracketed.
    """
    q = _check_quotes(ois_quotes)
    tenors = np.concatenate(([0.0], q[:-1, 0]))
    rates = np.zeros(len(q))
    for k, (maturity, quote) in enumerate(q):
        dates = schedule(maturity, frequency)

        def objective(r, k=k, dates=dates, quote=quote):
            rates[k] = r
            trial = TermStructure(tenors[: k + 1], rates[: k + 1])
            return ois_par(trial, dates) - quote

        guess = rates[k - 1] if k else quote
        rates[k] = _solve_pillar(objective, guess, f"{maturity:g}y")
    return TermStructure(tenors, rates, end=float(q[-1, 0]))


def bootstrap_spread_curve(
    ccs_quotes: Sequence[tuple[float, float]],
    dom: TermStructure,
    for_: TermStructure | None = None,
    frequency: int = 4,
) -> TermStructure:
    """Funding-spread curve ``y^(dom, for)`` from par MtM cross-currency OIS
    basis spreads paid on the ``dom`` leg.

    Under the independence convention the par spread depends only on the
    domestic collateral curve and ``y``; ``for_`` is checked for coverage.
    """
    q = _check_quotes(ccs_quotes)
    horizon = float(q[-1, 0])
    for curve, name in ((dom, "domestic"), (for_, "foreign")):
        if curve is not None and not curve.covers(horizon):
            raise ValueError(f"{name} collateral curve ends before {horizon:g}y")
    tenors = np.concatenate(([0.0], q[:-1, 0]))
    rates = np.zeros(len(q))
    for k, (maturity, quote) in enumerate(q):
        dates = schedule(maturity, frequency)

        def objective(r, k=k, dates=dates, quote=quote):
            rates[k] = r
            trial = TermStructure(tenors[: k + 1], rates[: k + 1])
            return mtmccois_par(dom, trial, dates) - quote

        guess = rates[k - 1] if k else quote
        rates[k] = _solve_pillar(objective, guess, f"{maturity:g}y")
    return TermStructure(tenors, rates, end=horizon)


def decompose_single_currency_spreads(
    spread_set: Mapping[tuple[str, str], TermStructure], anchor: str
) -> dict[str, TermStructure]:
    """Per-currency spreads ``y^(k)`` from pairwise ``y^(a, b) = y^(a) - y^(b)``.

    The anchor's collateral rate is identified with its risk-free rate, so
    ``y^(anchor) = 0`` and every other currency is read off its pair against
    the anchor (either orientation).
    """
    currencies = {anchor} | {c for pair in spread_set for c in pair}
    out: dict[str, TermStructure] = {anchor: TermStructure.flat(0.0)}
    for k in sorted(currencies - {anchor}):
        candidates = []
        if (k, anchor) in spread_set:
            candidates.append(spread_set[(k, anchor)])
        if (anchor, k) in spread_set:
            candidates.append(-spread_set[(anchor, k)])
        if not candidates:
            raise KeyError(f"no spread curve between {k} and anchor {anchor}")
        if len(candidates) == 2:
            gap = candidates[0] - candidates[1]
            if np.max(np.abs(gap.rates)) > 1e-12:
                raise ValueError(f"inconsistent quotes for pair {k}/{anchor}")
        out[k] = candidates[0]
    return out


def pair_spread(funding: Mapping[str, TermStructure], a: str, b: str) -> TermStructure:
    """``y^(a, b) = y^(a) - y^(b)``."""
    if a == b:
        return TermStructure.flat(0.0)
    return funding[a] - funding[b]


def _read_two_column_csv(path: str | Path, header: tuple[str, str]) -> list[tuple[float, float]]:
    rows: list[tuple[float, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise CurveFileError(path, 1, "empty file") from None
        if tuple(c.strip() for c in first) != header:
            raise CurveFileError(path, 1, f"expected header {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise CurveFileError(path, line, f"expected 2 fields, got {len(row)}")
            try:
                a, b = float(row[0]), float(row[1])
            except ValueError:
                raise CurveFileError(path, line, f"non-numeric value in {row!r}") from None
            if not (math.isfinite(a) and math.isfinite(b)):
                raise CurveFileError(path, line, "non-finite value")
            rows.append((a, b))
    if not rows:
        raise CurveFileError(path, 2, "no data rows")
    return rows


def read_curve_csv(path: str | Path, end: float | None = None) -> TermStructure:
    rows = _read_two_column_csv(path, ("tenor_years", "rate"))
    try:
        return TermStructure([t for t, _ in rows], [r for _, r in rows], end)
    except ValueError as exc:
        raise CurveFileError(path, 2, str(exc)) from None


def write_curve_csv(path: str | Path, curve: TermStructure) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tenor_years", "rate"])
        for t, r in zip(curve.tenors, curve.rates):
            writer.writerow([repr(float(t)), repr(float(r))])


def read_quotes_csv(path: str | Path) -> list[tuple[float, float]]:
    return _read_two_column_csv(path, ("maturity_years", "quote"))


def write_quotes_csv(path: str | Path, quotes: Iterable[tuple[float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["maturity_years", "quote"])
        for m, q in quotes:
            writer.writerow([repr(float(m)), repr(float(q))])
