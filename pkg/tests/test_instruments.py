import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from csaprice.curves import TermStructure
from csaprice.dynamics import SimulationConfig, fit_theta, simulate, simulate_block, simulate_from
from csaprice.instruments import (
    MtMCCOISSpec,
    OISSpec,
    clean_price,
    clean_value_mtmccois_on_path,
    clean_value_ois_on_path,
    clean_values,
    dump_spec,
    fx_forward,
    load_spec,
    mtmccois_par_spread,
    mtmccois_value,
    ois_par_rate,
    ois_value,
)

from conftest import flat_market


def _par_ois(model, maturity=5.0, **kw):
    spec = OISSpec.standard(model.domestic, maturity, 1, **kw)
    return spec.with_rate(ois_par_rate(model, spec))


def _par_ccs(model, maturity=5.0, **kw):
    spec = MtMCCOISSpec.standard(model.domestic, model.foreign, maturity, 4, **kw)
    return spec.with_spread(mtmccois_par_spread(model, spec))


class TestFXForward:
    def test_spot(self, market):
        assert fx_forward(market, ("JPY", "USD"), "USD", 0.0) == market.fx_spot
        assert fx_forward(market, ("USD", "JPY"), "USD", 0.0) == pytest.approx(1 / market.fx_spot)

    def test_deterministic(self):
        model = flat_market(c_dom=0.05, c_for=0.01, y=0.0)
        assert fx_forward(model, ("JPY", "USD"), "JPY", 1.0) == pytest.approx(104.08107741923882, rel=1e-14)

    def test_collateral_independent_under_zero_spread(self):
        model = flat_market(y=0.0)
        assert fx_forward(model, ("JPY", "USD"), "JPY", 3.0) == pytest.approx(
            fx_forward(model, ("JPY", "USD"), "USD", 3.0), rel=1e-14
        )

    def test_unknown_pair(self, market):
        with pytest.raises(KeyError):
            fx_forward(market, ("JPY", "EUR"), "JPY", 1.0)

    def test_martingale(self, market):
        T = 5.0
        paths = simulate(market, SimulationConfig(n_paths=20_000, horizon=T))
        disc = np.exp(-paths.int_c_dom[:, -1] - paths.int_y[:, -1])
        sample = disc * np.exp(paths.log_fx[:, -1])
        target = market.discount("JPY", T, "USD") * fx_forward(market, ("JPY", "USD"), "USD", T)
        se = sample.std(ddof=1) / math.sqrt(sample.size)
        assert abs(sample.mean() - target) < 3 * se


class TestOIS:
    def test_single_period(self):
        model = flat_market(c_dom=0.02)
        spec = OISSpec("JPY", (1.0,))
        assert ois_par_rate(model, spec) == pytest.approx(0.020201340026755776, rel=1e-14)

    def test_two_pillar_hand_values(self):
        model = flat_market(c_dom=TermStructure.from_pillars({0: 0.01, 1: 0.03}))
        d1, d2 = math.exp(-0.01), math.exp(-0.04)
        assert ois_par_rate(model, OISSpec("JPY", (1.0, 2.0))) == pytest.approx((1 - d2) / (d1 + d2), rel=1e-14)

    @pytest.mark.parametrize("collateral", ["JPY", "USD"])
    def test_par_round_trip(self, market, collateral):
        spec = _par_ois(market, 10.0, collateral=collateral)
        assert abs(ois_value(market, spec)) < 1e-14

    def test_sides_and_linearity(self, market):
        spec = OISSpec.standard("JPY", 7.0, 1)
        a, b = spec.with_rate(0.01), spec.with_rate(0.03)
        assert ois_value(market, a) + ois_value(market, a.flipped()) == 0.0
        mid = ois_value(market, spec.with_rate(0.02))
        assert ois_value(market, a) + ois_value(market, b) == pytest.approx(2 * mid, abs=1e-15)

    def test_breakdown_sums(self, market):
        price = clean_price(market, _par_ois(market).with_rate(0.01))
        assert price.value == pytest.approx(price.breakdown.sum(), abs=0)
        assert price.breakdown.size == 5

    def test_requires_rate(self, market):
        with pytest.raises(ValueError):
            ois_value(market, OISSpec.standard("JPY", 2.0))

    @pytest.mark.parametrize("dates", [(), (2.0, 1.0), (0.0,)])
    def test_bad_schedule(self, dates):
        with pytest.raises(ValueError):
            OISSpec("JPY", dates)


class TestMtMCCOIS:
    def test_zero_spread_curve(self):
        model = flat_market(y=0.0)
        assert mtmccois_par_spread(model, MtMCCOISSpec.standard("JPY", "USD", 10.0)) == 0.0

    def test_flat_spread(self):
        model = flat_market(y=-0.003)
        assert abs(mtmccois_par_spread(model, MtMCCOISSpec.standard("JPY", "USD", 10.0)) + 0.003) < 1e-4

    @pytest.mark.parametrize("y", np.linspace(-0.01, 0.01, 9))
    def test_average_spread_approximation(self, market, y):
        model = flat_market(c_dom=market.collateral["JPY"], y=y)
        par = mtmccois_par_spread(model, MtMCCOISSpec.standard("JPY", "USD", 10.0))
        assert abs(par - y) < 2e-4

    def test_par_round_trip(self, market):
        spec = _par_ccs(market, 10.0)
        assert abs(mtmccois_value(market, spec)) < 1e-14
        assert abs(mtmccois_value(market, spec.flipped())) < 1e-14

    def test_domestic_collateral_unsupported(self, market):
        with pytest.raises(NotImplementedError):
            mtmccois_par_spread(market, MtMCCOISSpec.standard("JPY", "USD", 5.0, collateral="JPY"))


@pytest.fixture(scope="module")
def outer(market):
    dyn = fit_theta(market, SimulationConfig(n_paths=500, steps_per_year=52, horizon=5.0, block_size=500))
    return simulate_block(dyn, 0)


class TestOnPath:
    @pytest.mark.parametrize("collateral", ["JPY", "USD"])
    def test_ois_t0(self, outer, market, collateral):
        spec = _par_ois(market, collateral=collateral)
        assert np.max(np.abs(clean_value_ois_on_path(outer, spec, 0))) < 1e-12
        off = spec.with_rate(spec.fixed_rate + 0.004)
        assert_allclose(clean_value_ois_on_path(outer, off, 0), ois_value(market, off), atol=1e-12)

    def test_mtmccois_t0(self, outer, market):
        spec = _par_ccs(market)
        assert np.max(np.abs(clean_value_mtmccois_on_path(outer, spec, 0))) < 1e-12
        off = spec.with_spread(spec.spread - 0.002).flipped()
        assert_allclose(clean_value_mtmccois_on_path(outer, off, 0), mtmccois_value(market, off), atol=1e-12)

    def test_zero_after_maturity(self, outer, market):
        values = clean_values(outer, _par_ois(market, 3.0))
        assert values.shape == outer.c_dom.shape
        assert np.all(values[:, outer.local(3.0) :] == 0.0)

    def test_beyond_maturity(self, outer, market):
        with pytest.raises(ValueError):
            clean_value_ois_on_path(outer, _par_ois(market, 2.0), outer.local(3.0))

    def test_foreign_swap_unsupported(self, outer, market):
        with pytest.raises(NotImplementedError):
            clean_value_ois_on_path(outer, OISSpec.standard("USD", 2.0, fixed_rate=0.01), 3)

    def test_zero_vol_revaluation(self):
        c = TermStructure.from_pillars({0: 0.002, 2: 0.006, 4: 0.012})
        y = TermStructure.from_pillars({0: -0.001, 3: -0.004})
        model = flat_market(c_dom=c, y=y, c_for=0.015, fx_spot=90.0)
        paths = simulate(model, SimulationConfig(n_paths=2, steps_per_year=52, horizon=5.0))
        k = 137
        t = paths.times[k]
        D = lambda T: c.discount(T) / c.discount(t)
        Y = lambda T: y.discount(T) / y.discount(t)
        # OIS receiver, annual: current period started at 2
        ois = OISSpec.standard("JPY", 5.0, 1, fixed_rate=0.01)
        expect = sum(0.01 * D(T) for T in (3, 4, 5)) - c.discount(2.0) / c.discount(t) + D(5)
        assert_allclose(clean_value_ois_on_path(paths, ois, k), expect, rtol=0, atol=1e-12)
        # MtMCCOIS payer, quarterly: current period started at 2.5
        ccs = MtMCCOISSpec.standard("JPY", "USD", 5.0, 4, spread=-0.002)
        dates = np.array(ccs.dates)
        live = dates[dates > t]
        acc_j = c.discount(2.5) / c.discount(t)
        fx_ratio = math.exp(paths.log_fx[0, k] - paths.log_fx[0, 130])
        acc_i = math.exp(-(0.015 * 2.5)) / math.exp(-(0.015 * t))
        prev = np.concatenate(([t], live[:-1]))
        expect = (
            0.002 * 0.25 * sum(D(T) * Y(T) for T in live)
            + sum(D(a) * (Y(a) - Y(b)) for a, b in zip(prev[1:], live[1:]))
            - Y(live[0]) * acc_j
            + fx_ratio * acc_i
        )
        assert_allclose(clean_value_mtmccois_on_path(paths, ccs, k), expect, rtol=0, atol=1e-12)


def _nested_ois(outer, spec, p, k, n_inner, seed):
    """Realized discounted cash flows from outer path ``p`` at step ``k``."""
    dyn = outer.dynamics
    state = (outer.c_dom[p, k], outer.c_for[p, k], outer.y[p, k], outer.log_fx[p, k])
    inner = simulate_from(dyn, k, state, n_inner, seed)
    t = outer.times[k]
    dates = [T for T in spec.dates if T > t]
    reset = dyn.index_of(spec.dates[len(spec.dates) - len(dates) - 1] if len(dates) < len(spec.dates) else 0.0)
    A = math.exp(outer.int_c_dom[p, k] - outer.int_c_dom[p, reset])
    usd = spec.collateral != spec.currency
    total = np.zeros(n_inner)
    prev_int = np.zeros(n_inner)
    for n, T in enumerate(dates):
        j = inner.local(T)
        disc = np.exp(-inner.int_c_dom[:, j] - (inner.int_y[:, j] if usd else 0.0))
        delta = spec.accruals[len(spec.dates) - len(dates) + n]
        growth = np.exp(inner.int_c_dom[:, j] - prev_int) * (A if n == 0 else 1.0)
        total += disc * (spec.fixed_rate * delta - (growth - 1.0))
        prev_int = inner.int_c_dom[:, j]
    return total


def _nested_ccs(outer, spec, p, k, n_inner, seed):
    dyn = outer.dynamics
    state = (outer.c_dom[p, k], outer.c_for[p, k], outer.y[p, k], outer.log_fx[p, k])
    inner = simulate_from(dyn, k, state, n_inner, seed)
    t = outer.times[k]
    dates = [T for T in spec.dates if T > t]
    first = len(spec.dates) - len(dates)
    reset = dyn.index_of(spec.dates[first - 1] if first else 0.0)
    acc_j = math.exp(outer.int_c_dom[p, k] - outer.int_c_dom[p, reset])
    acc_i = math.exp(outer.int_c_for[p, k] - outer.int_c_for[p, reset])
    fx_reset = math.exp(outer.log_fx[p, reset])
    total = np.zeros(n_inner)
    prev = (np.zeros(n_inner), np.zeros(n_inner), np.full(n_inner, math.log(fx_reset)))
    for n, T in enumerate(dates):
        j = inner.local(T)
        disc = np.exp(-inner.int_c_dom[:, j] - inner.int_y[:, j])
        grow_j = np.exp(inner.int_c_dom[:, j] - prev[0]) * (acc_j if n == 0 else 1.0)
        grow_i = np.exp(inner.int_c_for[:, j] - prev[1]) * (acc_i if n == 0 else 1.0)
        fx = np.exp(inner.log_fx[:, j] - prev[2])
        delta = spec.accruals[first + n]
        total += disc * (fx * grow_i - grow_j - delta * spec.spread)
        prev = (inner.int_c_dom[:, j], inner.int_c_for[:, j], inner.log_fx[:, j])
    return spec.sign * total


class TestNestedMonteCarlo:
    @pytest.mark.parametrize("collateral, p, k", [("JPY", 11, 137), ("USD", 42, 60), ("JPY", 3, 208)])
    def test_ois(self, outer, market, collateral, p, k):
        spec = _par_ois(market, collateral=collateral).with_rate(0.004)
        sample = _nested_ois(outer, spec, p, k, 1000, 99)
        se = sample.std(ddof=1) / math.sqrt(sample.size)
        value = clean_value_ois_on_path(outer, spec, k)[p]
        assert abs(sample.mean() - value) < 3 * se

    @pytest.mark.parametrize("p, k", [(5, 137), (17, 14), (300, 250)])
    def test_mtmccois(self, outer, market, p, k):
        spec = _par_ccs(market)
        sample = _nested_ccs(outer, spec, p, k, 1000, 1234)
        se = sample.std(ddof=1) / math.sqrt(sample.size)
        value = clean_value_mtmccois_on_path(outer, spec, k)[p]
        assert abs(sample.mean() - value) < 3 * se


class TestSpecFiles:
    def test_round_trip(self, tmp_path, market):
        for spec in (_par_ois(market, collateral="USD"), _par_ccs(market).flipped()):
            path = tmp_path / "spec.json"
            path.write_text(json.dumps(dump_spec(spec)))
            assert load_spec(path) == spec

    def test_maturity_frequency(self):
        spec = load_spec({"type": "mtmccois", "spread_currency": "JPY", "refreshed_currency": "USD", "maturity": 2})
        assert spec.dates == tuple(np.arange(1, 9) * 0.25) and spec.collateral == "USD"
        assert load_spec({"type": "ois", "currency": "JPY", "maturity": 3}).dates == (1.0, 2.0, 3.0)

    @pytest.mark.parametrize(
        "raw", [{"type": "swaption"}, {"type": "ois", "currency": "JPY"}, {"type": "ois", "currency": "JPY", "maturity": 2, "side": "long"}]
    )
    def test_invalid(self, raw):
        with pytest.raises(ValueError):
            load_spec(raw)
