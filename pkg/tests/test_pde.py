import numpy as np
import pytest

import csaprice.pde as pde_mod
from csaprice.pde import (
    ContinuousMtMCCOIS,
    PDEConvergenceError,
    PDEGrid,
    SpreadFactor,
    _time_grid,
    clean_value_continuous,
    continuous_par_spread,
    gateaux_vs_pde_report,
    regime_value,
    solve_nonlinear_pde,
)

from conftest import flat_market

BP = 1e-4


@pytest.fixture(scope="module")
def model100(market):
    return market.with_vols(sigma_y=0.01, sigma_c=0.0)


@pytest.fixture(scope="module")
def payer(model100):
    return ContinuousMtMCCOIS(continuous_par_spread(model100, 10.0), 10.0, "payer")


class TestContract:
    def test_weight(self):
        assert ContinuousMtMCCOIS(0.0, 1.0, "receiver", 2.0).weight == -2.0

    @pytest.mark.parametrize("kw", [dict(maturity=0.0), dict(side="long")])
    def test_invalid(self, kw):
        args = dict(spread=0.0, maturity=1.0) | kw
        with pytest.raises(ValueError):
            ContinuousMtMCCOIS(**args)

    def test_par_spread_zero_value(self, model100):
        contract = ContinuousMtMCCOIS(continuous_par_spread(model100, 7.0), 7.0)
        assert abs(clean_value_continuous(model100, contract, 0.0, 0.0)) < 1e-14

    def test_par_spread_flat_curve(self):
        m = flat_market(y=-0.003, sigma_y=0.0)
        assert continuous_par_spread(m, 10.0) == pytest.approx(-0.003, abs=1e-15)


class TestGrid:
    def test_odd(self):
        assert PDEGrid(n_space=100).n_space == 101

    def test_refine_coarsen(self):
        g = PDEGrid(201, 50)
        assert g.refined().n_space == 401 and g.refined().steps_per_year == 100
        assert g.coarsened().n_space == 101 and g.coarsened().steps_per_year == 25

    def test_time_grid_hits_pillars(self):
        legs = [ContinuousMtMCCOIS(0.0, 2.3)]
        t = _time_grid(legs, 4, np.array([0.0, 1.1, 5.0]))
        assert t[0] == 0.0 and t[-1] == 2.3 and 1.1 in t
        assert np.all(np.diff(t) <= 0.25 + 1e-12)


class TestSymmetric:
    def test_par_is_zero(self, model100, payer):
        sol = solve_nonlinear_pde(model100, payer, symmetric=True)
        assert abs(sol.value) < 0.1 * BP

    @pytest.mark.parametrize("side", ["payer", "receiver"])
    def test_reproduces_clean(self, model100, payer, side):
        contract = ContinuousMtMCCOIS(payer.spread, payer.maturity, side)
        sol = solve_nonlinear_pde(model100, contract, symmetric=True)
        factor = SpreadFactor.from_model(model100)
        for y0 in np.linspace(-0.02, 0.02, 21):
            exact = clean_value_continuous(model100, contract, 0.0, y0 - factor.phi(0.0))
            assert abs(sol.at(y0) - exact) < 0.1 * BP

    def test_outside_grid(self, model100, payer):
        sol = solve_nonlinear_pde(model100, payer, PDEGrid(51, 10), symmetric=True)
        with pytest.raises(ValueError):
            sol.at(1.0)


class TestNonlinear:
    def test_grid_convergence(self, model100, payer):
        coarse = solve_nonlinear_pde(model100, payer, PDEGrid()).value
        fine = solve_nonlinear_pde(model100, payer, PDEGrid().refined()).value
        assert abs(fine - coarse) < 0.05 * BP

    @pytest.mark.parametrize("side", ["payer", "receiver"])
    def test_boundary_consistency(self, model100, payer, side):
        # one cell in from each edge the solution follows the edge regime's
        # closed form; for these eligibility sets the regime is c alone at
        # the payer's lower edge and c + y elsewhere
        contract = ContinuousMtMCCOIS(payer.spread, payer.maturity, side)
        sol = solve_nonlinear_pde(model100, contract)
        factor = SpreadFactor.from_model(model100)
        lower_spread = side == "receiver"
        for n, t in enumerate(sol.times):
            lo = regime_value(factor, [contract], t, sol.x[1], lower_spread)
            hi = regime_value(factor, [contract], t, sol.x[-2], True)
            assert abs(sol.values[n, 1] - lo) < 0.2 * BP
            assert abs(sol.values[n, -2] - hi) < 0.2 * BP
            assert sol.values[n, 0] == pytest.approx(regime_value(factor, [contract], t, sol.x[0], lower_spread), abs=1e-15)

    def test_option_value_sign(self, model100, payer):
        # party 1's cheapest-to-deliver choice can only help party 1
        grid = PDEGrid(201, 50)
        for side in ("payer", "receiver"):
            contract = ContinuousMtMCCOIS(payer.spread, payer.maturity, side)
            nl = solve_nonlinear_pde(model100, contract, grid).value
            sym = solve_nonlinear_pde(model100, contract, grid, symmetric=True).value
            assert nl >= sym - 1e-10

    def test_iteration_cap(self, model100, payer, monkeypatch):
        monkeypatch.setattr(pde_mod, "MAX_POLICY_ITERATIONS", 1)
        with pytest.raises(PDEConvergenceError):
            solve_nonlinear_pde(model100, payer, PDEGrid(101, 20))

    def test_bad_eligibility(self, model100, payer):
        with pytest.raises(ValueError):
            solve_nonlinear_pde(model100, payer, PDEGrid(51, 10), {"EUR"}, {"USD"})

    def test_low_vol_warning(self, payer):
        m = flat_market(y=-0.003, sigma_y=1e-5)
        sol = solve_nonlinear_pde(m, ContinuousMtMCCOIS(-0.003, 5.0), PDEGrid(51, 10))
        assert any("upwind" in w for w in sol.warnings)

    def test_curve_coverage(self, payer):
        m = flat_market(sigma_y=0.01, end=5.0)
        with pytest.raises(ValueError):
            solve_nonlinear_pde(m, payer, PDEGrid(51, 10))


class TestReport:
    def test_zero_vol_flat_spread(self):
        m = flat_market(c_dom=0.01, y=-0.003)
        rows = gateaux_vs_pde_report(m, None, [0.0], "payer", 5.0, PDEGrid(101, 20), n_paths=200)
        r = rows[0]
        assert abs(r.pde_minus_clean) < 1e-3 * BP and abs(r.gateaux) < 1e-3 * BP

    def test_small_vol_agreement(self, market):
        rows = gateaux_vs_pde_report(
            market, None, [0.0025, 0.005], "payer", 5.0, PDEGrid(201, 50), n_paths=4000, steps_per_year=52
        )
        for r in rows:
            assert r.pde_minus_clean > 0 and r.gateaux > 0
            assert abs(r.discrepancy) < 0.15 * r.pde_minus_clean + 3 * r.gateaux_stderr
        assert rows[1].pde_minus_clean > rows[0].pde_minus_clean
