import sys

import numpy as np
import pytest

from csaprice.curves import TermStructure
from csaprice.dynamics import HullWhiteParams
from csaprice.market import MarketModel, default_market


def flat_market(
    c_dom=0.02,
    c_for=0.03,
    y=-0.003,
    sigma_c=0.0,
    sigma_y=0.0,
    sigma_fx=0.0,
    kappa=0.015,
    fx_spot=100.0,
    anchor="JPY",
    correlation=None,
    end=None,
):
    """Flat-curve JPY/USD market; all vols zero unless given."""
    to_curve = lambda v: v if isinstance(v, TermStructure) else TermStructure.flat(v, end)
    return MarketModel.from_pair_spread(
        "JPY",
        "USD",
        to_curve(c_dom),
        to_curve(c_for),
        to_curve(y),
        fx_spot,
        HullWhiteParams(kappa, sigma_c),
        HullWhiteParams(kappa, sigma_c),
        HullWhiteParams(kappa, sigma_y),
        sigma_fx,
        correlation,
        anchor,
    )


@pytest.fixture(scope="session")
def market():
    return default_market()


@pytest.fixture
def flat():
    return flat_market


def random_curve(rng, n_pillars=None, lo=-0.01, hi=0.10, max_tenor=30.0):
    n = int(rng.integers(1, 8)) if n_pillars is None else n_pillars
    tenors = np.concatenate(([0.0], np.sort(rng.choice(np.arange(1, int(max_tenor)), n - 1, replace=False))))
    return TermStructure(tenors.astype(float), rng.uniform(lo, hi, n))


def pytest_terminal_summary(terminalreporter):
    """One verdict line per acceptance criterion that ran."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
