import pytest

from liqode import ModelParams, continue_to_zero, solve_global
from liqode.finance import MarketParams, map_market

_cache = {}


def global_solution(a, b, c):
    key = ("global", a, b, c)
    if key not in _cache:
        _cache[key] = solve_global(ModelParams(a, b, c))
    return _cache[key]


def family_trace(u0, a=1.0, b=1.0, c=1.0, x0=1.0):
    key = ("family", a, b, c, x0, u0)
    if key not in _cache:
        _cache[key] = continue_to_zero(ModelParams(a, b, c), x0, u0)
    return _cache[key]


@pytest.fixture(scope="session")
def g111():
    return global_solution(1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def family():
    return {u0: family_trace(u0) for u0 in (0.3, 0.5, 0.7)}


@pytest.fixture(scope="session")
def market():
    return MarketParams(lam=0.0, sigma=0.2, rstar=0.0, rho=0.1, eta=1.0)


@pytest.fixture(scope="session")
def market_solution(market):
    p = map_market(market)
    return global_solution(p.a, p.b, p.c).solution
