import numpy as np
import pytest
from hypothesis import strategies as st

from darkmkt.equilibrium import solve_steady_state
from darkmkt.model import ModelParams, two_asset_params, validate

# published reduced state for the bundled two-asset example: (hn_1, hn_2, lo_1, lo_2)
PUBLISHED_X = np.array([0.0991, 0.0720, 0.0011, 0.0116])


def random_params(rng, K=None):
    """Random valid market: meeting rates log-uniform in [1, 5000], switching rates in [0.1, 10]."""
    K = K or int(rng.integers(1, 5))

    def log_uniform(lo, hi):
        return np.exp(rng.uniform(np.log(lo), np.log(hi), K))

    m = rng.dirichlet(np.ones(K)) * rng.uniform(0.05, 0.95)
    dh = rng.uniform(1, 5, K)
    return validate(
        ModelParams(
            K=K,
            lam=log_uniform(1, 5000),
            gamma_u=log_uniform(0.1, 10),
            gamma_d=log_uniform(0.1, 10),
            gamma_tilde_u=log_uniform(0.1, 10),
            gamma_tilde_d=log_uniform(0.1, 10),
            m=m,
            delta_h=dh,
            delta_d=dh * rng.uniform(0.05, 0.9, K),
            q=rng.uniform(0.05, 0.95),
            r=rng.uniform(0.01, 0.2),
        )
    )


seeds = st.integers(min_value=0, max_value=2**32 - 1)


@pytest.fixture(scope="session")
def two_asset():
    return two_asset_params()


@pytest.fixture(scope="session")
def steady(two_asset):
    return solve_steady_state(two_asset)


@pytest.fixture
def rng():
    return np.random.default_rng(20261018)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
