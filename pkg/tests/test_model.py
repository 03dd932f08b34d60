import json

import numpy as np
import pytest
from hypothesis import given, settings

from darkmkt.model import (
    FullState,
    ModelParams,
    StateError,
    ValidationError,
    check_reduced,
    full_to_reduced,
    load_params,
    reduced_to_full,
    validate,
)

from conftest import random_params, seeds


def test_bundled_example_loads(two_asset):
    assert two_asset.K == 2
    np.testing.assert_allclose(two_asset.gamma, [5.5, 11.0])
    np.testing.assert_allclose(two_asset.gamma_tilde, [6.0, 1.9])
    assert two_asset.m_total == pytest.approx(0.9)


def test_round_trip_through_json(tmp_path, two_asset):
    path = tmp_path / "p.json"
    path.write_text(json.dumps(two_asset.to_dict()))
    again = load_params(path)
    for key, value in two_asset.to_dict().items():
        assert again.to_dict()[key] == value


def test_validation_collects_every_problem(two_asset):
    bad = two_asset.replace(q=1.5, r=-0.1, m=[0.7, 0.6])
    with pytest.raises(ValidationError) as info:
        validate(bad)
    text = str(info.value)
    assert "q must lie" in text and "r must be" in text and "sum of m" in text


def test_zero_meeting_rate_needs_opt_in(two_asset):
    no_trade = two_asset.replace(lam=[0.0, 0.0])
    with pytest.raises(ValidationError):
        validate(no_trade)
    assert validate(no_trade, allow_zero=("lambda",)).lam.sum() == 0


def test_only_known_fields_can_be_relaxed(two_asset):
    with pytest.raises(ValueError):
        validate(two_asset.replace(q=0.3), allow_zero=("q",))


@pytest.mark.parametrize(
    "change",
    [{"delta_d": [3.0, 1.5]}, {"gamma_u": [0.0, 8.0]}, {"m": [0.3]}, {"lam": [np.nan, 1.0]}],
)
def test_rejects_invalid_fields(two_asset, change):
    with pytest.raises(ValidationError):
        validate(two_asset.replace(**change))


def test_missing_and_unknown_keys():
    with pytest.raises(ValidationError, match="missing"):
        ModelParams.from_dict({"K": 1})
    base = {
        "K": 1, "lambda": [1], "gamma_u": [1], "gamma_d": [1], "gamma_tilde_u": [1],
        "gamma_tilde_d": [1], "m": [0.5], "delta_h": [2], "delta_d": [1], "q": 0.5, "r": 0.05,
    }
    assert validate(ModelParams.from_dict(base)).K == 1
    with pytest.raises(ValidationError, match="unknown"):
        ModelParams.from_dict({**base, "sigma": 1})


def test_published_state_is_infeasible_but_owner_masses_match(two_asset):
    x = np.array([0.0991, 0.0720, 0.0011, 0.0116])
    np.testing.assert_allclose(two_asset.m - x[2:], [0.2989, 0.5884], atol=1e-4)
    # the published buyer masses leave a negative idle mass: 1 - 0.9 - 0.1711
    with pytest.raises(StateError, match="negative"):
        reduced_to_full(x, two_asset)


def test_infeasible_states_are_rejected(two_asset):
    with pytest.raises(StateError):
        check_reduced([0.05, 0.06, 0.0, 0.0], two_asset)  # idle mass negative
    with pytest.raises(StateError):
        check_reduced([0.01, 0.01, 0.31, 0.0], two_asset)
    with pytest.raises(StateError):
        check_reduced([0.01, 0.01, 0.01], two_asset)


def test_broken_ownership_constraint(two_asset):
    mu = FullState([0.01, 0.01], [0.1, 0.1], [0.1, 0.5], 0.18)
    with pytest.raises(StateError, match="ownership"):
        full_to_reduced(mu, two_asset)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_reduced_full_round_trip(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    x = np.concatenate([rng.dirichlet(np.ones(p.K + 1))[: p.K] * (1 - p.m_total), rng.uniform(0, 1, p.K) * p.m])
    full = reduced_to_full(x, p)
    assert full.as_vector().sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(full_to_reduced(full, p), x, rtol=0, atol=0)
    np.testing.assert_array_equal(FullState.from_vector(full.as_vector()).as_vector(), full.as_vector())
