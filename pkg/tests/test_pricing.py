import warnings

import numpy as np
import pytest
from hypothesis import given, settings

from darkmkt.equilibrium import solve_steady_state
from darkmkt.model import validate
from darkmkt.pricing import (
    PriceDisagreementWarning,
    SingularMarketError,
    bargain_price_closed,
    effective_bargaining_power,
    equilibrium_prices,
    hjb_linear_solve,
    hjb_residual,
    intermediates,
    reservation_values,
    seller_timing,
    theorem_price,
    value_functions_closed,
)

from conftest import PUBLISHED_X, random_params, seeds


def prices_with_explicit_bargaining(p, x):
    """Oracle: keep prices as unknowns next to the values and add the bargaining rule."""
    K, q, r = p.K, p.q, p.r
    a, d = p.lam * x[K:], p.lam * x[:K]
    n = 4 * K + 1
    X, Y, Z, W, Pc = (lambda i: i), (lambda i: K + i), (lambda i: 2 * K + i), 3 * K, (lambda i: 3 * K + 1 + i)
    A, b = np.zeros((n, n)), np.zeros(n)
    row = iter(range(n))
    k = next(row)  # idle: r w = sum gtu (x - w)
    A[k, W] = r + p.gamma_tilde_u.sum()
    for i in range(K):
        A[k, X(i)] = -p.gamma_tilde_u[i]
    for i in range(K):
        k = next(row)  # buyer: r x = gtd (w - x) + a (z - x - P)
        A[k, X(i)] = r + p.gamma_tilde_d[i] + a[i]
        A[k, W] -= p.gamma_tilde_d[i]
        A[k, Z(i)] -= a[i]
        A[k, Pc(i)] += a[i]
        k = next(row)  # high owner: r z = dh + gd (y - z)
        A[k, Z(i)] = r + p.gamma_d[i]
        A[k, Y(i)] = -p.gamma_d[i]
        b[k] = p.delta_h[i]
        k = next(row)  # low owner: r y = dh - dd + gu (z - y) + d (P + w - y)
        A[k, Y(i)] = r + p.gamma_u[i] + d[i]
        A[k, Z(i)] = -p.gamma_u[i]
        A[k, Pc(i)] = -d[i]
        A[k, W] -= d[i]
        b[k] = p.delta_h[i] - p.delta_d[i]
        k = next(row)  # bargaining: P = (1-q)(y - w) + q (z - x)
        A[k, Pc(i)] = 1
        A[k, Y(i)] = -(1 - q)
        A[k, W] += 1 - q
        A[k, Z(i)] = -q
        A[k, X(i)] = q
    v = np.linalg.solve(A, b)
    return v[3 * K + 1 :], v


def test_intermediates_at_published_masses(two_asset):
    it = intermediates(two_asset, PUBLISHED_X)
    np.testing.assert_allclose(it.Psi, [5.6366, 0.3026], rtol=1e-3)
    np.testing.assert_allclose(it.Gamma, [5.7159, 0.3075], atol=1e-3)
    np.testing.assert_allclose(it.Lambda, [0.9861, 0.9837], atol=1e-3)
    np.testing.assert_allclose(it.Omega, [0.0011, 0.0677], atol=1e-3)


def test_timing_at_published_masses(two_asset):
    np.testing.assert_allclose(seller_timing(two_asset, PUBLISHED_X).days, [2.0, 1.7], atol=0.1)


def test_display_price_two_at_published_masses(two_asset):
    assert theorem_price(two_asset, PUBLISHED_X)[1] == pytest.approx(69.6551, abs=0.1)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_regular_forms_match_definitions(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    x = solve_steady_state(p).x
    it = intermediates(p, x)
    q, r = p.q, p.r
    buyer = 1 + (p.gamma + r) / (q * it.d)
    Psi = buyer * (1 + p.gamma_tilde_d / ((1 - q) * it.a)) - 1
    Gamma = buyer * (1 + (p.gamma_tilde_d + r) / ((1 - q) * it.a)) - 1
    np.testing.assert_allclose(it.Psi, Psi, rtol=1e-10)
    np.testing.assert_allclose(it.Gamma, Gamma, rtol=1e-10)
    np.testing.assert_allclose(it.Lambda, Psi / Gamma, rtol=1e-10)
    np.testing.assert_allclose(it.Omega, p.delta_d / (q * it.d * Gamma), rtol=1e-10)
    # the gap between the two ratios carries the buyer factor
    np.testing.assert_allclose(it.Gamma - it.Psi, buyer * r / ((1 - q) * it.a), rtol=1e-9)
    assert np.all((0 < it.Lambda) & (it.Lambda < 1)) and np.all(it.Gamma > it.Psi) and np.all(it.Psi > 0)
    assert it.theta > 0


def test_gamma_minus_psi_is_not_the_bare_rate_term(two_asset, steady):
    it = intermediates(two_asset, steady)
    bare = two_asset.r / ((1 - two_asset.q) * it.a)
    assert np.all(np.abs(it.Gamma - it.Psi - bare) > 1e-3 * bare)


@settings(max_examples=150, deadline=None)
@given(seeds)
def test_closed_forms_match_both_linear_solves(seed):
    p = random_params(np.random.default_rng(seed))
    x = solve_steady_state(p).x
    direct = hjb_linear_solve(p, x)
    closed = value_functions_closed(p, x)
    scale = np.max(np.abs(direct.as_vector()))
    np.testing.assert_allclose(closed.as_vector(), direct.as_vector(), rtol=1e-9, atol=1e-12 * scale)
    assert hjb_residual(p, x, closed) < 1e-10
    oracle_prices, _ = prices_with_explicit_bargaining(p, x)
    low, high = reservation_values(direct, closed)
    bargain = (1 - p.q) * low + p.q * high
    np.testing.assert_allclose(bargain, oracle_prices, rtol=1e-9)
    np.testing.assert_allclose(bargain_price_closed(p, x), oracle_prices, rtol=1e-9)
    assert np.all((low <= bargain + 1e-12) & (bargain <= high + 1e-12))


def test_two_asset_report(two_asset, steady):
    with pytest.warns(PriceDisagreementWarning):
        rep = equilibrium_prices(two_asset, steady)
    np.testing.assert_allclose(rep.prices, [48.6204512942, 60.5779178614], rtol=1e-9)
    np.testing.assert_allclose(rep.price_theorem, [48.9226576926, 68.3185356914], rtol=1e-9)
    np.testing.assert_allclose(rep.timing.days, [9.54063, 1278.9], rtol=1e-4)
    assert rep.timing.first_sold == 1 and not rep.theorem_agrees


def test_no_holding_cost_gives_perpetuity(two_asset, steady):
    p = two_asset.replace(delta_d=[0.0, 0.0])
    p = validate(p, allow_zero=("delta_d",))
    it = intermediates(p, steady)
    assert np.all(it.Omega == 0) and it.theta == 0
    np.testing.assert_allclose(bargain_price_closed(p, steady.x), p.delta_h / p.r, rtol=1e-14)
    np.testing.assert_allclose(theorem_price(p, steady.x), p.delta_h / p.r, rtol=1e-14)
    vf = hjb_linear_solve(p, steady.x)
    assert hjb_residual(p, steady.x, vf) < 1e-12


@pytest.mark.parametrize("kappa", [0.5, 3.0])
def test_prices_scale_with_dividends(two_asset, steady, kappa):
    scaled = two_asset.replace(delta_h=two_asset.delta_h * kappa, delta_d=two_asset.delta_d * kappa)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PriceDisagreementWarning)
        base = equilibrium_prices(two_asset, steady)
        other = equilibrium_prices(scaled, steady)
    np.testing.assert_allclose(other.prices, kappa * base.prices, rtol=1e-12)
    np.testing.assert_allclose(other.values.as_vector(), kappa * base.values.as_vector(), rtol=1e-12)


def test_effective_bargaining_power(two_asset, steady):
    assert effective_bargaining_power(0.0, two_asset, steady) == 0.0
    assert effective_bargaining_power(1.0, two_asset, steady) == 1.0
    assert 0 < effective_bargaining_power(0.5, two_asset, steady) < 1
    sym = np.array([0.02, 0.03, 0.02, 0.03])
    assert effective_bargaining_power(0.3, two_asset, sym) == pytest.approx(0.3, rel=1e-14)
    with pytest.raises(ValueError):
        effective_bargaining_power(1.2, two_asset, steady)


def test_timing_halves_when_meeting_rate_doubles(two_asset, steady):
    days = seller_timing(two_asset, steady).days
    faster = seller_timing(two_asset.replace(lam=2 * two_asset.lam), steady).days
    np.testing.assert_allclose(faster, days / 2, rtol=1e-14)


def test_zero_buyer_mass_is_infinite_timing(two_asset):
    rep = seller_timing(two_asset, [0.0, 0.01, 0.1, 0.1])
    assert rep.infinite.tolist() == [True, False] and rep.first_sold == 2 and np.isinf(rep.max_days)


def test_singular_market(two_asset):
    with pytest.raises(SingularMarketError):
        intermediates(two_asset, [0.0, 0.01, 0.1, 0.1])
