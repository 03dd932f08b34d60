import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings

from darkmkt.dynamics import integrate, reduced_rhs
from darkmkt.equilibrium import (
    ConvergenceError,
    DegenerateQuarticError,
    QuarticCoeffs,
    RootCountError,
    UnsupportedError,
    k2_quartic,
    k2_steady_state_by_quartic,
    quartic_positive_root,
    real_roots,
    solve_steady_state,
    verify_uniqueness_scan,
)

from conftest import random_params, seeds

# frozen from the Newton solver, confirmed by the ODE and quartic routes below
TWO_ASSET_X = np.array([0.0209629727186, 9.7739976244e-05, 0.00473130659135, 0.160779172277])


def resultant_quartic(p):
    """Oracle: eliminate the second buyer mass with a sympy resultant."""
    x, y = sp.symbols("x y")
    free = sp.nsimplify(1 - p.m_total, rational=True)
    eqs = []
    for i, (b, other) in enumerate(((x, y), (y, x))):
        lam, g, gd, m, gtu, gt = (
            sp.nsimplify(float(v), rational=True)
            for v in (p.lam[i], p.gamma[i], p.gamma_d[i], p.m[i], p.gamma_tilde_u[i], p.gamma_tilde[i])
        )
        s = gd * m / (lam * b + g)
        eqs.append(sp.together(-lam * b * s - gt * b - gtu * other + gtu * free).as_numer_denom()[0])
    res = sp.Poly(sp.resultant(eqs[0], eqs[1], y), x)
    return np.array([float(c) for c in res.all_coeffs()])


def test_two_asset_steady_state_frozen(two_asset, steady):
    np.testing.assert_allclose(steady.x, TWO_ASSET_X, rtol=1e-10)
    assert steady.residual < 1e-12 and steady.method == "newton"


def test_ode_flows_into_solver_state(two_asset, steady):
    start = np.array([0.05, 0.03, 0.1, 0.3])
    final = integrate(start, two_asset, dt=1e-3, t_max=30.0, store_every=30000).final
    np.testing.assert_allclose(final, steady.x, atol=1e-9)


def test_quartic_is_proportional_to_resultant(two_asset):
    ours = k2_quartic(two_asset).as_array()
    oracle = resultant_quartic(two_asset)
    assert oracle.size == 5
    ratio = ours / oracle
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-9)


def test_quartic_route_matches_newton(two_asset, steady):
    np.testing.assert_allclose(k2_steady_state_by_quartic(two_asset), steady.x, atol=1e-12)


def test_quartic_roots_of_two_asset_example(two_asset):
    roots = real_roots(k2_quartic(two_asset).as_array())
    np.testing.assert_allclose(roots, np.sort(np.roots(k2_quartic(two_asset).as_array()).real), rtol=1e-9)
    assert roots.size == 4
    assert quartic_positive_root(k2_quartic(two_asset), (0, 0.1)) == pytest.approx(TWO_ASSET_X[0], rel=1e-12)


@pytest.mark.parametrize(
    "coeffs, expected",
    [
        ([1, 0, -5, 0, 4], [-2, -1, 1, 2]),
        ([1, -2, 1], [1.0]),  # double root
        ([1, 0, 1], []),
        ([2, -3], [1.5]),
        ([1, -6, 11, -6], [1, 2, 3]),
    ],
)
def test_real_roots_known_polynomials(coeffs, expected):
    np.testing.assert_allclose(real_roots(coeffs), expected, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_real_roots_recover_planted_roots(seed):
    rng = np.random.default_rng(seed)
    planted = np.sort(rng.uniform(-3, 3, 4))
    if np.min(np.diff(planted)) < 1e-3:
        return
    found = real_roots(np.poly(planted) * rng.uniform(0.5, 2e6))
    np.testing.assert_allclose(found, planted, atol=1e-8)


def test_root_count_error_outside_interval():
    with pytest.raises(RootCountError):
        quartic_positive_root(QuarticCoeffs(1, 0, -5, 0, 4), (0, 3))


def test_degenerate_quartic():
    with pytest.raises(DegenerateQuarticError):
        QuarticCoeffs(0, 1, 1, 1, 1)


def test_quartic_needs_two_assets(rng):
    with pytest.raises(UnsupportedError):
        k2_quartic(random_params(rng, K=3))


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_solver_on_random_markets(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    s = solve_steady_state(p)
    assert np.max(np.abs(reduced_rhs(s.x, p))) < 1e-12
    assert np.all(s.x >= 0) and np.all(s.sellers <= p.m) and s.buyers.sum() <= 1 - p.m_total
    if p.K == 2:
        np.testing.assert_allclose(k2_steady_state_by_quartic(p), s.x, atol=1e-8)


def test_solver_is_independent_of_start(two_asset, steady):
    s = solve_steady_state(two_asset, x0=[0.01, 0.01, 0.29, 0.59])
    np.testing.assert_allclose(s.x, steady.x, atol=1e-12)


def test_uniqueness_scan_finds_one_cluster(two_asset, steady):
    report = verify_uniqueness_scan(two_asset, n_starts=64, seed=0)
    assert report.unique and report.n_converged > 32
    np.testing.assert_allclose(report.clusters[0], steady.x, atol=1e-8)


def test_impossible_tolerance_raises(two_asset):
    with pytest.raises(ConvergenceError) as info:
        solve_steady_state(two_asset, tol=1e-30)
    assert info.value.last_iterate.shape == (4,)
