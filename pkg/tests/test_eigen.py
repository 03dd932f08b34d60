import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darkmkt.eigen import eigenvalues, hessenberg

from conftest import seeds


def match(ours, ref):
    """Greedy pairing of two eigenvalue lists; returns the worst distance."""
    ref = list(ref)
    worst = 0.0
    for z in ours:
        k = int(np.argmin([abs(z - w) for w in ref]))
        worst = max(worst, abs(z - ref.pop(k)))
    return worst


@settings(max_examples=200, deadline=None)
@given(seeds, st.integers(1, 9))
def test_eigenvalues_match_lapack(seed, n):
    A = np.random.default_rng(seed).normal(size=(n, n))
    ours = eigenvalues(A)
    assert ours.size == n
    assert match(ours, np.linalg.eigvals(A)) < 1e-9 * max(1.0, np.abs(A).max() * n)


@settings(max_examples=50, deadline=None)
@given(seeds, st.integers(3, 8))
def test_hessenberg_is_similar(seed, n):
    A = np.random.default_rng(seed).normal(size=(n, n))
    H = hessenberg(A)
    assert np.all(np.tril(H, -2) == 0)
    assert np.trace(H) == pytest.approx(np.trace(A), abs=1e-10)
    np.testing.assert_allclose(np.sort(np.abs(np.linalg.eigvals(H))), np.sort(np.abs(np.linalg.eigvals(A))), rtol=1e-9)


@pytest.mark.parametrize(
    "A, expected",
    [
        ([[0, -1], [1, 0]], [-1j, 1j]),
        ([[2, 0], [0, 2]], [2, 2]),
        ([[1, 1], [0, 1]], [1, 1]),
        ([[0, 0, 1], [1, 0, 0], [0, 1, 0]], [-0.5 - 0.8660254037844386j, -0.5 + 0.8660254037844386j, 1]),
        ([[5.0]], [5.0]),
    ],
)
def test_known_spectra(A, expected):
    np.testing.assert_allclose(eigenvalues(np.array(A, dtype=float)), expected, atol=1e-7)


def test_sorted_by_real_then_imaginary():
    z = eigenvalues(np.diag([3.0, -1.0, 2.0]))
    np.testing.assert_allclose(z, [-1, 2, 3])


def test_rejects_non_square():
    with pytest.raises(ValueError):
        eigenvalues(np.ones((2, 3)))
