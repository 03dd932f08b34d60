"""Local stability certificate for the steady state.

The certificate has three independent parts: positive leading minors of
the reduced K x K matrix ``B`` (so ``B d > 0`` has a positive solution),
an explicit weight vector making the Jacobian strictly diagonally
dominant, and a spectrum computed by dense QR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor

from .dynamics import reduced_jacobian, reduced_rhs
from .eigen import eigenvalues
from .equilibrium import SteadyState, solve_steady_state
from .model import ModelParams, ValidatedParams, check_reduced, validate

STEADY_TOL = 1e-8
MINOR_RTOL = 1e-8
DEGENERATE_TRADE = 1e-14


class NotSteadyError(ValueError):
    pass


class MinorMismatchError(RuntimeError):
    pass


class DominanceError(RuntimeError):
    pass


def jacobian(x, p: ModelParams) -> np.ndarray:
    p = validate(p)
    return reduced_jacobian(check_reduced(x, p), p)


def b_matrix(x, p: ModelParams, check_steady: bool = True) -> np.ndarray:
    """``b_ii = gt_i + lam_i g_i s_i^2 / (gd_i m_i)``, off-diagonal ``-gtu_i`` along row i.

    The diagonal simplification relies on steadiness of the seller masses,
    so by default a state with residual above ``STEADY_TOL`` is rejected.
    """
    p = validate(p)
    x = np.asarray(x, dtype=float)
    if check_steady:
        res = float(np.max(np.abs(reduced_rhs(x, p))))
        if res > STEADY_TOL:
            raise NotSteadyError(f"state is not steady (residual {res:.3g} > {STEADY_TOL:g})")
    s = x[p.K :]
    B = np.tile(-p.gamma_tilde_u[:, None], (1, p.K))
    np.fill_diagonal(B, p.gamma_tilde + p.lam * p.gamma * s**2 / (p.gamma_d * p.m))
    return B


def minors_lu(B) -> np.ndarray:
    """Leading principal minors from LU with partial pivoting."""
    B = np.asarray(B, dtype=float)
    out = np.empty(B.shape[0])
    for k in range(1, B.shape[0] + 1):
        lu, piv = lu_factor(B[:k, :k])
        swaps = np.count_nonzero(piv != np.arange(k))
        out[k - 1] = (-1.0) ** swaps * np.prod(np.diag(lu))
    return out


def minors_closed_form(B) -> np.ndarray:
    """Leading minors for a matrix whose row i off-diagonal is the constant ``-u_i``.

    Such a matrix is ``diag(b_jj + u_j) - u 1^T``, so each minor equals
    ``prod(b_jj + u_j) * (1 - sum(u_j / (b_jj + u_j)))``.
    """
    B = np.asarray(B, dtype=float)
    K = B.shape[0]
    u = np.array([-B[i, (i + 1) % K] if K > 1 else 0.0 for i in range(K)])
    shifted = np.diag(B) + u
    prods = np.cumprod(shifted)
    sums = np.cumsum(u / shifted)
    return prods * (1.0 - sums)


def leading_minors(B) -> tuple[np.ndarray, np.ndarray]:
    """Minors both ways; raises if they disagree beyond ``MINOR_RTOL``."""
    lu = minors_lu(B)
    closed = minors_closed_form(B)
    scale = np.maximum(np.abs(lu), np.abs(closed))
    scale = np.maximum(scale, np.finfo(float).tiny)
    # cancellation inside the bracket limits the closed form's precision
    cond = np.cumprod(np.abs(np.diag(B)) + np.abs(np.asarray(B)).sum(axis=1))
    if np.any(np.abs(lu - closed) > MINOR_RTOL * np.maximum(scale, 1e-8 * cond)):
        raise MinorMismatchError(f"LU minors {lu} disagree with closed form {closed}")
    return lu, closed


def dominance_vector(x, p: ModelParams, eps_frac: float = 0.5, check_steady: bool = True) -> np.ndarray:
    """Positive weights ``d`` with ``J diag(d)`` strictly row-dominant.

    The first K weights solve ``B d = 1`` (rescaled so the smallest is 1).
    Each seller weight then lies in an open interval: above the value
    forced by the seller row and below the value allowed by the buyer
    row. The interval has length ``eps_i / (lam_i x_i)`` with
    ``eps_i = (B d)_i``; ``eps_frac`` picks the point inside it.
    """
    if not 0 < eps_frac < 1:
        raise ValueError("eps_frac must lie in (0, 1)")
    p = validate(p)
    x = np.asarray(x, dtype=float)
    K = p.K
    B = b_matrix(x, p, check_steady)
    d = np.linalg.solve(B, np.ones(K))
    if np.any(d <= 0):
        raise DominanceError(f"B^-1 1 is not positive: {d}")
    d /= d.min()
    b, s = x[:K], x[K:]
    eps = B @ d
    if np.any(eps <= 0):
        raise DominanceError(f"non-positive slack in B d: {eps}")
    trade = p.lam * b
    lower = d * p.lam * s / (trade + p.gamma)
    safe = trade >= DEGENERATE_TRADE
    seller = np.where(safe, lower + eps_frac * eps / np.where(safe, trade, 1.0), np.maximum(d, 2 * lower))
    return np.concatenate([d, seller])


def dominance_margins(J, d) -> np.ndarray:
    """Row margins ``|J_kk| d_k - sum_{j != k} |J_kj| d_j``; all positive means dominant."""
    W = np.abs(np.asarray(J)) * np.asarray(d)[None, :]
    return 2 * np.diag(W) - W.sum(axis=1)


@dataclass(frozen=True, eq=False)
class StabilityCertificate:
    steady: SteadyState
    jacobian: np.ndarray
    b: np.ndarray
    minors: np.ndarray
    minors_closed: np.ndarray
    d: np.ndarray | None
    margins: np.ndarray | None
    spectrum: np.ndarray
    failures: list = field(default_factory=list)

    @property
    def max_real(self) -> float:
        return float(np.max(self.spectrum.real))

    @property
    def verdict(self) -> str:
        return "stable" if not self.failures else "inconclusive"

    def to_dict(self) -> dict:
        return {
            "steady_state": self.steady.to_dict(),
            "minors": self.minors.tolist(),
            "minors_closed_form": self.minors_closed.tolist(),
            "d": None if self.d is None else self.d.tolist(),
            "dominance_margins": None if self.margins is None else self.margins.tolist(),
            "spectrum": [[float(z.real), float(z.imag)] for z in self.spectrum],
            "max_real_part": self.max_real,
            "verdict": self.verdict,
            "failures": list(self.failures),
        }


def stability_certificate(
    p: ModelParams, steady: SteadyState | None = None, eps_frac: float = 0.5
) -> StabilityCertificate:
    p = validate(p)
    steady = solve_steady_state(p) if steady is None else steady
    x = steady.x
    J = jacobian(x, p)
    B = b_matrix(x, p)
    minors, closed = leading_minors(B)
    failures = []
    d = margins = None
    if np.any(minors <= 0):
        failures.append("non-positive leading minor of B")
    else:
        try:
            d = dominance_vector(x, p, eps_frac)
            margins = dominance_margins(J, d)
            if np.any(margins <= 0):
                failures.append("weighted Jacobian is not strictly row-dominant")
        except DominanceError as err:
            failures.append(str(err))
    spectrum = eigenvalues(J)
    if not np.max(spectrum.real) < 0:
        failures.append("eigenvalue with non-negative real part")
    return StabilityCertificate(steady, J, B, minors, closed, d, margins, spectrum, failures)
