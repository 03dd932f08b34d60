"""Steady states of the reduced system and the two-asset quartic reduction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.stats import qmc

from .dynamics import reduced_jacobian, reduced_rhs
from .model import ModelParams, StateError, ValidatedParams, check_reduced, validate

DEFAULT_TOL = 1e-12
MAX_NEWTON = 100
MAX_FIXED_POINT = 200_000


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, last_iterate=None, residual: float = np.inf):
        self.last_iterate = last_iterate
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3g})")


class UnsupportedError(ValueError):
    pass


class DegenerateQuarticError(UnsupportedError):
    pass


class RootCountError(ValueError):
    def __init__(self, roots, interval):
        self.roots = list(roots)
        lo, hi = interval
        listed = ", ".join(f"{r:.12g}" for r in self.roots) or "none"
        super().__init__(f"expected exactly one root in ({lo:g}, {hi:g}); real roots: {listed}")


@dataclass(frozen=True, eq=False)
class SteadyState:
    x: np.ndarray
    residual: float
    iterations: int
    method: str

    @property
    def K(self) -> int:
        return self.x.size // 2

    @property
    def buyers(self) -> np.ndarray:
        return self.x[: self.K]

    @property
    def sellers(self) -> np.ndarray:
        return self.x[self.K :]

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "method": self.method,
        }


def sellers_from_buyers(b, p: ValidatedParams) -> np.ndarray:
    """Seller masses implied by steadiness of the owner equations."""
    return p.gamma_d * p.m / (p.lam * np.asarray(b) + p.gamma)


def _buyer_residual(b, p):
    s = sellers_from_buyers(b, p)
    others = b.sum() - b
    return -p.lam * b * s - p.gamma_tilde * b - p.gamma_tilde_u * others + p.gamma_tilde_u * (1 - p.m_total)


def _buyer_jacobian(b, p):
    denom = p.lam * b + p.gamma
    J = np.tile(-p.gamma_tilde_u[:, None], (1, p.K))
    np.fill_diagonal(J, -p.lam * p.gamma_d * p.m * p.gamma / denom**2 - p.gamma_tilde)
    return J


def default_start(p: ValidatedParams) -> np.ndarray:
    b = p.gamma_tilde_u * (1 - p.m_total) / p.gamma_tilde
    total = b.sum()
    if total >= 1 - p.m_total:
        b *= 0.5 * (1 - p.m_total) / total
    return np.concatenate([b, sellers_from_buyers(b, p)])


def _newton(b, p, tol, max_iter=MAX_NEWTON):
    F = _buyer_residual(b, p)
    norm = np.max(np.abs(F))
    for it in range(1, max_iter + 1):
        if norm < tol:
            return b, norm, it - 1
        try:
            step = np.linalg.solve(_buyer_jacobian(b, p), -F)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-10:
            trial = b + t * step
            # the buyer masses cannot go negative; halve rather than clip
            if np.all(trial >= 0):
                F_new = _buyer_residual(trial, p)
                new_norm = np.max(np.abs(F_new))
                if new_norm < norm or new_norm < tol:
                    break
            t *= 0.5
        else:
            break
        b, F, norm = trial, F_new, new_norm
    return b, norm, max_iter


def _fixed_point(b, p, tol, damping=0.5, max_iter=MAX_FIXED_POINT):
    norm = np.inf
    for it in range(1, max_iter + 1):
        s = sellers_from_buyers(b, p)
        others = b.sum() - b
        target = p.gamma_tilde_u * (1 - p.m_total - others) / (p.gamma_tilde + p.lam * s)
        b = (1 - damping) * b + damping * np.maximum(target, 0.0)
        norm = np.max(np.abs(_buyer_residual(b, p)))
        if norm < tol:
            return b, norm, it
    return b, norm, max_iter


def solve_steady_state(p: ModelParams, x0=None, tol: float = DEFAULT_TOL) -> SteadyState:
    """Steady state of the reduced system.

    Newton with backtracking runs on the K buyer masses after eliminating
    the seller masses; a damped fixed-point iteration takes over if Newton
    stalls. ``residual`` is the max-norm of the full 2K vector field.
    """
    p = validate(p)
    x0 = default_start(p) if x0 is None else check_reduced(x0, p)
    b0 = np.array(x0[: p.K], dtype=float)
    b, norm, iters = _newton(b0, p, tol)
    method = "newton"
    if not norm < tol:
        b, norm_fp, iters_fp = _fixed_point(b if np.all(b >= 0) else b0, p, tol)
        iters += iters_fp
        method = "newton+fixed-point"
        if not norm_fp < tol:
            raise ConvergenceError(
                f"steady-state solve failed after {iters} iterations",
                np.concatenate([b, sellers_from_buyers(b, p)]),
                norm_fp,
            )
    x = np.concatenate([b, sellers_from_buyers(b, p)])
    residual = float(np.max(np.abs(reduced_rhs(x, p))))
    try:
        check_reduced(x, p)
    except StateError as err:
        raise ConvergenceError(f"converged to an infeasible point: {err}", x, residual) from err
    if not residual < tol:
        raise ConvergenceError("full residual above tolerance", x, residual)
    return SteadyState(x=x, residual=residual, iterations=iters, method=method)


@dataclass(frozen=True, eq=False)
class QuarticCoeffs:
    """Coefficients ``c4 x^4 + ... + c0`` in the first asset's buyer mass."""

    c4: float
    c3: float
    c2: float
    c1: float
    c0: float

    def __post_init__(self):
        if self.c4 == 0:
            raise DegenerateQuarticError("leading coefficient is zero")

    def as_array(self) -> np.ndarray:
        """Highest degree first."""
        return np.array([self.c4, self.c3, self.c2, self.c1, self.c0])

    def __call__(self, x):
        return np.polyval(self.as_array(), x)


def k2_quartic(p: ModelParams) -> QuarticCoeffs:
    """Eliminate the second buyer mass between the two steady-state equations.

    The first equation is linear in the second buyer mass ``y`` once the
    seller masses are substituted, giving ``y = N(x)/E(x)``; clearing
    denominators in the second equation leaves a quartic in ``x``.
    """
    p = validate(p)
    if p.K != 2:
        raise UnsupportedError(f"the quartic reduction needs K=2, got K={p.K}")
    lam, g, gd, gtu, gt, m = p.lam, p.gamma, p.gamma_d, p.gamma_tilde_u, p.gamma_tilde, p.m
    free = 1 - p.m_total
    D1 = np.array([g[0], lam[0]])  # lowest degree first
    N = P.polysub(
        P.polymul([gtu[0] * free, -gt[0]], D1),
        [0.0, gd[0] * m[0] * lam[0]],
    )
    E = gtu[0] * D1
    X = np.array([0.0, 1.0])
    first = P.polysub(P.polysub(gtu[1] * free * E, gt[1] * N), gtu[1] * P.polymul(X, E))
    second = P.polyadd(lam[1] * N, g[1] * E)
    poly = P.polysub(P.polymul(first, second), gd[1] * m[1] * lam[1] * P.polymul(N, E))
    poly = np.pad(poly, (0, max(0, 5 - poly.size)))
    if abs(poly[4]) <= 1e-12 * np.max(np.abs(poly)):
        raise DegenerateQuarticError(
            "elimination polynomial has degree < 4 (no meeting frictions couple the assets)"
        )
    c0, c1, c2, c3, c4 = poly[:5]
    return QuarticCoeffs(c4, c3, c2, c1, c0)


def _bisect_root(coeffs, lo, hi, f_lo):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = np.polyval(coeffs, mid)
        if f_mid == 0:
            return mid
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def _newton_polish(coeffs, x, lo, hi):
    deriv = np.polyder(coeffs)
    for _ in range(8):
        d = np.polyval(deriv, x)
        if d == 0:
            break
        x_new = x - np.polyval(coeffs, x) / d
        if not lo <= x_new <= hi or x_new == x:
            break
        x = x_new
    return x


def real_roots(coeffs) -> np.ndarray:
    """All real roots of a polynomial (highest degree first), by isolation.

    Critical points of the derivative split the line into monotone pieces,
    each holding at most one root; roots are bracketed and bisected, then
    polished with Newton. Double roots show up as critical points where
    the polynomial vanishes to rounding.
    """
    coeffs = np.trim_zeros(np.asarray(coeffs, dtype=float), "f")
    deg = coeffs.size - 1
    if deg < 1:
        return np.empty(0)
    if deg == 1:
        return np.array([-coeffs[1] / coeffs[0]])
    bound = 1 + np.max(np.abs(coeffs[1:] / coeffs[0]))  # Cauchy
    crit = real_roots(np.polyder(coeffs))
    knots = np.concatenate([[-bound], np.sort(crit[np.abs(crit) < bound]), [bound]])
    scale = np.sum(np.abs(coeffs) * np.maximum(1.0, bound) ** np.arange(deg, -1, -1))
    roots = []
    vals = np.polyval(coeffs, knots)
    for k in range(len(knots) - 1):
        lo, hi, f_lo, f_hi = knots[k], knots[k + 1], vals[k], vals[k + 1]
        if abs(f_lo) <= 1e-14 * scale and 0 < k:
            roots.append(lo)  # touching root at a critical point
            continue
        if np.sign(f_lo) * np.sign(f_hi) < 0:
            root = _bisect_root(coeffs, lo, hi, f_lo)
            roots.append(_newton_polish(coeffs, root, lo, hi))
    return np.array(sorted(set(roots)))


def quartic_positive_root(c: QuarticCoeffs, interval=(0.0, 1.0)) -> float:
    """The unique real root in the open ``interval``."""
    lo, hi = interval
    roots = real_roots(c.as_array())
    inside = [x for x in roots if lo < x < hi]
    if len(inside) != 1:
        raise RootCountError(roots, interval)
    return float(inside[0])


def k2_steady_state_by_quartic(p: ModelParams) -> np.ndarray:
    """Reduced steady state for K=2 through the quartic route.

    Only roots with a feasible second buyer mass qualify, so the search
    interval is the buyer simplex ``(0, 1 - m)`` rather than ``(0, 1)``.
    """
    p = validate(p)
    c = k2_quartic(p)
    roots = [x for x in real_roots(c.as_array()) if 0 < x < 1 - p.m_total]
    feasible = []
    for x in roots:
        s1 = sellers_from_buyers(np.array([x, 0.0]), p)[0]
        y = (p.gamma_tilde_u[0] * (1 - p.m_total) - p.gamma_tilde[0] * x - p.lam[0] * x * s1) / p.gamma_tilde_u[0]
        if y >= 0 and x + y <= 1 - p.m_total:
            feasible.append((x, y))
    if len(feasible) != 1:
        raise RootCountError([x for x, _ in feasible] or roots, (0.0, 1 - p.m_total))
    b = np.array(feasible[0])
    return np.concatenate([b, sellers_from_buyers(b, p)])


@dataclass(frozen=True, eq=False)
class UniquenessReport:
    n_starts: int
    n_converged: int
    clusters: list = field(default_factory=list)
    max_spread: float = 0.0

    @property
    def unique(self) -> bool:
        return len(self.clusters) == 1

    def to_dict(self) -> dict:
        return {
            "n_starts": self.n_starts,
            "n_converged": self.n_converged,
            "clusters": [c.tolist() for c in self.clusters],
            "max_spread": self.max_spread,
            "unique": self.unique,
        }


def _full_newton(x, p, tol, max_iter=200):
    """Damped Newton on all 2K coordinates; independent of the elimination."""
    F = reduced_rhs(x, p)
    norm = np.max(np.abs(F))
    for _ in range(max_iter):
        if norm < tol:
            return x, norm
        try:
            step = np.linalg.solve(reduced_jacobian(x, p), -F)
        except np.linalg.LinAlgError:
            return x, norm
        t = 1.0
        while t > 1e-12:
            trial = x + t * step
            F_new = reduced_rhs(trial, p)
            if np.max(np.abs(F_new)) < norm:
                break
            t *= 0.5
        else:
            return x, norm
        x, F, norm = trial, F_new, np.max(np.abs(F_new))
    return x, norm


def verify_uniqueness_scan(p: ModelParams, n_starts: int = 64, seed: int = 0, tol: float = 1e-8) -> UniquenessReport:
    """Run Newton on the full system from Latin-hypercube starts and cluster the limits.

    Starts are spread over the feasible box; runs that converge to points
    outside it are counted as non-converged.
    """
    p = validate(p)
    K = p.K
    sample = qmc.LatinHypercube(d=2 * K, seed=seed).random(n_starts)
    free = 1 - p.m_total
    starts = np.concatenate([sample[:, :K] * free / K, sample[:, K:] * p.m], axis=1)
    found = []
    for x0 in starts:
        x, norm = _full_newton(x0, p, 1e-13)
        if norm < 1e-11:
            try:
                check_reduced(x, p, tol=1e-10)
            except StateError:
                continue
            found.append(x)
    clusters: list[np.ndarray] = []
    members: list[list[np.ndarray]] = []
    for x in found:
        for k, c in enumerate(clusters):
            if np.max(np.abs(x - c)) < tol:
                members[k].append(x)
                break
        else:
            clusters.append(x)
            members.append([x])
    spread = max((np.max(np.ptp(np.array(m), axis=0)) for m in members), default=0.0)
    return UniquenessReport(n_starts, len(found), clusters, float(spread))
