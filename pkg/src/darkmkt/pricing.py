"""Steady-state value functions, reservation values, and bargained prices.

Per asset, ``a = lam * mu(l,o)`` is the rate at which a buyer meets a
seller and ``d = lam * mu(h,n)`` the rate at which a seller meets a
buyer. The ratios Psi and Gamma both carry the factor ``1/(q d (1-q) a)``;
the code works with ``G = q d (1-q) a * Gamma``, which stays finite as
either meeting rate vanishes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .equilibrium import SteadyState
from .model import ModelParams, ValidatedParams, check_reduced, validate

SINGULAR_RATE = 1e-14
DAYS_PER_YEAR = 250.0
AGREE_RTOL = 1e-9


class SingularMarketError(ValueError):
    pass


class PriceDisagreementWarning(UserWarning):
    pass


def _state(s) -> np.ndarray:
    return np.asarray(s.x if isinstance(s, SteadyState) else s, dtype=float)


@dataclass(frozen=True, eq=False)
class PricingIntermediates:
    a: np.ndarray
    d: np.ndarray
    b: np.ndarray
    c: np.ndarray
    r_i: np.ndarray
    G: np.ndarray
    Psi: np.ndarray
    Gamma: np.ndarray
    Lambda: np.ndarray
    one_minus_Lambda: np.ndarray
    Omega: np.ndarray
    theta: float

    def to_dict(self) -> dict:
        out = {k: getattr(self, k).tolist() for k in ("a", "d", "b", "c", "r_i", "Psi", "Gamma", "Lambda", "Omega")}
        out["theta"] = self.theta
        return out


@dataclass(frozen=True, eq=False)
class PriceTerms:
    """Terms of the price formulas that stay finite for zero meeting rates."""

    a: np.ndarray
    d: np.ndarray
    U: np.ndarray
    G: np.ndarray
    one_minus_Lambda: np.ndarray
    Omega: np.ndarray
    theta: float


def price_terms(p: ValidatedParams, x) -> PriceTerms:
    """Regular form of the pricing ratios at reduced state ``x``.

    Unlike :func:`intermediates` this accepts zero meeting rates, which
    the frozen-mass sweeps need at the edge of their grids.
    """
    K, q, r = p.K, p.q, p.r
    x = np.asarray(x, dtype=float)
    a = p.lam * x[K:]
    d = p.lam * x[:K]
    core = q * d + p.gamma + r
    U = (1 - q) * a + p.gamma_tilde_d + r
    G = core * U - q * d * (1 - q) * a
    one_minus_Lambda = core * r / G
    Omega = p.delta_d * (1 - q) * a / G
    theta = float(np.sum(p.gamma_tilde_u * Omega) / (r + np.sum(p.gamma_tilde_u * one_minus_Lambda)))
    return PriceTerms(a, d, U, G, one_minus_Lambda, Omega, theta)


def intermediates(p: ModelParams, s) -> PricingIntermediates:
    """Auxiliary ratios of the pricing formulas at the masses in ``s``.

    ``s`` is a SteadyState or a reduced state vector. Raises
    :class:`SingularMarketError` when a meeting rate is below
    ``SINGULAR_RATE``, since Psi and Gamma divide by both.
    """
    p = validate(p)
    x = _state(s)
    q, r = p.q, p.r
    t = price_terms(p, x)
    bad = np.flatnonzero((t.a < SINGULAR_RATE) | (t.d < SINGULAR_RATE))
    if bad.size:
        raise SingularMarketError(f"meeting rate below {SINGULAR_RATE:g} for asset(s) {(bad + 1).tolist()}")
    scale = q * t.d * (1 - q) * t.a
    Psi = ((q * t.d + p.gamma + r) * (t.U - r) - scale) / scale
    return PricingIntermediates(
        a=t.a,
        d=t.d,
        b=p.gamma_tilde_d + r + t.a,
        c=p.gamma_u + r + t.d,
        r_i=p.gamma_u + r,
        G=t.G,
        Psi=Psi,
        Gamma=t.G / scale,
        Lambda=1 - t.one_minus_Lambda,
        one_minus_Lambda=t.one_minus_Lambda,
        Omega=t.Omega,
        theta=t.theta,
    )


@dataclass(frozen=True, eq=False)
class ValueFunctions:
    """Steady-state values: buyer ``x``, low owner ``y``, high owner ``z``, idle ``w``."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    w: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.y, self.z, [self.w]])

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "y": self.y.tolist(), "z": self.z.tolist(), "w": self.w}


def value_functions_closed(p: ModelParams, s, inter: PricingIntermediates | None = None) -> ValueFunctions:
    p = validate(p)
    it = intermediates(p, s) if inter is None else inter
    q, r = p.q, p.r
    U = (1 - q) * it.a + p.gamma_tilde_d + r
    w = it.theta
    x = it.Lambda * w + it.Omega
    y = (
        (p.gamma_d + r) * q * it.d / it.G * w
        + p.delta_h / r
        - p.delta_d * (p.gamma_d + r) * U / (r * it.G)
    )
    z = (p.gamma_d * y + p.delta_h) / (p.gamma_d + r)
    return ValueFunctions(x, y, z, w)


def hjb_system(p: ModelParams, s) -> tuple[np.ndarray, np.ndarray]:
    """Matrix and right-hand side of the steady-state HJB equations.

    Unknowns are ordered ``[x (K), y (K), z (K), w]``; the price is
    eliminated through the bargaining rule. Rows: idle investor, then
    buyers, high owners, low owners.
    """
    p = validate(p)
    x_state = _state(s)
    K, q, r = p.K, p.q, p.r
    a = p.lam * x_state[K:]
    d = p.lam * x_state[:K]
    n = 3 * K + 1
    A = np.zeros((n, n))
    rhs = np.zeros(n)
    W = 3 * K
    A[0, :K] = -p.gamma_tilde_u
    A[0, W] = r + p.gamma_tilde_u.sum()
    for i in range(K):
        row = 1 + i
        A[row, i] = p.gamma_tilde_d[i] + r + (1 - q) * a[i]
        A[row, K + i] = (1 - q) * a[i]
        A[row, 2 * K + i] = -(1 - q) * a[i]
        A[row, W] = -(p.gamma_tilde_d[i] + (1 - q) * a[i])
        row = 1 + K + i
        A[row, 2 * K + i] = p.gamma_d[i] + r
        A[row, K + i] = -p.gamma_d[i]
        rhs[row] = p.delta_h[i]
        row = 1 + 2 * K + i
        A[row, i] = q * d[i]
        A[row, K + i] = p.gamma_u[i] + r + q * d[i]
        A[row, 2 * K + i] = -(p.gamma_u[i] + q * d[i])
        A[row, W] = -q * d[i]
        rhs[row] = p.delta_h[i] - p.delta_d[i]
    return A, rhs


def hjb_residual(p: ModelParams, s, vf: ValueFunctions) -> float:
    """Max-norm HJB residual relative to the size of the terms."""
    A, rhs = hjb_system(p, s)
    v = vf.as_vector()
    scale = np.max(np.abs(A) @ np.abs(v) + np.abs(rhs))
    return float(np.max(np.abs(A @ v - rhs)) / max(scale, np.finfo(float).tiny))


def hjb_linear_solve(p: ModelParams, s, tol: float = 1e-10) -> ValueFunctions:
    p = validate(p)
    A, rhs = hjb_system(p, s)
    try:
        v = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as err:
        raise SingularMarketError(f"HJB system is singular: {err}") from err
    K = p.K
    vf = ValueFunctions(v[:K], v[K : 2 * K], v[2 * K : 3 * K], float(v[3 * K]))
    res = hjb_residual(p, s, vf)
    if res > tol:
        raise SingularMarketError(f"HJB solve residual {res:.3g} exceeds {tol:g}")
    return vf


def reservation_values(vf: ValueFunctions, closed: ValueFunctions | None = None, rtol: float = AGREE_RTOL):
    """Seller floor ``y - w`` and buyer ceiling ``z - x``.

    If ``closed`` is given its reservation values must agree with those of
    ``vf`` to ``rtol`` relative.
    """
    low = vf.y - vf.w
    high = vf.z - vf.x
    if closed is not None:
        for name, direct, other in (
            ("seller", low, closed.y - closed.w),
            ("buyer", high, closed.z - closed.x),
        ):
            scale = np.maximum(np.abs(direct), np.abs(vf.z))
            if np.any(np.abs(direct - other) > rtol * scale):
                raise RuntimeError(f"{name} reservation values disagree: {direct} vs {other}")
    return low, high


def theorem_price(p: ModelParams, x) -> np.ndarray:
    """Reference closed-form price, reproduced term for term.

    It shares the coefficient on theta with the bargained price but its
    constant term differs; :func:`equilibrium_prices` reports both. The
    algebra is rearranged so a zero meeting rate gives a finite value.
    """
    p = validate(p, allow_zero=("lambda",))
    t = price_terms(p, _state(x))
    q, r = p.q, p.r
    coef = p.gamma_d * q * t.d / t.G - (1 - t.one_minus_Lambda)
    penalty = (
        p.delta_d
        * (q * (1 - q) * t.a + (q * (1 - r) + p.gamma_d) * ((1 - q) * t.a + p.gamma_tilde_d))
        / t.G
    )
    return coef * t.theta + p.delta_h / r - penalty


def bargain_price_closed(p: ModelParams, x) -> np.ndarray:
    """Closed form of ``(1-q)(y-w) + q(z-x)`` at reduced state ``x``."""
    p = validate(p, allow_zero=("lambda",))
    t = price_terms(p, _state(x))
    q, r = p.q, p.r
    lead = p.gamma_d + (1 - q) * r
    coef = lead * q * t.d / t.G - (1 - q) - q * (1 - t.one_minus_Lambda)
    return coef * t.theta + p.delta_h / r - p.delta_d * t.U * lead / (r * t.G) - q * t.Omega


def theta_coefficient(p: ModelParams, x, formula: str = "theorem") -> np.ndarray:
    """Coefficient of theta in each asset's price; its sign fixes cross-price responses."""
    p = validate(p, allow_zero=("lambda",))
    t = price_terms(p, _state(x))
    q, r = p.q, p.r
    Lam = 1 - t.one_minus_Lambda
    if formula == "theorem":
        return p.gamma_d * q * t.d / t.G - Lam
    if formula == "bargain":
        return (p.gamma_d + (1 - q) * r) * q * t.d / t.G - (1 - q) - q * Lam
    raise ValueError(f"unknown formula {formula!r}")


def effective_bargaining_power(q_hat: float, p: ModelParams, s) -> float:
    """Average over assets of the seller's blended power in alternating offers."""
    if not 0 <= q_hat <= 1:
        raise ValueError("q_hat must lie in [0, 1]")
    p = validate(p)
    x = _state(s)
    K = p.K
    base = p.r + p.gamma + p.gamma_tilde
    seller = q_hat * (base + p.lam * x[K:])
    buyer = (1 - q_hat) * (base + p.lam * x[:K])
    return float(np.mean(seller / (seller + buyer)))


@dataclass(frozen=True, eq=False)
class TimingReport:
    days: np.ndarray
    first_sold: int | None
    max_days: float
    infinite: np.ndarray

    @property
    def min_days(self) -> float:
        return float(np.min(self.days))

    def to_dict(self) -> dict:
        return {
            "days": [float(v) if np.isfinite(v) else None for v in self.days],
            "infinite": self.infinite.tolist(),
            "first_sold": self.first_sold,
            "min_days": self.min_days if np.isfinite(self.min_days) else None,
            "max_days": self.max_days if np.isfinite(self.max_days) else None,
        }


def seller_timing(p: ModelParams, s, days_per_year: float = DAYS_PER_YEAR) -> TimingReport:
    """Expected trading days an asset waits for a buyer, ``days/(lam mu(h,n))``.

    Zero buyer mass yields ``inf`` and sets the asset's ``infinite`` flag.
    ``first_sold`` is the 1-based index of the fastest asset.
    """
    p = validate(p)
    x = _state(s)
    rate = p.lam * x[: p.K]
    infinite = ~(rate > 0)
    with np.errstate(divide="ignore"):
        days = np.where(infinite, np.inf, days_per_year / np.where(infinite, 1.0, rate))
    first = int(np.argmin(days)) + 1 if np.any(~infinite) else None
    return TimingReport(days, first, float(np.max(days)), infinite)


@dataclass(frozen=True, eq=False)
class PriceReport:
    intermediates: PricingIntermediates
    values: ValueFunctions
    values_closed: ValueFunctions
    delta_low: np.ndarray
    delta_high: np.ndarray
    price_theorem: np.ndarray
    price_bargain: np.ndarray
    price_closed: np.ndarray
    timing: TimingReport
    q_effective: float
    q_hat: float
    theorem_agrees: bool

    @property
    def prices(self) -> np.ndarray:
        """Bargained prices; these solve the HJB system exactly."""
        return self.price_bargain

    def to_dict(self) -> dict:
        return {
            "P": self.prices.tolist(),
            "P_bargain": self.price_bargain.tolist(),
            "P_bargain_closed_form": self.price_closed.tolist(),
            "P_theorem_display": self.price_theorem.tolist(),
            "theorem_display_agrees": self.theorem_agrees,
            "delta_low": self.delta_low.tolist(),
            "delta_high": self.delta_high.tolist(),
            "value_functions": self.values.to_dict(),
            "intermediates": self.intermediates.to_dict(),
            "timing": self.timing.to_dict(),
            "q_hat": self.q_hat,
            "q_effective": self.q_effective,
        }


def equilibrium_prices(
    p: ModelParams, s, q_hat: float | None = None, days_per_year: float = DAYS_PER_YEAR
) -> PriceReport:
    """Full price report at the masses in ``s``.

    The bargained price from the HJB solve is authoritative. The closed
    form must match it to ``AGREE_RTOL``; the theorem display is compared
    too and a :class:`PriceDisagreementWarning` is issued when it differs.
    """
    p = validate(p)
    it = intermediates(p, s)
    vf = hjb_linear_solve(p, s)
    closed = value_functions_closed(p, s, it)
    low, high = reservation_values(vf, closed)
    q = p.q
    bargain = (1 - q) * low + q * high
    closed_price = bargain_price_closed(p, s)
    scale = np.maximum(np.abs(bargain), np.abs(p.delta_h / p.r))
    if np.any(np.abs(closed_price - bargain) > AGREE_RTOL * scale):
        raise RuntimeError(f"closed-form price {closed_price} disagrees with HJB price {bargain}")
    thm = theorem_price(p, s)
    agrees = bool(np.all(np.abs(thm - bargain) <= AGREE_RTOL * scale))
    if not agrees:
        warnings.warn(
            f"theorem display price {np.round(thm, 6).tolist()} differs from bargained price "
            f"{np.round(bargain, 6).tolist()}",
            PriceDisagreementWarning,
            stacklevel=2,
        )
    q_hat = q if q_hat is None else q_hat
    return PriceReport(
        intermediates=it,
        values=vf,
        values_closed=closed,
        delta_low=low,
        delta_high=high,
        price_theorem=thm,
        price_bargain=bargain,
        price_closed=closed_price,
        timing=seller_timing(p, s, days_per_year),
        q_effective=effective_bargaining_power(q_hat, p, s),
        q_hat=q_hat,
        theorem_agrees=agrees,
    )
