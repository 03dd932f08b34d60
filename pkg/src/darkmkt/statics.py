"""Comparative statics of equilibrium prices.

Unless a sweep asks for self-consistent mode, the occupation measures
stay frozen at a reference steady state while parameters move inside the
price formula. Every limit is reported next to a numeric sequence that
scales the parameter by ``10**k`` for ``k = 0..6``.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import ConvergenceError, SteadyState, solve_steady_state
from .model import ModelParams, StateError, ValidatedParams, ValidationError, validate
from .pricing import bargain_price_closed, price_terms, theorem_price, theta_coefficient

SCALE_EXPONENTS = np.arange(7)
LIMIT_RTOL = 1e-3
DEAD_BAND = 1e-9
FORMULAS = ("theorem", "bargain")
LIMIT_KINDS = ("gamma_u", "gamma_d", "gamma_tilde_d", "lambda")
_PARAM_ATTR = {
    "lambda": "lam",
    "gamma_u": "gamma_u",
    "gamma_d": "gamma_d",
    "gamma_tilde_u": "gamma_tilde_u",
    "gamma_tilde_d": "gamma_tilde_d",
    "m": "m",
    "delta_h": "delta_h",
    "delta_d": "delta_d",
}


def _x(s) -> np.ndarray:
    return np.asarray(s.x if isinstance(s, SteadyState) else s, dtype=float)


def frozen_prices(p: ModelParams, s, formula: str = "theorem") -> np.ndarray:
    """Prices at fixed occupation measures ``s``."""
    if formula == "theorem":
        return theorem_price(p, _x(s))
    if formula == "bargain":
        return bargain_price_closed(p, _x(s))
    raise ValueError(f"unknown formula {formula!r}; expected one of {FORMULAS}")


@dataclass(frozen=True, eq=False)
class LimitReport:
    kind: str
    analytic: np.ndarray
    scales: np.ndarray
    sequence: np.ndarray  # theorem-display prices, (len(scales), K)
    bargain_sequence: np.ndarray
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def converged(self) -> np.ndarray:
        gap = np.abs(self.sequence[-1] - self.analytic)
        return gap < LIMIT_RTOL * np.abs(self.analytic)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "analytic": self.analytic.tolist(),
            "scales": self.scales.tolist(),
            "sequence": self.sequence.tolist(),
            "bargain_sequence": self.bargain_sequence.tolist(),
            "converged": self.converged.tolist(),
            "notes": list(self.notes),
            **{k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.extra.items()},
        }


def _scaled_sequences(p: ValidatedParams, x, attr: str):
    scales = 10.0**SCALE_EXPONENTS
    thm, barg = [], []
    base = getattr(p, attr)
    for c in scales:
        q = validate(p.replace(**{attr: base * c}))
        thm.append(frozen_prices(q, x, "theorem"))
        barg.append(frozen_prices(q, x, "bargain"))
    return scales, np.array(thm), np.array(barg)


def limit_gamma_u(p: ModelParams, s) -> LimitReport:
    p = validate(p)
    scales, thm, barg = _scaled_sequences(p, _x(s), "gamma_u")
    return LimitReport("gamma_u", p.delta_h / p.r, scales, thm, barg)


def limit_gamma_d(p: ModelParams, s) -> LimitReport:
    """Limit as every owner's downward switching rate grows.

    Follows the derivation, which carries the seller mass in both places;
    the value with the buyer mass in the numerator is kept in ``extra``.
    """
    p = validate(p)
    x = _x(s)
    K, q, r = p.K, p.q, p.r
    sell = (1 - q) * p.lam * x[K:] + p.gamma_tilde_d
    analytic = p.delta_h / r - p.delta_d * sell / (sell + r)
    as_displayed = p.delta_h / r - p.delta_d * ((1 - q) * p.lam * x[:K] + p.gamma_tilde_d) / (sell + r)
    scales, thm, barg = _scaled_sequences(p, x, "gamma_d")
    return LimitReport(
        "gamma_d",
        analytic,
        scales,
        thm,
        barg,
        notes=["the bargained price tends to (delta_h - delta_d)/r instead"],
        extra={"buyer_mass_variant": as_displayed, "bargain_limit": (p.delta_h - p.delta_d) / r},
    )


def limit_gamma_tilde_d(p: ModelParams, s) -> LimitReport:
    """Candidate limit as every non-owner's downward rate grows.

    Reported with a flag: one statement of the result says no limit exists,
    while its derivation produces this value.
    """
    p = validate(p)
    x = _x(s)
    K, q, r = p.K, p.q, p.r
    analytic = p.delta_h / r - p.delta_d * (q * (1 - r) + p.gamma_d) / (q * p.lam * x[:K] + p.gamma + r)
    scales, thm, barg = _scaled_sequences(p, x, "gamma_tilde_d")
    return LimitReport(
        "gamma_tilde_d",
        analytic,
        scales,
        thm,
        barg,
        notes=["FLAG: existence of this limit is disputed; compare the numeric sequence"],
    )


def lambda_limit_terms(p: ValidatedParams, x):
    """Large-meeting-rate limits of Omega, 1 - Lambda, and the theta coefficient."""
    K, q, r = p.K, p.q, p.r
    hn, lo = x[:K], x[K:]
    den = q * (p.gamma_tilde_d + r) * hn + (1 - q) * (p.gamma + r) * lo
    omega = p.delta_d * (1 - q) * lo / den
    one_minus = q * r * hn / den
    coef = q * p.gamma_d * hn / den - (1 - one_minus)
    theta = np.sum(p.gamma_tilde_u * omega) / (r + np.sum(p.gamma_tilde_u * one_minus))
    return omega, one_minus, coef, float(theta)


def limit_lambda(p: ModelParams, s) -> LimitReport:
    """Limit as every meeting intensity grows, masses frozen.

    ``analytic`` is the exact limit of the theorem-display price, whose
    last term is ``q * Omega_hat * (2 - r + gd/q)``. The reference
    closed form drops the factor ``q``; its value is kept as ``printed``.
    """
    p = validate(p)
    x = _x(s)
    q, r = p.q, p.r
    omega, one_minus, coef, theta = lambda_limit_terms(p, x)
    tail = omega * (2 - r + p.gamma_d / q)
    analytic = coef * theta + p.delta_h / r - q * tail
    printed = coef * theta + p.delta_h / r - tail
    scales, thm, barg = _scaled_sequences(p, x, "lam")
    bargain_limit = barg[-1]
    return LimitReport(
        "lambda",
        analytic,
        scales,
        thm,
        barg,
        extra={"printed": printed, "omega_hat": omega, "one_minus_lambda_hat": one_minus, "theta_hat": theta},
    )


LIMIT_FUNCTIONS = {
    "gamma_u": limit_gamma_u,
    "gamma_d": limit_gamma_d,
    "gamma_tilde_d": limit_gamma_tilde_d,
    "lambda": limit_lambda,
}


@dataclass(frozen=True, eq=False)
class PathDependence:
    theta_equal: float
    theta_weighted: float
    displayed_equal: float
    displayed_weighted: float
    numeric_equal: float
    numeric_weighted: float

    @property
    def difference(self) -> float:
        return self.theta_weighted - self.theta_equal

    def to_dict(self) -> dict:
        return {
            "theta_equal": self.theta_equal,
            "theta_weighted": self.theta_weighted,
            "difference": self.difference,
            "displayed_equal": self.displayed_equal,
            "displayed_weighted": self.displayed_weighted,
            "numeric_equal": self.numeric_equal,
            "numeric_weighted": self.numeric_weighted,
        }


def gamma_tilde_u_path_dependence(p: ModelParams, s, scale: float = 1e9) -> PathDependence:
    """Limits of theta as the non-owners' upward rates grow along two paths.

    Along ``gtu_i = t`` theta tends to ``sum(Omega)/sum(1-Lambda)``; along
    ``gtu_i = i t`` it tends to ``sum(i Omega)/sum(i (1-Lambda))``. The
    ``displayed`` forms keep ``r`` in the denominator, which the limit
    removes. ``numeric`` values evaluate theta at ``t = scale``.
    """
    p = validate(p)
    x = _x(s)
    t = price_terms(p, x)
    idx = np.arange(1, p.K + 1)
    om, oml, r = t.Omega, t.one_minus_Lambda, p.r
    ones = np.ones(p.K)

    def numeric(weights):
        return price_terms(validate(p.replace(gamma_tilde_u=weights * scale)), x).theta

    return PathDependence(
        theta_equal=float(om.sum() / oml.sum()),
        theta_weighted=float(idx @ om / (idx @ oml)),
        displayed_equal=float(om.sum() / (r + oml.sum())),
        displayed_weighted=float(idx @ om / (r + idx @ oml)),
        numeric_equal=numeric(ones),
        numeric_weighted=numeric(idx.astype(float)),
    )


@dataclass(frozen=True, eq=False)
class LambdaHat:
    """Threshold in an asset's own meeting rate where its theta coefficient changes sign.

    ``denominator`` is ``(gd - gtd) q mu(h,n) - (g + r)(1-q) mu(l,o)``.
    When it is not positive there is no threshold and ``value`` is None.
    ``printed`` uses the reference numerator ``(g+r)(gtd+r)``; the
    coefficient of the theorem-display price changes sign at ``theorem``
    and that of the bargained price at ``bargain``.
    """

    asset: int
    denominator: float
    printed: float | None
    theorem: float | None
    bargain: float | None

    @property
    def value(self) -> float | None:
        return self.printed

    @property
    def case(self) -> str:
        return "threshold" if self.denominator > 0 else "no-threshold"

    def to_dict(self) -> dict:
        return {
            "asset": self.asset,
            "denominator": self.denominator,
            "case": self.case,
            "printed": self.printed,
            "theorem": self.theorem,
            "bargain": self.bargain,
        }


def lambda_hat(p: ModelParams, s, j: int) -> LambdaHat:
    """Threshold for asset ``j`` (1-based)."""
    p = validate(p)
    x = _x(s)
    i = j - 1
    q, r = p.q, p.r
    hn, lo = x[i], x[p.K + i]
    g, gtd, gd = p.gamma[i], p.gamma_tilde_d[i], p.gamma_d[i]
    den = float((gd - gtd) * q * hn - (g + r) * (1 - q) * lo)
    if den <= 0:
        return LambdaHat(j, den, None, None, None)
    return LambdaHat(
        j,
        den,
        printed=float((g + r) * (gtd + r) / den),
        theorem=float((g + r) * gtd / den),
        bargain=float((g + r) * (gtd + (1 - q) * r) / den),
    )


@dataclass(frozen=True, eq=False)
class MobiusCoefficients:
    """``Omega = delta_d lam / (a lam + b)`` and ``1 - Lambda = (b1 lam + b0)/(a lam + b)``."""

    a: float
    b: float
    b1: float
    b0: float

    @property
    def determinant(self) -> float:
        return self.a * self.b0 - self.b1 * self.b


def mobius_coefficients(p: ModelParams, s, i: int) -> MobiusCoefficients:
    """Coefficients of Omega and 1 - Lambda as functions of asset ``i``'s meeting rate (1-based)."""
    p = validate(p)
    x = _x(s)
    k = i - 1
    q, r = p.q, p.r
    hn, lo = x[k], x[p.K + k]
    g, gtd = p.gamma[k], p.gamma_tilde_d[k]
    scale = (1 - q) * lo
    return MobiusCoefficients(
        a=g + r + (gtd + r) * q * hn / scale,
        b=(g + r) * (gtd + r) / scale,
        b1=r * q * hn / scale,
        b0=r * (g + r) / scale,
    )


def parse_param_path(path: str, K: int) -> tuple[str, int]:
    """``"lambda.2"`` -> ``("lam", 1)``; indices are 1-based on input."""
    try:
        name, idx = path.rsplit(".", 1)
        k = int(idx)
    except ValueError as err:
        raise ValueError(f"parameter path must look like 'lambda.2', got {path!r}") from err
    if name in ("q", "r"):
        raise ValueError("sweeps over scalar parameters are not supported")
    if name not in _PARAM_ATTR:
        raise ValueError(f"unknown parameter {name!r}")
    if not 1 <= k <= K:
        raise ValueError(f"asset index {k} out of range 1..{K}")
    return _PARAM_ATTR[name], k - 1


@dataclass(frozen=True, eq=False)
class SweepResult:
    param: str
    grid: np.ndarray
    prices: np.ndarray  # (n, K); NaN where a point failed
    converged: np.ndarray
    mode: str
    formula: str
    price_index: int
    classification: str
    predicted: str | None = None
    lambda_hat: LambdaHat | None = None
    sign_change_consistent: bool | None = None

    @property
    def series(self) -> np.ndarray:
        return self.prices[:, self.price_index - 1]

    def to_csv(self, path) -> None:
        K = self.prices.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["param_value", *(f"P_{i + 1}" for i in range(K)), "converged"])
            for v, row, ok in zip(self.grid, self.prices, self.converged):
                writer.writerow([f"{v:.12g}", *(f"{c:.12g}" for c in row), str(bool(ok)).lower()])

    def to_dict(self) -> dict:
        return {
            "param": self.param,
            "mode": self.mode,
            "formula": self.formula,
            "price_index": self.price_index,
            "classification": self.classification,
            "predicted": self.predicted,
            "lambda_hat": None if self.lambda_hat is None else self.lambda_hat.to_dict(),
            "sign_change_consistent": self.sign_change_consistent,
        }


def _point_self_consistent(args):
    p, attr, k, value, formula, warm = args
    arr = np.array(getattr(p, attr))
    arr[k] = value
    try:
        q = validate(p.replace(**{attr: arr}), allow_zero=("lambda",))
        s = solve_steady_state(q, warm)
        return frozen_prices(q, s, formula), True, s.x
    except (ConvergenceError, ValidationError, StateError, np.linalg.LinAlgError):
        return np.full(p.K, np.nan), False, None


def price_sweep(
    p: ModelParams,
    s_ref,
    param_path: str,
    grid,
    price_index: int = 1,
    mode: str = "frozen",
    formula: str = "theorem",
    jobs: int = 1,
    warm_start: bool = False,
) -> SweepResult:
    """Prices along a one-parameter grid.

    ``frozen`` keeps the masses of ``s_ref``; ``self-consistent`` re-solves
    the steady state per point, cold in parallel (``jobs > 1``) or
    sequentially with ``warm_start``. Failed points get NaN prices.
    """
    p = validate(p)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing with at least 2 points")
    if mode not in ("frozen", "self-consistent"):
        raise ValueError(f"unknown mode {mode!r}")
    if formula not in FORMULAS:
        raise ValueError(f"unknown formula {formula!r}")
    attr, k = parse_param_path(param_path, p.K)
    if not 1 <= price_index <= p.K:
        raise ValueError(f"price index {price_index} out of range 1..{p.K}")
    x_ref = _x(s_ref)
    prices = np.full((grid.size, p.K), np.nan)
    ok = np.zeros(grid.size, dtype=bool)
    if mode == "frozen":
        for n, value in enumerate(grid):
            arr = np.array(getattr(p, attr))
            arr[k] = value
            try:
                q = validate(p.replace(**{attr: arr}), allow_zero=("lambda",))
            except ValidationError:
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                prices[n] = frozen_prices(q, x_ref, formula)
            ok[n] = bool(np.all(np.isfinite(prices[n])))
    elif jobs > 1 and not warm_start:
        tasks = [(p, attr, k, v, formula, None) for v in grid]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for n, (row, good, _) in enumerate(pool.map(_point_self_consistent, tasks)):
                prices[n], ok[n] = row, good
    else:
        warm = None
        for n, v in enumerate(grid):
            prices[n], ok[n], x = _point_self_consistent((p, attr, k, v, formula, warm))
            if warm_start and x is not None:
                warm = x
    series = prices[:, price_index - 1]
    label = classify_series(series[ok])
    predicted = lam_hat = consistent = None
    if attr == "lam" and mode == "frozen":
        if k != price_index - 1:
            # the swept rate enters this price only through theta, which rises with it
            coef = theta_coefficient(p, x_ref, formula)[price_index - 1]
            predicted = "increasing" if coef > 0 else "decreasing" if coef < 0 else "constant"
        else:
            lam_hat = lambda_hat(p, x_ref, k + 1)
            consistent = _sign_change_near(grid[ok], series[ok], lam_hat, formula)
    return SweepResult(
        param=param_path,
        grid=grid,
        prices=prices,
        converged=ok,
        mode=mode,
        formula=formula,
        price_index=price_index,
        classification=label,
        predicted=predicted,
        lambda_hat=lam_hat,
        sign_change_consistent=consistent,
    )


def classify_series(values, dead_band: float = DEAD_BAND) -> str:
    """Label a sequence by the signs of its successive differences, ignoring steps within the dead-band."""
    diffs = np.diff(np.asarray(values, dtype=float))
    if diffs.size == 0:
        return "constant"
    up = np.any(diffs > dead_band)
    down = np.any(diffs < -dead_band)
    if up and down:
        return "non-monotone"
    if up:
        return "increasing"
    if down:
        return "decreasing"
    return "constant"


def classify_monotonicity(sweep: SweepResult) -> str:
    return classify_series(sweep.series[sweep.converged])


def _sign_change_near(grid, series, lam_hat: LambdaHat | None, formula: str) -> bool | None:
    """Whether a threshold inside the grid sits within one cell of a slope sign change.

    Returns None when there is no threshold inside the grid.
    """
    if lam_hat is None or lam_hat.denominator <= 0 or grid.size < 3:
        return None
    threshold = lam_hat.theorem if formula == "theorem" else lam_hat.bargain
    if not grid[0] < threshold < grid[-1]:
        return None
    diffs = np.diff(series)
    signs = np.sign(np.where(np.abs(diffs) > DEAD_BAND, diffs, 0.0))
    cell = np.mean(np.diff(grid))
    mids = 0.5 * (grid[:-1] + grid[1:])
    for n in range(1, signs.size):
        if signs[n] != 0 and signs[n - 1] != 0 and signs[n] != signs[n - 1]:
            if abs(mids[n] - threshold) <= 2 * cell:
                return True
    return False
