"""Parameters and state containers for the segmented K-asset OTC market.

Reduced coordinates follow the convention ``x[i] = mu(hi,n)`` (buyers of
asset ``i``) and ``x[K+i] = mu(li,o)`` (sellers of asset ``i``); all other
masses are recovered from the ownership and population constraints.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

VECTOR_FIELDS = (
    "lam",
    "gamma_u",
    "gamma_d",
    "gamma_tilde_u",
    "gamma_tilde_d",
    "m",
    "delta_h",
    "delta_d",
)
SCALAR_FIELDS = ("q", "r")

# config-file key -> attribute name
_KEY_TO_ATTR = {"lambda": "lam"}
_ATTR_TO_KEY = {v: k for k, v in _KEY_TO_ATTR.items()}

STATE_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when parameters violate the model's invariants.

    ``problems`` lists every violated invariant, not just the first.
    """

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class StateError(ValueError):
    """A state vector lies outside the feasible region."""


def _frozen_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Exogenous market parameters; all rates are per year.

    Vector fields have one entry per asset. ``q`` is the seller's
    bargaining power and ``r`` the risk-free rate.
    """

    K: int
    lam: np.ndarray
    gamma_u: np.ndarray
    gamma_d: np.ndarray
    gamma_tilde_u: np.ndarray
    gamma_tilde_d: np.ndarray
    m: np.ndarray
    delta_h: np.ndarray
    delta_d: np.ndarray
    q: float
    r: float

    def __post_init__(self):
        object.__setattr__(self, "K", int(self.K))
        for name in VECTOR_FIELDS:
            object.__setattr__(self, name, _frozen_array(getattr(self, name), name))
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "r", float(self.r))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelParams":
        missing = [
            key
            for key in ("K", *(_ATTR_TO_KEY.get(f, f) for f in VECTOR_FIELDS), *SCALAR_FIELDS)
            if key not in data
        ]
        if missing:
            raise ValidationError([f"missing key {k!r}" for k in missing])
        kwargs = {_KEY_TO_ATTR.get(k, k): v for k, v in data.items() if k != "K"}
        unknown = set(kwargs) - set(VECTOR_FIELDS) - set(SCALAR_FIELDS)
        if unknown:
            raise ValidationError([f"unknown key {k!r}" for k in sorted(unknown)])
        return cls(K=data["K"], **kwargs)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"K": self.K}
        for name in VECTOR_FIELDS:
            out[_ATTR_TO_KEY.get(name, name)] = [float(v) for v in getattr(self, name)]
        out["q"] = self.q
        out["r"] = self.r
        return out

    def replace(self, **changes) -> "ModelParams":
        """Copy with some fields replaced; returns an unvalidated ModelParams."""
        values = {f.name: getattr(self, f.name) for f in dataclasses.fields(ModelParams)}
        values.update(changes)
        return ModelParams(**values)


@dataclass(frozen=True, eq=False)
class ValidatedParams(ModelParams):
    """ModelParams that passed :func:`validate`, plus aggregated rates.

    ``gamma`` is the total owner switching rate and ``gamma_tilde`` the
    total non-owner switching rate of each asset; ``m_total`` is the mass
    of all assets.
    """

    gamma: np.ndarray = field(init=False, repr=False)
    gamma_tilde: np.ndarray = field(init=False, repr=False)
    m_total: float = field(init=False, repr=False)

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "gamma", _frozen_array(self.gamma_u + self.gamma_d, "gamma"))
        object.__setattr__(
            self,
            "gamma_tilde",
            _frozen_array(self.gamma_tilde_u + self.gamma_tilde_d, "gamma_tilde"),
        )
        object.__setattr__(self, "m_total", float(np.sum(self.m)))


# boundary cases that checks may opt into; both have well-defined limits
ZERO_ALLOWED = frozenset({"lambda", "delta_d"})


def _problems(p: ModelParams, allow_zero: frozenset = frozenset()) -> list[str]:
    problems = []
    if p.K < 1:
        return [f"K must be >= 1 (got {p.K})"]
    for name in VECTOR_FIELDS:
        arr = getattr(p, name)
        if arr.shape != (p.K,):
            problems.append(f"{_ATTR_TO_KEY.get(name, name)} has length {arr.size}, expected K={p.K}")
        elif not np.all(np.isfinite(arr)):
            problems.append(f"{_ATTR_TO_KEY.get(name, name)} has non-finite entries")
    if problems:
        return problems

    rates = ["gamma_u", "gamma_d", "gamma_tilde_u", "gamma_tilde_d"]
    if "lambda" in allow_zero:
        for i in np.flatnonzero(p.lam < 0):
            problems.append(f"lambda must be >= 0 for asset {i + 1}")
    else:
        rates.insert(0, "lam")
    for name in rates:
        for i in np.flatnonzero(getattr(p, name) <= 0):
            problems.append(f"{_ATTR_TO_KEY.get(name, name)} must be > 0 for asset {i + 1}")
    for i in range(p.K):
        if not 0 < p.m[i] < 1:
            problems.append(f"m must lie in (0,1) for asset {i + 1}")
        if "delta_d" in allow_zero:
            if p.delta_d[i] < 0:
                problems.append(f"delta_d must be >= 0 for asset {i + 1}")
        elif not p.delta_d[i] > 0:
            problems.append(f"delta_d must be > 0 for asset {i + 1}")
        if not p.delta_h[i] > p.delta_d[i]:
            problems.append(f"delta_d >= delta_h for asset {i + 1}")
    if not np.sum(p.m) < 1:
        problems.append(f"sum of m not < 1 (got {np.sum(p.m):.12g})")
    if not 0 < p.q < 1:
        problems.append(f"q must lie in (0,1) (got {p.q:.12g})")
    if not p.r > 0:
        problems.append(f"r must be > 0 (got {p.r:.12g})")
    return problems


def validate(params: ModelParams, allow_zero=()) -> ValidatedParams:
    """Check every invariant and attach the derived rates.

    Raises :class:`ValidationError` naming all violations. ``allow_zero``
    may name ``"lambda"`` (no-trade market) or ``"delta_d"`` (no holding
    cost) to accept exact zeros for those fields.
    """
    if isinstance(params, ValidatedParams):
        return params
    allow_zero = frozenset(allow_zero)
    if not allow_zero <= ZERO_ALLOWED:
        raise ValueError(f"cannot relax {sorted(allow_zero - ZERO_ALLOWED)}")
    problems = _problems(params, allow_zero)
    if problems:
        raise ValidationError(problems)
    return ValidatedParams(**{f.name: getattr(params, f.name) for f in dataclasses.fields(ModelParams)})


def load_params(path: str | Path) -> ValidatedParams:
    with open(path) as fh:
        data = json.load(fh)
    return validate(ModelParams.from_dict(data))


def two_asset_params() -> ValidatedParams:
    """The two-asset numerical example shipped with the package."""
    return load_params(Path(__file__).with_name("data") / "two_asset.json")


@dataclass(frozen=True, eq=False)
class FullState:
    """Occupation measures of all 3K+1 investor states."""

    mu_hn: np.ndarray
    mu_lo: np.ndarray
    mu_ho: np.ndarray
    mu_ln: float

    def __post_init__(self):
        for name in ("mu_hn", "mu_lo", "mu_ho"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), name))
        object.__setattr__(self, "mu_ln", float(self.mu_ln))

    @property
    def K(self) -> int:
        return self.mu_hn.size

    def as_vector(self) -> np.ndarray:
        """Layout ``[mu_hn (K), mu_lo (K), mu_ho (K), mu_ln]``."""
        return np.concatenate([self.mu_hn, self.mu_lo, self.mu_ho, [self.mu_ln]])

    @classmethod
    def from_vector(cls, v) -> "FullState":
        v = np.asarray(v, dtype=float)
        K = (v.size - 1) // 3
        return cls(v[:K], v[K : 2 * K], v[2 * K : 3 * K], v[3 * K])

    def to_dict(self) -> dict[str, Any]:
        return {
            "mu_hn": self.mu_hn.tolist(),
            "mu_lo": self.mu_lo.tolist(),
            "mu_ho": self.mu_ho.tolist(),
            "mu_ln": self.mu_ln,
        }


def check_reduced(x, p: ValidatedParams, tol: float = STATE_TOL) -> np.ndarray:
    """Return ``x`` as an array after checking it is a feasible reduced state."""
    x = np.asarray(x, dtype=float)
    K = p.K
    if x.shape != (2 * K,):
        raise StateError(f"reduced state must have length {2 * K}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise StateError("reduced state has non-finite entries")
    for i in range(K):
        if x[i] < -tol:
            raise StateError(f"mu(h{i + 1},n) = {x[i]:.6g} is negative")
        if x[K + i] < -tol:
            raise StateError(f"mu(l{i + 1},o) = {x[K + i]:.6g} is negative")
        if x[K + i] > p.m[i] + tol:
            raise StateError(f"mu(l{i + 1},o) = {x[K + i]:.6g} exceeds m_{i + 1} = {p.m[i]:.6g}")
    ln = 1.0 - p.m_total - x[:K].sum()
    if ln < -tol:
        raise StateError(f"mu(l,n) = {ln:.6g} is negative (buyer masses too large)")
    return x


def reduced_to_full(x, p: ValidatedParams) -> FullState:
    x = check_reduced(x, p)
    K = p.K
    return FullState(
        mu_hn=x[:K],
        mu_lo=x[K:],
        mu_ho=p.m - x[K:],
        mu_ln=1.0 - p.m_total - x[:K].sum(),
    )


def full_to_reduced(mu: FullState, p: ValidatedParams | None = None, tol: float = STATE_TOL) -> np.ndarray:
    """Extract ``(mu_hn, mu_lo)``; checks the ownership and population constraints."""
    parts = np.concatenate([mu.mu_hn, mu.mu_lo, mu.mu_ho, [mu.mu_ln]])
    if np.any(parts < -tol):
        raise StateError("full state has negative components")
    total = mu.mu_hn.sum() + mu.mu_lo.sum() + mu.mu_ho.sum() + mu.mu_ln
    if abs(total - 1.0) > tol:
        raise StateError(f"population constraint violated: total mass {total:.15g}")
    if p is not None:
        gap = np.abs(mu.mu_ho + mu.mu_lo - p.m)
        if np.any(gap > tol):
            i = int(np.argmax(gap))
            raise StateError(f"ownership constraint violated for asset {i + 1}: gap {gap[i]:.3g}")
    return np.concatenate([mu.mu_hn, mu.mu_lo])
