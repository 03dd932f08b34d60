"""Mean-field vector fields and a fixed-step RK4 integrator."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import FullState, ModelParams, ValidatedParams, check_reduced, validate

DEFAULT_DT = 1e-3
# lower edge of the admissible box; undershoots are reported, not clamped
LOWER_BOUND = -1e-9
UPPER_BOUND = 1.0 + 1e-6


class BlowUpError(RuntimeError):
    def __init__(self, t: float, state: np.ndarray):
        self.t = t
        self.state = state
        super().__init__(f"blow-up at t={t:.6g}: state left the admissible box")


def reduced_rhs(x, p: ValidatedParams) -> np.ndarray:
    """Time derivative of the reduced state.

    Accepts a single state of length 2K or a batch with shape ``(n, 2K)``.
    """
    x = np.asarray(x, dtype=float)
    K = p.K
    buyers = x[..., :K]
    sellers = x[..., K:]
    trade = p.lam * buyers * sellers
    others = buyers.sum(axis=-1, keepdims=True) - buyers
    d_buyers = (
        -trade
        - p.gamma_tilde * buyers
        - p.gamma_tilde_u * others
        + p.gamma_tilde_u * (1.0 - p.m_total)
    )
    d_sellers = -trade - p.gamma * sellers + p.gamma_d * p.m
    return np.concatenate([d_buyers, d_sellers], axis=-1)


def reduced_jacobian(x, p: ValidatedParams) -> np.ndarray:
    """Analytic Jacobian of :func:`reduced_rhs` at a single state."""
    x = np.asarray(x, dtype=float)
    K = p.K
    buyers, sellers = x[:K], x[K:]
    J = np.zeros((2 * K, 2 * K))
    J[:K, :K] = -p.gamma_tilde_u[:, None]
    idx = np.arange(K)
    J[idx, idx] = -p.lam * sellers - p.gamma_tilde
    J[idx, K + idx] = -p.lam * buyers
    J[K + idx, idx] = -p.lam * sellers
    J[K + idx, K + idx] = -p.lam * buyers - p.gamma
    return J


def full_rhs(mu: FullState, p: ValidatedParams) -> np.ndarray:
    """Derivative of every occupation measure, laid out like ``FullState.as_vector``."""
    trade = p.lam * mu.mu_hn * mu.mu_lo
    d_hn = -trade + p.gamma_tilde_u * mu.mu_ln - p.gamma_tilde_d * mu.mu_hn
    d_ln = trade.sum() - p.gamma_tilde_u.sum() * mu.mu_ln + (p.gamma_tilde_d * mu.mu_hn).sum()
    d_ho = trade + p.gamma_u * mu.mu_lo - p.gamma_d * mu.mu_ho
    d_lo = -trade - p.gamma_u * mu.mu_lo + p.gamma_d * mu.mu_ho
    return np.concatenate([d_hn, d_lo, d_ho, [d_ln]])


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_times, 2K) or (n_times, n_traj, 2K)
    params: ValidatedParams

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path: str | Path) -> None:
        if self.states.ndim != 2:
            raise ValueError("CSV export needs a single trajectory")
        write_trajectory_csv(path, self.times, self.states, self.params.K)


def trajectory_header(K: int) -> list[str]:
    return ["t", *(f"mu_h{i + 1}n" for i in range(K)), *(f"mu_l{i + 1}o" for i in range(K))]


def write_trajectory_csv(path, times, states, K: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trajectory_header(K))
        for t, row in zip(times, states):
            writer.writerow([f"{t:.12g}", *(f"{v:.12g}" for v in row)])


def _rk4_step(x, h, p):
    k1 = reduced_rhs(x, p)
    k2 = reduced_rhs(x + 0.5 * h * k1, p)
    k3 = reduced_rhs(x + 0.5 * h * k2, p)
    k4 = reduced_rhs(x + h * k3, p)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(
    x0,
    p: ModelParams,
    dt: float = DEFAULT_DT,
    t_max: float = 1.0,
    store_every: int = 1,
) -> Trajectory:
    """Integrate the reduced system with classical RK4 at a fixed step.

    ``x0`` may be a single state or a batch ``(n, 2K)``; a batch is
    advanced in lock-step, which is much cheaper than separate calls.
    Raises :class:`BlowUpError` if any state leaves
    ``[LOWER_BOUND, UPPER_BOUND]``.
    """
    p = validate(p)
    if dt <= 0 or t_max <= 0:
        raise ValueError("dt and t_max must be positive")
    x = np.array(x0, dtype=float)
    for row in np.atleast_2d(x):
        check_reduced(row, p)
    n_steps = int(np.ceil(t_max / dt - 1e-9))
    n_store = n_steps // store_every + 1 + (1 if n_steps % store_every else 0)
    times = np.empty(n_store)
    states = np.empty((n_store, *x.shape))
    times[0] = 0.0
    states[0] = x
    k = 1
    for step in range(1, n_steps + 1):
        x = _rk4_step(x, dt, p)
        if x.min() < LOWER_BOUND or x.max() > UPPER_BOUND or not np.all(np.isfinite(x)):
            raise BlowUpError(step * dt, x)
        if step % store_every == 0 or step == n_steps:
            times[k] = step * dt
            states[k] = x
            k += 1
    return Trajectory(times[:k], states[:k], p)
