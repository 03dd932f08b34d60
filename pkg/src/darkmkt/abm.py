"""Finite-population event simulation of the search market.

Each agent is in one of the ``3K + 1`` states ``(h_i,n)``, ``(l_i,o)``,
``(h_i,o)``, ``(l,n)``. Only the counts matter, so the simulation is an
exact Gillespie run over aggregate event rates. Per asset there are five
channels: ``(l,n) -> (h_i,n)``, ``(h_i,n) -> (l,n)``, ``(l_i,o) ->
(h_i,o)``, ``(h_i,o) -> (l_i,o)``, and a trade turning a ``(h_i,n)`` and
``(l_i,o)`` pair into ``(h_i,o)`` and ``(l,n)`` at rate
``lam_i n_hn n_lo / N``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numba
import numpy as np

from .equilibrium import SteadyState
from .model import ModelParams, validate
from .pricing import DAYS_PER_YEAR, seller_timing

CHUNK = 1 << 20  # uniforms per refill; results do not depend on it


class InitializationError(ValueError):
    pass


@numba.njit(cache=True)
def _run_chunk(
    counts,  # int64 (3K+1): hn, lo, ho, ln
    t,  # float64 (1,)
    u,  # uniforms
    rates,  # float64 (5, K): gtu, gtd, gu, gd, lam
    n_agents,
    t_max,
    sample_dt,
    samples,  # float64 (n_samples, 3K+1)
    next_sample,  # int64 (1,)
    trades,  # int64 (K,)
    exposure,  # float64 (K,): integral of seller counts
    n_events,  # int64 (1,)
):
    """Advance until the uniforms run out or time passes ``t_max``.

    Returns True when the run is finished. State lives in the mutable
    arguments so a run can resume with a fresh chunk.
    """
    K = rates.shape[1]
    n_samples = samples.shape[0]
    ln = 3 * K
    pos = 0
    props = np.empty(5 * K)
    while pos + 1 < u.size:
        total = 0.0
        for i in range(K):
            props[5 * i] = rates[0, i] * counts[ln]
            props[5 * i + 1] = rates[1, i] * counts[i]
            props[5 * i + 2] = rates[2, i] * counts[K + i]
            props[5 * i + 3] = rates[3, i] * counts[2 * K + i]
            props[5 * i + 4] = rates[4, i] * counts[i] * counts[K + i] / n_agents
            for c in range(5):
                total += props[5 * i + c]
        if total > 0.0:
            t_new = t[0] - np.log(1.0 - u[pos]) / total
        else:
            t_new = np.inf
        end = min(t_new, t_max)
        while next_sample[0] < n_samples and next_sample[0] * sample_dt <= end + 1e-12 * sample_dt:
            for k in range(counts.size):
                samples[next_sample[0], k] = counts[k] / n_agents
            next_sample[0] += 1
        for i in range(K):
            exposure[i] += counts[K + i] * (end - t[0])
        if t_new >= t_max:
            t[0] = t_max
            return True
        t[0] = t_new
        target = u[pos + 1] * total
        pos += 2
        acc = 0.0
        chosen = 5 * K - 1
        for c in range(5 * K):
            acc += props[c]
            if target < acc:
                chosen = c
                break
        # guard against rounding picking a channel with zero propensity
        while props[chosen] == 0.0:
            chosen -= 1
        i = chosen // 5
        kind = chosen % 5
        if kind == 0:
            counts[ln] -= 1
            counts[i] += 1
        elif kind == 1:
            counts[i] -= 1
            counts[ln] += 1
        elif kind == 2:
            counts[K + i] -= 1
            counts[2 * K + i] += 1
        elif kind == 3:
            counts[2 * K + i] -= 1
            counts[K + i] += 1
        else:
            counts[i] -= 1
            counts[K + i] -= 1
            counts[2 * K + i] += 1
            counts[ln] += 1
            trades[i] += 1
        n_events[0] += 1
    return False


@dataclass(frozen=True, eq=False)
class AbmSeries:
    """Sampled proportions with layout ``[hn (K), lo (K), ho (K), ln]``."""

    times: np.ndarray
    proportions: np.ndarray
    final_counts: np.ndarray
    trades: np.ndarray
    seller_exposure: np.ndarray  # agent-years spent as sellers, per asset
    n_events: int
    n_agents: int
    K: int
    seed: int

    def reduced(self) -> np.ndarray:
        """Columns ``(hn, lo)`` matching the reduced state layout."""
        return self.proportions[:, : 2 * self.K]

    def to_csv(self, path) -> None:
        K = self.K
        header = [
            "t",
            *(f"h{i + 1}_n" for i in range(K)),
            *(f"l{i + 1}_o" for i in range(K)),
            *(f"h{i + 1}_o" for i in range(K)),
            "l_n",
        ]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t, row in zip(self.times, self.proportions):
                writer.writerow([f"{t:.12g}", *(f"{v:.12g}" for v in row)])


def initial_counts(p, n_agents: int) -> np.ndarray:
    """Every owner starts high-type; all non-owners start as ``(l,n)``."""
    K = p.K
    owners = np.rint(n_agents * np.asarray(p.m)).astype(np.int64)
    if np.any(owners < 1):
        raise InitializationError("each asset needs at least one owner: raise n_agents")
    if n_agents - owners.sum() < 1:
        raise InitializationError("no non-owners left after rounding owner counts")
    counts = np.zeros(3 * K + 1, dtype=np.int64)
    counts[2 * K : 3 * K] = owners
    counts[3 * K] = n_agents - owners.sum()
    return counts


def simulate(
    p: ModelParams,
    n_agents: int,
    t_max: float,
    seed: int = 0,
    sample_dt: float = 0.01,
    counts0=None,
    chunk: int = CHUNK,
) -> AbmSeries:
    """Exact event-driven run; identical inputs give bit-identical output."""
    p = validate(p, allow_zero=("lambda",))
    if t_max <= 0 or sample_dt <= 0:
        raise ValueError("t_max and sample_dt must be positive")
    counts = initial_counts(p, n_agents) if counts0 is None else np.array(counts0, dtype=np.int64)
    if counts.sum() != n_agents:
        raise InitializationError("initial counts do not sum to n_agents")
    rates = np.vstack([p.gamma_tilde_u, p.gamma_tilde_d, p.gamma_u, p.gamma_d, p.lam]).astype(float)
    n_samples = int(np.floor(t_max / sample_dt + 1e-9)) + 1
    samples = np.zeros((n_samples, counts.size))
    t = np.zeros(1)
    next_sample = np.zeros(1, dtype=np.int64)
    trades = np.zeros(p.K, dtype=np.int64)
    exposure = np.zeros(p.K)
    n_events = np.zeros(1, dtype=np.int64)
    rng = np.random.default_rng(seed)
    chunk += chunk % 2  # events consume uniforms in pairs
    done = False
    while not done:
        u = rng.random(chunk)
        done = _run_chunk(
            counts, t, u, rates, float(n_agents), float(t_max), float(sample_dt),
            samples, next_sample, trades, exposure, n_events,
        )
    times = np.arange(n_samples) * sample_dt
    return AbmSeries(times, samples, counts.copy(), trades, exposure, int(n_events[0]), n_agents, p.K, seed)


@dataclass(frozen=True, eq=False)
class MeanFieldComparison:
    tail_mean: np.ndarray
    target: np.ndarray
    abs_error: np.ndarray
    days_to_sale: np.ndarray
    days_meanfield: np.ndarray

    @property
    def sup_distance(self) -> float:
        return float(np.max(self.abs_error))

    @property
    def timing_rel_error(self) -> np.ndarray:
        return np.abs(self.days_to_sale - self.days_meanfield) / self.days_meanfield

    def to_dict(self) -> dict:
        return {
            "tail_mean": self.tail_mean.tolist(),
            "target": self.target.tolist(),
            "abs_error": self.abs_error.tolist(),
            "sup_distance": self.sup_distance,
            "days_to_sale": self.days_to_sale.tolist(),
            "days_meanfield": self.days_meanfield.tolist(),
        }


def compare_to_meanfield(
    series: AbmSeries, s, p: ModelParams, burn_in: float, days_per_year: float = DAYS_PER_YEAR
) -> MeanFieldComparison:
    """Time-averaged reduced proportions after ``burn_in`` against the steady state.

    Days to sale use the whole run: total seller exposure divided by the
    number of trades is the mean wait for a buyer.
    """
    p = validate(p, allow_zero=("lambda",))
    x = np.asarray(s.x if isinstance(s, SteadyState) else s, dtype=float)
    tail = series.times >= burn_in
    if not np.any(tail):
        raise ValueError("burn_in leaves no samples")
    mean = series.reduced()[tail].mean(axis=0)
    days = np.full(series.K, np.inf)
    sold = series.trades > 0
    days[sold] = days_per_year * series.seller_exposure[sold] / series.trades[sold]
    return MeanFieldComparison(
        tail_mean=mean,
        target=x,
        abs_error=np.abs(mean - x),
        days_to_sale=days,
        days_meanfield=seller_timing(p, x, days_per_year).days,
    )
