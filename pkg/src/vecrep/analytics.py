"""Closed-form replica planning for a homogeneous single-lane VEC road.

TaVs and SeVs are independent 1-D Poisson point processes. Every quantity
here is a pure function of :class:`NetworkConditions`; all rates are in
tasks/s, densities in vehicles/km and lengths in km.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.stats import poisson

POISSON_MASS_TOL = 1e-12

ArrivalMode = Literal["exact", "bound"]


class NoStableReplicaCount(ValueError):
    """Raised when every candidate replica count overloads the SeVs."""


@dataclass(frozen=True)
class NetworkConditions:
    """Analytic scenario for one road segment.

    ``theta_f`` may be 1, which switches the reliability floor off.
    ``p_e`` may be 0 for loss-free sanity checks.
    """

    lambda0: float
    mu_c: float
    p_e: float
    gamma_t: float
    gamma_s: float
    R: float
    theta_f: float = 1.0

    def __post_init__(self) -> None:
        if not self.lambda0 > 0:
            raise ValueError(f"lambda0 must be positive, got {self.lambda0}")
        if not self.mu_c > 0:
            raise ValueError(f"mu_c must be positive, got {self.mu_c}")
        if not 0 <= self.p_e < 1:
            raise ValueError(f"p_e must lie in [0, 1), got {self.p_e}")
        if not self.gamma_t >= 0:
            raise ValueError(f"gamma_t must be non-negative, got {self.gamma_t}")
        if not self.gamma_s > 0:
            raise ValueError(f"gamma_s must be positive, got {self.gamma_s}")
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if not 0 < self.theta_f <= 1:
            raise ValueError(f"theta_f must lie in (0, 1], got {self.theta_f}")

    @property
    def gamma_bar_t(self) -> float:
        """Mean number of TaVs within a window of length 2R."""
        return 2 * self.R * self.gamma_t

    @property
    def gamma_bar_s(self) -> float:
        """Mean number of SeVs within a window of length 2R."""
        return 2 * self.R * self.gamma_s

    @classmethod
    def from_density(
        cls,
        lambda0: float,
        ratio: float,
        total_density: float = 25.0,
        mu_c: float = 10.0,
        p_e: float = 0.02,
        R: float = 0.2,
        theta_f: float = 1.0,
    ) -> "NetworkConditions":
        """Split ``total_density`` into TaV/SeV densities with gamma_t/gamma_s = ratio."""
        if ratio < 0:
            raise ValueError(f"ratio must be non-negative, got {ratio}")
        gamma_s = total_density / (1 + ratio)
        return cls(
            lambda0=lambda0,
            mu_c=mu_c,
            p_e=p_e,
            gamma_t=total_density - gamma_s,
            gamma_s=gamma_s,
            R=R,
            theta_f=theta_f,
        )


@dataclass(frozen=True)
class ReplicaPlan:
    k_tilde: float
    k_tilde_round: int
    k_min: int
    k_star: int
    lambda_hat_c: float
    d_hat_c: float
    stable: bool


def _check_k(K: int) -> None:
    if int(K) != K or K < 1:
        raise ValueError(f"number of replicas must be an integer >= 1, got {K}")


def poisson_support(mean: float) -> np.ndarray:
    """Return n = 0..n_max, stopping once the cumulative mass exceeds 1 - 1e-12.

    The length is capped at max(200, 20 * mean) terms.
    """
    cap = int(max(200, math.ceil(20 * mean)))
    n_max = int(poisson.ppf(1 - POISSON_MASS_TOL, mean))
    if poisson.cdf(n_max, mean) <= 1 - POISSON_MASS_TOL:
        n_max += 1
    return np.arange(min(n_max, cap) + 1)


def mean_inverse_candidates(
    gamma_bar_s: float, mode: Literal["exact", "approx"] = "exact"
) -> float:
    """Sum over k >= 1 of Poisson(gamma_bar_s) mass at k divided by k.

    ``approx`` uses the closed form 1/g + 1/g**2.
    """
    if not gamma_bar_s > 0:
        raise ValueError(f"gamma_bar_s must be positive, got {gamma_bar_s}")
    if mode == "approx":
        return 1 / gamma_bar_s + 1 / gamma_bar_s**2
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    n = poisson_support(gamma_bar_s)[1:]
    return float(np.sum(poisson.pmf(n, gamma_bar_s) / n))


def arrival_rate_upper_bound(cond: NetworkConditions, K: int) -> float:
    """Upper bound on the mean task arrival rate at one SeV.

    (gamma_bar_t + 1) * lambda0 * K * E[1/N; N >= 1] with N ~ Poisson(gamma_bar_s).
    """
    _check_k(K)
    c = mean_inverse_candidates(cond.gamma_bar_s, "exact")
    return (cond.gamma_bar_t + 1) * cond.lambda0 * K * c


def mean_arrival_rate(cond: NetworkConditions, K: int) -> float:
    """Mean arrival rate at one SeV under uniformly random K-of-Y selection.

    This is the series before the min(K, Y) <= K relaxation:
    (gamma_bar_t + 1) * lambda0 * E[min(K, Y) / Y; Y >= 1].
    Never exceeds :func:`arrival_rate_upper_bound`, with equality at K = 1.
    """
    _check_k(K)
    n = poisson_support(cond.gamma_bar_s)[1:]
    share = np.minimum(K, n) / n
    return float((cond.gamma_bar_t + 1) * cond.lambda0 * np.sum(poisson.pmf(n, cond.gamma_bar_s) * share))


def _mean_inverse_receivers(K: int, p_e: float) -> float:
    # E[1/S; S >= 1] for S ~ Binomial(K, 1 - p_e)
    k = np.arange(1, K + 1)
    log_binom = (
        np.array([math.lgamma(K + 1) - math.lgamma(j + 1) - math.lgamma(K - j + 1) for j in k])
    )
    if p_e == 0:
        return 1.0 / K
    terms = np.exp(log_binom + k * math.log1p(-p_e) + (K - k) * math.log(p_e))
    return float(np.sum(terms / k))


def expected_execution_delay(
    cond: NetworkConditions, K: int, arrival: ArrivalMode = "exact"
) -> float:
    """Expected execution delay of the first-finishing replica.

    Outer Poisson mixture over the candidate count N_s >= 1, inner binomial
    over the S replicas that survive erasure; each surviving replica sees an
    M/M/1 sojourn with mean 1/(mu_c - lambda_c), so the first finisher has
    mean 1/(S (mu_c - lambda_c)).

    Args:
        cond: network conditions.
        K: number of replicas.
        arrival: ``"exact"`` uses :func:`mean_arrival_rate` for lambda_c;
            ``"bound"`` substitutes :func:`arrival_rate_upper_bound`, giving
            the conservative estimate.

    Returns:
        Delay in seconds, or ``math.inf`` when mu_c - lambda_c <= 0.
    """
    _check_k(K)
    if arrival == "exact":
        lam = mean_arrival_rate(cond, K)
    elif arrival == "bound":
        lam = arrival_rate_upper_bound(cond, K)
    else:
        raise ValueError(f"unknown arrival mode {arrival!r}")
    if cond.mu_c - lam <= 0:
        return math.inf
    n = poisson_support(cond.gamma_bar_s)[1:]
    pmf = poisson.pmf(n, cond.gamma_bar_s)
    inner = {ks: _mean_inverse_receivers(ks, cond.p_e) for ks in range(1, min(K, int(n[-1])) + 1)}
    weights = np.array([inner[min(K, int(m))] for m in n])
    return float(np.sum(pmf * weights) / (cond.mu_c - lam))


def near_optimal_replicas(cond: NetworkConditions) -> float:
    """Closed-form real-valued replica count mu_c / (2 c_hat).

    c_hat = lambda0 (gamma_bar_t + 1)(1/gamma_bar_s + 1/gamma_bar_s**2).
    """
    c_hat = cond.lambda0 * (cond.gamma_bar_t + 1) * mean_inverse_candidates(cond.gamma_bar_s, "approx")
    return cond.mu_c / (2 * c_hat)


def failure_probability(cond: NetworkConditions, K: int) -> float:
    """Probability that every replica of a task is erased.

    With N_s <= K every candidate gets a replica, so the failure probability
    is p_e**N_s; otherwise it is p_e**K. Only N_s >= 1 contributes.
    """
    _check_k(K)
    n = poisson_support(cond.gamma_bar_s)[1:]
    pmf = poisson.pmf(n, cond.gamma_bar_s)
    return float(np.sum(pmf * cond.p_e ** np.minimum(n, K)))


def min_replicas_for_reliability(theta_f: float, p_e: float) -> int:
    """Smallest K with p_e**K <= theta_f, i.e. ceil(ln theta_f / ln p_e), at least 1.

    ``theta_f = 1`` is accepted and yields 1.
    """
    if not 0 < theta_f <= 1:
        raise ValueError(f"theta_f must lie in (0, 1], got {theta_f}")
    if not 0 < p_e < 1:
        raise ValueError(f"p_e must lie in (0, 1), got {p_e}")
    ratio = math.log(theta_f) / math.log(p_e)
    k = math.ceil(ratio - 1e-12)
    return max(1, k)


def round_half_up(x: float) -> int:
    """Nearest integer with halves rounded away from zero."""
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def optimal_replicas(cond: NetworkConditions) -> ReplicaPlan:
    """Replica plan K* = max(round(K~*), ceil(ln theta_f / ln p_e)).

    A rounded value of 0 is lifted to 1. Unstable plans are returned with
    ``stable=False`` rather than raising.
    """
    k_tilde = near_optimal_replicas(cond)
    k_round = max(1, round_half_up(k_tilde))
    if cond.p_e > 0:
        k_min = min_replicas_for_reliability(cond.theta_f, cond.p_e)
    else:
        k_min = 1
    k_star = max(k_round, k_min)
    lam_hat = arrival_rate_upper_bound(cond, k_star)
    return ReplicaPlan(
        k_tilde=k_tilde,
        k_tilde_round=k_round,
        k_min=k_min,
        k_star=k_star,
        lambda_hat_c=lam_hat,
        d_hat_c=expected_execution_delay(cond, k_star, arrival="bound"),
        stable=cond.mu_c - lam_hat > 0,
    )


def execution_delay_curve(
    cond: NetworkConditions, k_max: int = 16, arrival: ArrivalMode = "exact"
) -> np.ndarray:
    """Expected execution delay for K = 1..k_max (``inf`` where unstable)."""
    return np.array([expected_execution_delay(cond, k, arrival) for k in range(1, k_max + 1)])


def theoretical_optimum_search(
    cond: NetworkConditions, k_max: int = 16, arrival: ArrivalMode = "exact"
) -> int:
    """Argmin of the expected execution delay over K in 1..k_max.

    Unstable K are skipped and ties go to the smaller K.

    Raises:
        NoStableReplicaCount: if no K in range is stable.
    """
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    curve = execution_delay_curve(cond, k_max, arrival)
    if not np.isfinite(curve).any():
        raise NoStableReplicaCount(f"no stable K in 1..{k_max} for {cond}")
    return int(np.argmin(curve)) + 1


# (lambda0, gamma_t / gamma_s) grid sweeping the replica-count trade-off at
# 25 vehicles/km, R = 200 m, mu_c = 10, p_e = 0.02. Duplicated cells are kept
# so the list lines up row-for-row with the published table layout.
REPLICA_GRID_CELLS: tuple[tuple[float, float], ...] = tuple(
    [(lam, r) for lam in (2.0, 3.0, 4.0) for r in (1, 1 / 2, 1 / 3, 1 / 4, 1 / 5, 1 / 6, 1 / 7)]
    + [(lam, r) for r in (1, 1 / 3, 1 / 4) for lam in (2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0)]
)


def table_conditions(lambda0: float, ratio: float, theta_f: float = 1.0) -> NetworkConditions:
    """NetworkConditions for one cell of the replica-count grid."""
    return NetworkConditions.from_density(lambda0, ratio, theta_f=theta_f)
