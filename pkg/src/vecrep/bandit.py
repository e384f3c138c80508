"""LTRA: combinatorial bandit over SeVs with discretized empirical CDFs.

Each SeV (arm) keeps a histogram of its normalized reward 1 - d/d_max on the
grid {0, 1/l, ..., (l-1)/l}. Selection lowers every empirical CDF by a
confidence padding, which shifts mass towards reward 1 (zero delay) for
rarely tried arms, and then picks the K-subset with the smallest expected
minimum delay under the product of the lowered distributions.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

ENUMERATION_LIMIT = 10_000
_TIE_TOL = 1e-12


class SequencingError(ValueError):
    """Raised when a CDF is requested at or before an arm's first appearance."""


class ContractViolation(ValueError):
    """Raised when outcomes are reported for arms that were not selected."""


class NonStationaryEnvironment(ValueError):
    """Raised when regret is requested for an environment without fixed laws."""


@dataclass(frozen=True)
class LearnerConfig:
    alpha: float = 0.5
    l: int = 100
    d_max: float = 0.5
    k_replicas: int = 1

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if int(self.l) != self.l or self.l < 2:
            raise ValueError(f"l must be an integer >= 2, got {self.l}")
        if not self.d_max > 0:
            raise ValueError(f"d_max must be positive, got {self.d_max}")
        if int(self.k_replicas) != self.k_replicas or self.k_replicas < 1:
            raise ValueError(f"k_replicas must be an integer >= 1, got {self.k_replicas}")


@dataclass
class ArmState:
    arm_id: Hashable
    t_n: int
    l: int
    k_count: int = 0
    histogram: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.histogram is None:
            self.histogram = np.zeros(self.l, dtype=np.int64)
        else:
            self.histogram = np.asarray(self.histogram, dtype=np.int64)
            if self.histogram.shape != (self.l,):
                raise ValueError(f"histogram must have {self.l} buckets")
        if int(self.histogram.sum()) != self.k_count:
            raise ValueError("histogram total must equal k_count")

    def empirical_cdf(self) -> np.ndarray:
        """F-hat at x = 0, 1/l, ..., (l-1)/l; all zeros before any observation."""
        if self.k_count == 0:
            return np.zeros(self.l)
        return np.cumsum(self.histogram) / self.k_count


@dataclass(frozen=True)
class DelayObservation:
    task_index: int
    arm_id: Hashable
    raw_delay: float
    normalized: float

    @classmethod
    def from_delay(cls, task_index: int, arm_id: Hashable, delay: float, d_max: float) -> "DelayObservation":
        delay = max(delay, 1e-12)
        return cls(task_index, arm_id, min(delay, d_max), normalize_delay(delay, d_max))


@dataclass
class RegretReport:
    horizon: int
    cumulative_loss: float
    mu_s_star: float
    empirical_regret: float
    bound: float
    gap_table: dict
    realized_loss: float | None = None


def normalize_delay(d: float, d_max: float) -> float:
    """min(d, d_max) / d_max, in (0, 1]."""
    if not d > 0:
        raise ValueError(f"delay must be positive, got {d}")
    if not d_max > 0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    return min(d, d_max) / d_max


def reward_bucket(normalized: float, l: int) -> int:
    """Bucket j with 1 - normalized in [j/l, (j+1)/l), clamped to [0, l-1]."""
    r = 1.0 - normalized
    # 1e-9 absorbs representation error such as (1 - 0.3) * 10 = 6.999...
    j = math.floor(r * l + 1e-9)
    return min(max(j, 0), l - 1)


def record_observation(arm: ArmState, obs: DelayObservation) -> ArmState:
    """Add one observation to the arm's histogram in place and return the arm."""
    if not 0 < obs.normalized <= 1:
        raise ValueError(f"normalized delay must be in (0, 1], got {obs.normalized}")
    arm.histogram[reward_bucket(obs.normalized, arm.l)] += 1
    arm.k_count += 1
    return arm


def confidence_padding(arm: ArmState, t: int, alpha: float) -> float:
    if t <= arm.t_n:
        raise SequencingError(f"t={t} must exceed first appearance t_n={arm.t_n}")
    if arm.k_count == 0:
        return math.inf
    return math.sqrt(alpha * max(math.log(t - arm.t_n), 0.0) / arm.k_count)


def lowered_cdf(arm: ArmState, t: int, alpha: float) -> np.ndarray:
    """Confidence-lowered CDF at x = 0, 1/l, ..., (l-1)/l.

    max(F-hat(x) - sqrt(alpha ln(t - t_n) / k), 0). The value at x = 1 is 1
    and is left implicit, so whatever mass the lowering removes sits at
    reward 1.
    """
    pad = confidence_padding(arm, t, alpha)
    if math.isinf(pad):
        return np.zeros(arm.l)
    return np.maximum(arm.empirical_cdf() - pad, 0.0)


def expected_max_reward(cdfs: np.ndarray | Sequence[np.ndarray]) -> float:
    """E[max reward] for independent arms with CDFs on the grid {0,...,(l-1)/l} plus an atom at 1."""
    cdfs = np.atleast_2d(np.asarray(cdfs, dtype=float))
    if cdfs.shape[0] == 0:
        raise ValueError("expected_max_reward needs at least one arm")
    l = cdfs.shape[1]
    return float(np.sum(1.0 - np.prod(cdfs, axis=0)) / l)


def expected_min_delay(cdfs: np.ndarray | Sequence[np.ndarray], d_max: float) -> float:
    """Expected minimum delay of a subset, d_max * (1 - E[max reward])."""
    return d_max * (1.0 - expected_max_reward(cdfs))


def _subset_values(cdfs: np.ndarray, combos: np.ndarray) -> np.ndarray:
    # vectorised E[max reward] for every row of combos
    prod = np.prod(cdfs[combos], axis=1)
    return np.sum(1.0 - prod, axis=1) / cdfs.shape[1]


def _greedy(cdfs: np.ndarray, k: int) -> list[int]:
    chosen: list[int] = []
    current = np.ones(cdfs.shape[1])
    remaining = list(range(cdfs.shape[0]))
    for _ in range(k):
        gains = [np.sum(1.0 - current * cdfs[i]) for i in remaining]
        best = max(gains)
        pick = next(i for i, g in zip(remaining, gains) if g >= best - _TIE_TOL)
        chosen.append(pick)
        remaining.remove(pick)
        current = current * cdfs[pick]
    return chosen


@functools.lru_cache(maxsize=256)
def _combinations(n: int, k: int) -> np.ndarray:
    return np.array(list(itertools.combinations(range(n), k)), dtype=np.intp)


def select_subset(
    candidates: Sequence[ArmState],
    cdfs: Sequence[np.ndarray],
    config: LearnerConfig,
    method: str = "auto",
    enumeration_limit: int = ENUMERATION_LIMIT,
) -> list[Hashable]:
    """Pick min(N, K) arms minimising the expected minimum delay.

    Candidates are ordered by (t_n, arm_id) and ties resolve to the earliest
    subset in that order. ``method="auto"`` enumerates every subset when
    C(N, K) <= 10**4 and falls back to greedy otherwise.
    """
    if len(candidates) == 0:
        raise ValueError("select_subset needs at least one candidate")
    k = min(config.k_replicas, len(candidates))
    order = sorted(range(len(candidates)), key=lambda i: (candidates[i].t_n, _sort_key(candidates[i].arm_id)))
    ordered = [candidates[i] for i in order]
    mat = np.asarray([cdfs[i] for i in order], dtype=float)
    if k == len(ordered):
        return [a.arm_id for a in ordered]
    if method == "auto":
        method = "exact" if math.comb(len(ordered), k) <= enumeration_limit else "greedy"
    if method == "exact":
        combos = _combinations(len(ordered), k)
        values = _subset_values(mat, combos)
        best = int(np.flatnonzero(values >= values.max() - _TIE_TOL)[0])
        picked = combos[best].tolist()
    elif method == "greedy":
        picked = sorted(_greedy(mat, k))
    else:
        raise ValueError(f"unknown method {method!r}")
    return [ordered[i].arm_id for i in picked]


def _sort_key(arm_id: Hashable) -> tuple:
    # mixed id types stay comparable
    return (type(arm_id).__name__, arm_id)


class LTRALearner:
    """Per-TaV learner state plus the decision and update steps.

    Arms that leave the candidate set keep their statistics and resume with
    them when they come back.
    """

    def __init__(self, config: LearnerConfig, enumeration_limit: int = ENUMERATION_LIMIT):
        self.config = config
        self.enumeration_limit = enumeration_limit
        self.arms: dict[Hashable, ArmState] = {}
        self.last_t = 0

    def step(self, t: int, candidates: Iterable[Hashable]) -> list[Hashable]:
        """Choose the replica set for task ``t`` among ``candidates``."""
        cand = list(dict.fromkeys(candidates))
        if not cand:
            raise ValueError("candidate set must be non-empty")
        self.last_t = max(self.last_t, t)
        k = self.config.k_replicas
        new = [c for c in cand if c not in self.arms]
        for c in new:
            self.arms[c] = ArmState(arm_id=c, t_n=t, l=self.config.l)
        if new:
            chosen = list(new)
            room = min(k, len(cand)) - len(chosen)
            if room > 0:
                seen = [self.arms[c] for c in cand if c not in new]
                cdfs = [lowered_cdf(a, t, self.config.alpha) for a in seen]
                pad_cfg = LearnerConfig(self.config.alpha, self.config.l, self.config.d_max, room)
                chosen += select_subset(seen, cdfs, pad_cfg, enumeration_limit=self.enumeration_limit)
            return chosen
        states = [self.arms[c] for c in cand]
        cdfs = [lowered_cdf(a, t, self.config.alpha) for a in states]
        return select_subset(states, cdfs, self.config, enumeration_limit=self.enumeration_limit)

    def observe(self, t: int, subset: Iterable[Hashable], delays: Mapping[Hashable, float]) -> None:
        """Record one delay per selected arm; missing results must be passed as d_max."""
        subset = list(subset)
        extra = set(delays) - set(subset)
        if extra:
            raise ContractViolation(f"delays reported for unselected arms {sorted(map(str, extra))}")
        missing = [a for a in subset if a not in delays]
        if missing:
            raise ContractViolation(f"no delay reported for selected arms {missing}")
        for arm_id in subset:
            if arm_id not in self.arms:
                raise ContractViolation(f"arm {arm_id!r} was never offered")
            obs = DelayObservation.from_delay(t, arm_id, delays[arm_id], self.config.d_max)
            record_observation(self.arms[arm_id], obs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": {
                "alpha": self.config.alpha,
                "l": self.config.l,
                "d_max": self.config.d_max,
                "k_replicas": self.config.k_replicas,
            },
            "last_t": self.last_t,
            "arms": [
                {
                    "arm_id": a.arm_id,
                    "t_n": a.t_n,
                    "k_count": a.k_count,
                    "histogram": a.histogram.tolist(),
                }
                for a in self.arms.values()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LTRALearner":
        learner = cls(LearnerConfig(**data["config"]))
        learner.last_t = int(data.get("last_t", 0))
        for rec in data["arms"]:
            arm_id = rec["arm_id"]
            if isinstance(arm_id, list):
                arm_id = tuple(arm_id)
            learner.arms[arm_id] = ArmState(
                arm_id=arm_id,
                t_n=int(rec["t_n"]),
                l=learner.config.l,
                k_count=int(rec["k_count"]),
                histogram=np.asarray(rec["histogram"], dtype=np.int64),
            )
        return learner

    @classmethod
    def from_json(cls, text: str) -> "LTRALearner":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# stationary synthetic environments and regret


@dataclass
class StationaryEnvironment:
    """Fixed candidate set with i.i.d. per-arm delay laws.

    Each law is a callable ``sample(rng, size)`` paired with a survival
    function ``sf(x)`` so the expected clipped minimum can be integrated
    exactly: E[min(min_n X_n, d_max)] = integral_0^d_max prod_n sf_n(x) dx.
    """

    samplers: Mapping[Hashable, Callable[[np.random.Generator, int], np.ndarray]]
    survival: Mapping[Hashable, Callable[[np.ndarray], np.ndarray]]
    d_max: float
    stationary: bool = True
    breakpoints: tuple[float, ...] = ()
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def arms(self) -> list[Hashable]:
        return list(self.samplers)

    def draw(self, rng: np.random.Generator, subset: Iterable[Hashable]) -> dict[Hashable, float]:
        return {a: float(min(self.samplers[a](rng, 1)[0], self.d_max)) for a in subset}

    def expected_loss(self, subset: Iterable[Hashable]) -> float:
        key = frozenset(subset)
        if key not in self._cache:
            from scipy.integrate import quad

            fns = [self.survival[a] for a in key]
            pts = [p for p in self.breakpoints if 0 < p < self.d_max] or None
            self._cache[key] = quad(
                lambda x: float(np.prod([f(x) for f in fns])), 0.0, self.d_max, limit=200, points=pts
            )[0]
        return self._cache[key]

    @classmethod
    def exponential(cls, means: Mapping[Hashable, float], d_max: float) -> "StationaryEnvironment":
        samplers = {a: (lambda rng, n, m=m: rng.exponential(m, n)) for a, m in means.items()}
        survival = {a: (lambda x, m=m: np.exp(-np.asarray(x) / m)) for a, m in means.items()}
        return cls(samplers, survival, d_max)

    @classmethod
    def point_mass(cls, delays: Mapping[Hashable, float], d_max: float) -> "StationaryEnvironment":
        samplers = {a: (lambda rng, n, v=v: np.full(n, v)) for a, v in delays.items()}
        survival = {a: (lambda x, v=v: (np.asarray(x) < v).astype(float)) for a, v in delays.items()}
        return cls(samplers, survival, d_max, breakpoints=tuple(sorted(delays.values())))


def regret_bound(
    horizon: int, d_max: float, k: int, gaps: Mapping[Hashable, float], n_arms: int
) -> float:
    """d_max * (C1 K sum_n ln T / Delta_n + C2), C1 = 2136, C2 = (pi^2/3 + 1) N.

    Arms with no positive gap contribute nothing to the sum. The bound
    holds for alpha = 2/3.
    """
    c1 = 2136.0
    c2 = (math.pi**2 / 3 + 1) * n_arms
    log_t = math.log(horizon) if horizon > 1 else 0.0
    total = sum(log_t / g for g in gaps.values() if g > 0 and math.isfinite(g))
    return d_max * (c1 * k * total + c2)


def gap_table(env: StationaryEnvironment, k: int) -> tuple[float, dict[Hashable, float]]:
    """Optimal expected loss and, per arm, the smallest positive normalized gap."""
    arms = env.arms
    size = min(k, len(arms))
    losses = {s: env.expected_loss(s) for s in itertools.combinations(arms, size)}
    best = min(losses.values())
    gaps: dict[Hashable, float] = {a: math.inf for a in arms}
    for subset, loss in losses.items():
        delta = (loss - best) / env.d_max
        if delta > 1e-12:
            for a in subset:
                gaps[a] = min(gaps[a], delta)
    return best, gaps


def empirical_regret(
    chosen: Sequence[Iterable[Hashable]],
    env: StationaryEnvironment,
    k: int,
    realized: Sequence[float] | None = None,
) -> RegretReport:
    """Regret of a decision history against the best fixed subset.

    The cumulative loss sums the exact expected loss of every chosen subset,
    which estimates the expectation in the regret definition without
    sampling noise. ``realized`` per-task losses are reported alongside when
    given.
    """
    if not env.stationary:
        raise NonStationaryEnvironment("regret is only defined for stationary i.i.d. environments")
    horizon = len(chosen)
    best, gaps = gap_table(env, k)
    cumulative = float(sum(env.expected_loss(s) for s in chosen))
    return RegretReport(
        horizon=horizon,
        cumulative_loss=cumulative,
        mu_s_star=best,
        empirical_regret=cumulative - horizon * best,
        bound=regret_bound(horizon, env.d_max, k, gaps, len(env.arms)),
        gap_table=gaps,
        realized_loss=None if realized is None else float(np.sum(realized)),
    )


def run_stationary(
    env: StationaryEnvironment,
    config: LearnerConfig,
    horizon: int,
    seed: int,
) -> tuple[list[tuple], np.ndarray]:
    """Drive an LTRA learner against ``env`` for ``horizon`` tasks.

    Returns the chosen subsets and the realized clipped task delays.
    """
    rng = np.random.default_rng(seed)
    learner = LTRALearner(config)
    arms = env.arms
    chosen: list[tuple] = []
    delays = np.empty(horizon)
    for t in range(1, horizon + 1):
        subset = learner.step(t, arms)
        obs = env.draw(rng, subset)
        learner.observe(t, subset, obs)
        chosen.append(tuple(subset))
        delays[t - 1] = min(obs.values())
    return chosen, delays
