"""Replica-selection policies pluggable into :func:`vecrep.simcore.run`."""

from __future__ import annotations

from typing import Hashable, Mapping, Sequence

import numpy as np

from vecrep.bandit import LearnerConfig, LTRALearner
from vecrep.simcore import PolicyFactory, SimView

POLICIES = ("random", "genie", "single", "ltra")

# the DES calls select_subset once per task; above this many subsets it goes greedy
SIM_ENUMERATION_LIMIT = 2_000


def policy_random(candidates: Sequence[Hashable], rng: np.random.Generator) -> Hashable:
    if not candidates:
        raise ValueError("no candidates")
    return candidates[int(rng.integers(len(candidates)))]


def policy_genie(candidates: Sequence[Hashable], view: SimView) -> Hashable:
    """Candidate with the smallest expected delay given true queue and channel state."""
    if not candidates:
        raise ValueError("no candidates")
    scores = [
        (view.upload_delay(c) + (view.backlog(c) + 1) / view.mu(c) + view.expected_feedback, i)
        for i, c in enumerate(candidates)
    ]
    # candidates arrive sorted by id, so the index breaks ties toward the smallest id
    return candidates[min(scores)[1]]


class RandomPolicy:
    """Uniformly random subset of min(k, N) candidates (k=1 is the usual baseline)."""

    def __init__(self, rng: np.random.Generator, k: int = 1):
        self.rng = rng
        self.k = k
        self.name = "random"

    def choose(self, index: int, now: float, candidates: Sequence[Hashable], view: SimView) -> list[Hashable]:
        if self.k == 1:
            return [policy_random(candidates, self.rng)]
        m = min(self.k, len(candidates))
        picks = self.rng.choice(len(candidates), size=m, replace=False)
        return [candidates[i] for i in sorted(picks)]

    def observe(self, index: int, selected: Sequence[Hashable], delays: Mapping[Hashable, float]) -> None:
        pass


class GeniePolicy:
    def __init__(self) -> None:
        self.k = 1
        self.name = "genie"

    def choose(self, index: int, now: float, candidates: Sequence[Hashable], view: SimView) -> list[Hashable]:
        return [policy_genie(candidates, view)]

    def observe(self, index: int, selected: Sequence[Hashable], delays: Mapping[Hashable, float]) -> None:
        pass


class LearnerPolicy:
    """Thin adapter from an :class:`LTRALearner` to the simulator protocol."""

    def __init__(self, config: LearnerConfig, enumeration_limit: int = SIM_ENUMERATION_LIMIT):
        self.learner = LTRALearner(config, enumeration_limit)
        self.k = config.k_replicas
        self.name = "single" if self.k == 1 else "ltra"

    def choose(self, index: int, now: float, candidates: Sequence[Hashable], view: SimView) -> list[Hashable]:
        return self.learner.step(index, candidates)

    def observe(self, index: int, selected: Sequence[Hashable], delays: Mapping[Hashable, float]) -> None:
        self.learner.observe(index, selected, delays)


def make_policy_factory(name: str, k: int = 1, learner: LearnerConfig | None = None) -> PolicyFactory:
    """Factory giving each TaV its own policy instance.

    ``single`` is the learner with one replica whatever ``k`` says; ``ltra``
    uses ``k`` replicas.
    """
    if name not in POLICIES:
        raise ValueError(f"unknown policy {name!r}; expected one of {POLICIES}")
    base = learner or LearnerConfig()

    def factory(tav: Hashable, rng: np.random.Generator):
        if name == "random":
            return RandomPolicy(rng)
        if name == "genie":
            return GeniePolicy()
        kk = 1 if name == "single" else k
        return LearnerPolicy(LearnerConfig(base.alpha, base.l, base.d_max, kk))

    return factory
