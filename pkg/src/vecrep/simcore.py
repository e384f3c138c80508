"""Discrete-event simulation of replicated offloading, plus a Monte Carlo check.

Two engines live here:

* :func:`run` plays a full scenario: Poisson task generation at every TaV,
  multicast upload with per-replica erasure, FCFS M/M/1 service at SeVs and
  first-response completion, with policies deciding which SeVs get replicas.
* :func:`monte_carlo_sweep` is the stripped-down estimator for the delay
  model in :mod:`vecrep.analytics`: candidate counts from PPP geometry,
  uniformly random replica placement and homogeneous M/M/1 servers.

Randomness in :func:`run` comes from keyed uniforms (a hash of seed, stream
tag and ids), so a given task/SeV pair sees the same erasure and service
draws whatever the policy does. That gives common random numbers across
policies and replica counts for free.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Literal, Mapping, Protocol, Sequence

import numpy as np

from vecrep.analytics import NetworkConditions, mean_arrival_rate
from vecrep.traffic import (
    SEV,
    TAV,
    ChannelParams,
    Trace,
    VehicleSnapshot,
    candidate_set,
    generate_ppp_snapshot,
    generate_synthetic_trace,
    road_distance,
    uniform_speed_law,
    uplink_rate_at,
)

_U53 = float(2**53)


class ScenarioError(ValueError):
    """The scenario cannot be simulated as configured."""


def keyed_uniform(seed: int, tag: str, *keys: Hashable) -> float:
    """Deterministic uniform on (0, 1) from a hash of (seed, tag, keys)."""
    msg = "|".join([str(seed), tag, *map(str, keys)]).encode()
    x = int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little") >> 11
    return (x + 0.5) / _U53


def child_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


# ---------------------------------------------------------------------------
# event plumbing


@dataclass(frozen=True)
class Event:
    time: float
    seq: int
    kind: str
    payload: Any = None


class EventQueue:
    """Min-heap of events keyed by (time, insertion sequence)."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, Event]] = []
        self._seq = itertools.count()
        self.now = 0.0

    def push(self, time: float, kind: str, payload: Any = None) -> Event:
        if time < self.now:
            raise ValueError(f"cannot schedule at {time} before current time {self.now}")
        ev = Event(float(time), next(self._seq), kind, payload)
        heapq.heappush(self._heap, (ev.time, ev.seq, ev))
        return ev

    def pop(self) -> Event:
        _, _, ev = heapq.heappop(self._heap)
        self.now = ev.time
        return ev

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)


def generate_arrivals(rate: float, horizon: float, seed: int | np.random.Generator) -> np.ndarray:
    """Poisson arrival times on [0, horizon)."""
    if not rate > 0 or not horizon > 0:
        raise ValueError("rate and horizon must be positive")
    rng = np.random.default_rng(seed)
    chunk = max(16, int(rate * horizon + 6 * math.sqrt(rate * horizon)) + 16)
    times = np.cumsum(rng.exponential(1.0 / rate, chunk))
    while times[-1] < horizon:
        more = times[-1] + np.cumsum(rng.exponential(1.0 / rate, chunk))
        times = np.concatenate([times, more])
    return times[times < horizon]


# ---------------------------------------------------------------------------
# servers and task records


@dataclass
class SevServer:
    sev_id: Hashable
    mu: float
    busy_until: float = 0.0
    queue: deque = field(default_factory=deque)
    last_arrival: float = 0.0

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise ValueError(f"service rate must be positive, got {self.mu}")

    def backlog(self, now: float) -> int:
        """Replicas queued or in service at ``now``."""
        while self.queue and self.queue[0] <= now:
            self.queue.popleft()
        return len(self.queue)


def serve(server: SevServer, arrival: float, rng: np.random.Generator | float) -> tuple[float, float]:
    """Enqueue one replica and return (completion time, sojourn).

    ``rng`` is either a generator or a uniform in (0, 1) turned into the
    exponential service time by inversion.
    """
    if arrival < server.last_arrival:
        raise ValueError(f"arrival {arrival} precedes the previous arrival {server.last_arrival}")
    if isinstance(rng, np.random.Generator):
        service = rng.exponential(1.0 / server.mu)
    else:
        service = -math.log(rng) / server.mu
    start = max(arrival, server.busy_until)
    server.busy_until = start + service
    server.last_arrival = arrival
    server.backlog(arrival)
    server.queue.append(server.busy_until)
    return server.busy_until, server.busy_until - arrival


@dataclass
class TaskRecord:
    """One task's life; ``completion_delay is None`` marks FAILURE."""

    task_id: int
    tav_id: Hashable
    gen_time: float
    d_max: float
    selected: tuple = ()
    received: tuple = ()
    upload_delay: float = 0.0
    per_sev_delay: dict = field(default_factory=dict)
    completion_delay: float | None = None
    deadline_met: bool = False
    local_index: int = 0

    @property
    def failed(self) -> bool:
        return self.completion_delay is None

    @property
    def effective_delay(self) -> float:
        """Clipped delay used for averages; a failure counts as d_max."""
        return self.d_max if self.completion_delay is None else self.completion_delay


def offload(
    task: TaskRecord,
    selected: Sequence[Hashable],
    upload_delay: float,
    p_e: float | Mapping[Hashable, float],
    rng: np.random.Generator | Callable[[Hashable], float],
) -> TaskRecord:
    """Multicast ``task`` to ``selected``; each copy is erased independently."""
    if not selected:
        raise ValueError("offload needs at least one selected SeV")
    task.selected = tuple(selected)
    task.upload_delay = float(upload_delay)
    received = []
    for sev in task.selected:
        p = p_e[sev] if isinstance(p_e, Mapping) else p_e
        u = rng.random() if isinstance(rng, np.random.Generator) else rng(sev)
        if u >= p:
            received.append(sev)
    task.received = tuple(received)
    if not received:
        task.completion_delay = None
        task.deadline_met = False
        task.per_sev_delay = {s: task.d_max for s in task.selected}
    return task


def complete(
    task: TaskRecord,
    sojourns: Mapping[Hashable, float],
    feedback: float | Mapping[Hashable, float] = 0.0,
) -> TaskRecord:
    """Fill per-replica delays and the first-response completion delay."""
    if not task.received:
        raise ValueError("task has no received replicas; it already failed")
    missing = [s for s in task.received if s not in sojourns]
    if missing:
        raise ValueError(f"no sojourn for received SeV(s) {missing}")
    totals = {}
    for sev in task.received:
        fb = feedback[sev] if isinstance(feedback, Mapping) else feedback
        totals[sev] = task.upload_delay + sojourns[sev] + fb
    best = min(totals.values())
    task.per_sev_delay = {s: min(totals.get(s, task.d_max), task.d_max) for s in task.selected}
    task.completion_delay = min(best, task.d_max)
    task.deadline_met = best <= task.d_max
    return task


# ---------------------------------------------------------------------------
# scenarios and policies


FeedbackSpec = float | tuple[str, float]


@dataclass
class Scenario:
    """Mobility, radio and compute parameters for :func:`run`.

    ``p_e`` is either a constant or a (low, high) range drawn per task and
    SeV. ``feedback`` is a constant delay or ``("exp", mean)``.
    """

    trace: Trace
    lambda0: float
    mu: Mapping[Hashable, float]
    R_m: float = 200.0
    p_e: float | tuple[float, float] = 0.02
    channel: ChannelParams = field(default_factory=ChannelParams)
    d_max: float = 0.5
    feedback: FeedbackSpec = 0.0
    tagged: frozenset | None = None
    on_empty: Literal["error", "fail"] = "error"
    name: str = "custom"

    def __post_init__(self) -> None:
        if not self.lambda0 > 0:
            raise ScenarioError("lambda0 must be positive")
        if not self.d_max > 0:
            raise ScenarioError("d_max must be positive")
        if self.on_empty not in ("error", "fail"):
            raise ScenarioError(f"on_empty must be 'error' or 'fail', got {self.on_empty!r}")
        if not len(self.trace):
            raise ScenarioError("scenario trace has no frames")
        sevs = {s.vehicle_id for s in self.trace.rows() if s.role == SEV}
        lacking = sevs - set(self.mu)
        if lacking:
            raise ScenarioError(f"no service rate for SeV(s) {sorted(lacking)[:5]}")

    @property
    def tav_ids(self) -> list[Hashable]:
        return sorted({s.vehicle_id for s in self.trace.rows() if s.role == TAV})

    @classmethod
    def synthetic(
        cls,
        lambda0: float,
        ratio: float,
        duration: float,
        total_density: float = 25.0,
        road_km: float = 4.0,
        R_m: float = 200.0,
        mu_range: tuple[float, float] = (8.0, 12.0),
        p_e: float | tuple[float, float] = (0.01, 0.03),
        max_speed: float = 20.0,
        min_speed: float | None = None,
        timestep: float = 1.0,
        d_max: float = 0.5,
        seed: int = 0,
        on_empty: Literal["error", "fail"] = "fail",
        **kwargs: Any,
    ) -> "Scenario":
        """Density-matched single-direction ring road with random constant speeds.

        Vehicle counts are round(density * length) for each role, placed
        uniformly, so the global load matches the nominal densities.

        Speeds are uniform on [min_speed, max_speed]; ``min_speed`` defaults
        to 0.8 * max_speed, a free-flowing highway where vehicles overtake
        slowly rather than stream past each other.
        """
        if min_speed is None:
            min_speed = 0.8 * max_speed
        gamma_s = total_density / (1.0 + ratio)
        gamma_t = total_density - gamma_s
        if ratio < 0 or not total_density > 0:
            raise ScenarioError("ratio must be >= 0 and total_density > 0")
        snap = generate_ppp_snapshot(road_km, gamma_t, gamma_s, child_rng(seed, 0), exact_counts=True)
        if not any(s.role == SEV for s in snap):
            raise ScenarioError("road too short for a single SeV at this density")
        if not any(s.role == TAV for s in snap):
            # ratio 0: one target TaV alone with the SeVs
            snap.append(VehicleSnapshot(0.0, len(snap), TAV, 0.0, 0.0, 1.0))
        ring = road_km * 1000.0
        trace = generate_synthetic_trace(
            snap, duration, timestep, ring, uniform_speed_law(max_speed, min_speed), seed=child_rng(seed, 1)
        )
        lo, hi = mu_range
        mu = {s.vehicle_id: lo + (hi - lo) * keyed_uniform(seed, "mu", s.vehicle_id) for s in snap if s.role == SEV}
        return cls(
            trace=trace,
            lambda0=lambda0,
            mu=mu,
            R_m=R_m,
            p_e=p_e,
            d_max=d_max,
            on_empty=on_empty,
            name=f"synthetic(lambda0={lambda0}, ratio={ratio:.4g})",
            **kwargs,
        )


class SimView:
    """Read-only window on simulator state for oracle policies."""

    def __init__(self, sim: "_Simulation", tav: Hashable, now: float):
        self._sim = sim
        self.tav = tav
        self.now = now

    def upload_delay(self, sev: Hashable) -> float:
        return self._sim.channel_upload([sev], self.tav, self.now)

    def backlog(self, sev: Hashable) -> int:
        return self._sim.server(sev).backlog(self.now)

    def mu(self, sev: Hashable) -> float:
        return self._sim.server(sev).mu

    @property
    def expected_feedback(self) -> float:
        fb = self._sim.scenario.feedback
        return float(fb[1]) if isinstance(fb, tuple) else float(fb)


class Policy(Protocol):
    name: str
    k: int

    def choose(self, index: int, now: float, candidates: Sequence[Hashable], view: SimView) -> list[Hashable]: ...

    def observe(self, index: int, selected: Sequence[Hashable], delays: Mapping[Hashable, float]) -> None: ...


PolicyFactory = Callable[[Hashable, np.random.Generator], Policy]


@dataclass
class SimulationResult:
    records: list[TaskRecord]
    policy: str
    k: int
    seed: int
    horizon: float

    @property
    def delays(self) -> np.ndarray:
        return np.array([r.effective_delay for r in self.records])

    @property
    def mean_delay(self) -> float:
        return float(self.delays.mean()) if self.records else float("nan")

    @property
    def completion_ratio(self) -> float:
        if not self.records:
            return float("nan")
        return sum(r.deadline_met for r in self.records) / len(self.records)

    @property
    def failure_ratio(self) -> float:
        if not self.records:
            return float("nan")
        return sum(r.failed for r in self.records) / len(self.records)

    def rolling(self) -> Iterable[tuple[TaskRecord, float, float]]:
        """Yield (record, running mean delay, running completion ratio)."""
        total = 0.0
        met = 0
        for i, r in enumerate(self.records, start=1):
            total += r.effective_delay
            met += r.deadline_met
            yield r, total / i, met / i


class _RandomReplicas:
    # background load under the random-placement assumption of the analysis
    name = "background"

    def __init__(self, rng: np.random.Generator, k: int):
        self.rng = rng
        self.k = k

    def choose(self, index, now, candidates, view):
        m = min(self.k, len(candidates))
        return [candidates[i] for i in sorted(self.rng.choice(len(candidates), size=m, replace=False))]

    def observe(self, index, selected, delays):
        pass


class _Simulation:
    def __init__(self, scenario: Scenario, seed: int):
        self.scenario = scenario
        self.seed = seed
        self.servers = {sev: SevServer(sev, float(m)) for sev, m in scenario.mu.items()}
        self._frame_idx = -1
        self._frame: dict[Hashable, Any] = {}
        self._cands: dict[Hashable, list[Hashable]] = {}
        self._sev_arrays: tuple | None = None

    def server(self, sev: Hashable) -> SevServer:
        return self.servers[sev]

    def _load_frame(self, now: float) -> None:
        idx = self.scenario.trace.frame_index(now)
        if idx == self._frame_idx:
            return
        self._frame_idx = idx
        frame = self.scenario.trace.frames[idx]
        self._frame = {s.vehicle_id: s for s in frame}
        self._cands = {}
        self._sev_arrays = None

    def vehicle(self, vid: Hashable, now: float):
        self._load_frame(now)
        return self._frame.get(vid)

    def candidates(self, tav: Hashable, now: float) -> list[Hashable] | None:
        self._load_frame(now)
        if tav not in self._frame:
            return None
        if tav not in self._cands:
            me = self._frame[tav]
            ring = self.scenario.trace.ring_length_m
            if me.is_2d:
                found = candidate_set(me, self._frame.values(), self.scenario.R_m, ring)
            else:
                found = self._candidates_1d(me, ring)
            self._cands[tav] = sorted(found)
        return self._cands[tav]

    def _candidates_1d(self, me, ring: float | None) -> list[Hashable]:
        # same rule as traffic.candidate_set, vectorised over the frame's SeVs
        if self._sev_arrays is None:
            sevs = [s for s in self._frame.values() if s.role == SEV]
            self._sev_arrays = (
                [s.vehicle_id for s in sevs],
                np.array([s.position for s in sevs], dtype=float),
                np.array([s.direction for s in sevs], dtype=float),
            )
        ids, pos, heading = self._sev_arrays
        d = np.abs(pos - float(me.position))
        if ring is not None:
            d = np.mod(d, ring)
            d = np.minimum(d, ring - d)
        hit = (d <= self.scenario.R_m) & (heading == me.direction)
        return [ids[i] for i in np.flatnonzero(hit) if ids[i] != me.vehicle_id]

    def channel_upload(self, selected: Sequence[Hashable], tav: Hashable, now: float) -> float:
        self._load_frame(now)
        ring = self.scenario.trace.ring_length_m
        me = self._frame[tav]
        dist = max(road_distance(me, self._frame[s], ring) for s in selected)
        rate = float(uplink_rate_at(dist, self.scenario.channel))
        return self.scenario.channel.input_bits / rate

    def erasure_prob(self, task_id: int, sev: Hashable) -> float:
        pe = self.scenario.p_e
        if isinstance(pe, tuple):
            lo, hi = pe
            return lo + (hi - lo) * keyed_uniform(self.seed, "pe", task_id, sev)
        return float(pe)

    def feedback(self, task_id: int, sev: Hashable) -> float:
        fb = self.scenario.feedback
        if isinstance(fb, tuple):
            kind, mean = fb
            if kind != "exp":
                raise ScenarioError(f"unknown feedback law {kind!r}")
            return -mean * math.log(keyed_uniform(self.seed, "fb", task_id, sev))
        return float(fb)


def run(
    scenario: Scenario,
    policy_factory: PolicyFactory,
    horizon: float,
    seed: int,
    max_tasks: int | None = None,
    background: Literal["same", "random"] = "same",
) -> SimulationResult:
    """Simulate ``horizon`` seconds of task generation, then drain.

    Tagged TaVs (``scenario.tagged``, all when ``None``) each run their own
    policy instance from ``policy_factory`` and their tasks are recorded in
    generation order. Untagged TaVs only load the servers: with
    ``background="same"`` they run the policy too, with ``"random"`` they
    send min(K, N) replicas to uniformly random candidates, K being the
    policy's replica count. A TaV missing from the current trace frame
    generates nothing. ``max_tasks`` stops generation once that many tagged
    tasks exist.

    Keys for the hashed randomness are the global task id (generation order)
    and the SeV id, so two runs with the same scenario and seed share every
    erasure and service draw.

    Raises:
        ScenarioError: a task finds no candidate SeV and ``on_empty`` is
            ``"error"``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    sim = _Simulation(scenario, seed)
    tavs = scenario.tav_ids
    if not tavs:
        raise ScenarioError("scenario has no TaV")
    if background not in ("same", "random"):
        raise ValueError(f"background must be 'same' or 'random', got {background!r}")
    tagged = set(tavs) if scenario.tagged is None else set(scenario.tagged)
    if not tagged & set(tavs):
        raise ScenarioError("none of the tagged TaVs appear in the trace")
    policies: dict[Hashable, Policy] = {}
    for i, tav in enumerate(tavs):
        if tav in tagged or background == "same":
            policies[tav] = policy_factory(tav, child_rng(seed, 2, i))
    first = next(policies[t] for t in tavs if t in tagged)
    for i, tav in enumerate(tavs):
        if tav not in policies:
            policies[tav] = _RandomReplicas(child_rng(seed, 2, i), getattr(first, "k", 1))
    arrivals = {tav: generate_arrivals(scenario.lambda0, horizon, child_rng(seed, 1, i)) for i, tav in enumerate(tavs)}
    cursor = {tav: 0 for tav in tavs}
    local = {tav: 0 for tav in tavs}

    events = EventQueue()
    for tav in tavs:
        if len(arrivals[tav]):
            events.push(arrivals[tav][0], "gen", tav)

    tasks: dict[int, TaskRecord] = {}
    pending: dict[int, dict[Hashable, float]] = {}
    task_ids = itertools.count()
    n_tagged = 0
    records: list[TaskRecord] = []
    stop_generation = False

    def schedule_observation(task: TaskRecord, now: float) -> None:
        when = task.gen_time + max(task.per_sev_delay.values())
        events.push(max(when, now), "observe", task.task_id)

    while events:
        ev = events.pop()
        now = ev.time
        if ev.kind == "gen":
            tav = ev.payload
            cursor[tav] += 1
            if cursor[tav] < len(arrivals[tav]):
                events.push(arrivals[tav][cursor[tav]], "gen", tav)
            if stop_generation:
                continue
            cands = sim.candidates(tav, now)
            if cands is None:
                continue
            tid = next(task_ids)
            local[tav] += 1
            task = TaskRecord(tid, tav, now, scenario.d_max, local_index=local[tav])
            if tav in tagged:
                records.append(task)
                n_tagged += 1
                if max_tasks is not None and n_tagged >= max_tasks:
                    stop_generation = True
            if not cands:
                if scenario.on_empty == "error":
                    raise ScenarioError(f"TaV {tav!r} has no candidate SeV at t={now:.6g} s")
                task.completion_delay = None
                continue
            selected = list(policies[tav].choose(local[tav], now, cands, SimView(sim, tav, now)))
            bad = [s for s in selected if s not in cands]
            if not selected or bad:
                raise ScenarioError(f"policy chose {selected!r}, outside candidates {cands!r}")
            upload = sim.channel_upload(selected, tav, now)
            pe = {s: sim.erasure_prob(tid, s) for s in selected}
            offload(task, selected, upload, pe, lambda s, _tid=tid: keyed_uniform(seed, "erase", _tid, s))
            tasks[tid] = task
            if not task.received:
                schedule_observation(task, now)
                continue
            pending[tid] = {}
            for sev in task.received:
                events.push(now + upload, "arrive", (tid, sev))
        elif ev.kind == "arrive":
            tid, sev = ev.payload
            task = tasks[tid]
            _, sojourn = serve(sim.server(sev), now, keyed_uniform(seed, "svc", tid, sev))
            got = pending[tid]
            got[sev] = sojourn
            if len(got) == len(task.received):
                fb = {s: sim.feedback(tid, s) for s in task.received}
                complete(task, got, fb)
                del pending[tid]
                schedule_observation(task, now)
        elif ev.kind == "observe":
            task = tasks.pop(ev.payload)
            policies[task.tav_id].observe(task.local_index, task.selected, task.per_sev_delay)
        else:  # pragma: no cover - internal
            raise RuntimeError(f"unknown event {ev.kind}")

    return SimulationResult(records, getattr(first, "name", "policy"), getattr(first, "k", 1), seed, horizon)


# ---------------------------------------------------------------------------
# Monte Carlo estimator for the homogeneous delay model

SojournMode = Literal["stationary", "queue"]
LoadMode = Literal["analytic", "measured"]

_CHUNK = 1 << 17
_TAGS_PER_SNAPSHOT = 512
_LOAD_SNAPSHOTS = 100


@dataclass(frozen=True)
class MonteCarloResult:
    K: int
    mean_delay: float
    failure_ratio: float
    std_error: float
    n_tasks: int
    arrival_rate: float
    mean_sev_arrival_rate: float

    @property
    def stable(self) -> bool:
        return math.isfinite(self.mean_delay)

    def as_tuple(self) -> tuple[float, float]:
        return self.mean_delay, self.failure_ratio


def sample_candidate_counts(
    gamma_s: float, R_km: float, road_km: float, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Candidate counts N_s >= 1 seen from uniformly placed TaVs on PPP rings.

    Points with no SeV in range are dropped, which is the same as resampling
    the TaV.
    """
    out: list[np.ndarray] = []
    have = 0
    while have < n:
        xs = np.sort(rng.uniform(0.0, road_km, rng.poisson(gamma_s * road_km)))
        if len(xs) == 0:
            continue
        ext = np.concatenate([xs - road_km, xs, xs + road_km])
        x = rng.uniform(0.0, road_km, _TAGS_PER_SNAPSHOT)
        c = np.searchsorted(ext, x + R_km, side="right") - np.searchsorted(ext, x - R_km, side="left")
        c = np.minimum(c[c > 0], len(xs))
        out.append(c)
        have += len(c)
    return np.concatenate(out)[:n]


def measured_arrival_rates(
    cond: NetworkConditions, ks: Sequence[int], road_km: float, rng: np.random.Generator, snapshots: int = _LOAD_SNAPSHOTS
) -> tuple[np.ndarray, np.ndarray]:
    """Per-SeV arrival rates from explicit PPP snapshots.

    Returns (population mean over SeVs, arrival-weighted mean) per K. The
    second one is the rate a typical replica finds at its server.
    """
    gamma_t = cond.gamma_t
    gamma_s = cond.gamma_s
    ks = np.asarray(ks)
    tot = np.zeros(len(ks))
    sq = np.zeros(len(ks))
    n_sev = 0
    for _ in range(snapshots):
        xt = rng.uniform(0.0, road_km, rng.poisson(gamma_t * road_km))
        xs = rng.uniform(0.0, road_km, rng.poisson(gamma_s * road_km))
        n_sev += len(xs)
        if len(xt) == 0 or len(xs) == 0:
            continue
        d = np.abs(xt[:, None] - xs[None, :])
        d = np.minimum(d, road_km - d)
        c = d <= cond.R
        y = c.sum(axis=1)
        for j, k in enumerate(ks):
            share = np.where(y > 0, np.minimum(k, y) / np.maximum(y, 1), 0.0)
            lam = cond.lambda0 * (c * share[:, None]).sum(axis=0)
            tot[j] += lam.sum()
            sq[j] += (lam**2).sum()
    pop = tot / max(n_sev, 1)
    weighted = np.divide(sq, tot, out=np.zeros_like(sq), where=tot > 0)
    return pop, weighted


def _reflected_waits(v_prev: float, gaps: np.ndarray, svc: np.ndarray) -> tuple[np.ndarray, float]:
    # W_i = max(W_{i-1} + S_{i-1} - g_i, 0), with W_{-1} + S_{-1} = v_prev
    x = np.concatenate(([v_prev], svc[:-1])) - gaps
    p = np.cumsum(x)
    w = p - np.minimum(np.minimum.accumulate(p), 0.0)
    return w, float(w[-1] + svc[-1])


def monte_carlo_sweep(
    cond: NetworkConditions,
    ks: Iterable[int],
    n_tasks: int = 100_000,
    road_km: float = 10.0,
    seed: int = 0,
    sojourn: SojournMode = "stationary",
    load: LoadMode = "analytic",
) -> list[MonteCarloResult]:
    """Estimate mean execution delay for several replica counts at once.

    Each task draws its candidate count from PPP geometry and sends
    min(K, N_s) replicas to distinct, uniformly chosen candidates. Under the
    homogeneous-load model every server is an M/M/1 queue with the same
    arrival rate, so replica slot j of a task can carry its own random
    streams; slot streams depend only on (seed, j), which nests the replica
    sets across K and shares erasure and service randomness between them.

    ``sojourn="stationary"`` draws each replica's sojourn from the
    stationary Exp(mu - lambda) law. ``sojourn="queue"`` instead feeds slot
    j's replicas through one FCFS queue with Poisson(lambda) arrivals,
    started in stationarity. ``load`` picks lambda: the closed-form series
    (``"analytic"``) or the arrival-weighted rate measured on PPP snapshots
    (``"measured"``).

    Delay is averaged over tasks with at least one received replica; the
    failure ratio is the share of tasks whose replicas were all erased.
    """
    ks = [int(k) for k in ks]
    if not ks or min(ks) < 1:
        raise ValueError("ks must be a non-empty list of positive integers")
    if n_tasks < 1:
        raise ValueError("n_tasks must be positive")
    if sojourn not in ("stationary", "queue"):
        raise ValueError(f"unknown sojourn mode {sojourn!r}")
    if load not in ("analytic", "measured"):
        raise ValueError(f"unknown load mode {load!r}")
    kmax = max(ks)
    mu = cond.mu_c
    counts = sample_candidate_counts(cond.gamma_s, cond.R, road_km, n_tasks, child_rng(seed, 0))
    pop, weighted = measured_arrival_rates(cond, ks, road_km, child_rng(seed, 1))
    if load == "analytic":
        lams = np.array([mean_arrival_rate(cond, k) for k in ks])
    else:
        lams = weighted
    stable = lams < mu

    sums = np.zeros(len(ks))
    sumsq = np.zeros(len(ks))
    ok = np.zeros(len(ks), dtype=np.int64)
    fails = np.zeros(len(ks), dtype=np.int64)
    slot_rngs = [child_rng(seed, 2, j) for j in range(kmax)]
    # queue state per (slot, K): workload left behind by the previous arrival
    v_state = np.zeros((kmax, len(ks)))
    if sojourn == "queue":
        for j, rng in enumerate(slot_rngs):
            u0, e0 = rng.random(), rng.exponential()
            for i, lam in enumerate(lams):
                if stable[i] and u0 < lam / mu:
                    v_state[j, i] = e0 / (mu - lam)

    for start in range(0, n_tasks, _CHUNK):
        n = min(_CHUNK, n_tasks - start)
        nc = counts[start : start + n]
        best = np.full((len(ks), n), np.inf)
        received = np.zeros((len(ks), n), dtype=bool)
        for j, rng in enumerate(slot_rngs):
            erased = rng.random(n) < cond.p_e
            if sojourn == "stationary":
                e_soj = -np.log(rng.random(n))
            else:
                e_gap = rng.exponential(size=n)
                e_svc = rng.exponential(size=n)
                if start == 0:
                    e_gap[0] = 0.0
            use = (j < nc) & ~erased
            for i, k in enumerate(ks):
                if j >= k:
                    continue
                received[i] |= use
                if not stable[i]:
                    continue
                lam = lams[i]
                if sojourn == "stationary":
                    soj = e_soj / (mu - lam)
                else:
                    svc = e_svc / mu
                    w, v_state[j, i] = _reflected_waits(v_state[j, i], e_gap / lam, svc)
                    soj = w + svc
                best[i] = np.where(use, np.minimum(best[i], soj), best[i])
        for i in range(len(ks)):
            fails[i] += n - received[i].sum()
            if stable[i]:
                got = received[i]
                sums[i] += best[i][got].sum()
                sumsq[i] += (best[i][got] ** 2).sum()
                ok[i] += got.sum()

    out = []
    for i, k in enumerate(ks):
        if not stable[i] or ok[i] == 0:
            mean, se = math.inf, math.inf
        else:
            mean = sums[i] / ok[i]
            var = max(sumsq[i] / ok[i] - mean**2, 0.0)
            se = math.sqrt(var / ok[i])
        out.append(
            MonteCarloResult(k, float(mean), fails[i] / n_tasks, float(se), n_tasks, float(lams[i]), float(pop[i]))
        )
    return out


def monte_carlo_validation(
    cond: NetworkConditions,
    K: int,
    n_tasks: int = 100_000,
    road_km: float = 10.0,
    seed: int = 0,
    sojourn: SojournMode = "stationary",
    load: LoadMode = "analytic",
) -> MonteCarloResult:
    """Single-K form of :func:`monte_carlo_sweep`; draws are identical to the sweep's."""
    return monte_carlo_sweep(cond, [K], n_tasks, road_km, seed, sojourn, load)[0]


def monte_carlo_argmin(
    cond: NetworkConditions,
    k_max: int = 8,
    n_tasks: int = 100_000,
    road_km: float = 10.0,
    seed: int = 0,
    sojourn: SojournMode = "stationary",
    load: LoadMode = "analytic",
) -> tuple[int, list[MonteCarloResult]]:
    """Replica count with the smallest simulated mean delay over 1..k_max."""
    res = monte_carlo_sweep(cond, range(1, k_max + 1), n_tasks, road_km, seed, sojourn, load)
    delays = [r.mean_delay for r in res]
    return int(np.argmin(delays)) + 1, res


def mm1_sojourns(lam: float, mu: float, n_tasks: int, seed: int, stationary_start: bool = True) -> np.ndarray:
    """Sojourn times of ``n_tasks`` consecutive customers of one FCFS M/M/1 queue.

    Runs the full event engine (:func:`serve` on one :class:`SevServer`)
    rather than the vectorised recursion used by the sweep.
    """
    if not 0 < lam < mu:
        raise ValueError("need 0 < lam < mu")
    rng = np.random.default_rng(seed)
    server = SevServer("sev", mu)
    gaps = rng.exponential(1.0 / lam, n_tasks)
    svc_u = rng.random(n_tasks)
    t = 0.0
    if stationary_start and rng.random() < lam / mu:
        server.busy_until = rng.exponential(1.0 / (mu - lam))
    out = np.empty(n_tasks)
    for i in range(n_tasks):
        if i:
            t += gaps[i]
        out[i] = serve(server, t, 1.0 - svc_u[i])[1]
    return out
