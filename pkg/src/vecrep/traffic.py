"""Vehicle placement, mobility traces and the uplink channel.

Positions are in metres. 1-D roads carry ``direction`` in {+1, -1}; 2-D
traces carry a heading in degrees. A road with ``ring_length_m`` set wraps
around.

Trace CSV (header required, UTF-8, rows sorted by ``time_s``)::

    time_s,vehicle_id,role,pos_m,speed_mps,direction              # 1-D
    time_s,vehicle_id,role,x_m,y_m,speed_mps,heading_deg          # 2-D

``role`` is ``TAV`` or ``SEV``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

TAV = "TAV"
SEV = "SEV"
ROLES = (TAV, SEV)

COLUMNS_1D = ("time_s", "vehicle_id", "role", "pos_m", "speed_mps", "direction")
COLUMNS_2D = ("time_s", "vehicle_id", "role", "x_m", "y_m", "speed_mps", "heading_deg")

MIN_DISTANCE_M = 1.0


class TraceFormatError(ValueError):
    """Raised for malformed trace files; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class VehicleSnapshot:
    time: float
    vehicle_id: int
    role: str
    position: float | tuple[float, float]
    speed: float = 0.0
    direction: float = 1.0

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.speed < 0:
            raise ValueError(f"speed must be non-negative, got {self.speed}")

    @property
    def is_2d(self) -> bool:
        return isinstance(self.position, tuple)


@dataclass(frozen=True)
class ChannelParams:
    bandwidth: float = 10e6
    tx_power: float = 0.5
    noise: float = 1e-13
    interference: float = 0.0
    pathloss_exponent: float = 2.0
    input_bits: float = 1e6
    output_bits: float = 0.0

    def __post_init__(self) -> None:
        if not self.bandwidth > 0 or not self.tx_power > 0:
            raise ValueError("bandwidth and tx_power must be positive")
        for name in ("noise", "interference", "pathloss_exponent", "input_bits", "output_bits"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class Trace:
    """Time-ordered snapshots, one frame per timestamp."""

    frames: list[list[VehicleSnapshot]]
    ring_length_m: float | None = None
    _times: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if any(not f for f in self.frames):
            raise ValueError("trace frames must be non-empty")
        self._times = np.array([f[0].time for f in self.frames]) if self.frames else np.empty(0)
        if np.any(np.diff(self._times) <= 0):
            raise ValueError("trace frames must have strictly increasing timestamps")

    @property
    def times(self) -> np.ndarray:
        return self._times

    def __len__(self) -> int:
        return len(self.frames)

    def rows(self) -> list[VehicleSnapshot]:
        return [s for f in self.frames for s in f]

    def frame_index(self, t: float) -> int:
        """Index of the latest frame at or before ``t`` (first frame if earlier)."""
        i = int(np.searchsorted(self._times, t, side="right")) - 1
        return max(i, 0)

    def frame_at(self, t: float) -> list[VehicleSnapshot]:
        return self.frames[self.frame_index(t)]

    @property
    def is_2d(self) -> bool:
        return bool(self.frames) and self.frames[0][0].is_2d

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return self.rows() == other.rows()


def generate_ppp_snapshot(
    road_km: float,
    gamma_t: float,
    gamma_s: float,
    seed: int | np.random.Generator,
    direction: float = 1.0,
    time: float = 0.0,
    exact_counts: bool = False,
) -> list[VehicleSnapshot]:
    """Independent Poisson placements of TaVs and SeVs on a road of ``road_km`` km.

    Counts are Poisson(gamma * road_km) per role and positions are uniform.
    With ``exact_counts`` the counts are round(gamma * road_km) instead, so
    the realised densities hit their targets. TaVs take ids 0..n_t-1, SeVs
    continue from n_t.
    """
    if not road_km > 0:
        raise ValueError(f"road_km must be positive, got {road_km}")
    if gamma_t < 0 or gamma_s < 0:
        raise ValueError("densities must be non-negative")
    rng = np.random.default_rng(seed)
    if exact_counts:
        n_t, n_s = round(gamma_t * road_km), round(gamma_s * road_km)
    else:
        n_t = int(rng.poisson(gamma_t * road_km))
        n_s = int(rng.poisson(gamma_s * road_km))
    length_m = road_km * 1000.0
    pos_t = rng.uniform(0.0, length_m, n_t)
    pos_s = rng.uniform(0.0, length_m, n_s)
    snap = [VehicleSnapshot(time, i, TAV, float(p), 0.0, direction) for i, p in enumerate(pos_t)]
    snap += [VehicleSnapshot(time, n_t + i, SEV, float(p), 0.0, direction) for i, p in enumerate(pos_s)]
    return snap


def uniform_speed_law(max_speed: float = 20.0, min_speed: float = 0.0) -> Callable[[np.random.Generator, int], np.ndarray]:
    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(min_speed, max_speed, n)

    return draw


def generate_synthetic_trace(
    initial: Sequence[VehicleSnapshot],
    duration: float,
    timestep: float = 1.0,
    ring_length_m: float | None = None,
    speed_law: Callable[[np.random.Generator, int], np.ndarray] | None = None,
    seed: int | np.random.Generator = 0,
) -> Trace:
    """Constant-velocity 1-D motion from an initial snapshot.

    With ``speed_law=None`` the snapshot speeds are kept, otherwise every
    vehicle gets one draw from the law. Positions wrap on a ring road.
    """
    if not timestep > 0:
        raise ValueError(f"timestep must be positive, got {timestep}")
    if duration < 0:
        raise ValueError(f"duration must be non-negative, got {duration}")
    if any(s.is_2d for s in initial):
        raise ValueError("synthetic traces are 1-D only")
    rng = np.random.default_rng(seed)
    base = list(initial)
    if not base:
        return Trace([], ring_length_m)
    t0 = base[0].time if base else 0.0
    speeds = np.array([s.speed for s in base], dtype=float)
    if speed_law is not None:
        speeds = np.asarray(speed_law(rng, len(base)), dtype=float)
    pos0 = np.array([s.position for s in base], dtype=float)
    heading = np.array([s.direction for s in base], dtype=float)
    n_steps = int(math.floor(duration / timestep + 1e-9))
    frames = []
    for step in range(n_steps + 1):
        t = t0 + step * timestep
        pos = pos0 + heading * speeds * (step * timestep)
        if ring_length_m is not None:
            pos = np.mod(pos, ring_length_m)
        frames.append(
            [
                VehicleSnapshot(round(t, 9), s.vehicle_id, s.role, float(p), float(v), s.direction)
                for s, p, v in zip(base, pos, speeds)
            ]
        )
    return Trace(frames, ring_length_m)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace(trace: Trace, path: str | Path) -> None:
    """Write ``trace`` in the CSV schema above (1-D or 2-D by content)."""
    two_d = trace.is_2d
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS_2D if two_d else COLUMNS_1D)
        for s in trace.rows():
            if two_d:
                x, y = s.position  # type: ignore[misc]
                w.writerow([_fmt(s.time), s.vehicle_id, s.role, _fmt(x), _fmt(y), _fmt(s.speed), _fmt(s.direction)])
            else:
                w.writerow(
                    [_fmt(s.time), s.vehicle_id, s.role, _fmt(s.position), _fmt(s.speed), int(s.direction)]
                )


def load_trace(path: str | Path, ring_length_m: float | None = None) -> Trace:
    """Parse a trace CSV into time-grouped frames.

    Raises:
        TraceFormatError: missing or unknown columns, malformed rows (with
            the line number), or timestamps that go backwards.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TraceFormatError("empty trace file", 1) from None
        if "x_m" in header or "heading_deg" in header:
            expected = COLUMNS_2D
        else:
            expected = COLUMNS_1D
        missing = [c for c in expected if c not in header]
        if missing:
            raise TraceFormatError(f"missing column(s): {', '.join(missing)}", 1)
        extra = [c for c in header if c not in expected]
        if extra:
            raise TraceFormatError(f"unexpected column(s): {', '.join(extra)}", 1)
        idx = {c: header.index(c) for c in expected}
        frames: list[list[VehicleSnapshot]] = []
        last_t = -math.inf
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise TraceFormatError(f"expected {len(header)} fields, got {len(row)}", line_no)
            try:
                t = float(row[idx["time_s"]])
                vid = int(row[idx["vehicle_id"]])
                role = row[idx["role"]].strip().upper()
                speed = float(row[idx["speed_mps"]])
                if expected is COLUMNS_2D:
                    pos: float | tuple[float, float] = (float(row[idx["x_m"]]), float(row[idx["y_m"]]))
                    direction = float(row[idx["heading_deg"]])
                else:
                    pos = float(row[idx["pos_m"]])
                    direction = float(row[idx["direction"]])
                    if direction not in (1.0, -1.0):
                        raise ValueError(f"direction must be +1 or -1, got {row[idx['direction']]}")
                snap = VehicleSnapshot(t, vid, role, pos, speed, direction)
            except ValueError as exc:
                raise TraceFormatError(str(exc), line_no) from None
            if t < last_t:
                raise TraceFormatError(f"time_s {t} is earlier than previous row {last_t}", line_no)
            if t > last_t:
                frames.append([])
                last_t = t
            frames[-1].append(snap)
    return Trace(frames, ring_length_m)


def road_distance(a: VehicleSnapshot, b: VehicleSnapshot, ring_length_m: float | None = None) -> float:
    """Along-road distance (ring-aware) in 1-D, Euclidean in 2-D."""
    if a.is_2d or b.is_2d:
        (xa, ya), (xb, yb) = a.position, b.position  # type: ignore[misc]
        return math.hypot(xa - xb, ya - yb)
    d = abs(float(a.position) - float(b.position))  # type: ignore[arg-type]
    if ring_length_m is not None:
        d = d % ring_length_m
        d = min(d, ring_length_m - d)
    return d


def same_direction(a: VehicleSnapshot, b: VehicleSnapshot) -> bool:
    if a.is_2d or b.is_2d:
        diff = abs((a.direction - b.direction + 180.0) % 360.0 - 180.0)
        return diff < 90.0
    return a.direction == b.direction


def candidate_set(
    tav: VehicleSnapshot,
    snapshot: Iterable[VehicleSnapshot],
    R: float,
    ring_length_m: float | None = None,
) -> list[int]:
    """Ids of same-direction SeVs within distance R (inclusive) of ``tav``."""
    if tav.role != TAV:
        raise ValueError("candidate_set expects a TaV")
    return [
        s.vehicle_id
        for s in snapshot
        if s.role == SEV
        and s.vehicle_id != tav.vehicle_id
        and same_direction(tav, s)
        and road_distance(tav, s, ring_length_m) <= R
    ]


def uplink_rate_at(distance_m: float | np.ndarray, params: ChannelParams) -> float | np.ndarray:
    """W log2(1 + P d^-a / (N0 + I)); distances below 1 m are clamped to 1 m."""
    d = np.maximum(distance_m, MIN_DISTANCE_M)
    snr = params.tx_power * d ** (-params.pathloss_exponent) / (params.noise + params.interference)
    return params.bandwidth * np.log2(1.0 + snr)


def uplink_rate(
    tav: VehicleSnapshot, sev: VehicleSnapshot, params: ChannelParams, ring_length_m: float | None = None
) -> float:
    return float(uplink_rate_at(road_distance(tav, sev, ring_length_m), params))


def multicast_rate_and_upload_delay(
    tav: VehicleSnapshot,
    selected: Sequence[VehicleSnapshot],
    params: ChannelParams,
    ring_length_m: float | None = None,
) -> tuple[float, float]:
    """Multicast rate (minimum over members) and the upload delay L_i / rate."""
    if not selected:
        raise ValueError("multicast needs at least one receiver")
    rate = min(uplink_rate(tav, s, params, ring_length_m) for s in selected)
    return rate, params.input_bits / rate
