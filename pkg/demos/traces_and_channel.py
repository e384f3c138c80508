"""
Vehicle traces and the radio link
=================================

Place vehicles on a ring road, move them, save the trace as CSV, and look
at who can serve whom and how fast the upload is.
"""

import tempfile
from pathlib import Path

from vecrep.traffic import (
    TAV,
    ChannelParams,
    candidate_set,
    generate_ppp_snapshot,
    generate_synthetic_trace,
    load_trace,
    multicast_rate_and_upload_delay,
    uplink_rate_at,
    uniform_speed_law,
    write_trace,
)

ring = 2000.0
snap = generate_ppp_snapshot(2.0, 5.0, 15.0, seed=4)
trace = generate_synthetic_trace(snap, duration=10.0, timestep=1.0, ring_length_m=ring,
                                 speed_law=uniform_speed_law(20.0, 15.0), seed=4)

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "trace.csv"
    write_trace(trace, path)
    print(path.read_text().splitlines()[:3])
    again = load_trace(path, ring_length_m=ring)
print("frames:", len(again.frames), "vehicles:", len(again.frames[0]))

params = ChannelParams()
for d in (10, 50, 100, 200):
    print(f"{d:4d} m: {uplink_rate_at(d, params) / 1e6:6.1f} Mbit/s")

frame = again.frames[-1]
by_id = {v.vehicle_id: v for v in frame}
tav = next(v for v in frame if v.role == TAV)
cands = candidate_set(tav, frame, R=200.0, ring_length_m=ring)
print(f"task vehicle {tav.vehicle_id} sees {len(cands)} servers")
if cands:
    rate, delay = multicast_rate_and_upload_delay(tav, [by_id[c] for c in cands[:3]], params, ring)
    print(f"multicast to 3: {rate / 1e6:.1f} Mbit/s, upload {1000 * delay:.2f} ms")
