"""Communication regimes and beacon machinery.

A regime is fully described by two density-dependent indicators: the maximum
hearing range (km) and the inter-packet gap (ms). Delivery inside the range
is instantaneous and lossless; outside it nothing is received.

Closed-form parameterizations (validated row-by-row against the published
comparison tables in the test suite):

    cv2x: mhr = 50/density km,               ipg = 100 ms
    dsrc: mhr = max(0.25, 50/density) km,    ipg = max(100, density/2) ms

Both regimes resolve to the identical pair (0.5 km, 100 ms) at density 100,
so runs with equal seeds are bit-identical there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kinematics import DomainError

CV2X = "cv2x"
DSRC = "dsrc"
CUSTOM = "custom"

#: Canonical ordering used for output files and summaries.
PROTOCOL_ORDER = (CV2X, DSRC, CUSTOM)


@dataclass(frozen=True)
class Protocol:
    """A named communication regime; CUSTOM carries a fixed (mhr, ipg) pair."""

    name: str
    custom_mhr_km: Optional[float] = None
    custom_ipg_ms: Optional[float] = None

    def __post_init__(self):
        if self.name not in (CV2X, DSRC, CUSTOM):
            raise DomainError(f"unknown protocol {self.name!r}")
        if self.name == CUSTOM:
            if not self.custom_mhr_km or not self.custom_ipg_ms:
                raise DomainError("custom protocol needs custom_mhr_km and custom_ipg_ms")
            if self.custom_mhr_km <= 0 or self.custom_ipg_ms <= 0:
                raise DomainError("custom mhr and ipg must be positive")

    def label(self) -> str:
        return self.name


def protocol_params(protocol: Protocol, density_vph: float) -> tuple[float, float]:
    """Resolve (protocol, density) to (mhr_km, ipg_ms)."""
    if not math.isfinite(density_vph) or density_vph <= 0:
        raise DomainError(f"density must be positive, got {density_vph}")
    if protocol.name == CV2X:
        return 50.0 / density_vph, 100.0
    if protocol.name == DSRC:
        return max(0.25, 50.0 / density_vph), max(100.0, density_vph / 2.0)
    return float(protocol.custom_mhr_km), float(protocol.custom_ipg_ms)


def in_range(pos_a: tuple[float, float], pos_b: tuple[float, float], mhr_km: float) -> bool:
    """True iff the Euclidean distance is at most mhr (boundary inclusive)."""
    if not all(map(math.isfinite, (*pos_a, *pos_b))):
        raise DomainError("in_range: non-finite coordinates")
    return math.hypot(pos_a[0] - pos_b[0], pos_a[1] - pos_b[1]) <= mhr_km * 1000.0


def quantize_up(t: float, dt: float) -> float:
    """Snap an event time to the first simulation step at or after it."""
    return math.ceil(t / dt - 1e-9) * dt


def beacon_times(
    spawn_time: float,
    ipg_ms: float,
    rng: np.random.Generator,
    dt: float = 0.1,
    until: float = 10.0,
) -> list[float]:
    """Beacon schedule spawn+phase, spawn+phase+ipg, ... quantized to the grid.

    The phase is drawn uniformly in [0, ipg) from the vehicle's stream so
    that vehicles never beacon in artificial lockstep.
    """
    if ipg_ms <= 0:
        raise DomainError("ipg must be positive")
    ipg = ipg_ms / 1000.0
    phase = float(rng.uniform()) * ipg
    out = []
    k = 0
    while True:
        t = quantize_up(spawn_time + phase + k * ipg, dt)
        if t >= until:
            break
        out.append(t)
        k += 1
    return out


def draw_phase(rng: np.random.Generator, ipg_s: float) -> float:
    """Uniform beacon phase in [0, ipg); the uniform draw itself is
    protocol-independent so matched seeds stay comparable across regimes."""
    return float(rng.uniform()) * ipg_s


@dataclass
class BeaconEntry:
    """Last snapshot received from one neighbor."""

    sender: int
    sent_at: float
    s: float  # sender path coordinate (virtual/unified axis)
    lane: str
    v: float
    braking: bool = False


class BeaconTable:
    """Per-vehicle map of neighbor id -> freshest received snapshot."""

    def __init__(self):
        self._entries: dict[int, BeaconEntry] = {}

    def update(self, entry: BeaconEntry) -> None:
        cur = self._entries.get(entry.sender)
        if cur is None or entry.sent_at >= cur.sent_at:
            self._entries[entry.sender] = entry

    def get(self, sender: int) -> Optional[BeaconEntry]:
        return self._entries.get(sender)

    def __contains__(self, sender: int) -> bool:
        return sender in self._entries

    def __len__(self) -> int:
        return len(self._entries)


def deliver(
    t: float,
    beacons: list[tuple[tuple[float, float], BeaconEntry]],
    receivers: list[tuple[int, tuple[float, float], BeaconTable]],
    mhr_km: float,
) -> int:
    """Deliver every due beacon to all in-range receivers; returns count.

    Broadcast semantics: each (position, payload) beacon reaches every
    receiver within the hearing range in the same step, except the sender
    itself. No loss, no propagation delay.
    """
    delivered = 0
    for pos_s, entry in beacons:
        for rid, pos_r, table in receivers:
            if rid == entry.sender:
                continue
            if in_range(pos_s, pos_r, mhr_km):
                table.update(entry)
                delivered += 1
    return delivered


def neighbor_estimate(entry: BeaconEntry, now: float) -> tuple[float, float]:
    """Constant-velocity extrapolation of a neighbor snapshot to `now`."""
    age = now - entry.sent_at
    return entry.s + entry.v * age, entry.v


def braked_travel(v0: float, age: float, b: float) -> float:
    """Least distance a vehicle can have covered in `age` seconds: it may
    have braked at b immediately after its last report."""
    t_stop = v0 / b if b > 0 else math.inf
    t = min(age, t_stop)
    return v0 * t - 0.5 * b * t * t


def max_travel(v0: float, age: float, a: float, v_max: float) -> float:
    """Most distance a vehicle can have covered in `age` seconds (full
    acceleration up to the speed cap)."""
    t_cap = max(0.0, (v_max - v0) / a) if a > 0 else math.inf
    t = min(age, t_cap)
    d = v0 * t + 0.5 * a * t * t
    if age > t:
        d += v_max * (age - t)
    return d
