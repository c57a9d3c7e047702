"""Fixed-step kinematics core: clock, seeded streams, Krauss car following.

All scenario dynamics reduce to the same per-step speed choice: the minimum
of a collision-free "safe velocity" against the current leader, the speed
reachable by accelerating for one step, and the road speed cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

# Road-vehicle defaults, calibrated so a free-flow 100 m approach takes
# ~12 s (low-density travel-time anchor).
A_MAX = 2.5  # max acceleration, m/s^2
B_DECEL = 4.5  # planning deceleration, m/s^2
TAU = 1.0  # reaction time, s
V_MAX = 8.33  # speed cap, m/s
CAR_LEN = 5.0  # m
TRUCK_LEN = 20.0  # m


class DomainError(ValueError):
    """An operation was called outside its numeric domain."""


class SimulationFault(RuntimeError):
    """An internal physical invariant broke (e.g. overlapping vehicles)."""


@dataclass
class SimClock:
    """Drift-free fixed-step clock: t is always step_index * dt exactly."""

    dt: float
    step_index: int = 0

    @property
    def t(self) -> float:
        return self.step_index * self.dt

    def advance(self) -> None:
        self.step_index += 1


# Stable stream ids so substreams never depend on call order or on the
# protocol under test (identical (mhr, ipg) must give identical runs).
_PURPOSES = {
    "arrivals": 0,
    "beacon_phase": 1,
    "approach_pick": 2,
    "test": 7,
}


class RngStreams:
    """Named, independent substreams derived from one 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def substream(self, purpose: str, index: int = 0) -> np.random.Generator:
        key = _PURPOSES[purpose]
        ss = np.random.SeedSequence([self.seed, key, int(index)])
        return np.random.Generator(np.random.PCG64(ss))


@dataclass
class VehicleState:
    """Longitudinal state of one CAV along its path."""

    id: int
    s: float  # position along path, m
    lane: str  # mainline | ramp | approach-N | platoon-lane
    v: float  # m/s
    length: float = CAR_LEN
    spawn_time: float = 0.0
    a_max: float = A_MAX
    b_decel: float = B_DECEL
    v_max: float = V_MAX
    tau: float = TAU


def safe_velocity(v_l: float, g: float, tau: float, b: float, v_bar: float) -> float:
    """Max speed that avoids collision with a leader at speed v_l and gap g.

    v_safe = v_l + (g - v_l*tau) / (v_bar/b + tau), clamped below at 0.
    """
    if not (
        math.isfinite(v_l)
        and math.isfinite(g)
        and math.isfinite(tau)
        and math.isfinite(b)
        and math.isfinite(v_bar)
    ):
        raise DomainError("safe_velocity: non-finite input")
    if v_l < 0 or g < 0 or tau <= 0 or b <= 0 or v_bar < 0:
        raise DomainError(
            f"safe_velocity: out of domain (v_l={v_l}, g={g}, tau={tau}, b={b}, v_bar={v_bar})"
        )
    return max(0.0, v_l + (g - v_l * tau) / (v_bar / b + tau))


def desired_speed(v_safe: float, v: float, a: float, v_max: float, dt: float = 1.0) -> float:
    """Per-step speed choice: min(v_safe, v + a*dt, v_max)."""
    if not all(map(math.isfinite, (v_safe, v, a, v_max, dt))):
        raise DomainError("desired_speed: non-finite input")
    if v < 0 or a < 0 or v_max < 0 or v_safe < 0 or dt <= 0:
        raise DomainError("desired_speed: out of domain")
    return min(v_safe, v + a * dt, v_max)


def step_vehicle(
    state: VehicleState,
    leader: Optional[tuple[float, float]],
    dt: float,
) -> VehicleState:
    """Advance one vehicle by one step against an optional (v_l, gap) leader.

    Without a leader the safe velocity is unbounded and only the
    acceleration and speed caps apply. Speed never goes negative; position
    never decreases.
    """
    if dt <= 0:
        raise DomainError("step_vehicle: dt must be positive")
    if leader is None:
        v_safe = math.inf
    else:
        v_l, gap = leader
        if gap < 0:
            raise DomainError("step_vehicle: negative gap")
        v_safe = safe_velocity(v_l, gap, state.tau, state.b_decel, 0.5 * (state.v + v_l))
    v_new = max(0.0, min(v_safe, state.v + state.a_max * dt, state.v_max))
    return replace(state, v=v_new, s=state.s + v_new * dt)


def spawn_arrivals(density_vph: float, horizon_s: float, rng: np.random.Generator) -> list[float]:
    """Poisson arrival times with mean inter-arrival 3600/density seconds.

    Sorted ascending and truncated at the horizon.
    """
    if density_vph <= 0 or horizon_s <= 0:
        raise DomainError("spawn_arrivals: density and horizon must be positive")
    mean_gap = 3600.0 / density_vph
    times: list[float] = []
    t = rng.exponential(mean_gap)
    while t < horizon_s:
        times.append(t)
        t += rng.exponential(mean_gap)
    return times
