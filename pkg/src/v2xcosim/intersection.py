"""Four-approach intersection under a central FCFS reservation manager.

The manager sits at the crossing point. Vehicles announce themselves on
their beacon schedule; the first heard beacon is the slot request (FCFS
priority never changes afterwards). On its own beacon ticks the manager
rebuilds the future schedule - serial over conflicting approaches, chained
behind same-approach predecessors, never moving an already-issued entry
earlier - and broadcasts grants, which reach only vehicles inside the
hearing range. An ungranted (or late) vehicle treats the box boundary as a
stopped leader; a granted one paces to its entry time.

Vehicles may appear upstream of the nominal 100 m spawn point when the
approach tail has backed up, so at high contention the farthest traffic sits
beyond a short hearing range: requests arrive late, the box idles, and total
time grows - the range side of the trade-off. The interval side enters
through grant latency and estimate staleness.

Vehicle density parameterizes only the communication regime; the arrival
pattern is density-independent (same seed, same traffic), which keeps
density sweeps comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .comms import Protocol, draw_phase, protocol_params, quantize_up
from .kinematics import (
    A_MAX,
    B_DECEL,
    CAR_LEN,
    TAU,
    V_MAX,
    DomainError,
    RngStreams,
    SimulationFault,
    safe_velocity,
)

N_APPROACHES = 4
S0_JAM = 2.0  # standstill buffer in car-following gaps, m
STOP_OFFSET = 0.5  # hold this short of the box boundary, m
YIELD_DECEL = 1.2  # comfortable slowdown while ungranted, m/s^2
CROSS_SLACK = 1.3  # reservation duration margin over the free-flow crossing
FOLLOW_HEADWAY_GAP = S0_JAM  # spacing term in the same-approach chain

# travel direction unit vectors, approach index 0..3
_DIRS = ((0.0, -1.0), (-1.0, 0.0), (0.0, 1.0), (1.0, 0.0))


@dataclass(frozen=True)
class IntersectionGeometry:
    approach_len: float = 100.0
    box_side: float = 10.0

    def __post_init__(self):
        if self.approach_len <= self.box_side / 2:
            raise DomainError("approach must be longer than half the box")

    @property
    def box_entry(self) -> float:
        return self.approach_len

    @property
    def box_exit(self) -> float:
        return self.approach_len + self.box_side

    @property
    def center_u(self) -> float:
        return self.approach_len + self.box_side / 2.0

    @property
    def despawn_u(self) -> float:
        return self.box_exit + 100.0


@dataclass(frozen=True)
class Reservation:
    vehicle: int
    approach: int
    entry: float
    exit: float

    def __post_init__(self):
        if not self.exit > self.entry:
            raise DomainError("reservation must have exit > entry")


def grant_slot(
    schedule: list[Reservation],
    vehicle: int,
    approach: int,
    est_arrival: float,
    duration: float,
    entry_floor: float = 0.0,
) -> Reservation:
    """FCFS slot assignment: entry after the estimated arrival, every
    previously granted conflicting exit, and the vehicle's own floor."""
    conflicting_exit = 0.0
    for r in schedule:
        if r.approach != approach:
            conflicting_exit = max(conflicting_exit, r.exit)
    entry = max(est_arrival, conflicting_exit, entry_floor)
    return Reservation(vehicle=vehicle, approach=approach, entry=entry, exit=entry + duration)


class _Veh:
    __slots__ = (
        "id",
        "approach",
        "u",
        "v",
        "length",
        "spawn_time",
        "next_beacon",
        "grant",
        "entered_at",
        "cleared_at",
        "v_cmd",
    )

    def __init__(self, vid: int, approach: int, spawn_time: float, u0: float, v0: float, phase: float):
        self.id = vid
        self.approach = approach
        self.u = u0
        self.v = v0
        self.length = CAR_LEN
        self.spawn_time = spawn_time
        self.next_beacon = spawn_time + phase
        self.grant: Optional[tuple[float, float]] = None
        self.entered_at: Optional[float] = None
        self.cleared_at: Optional[float] = None
        self.v_cmd = 0.0


class _Manager:
    """Reservation bookkeeping on the manager side."""

    def __init__(self, geom: IntersectionGeometry, duration_for):
        self.geom = geom
        self.duration_for = duration_for
        self.fcfs: list[int] = []
        self.request_t: dict[int, float] = {}
        self.heard: dict[int, tuple[float, float, float]] = {}  # vid -> (t, u, v)
        self.approach: dict[int, int] = {}
        self.length: dict[int, float] = {}
        self.entered: set[int] = set()
        self.completed: set[int] = set()
        self.floor: dict[int, float] = {}
        self.schedule: dict[int, tuple[float, float]] = {}
        self.log: list[tuple] = []

    def hear(self, t: float, veh: _Veh) -> None:
        if veh.id not in self.request_t:
            self.request_t[veh.id] = t
            self.fcfs.append(veh.id)
            self.approach[veh.id] = veh.approach
            self.length[veh.id] = veh.length
            est0 = t + max(0.0, self.geom.box_entry - veh.u) / V_MAX
            self.log.append(("request", t, veh.id, veh.approach, est0))
        self.heard[veh.id] = (t, veh.u, veh.v)

    def note_entered(self, t: float, vid: int) -> None:
        self.entered.add(vid)
        self.log.append(("entered", t, vid))

    def note_cleared(self, t: float, vid: int) -> None:
        self.completed.add(vid)
        self.log.append(("cleared", t, vid))

    def estimate(self, now: float, vid: int) -> float:
        """Free-flow lower bound from the freshest heard state; a vehicle the
        manager knows has not entered yet can never arrive in the past."""
        t_h, u_h, _v_h = self.heard[vid]
        est = t_h + max(0.0, self.geom.box_entry - u_h) / V_MAX
        if vid not in self.entered:
            est = max(est, now)
        return est

    def rebuild(self, now: float) -> None:
        """Recompute the serial schedule in FCFS order.

        Entries are monotone per vehicle across rebuilds, so a stale grant a
        vehicle may still hold is always at or before its current slot and
        later slots are chained past the freshest exits.
        """
        max_exit_by_approach = [0.0] * N_APPROACHES
        chain_by_approach: dict[int, float] = {}
        tick_inputs = []
        for vid in self.fcfs:
            if vid in self.completed:
                continue
            appr = self.approach[vid]
            if vid in self.entered:
                entry, exit_ = self.schedule[vid]
            else:
                est = self.estimate(now, vid)
                pred_entry = chain_by_approach.get(appr)
                if pred_entry is not None:
                    headway = (self.length[vid] + V_MAX * TAU + FOLLOW_HEADWAY_GAP) / V_MAX
                    est = max(est, pred_entry + headway)
                duration = self.duration_for(self.length[vid])
                conflicting = max(
                    (e for a, e in enumerate(max_exit_by_approach) if a != appr), default=0.0
                )
                entry = max(est, conflicting, self.floor.get(vid, 0.0))
                exit_ = entry + duration
                self.schedule[vid] = (entry, exit_)
                self.floor[vid] = entry
                tick_inputs.append((vid, appr, est, duration))
            max_exit_by_approach[appr] = max(max_exit_by_approach[appr], exit_)
            chain_by_approach[appr] = entry
        self.log.append(("tick", now, tuple(tick_inputs)))


class IntersectionSim:
    """Single deterministic intersection run."""

    def __init__(
        self,
        protocol: Protocol,
        density_vph: float,
        seed: int,
        n_vehicles: int = 20,
        box_side_m: float = 10.0,
        arrival_rate_vph: float = 3000.0,
        horizon_s: float = 600.0,
        dt: float = 0.1,
    ):
        self.geom = IntersectionGeometry(box_side=box_side_m)
        mhr_km, ipg_ms = protocol_params(protocol, density_vph)
        self.mhr_m = mhr_km * 1000.0
        self.ipg = ipg_ms / 1000.0
        self.dt = dt
        self.horizon_s = horizon_s
        rng = RngStreams(seed)
        gaps = rng.substream("arrivals").exponential(3600.0 / arrival_rate_vph, size=n_vehicles)
        spawn_times = [float(x) for x in gaps.cumsum()]
        approaches = [int(a) for a in rng.substream("approach_pick").integers(0, N_APPROACHES, size=n_vehicles)]
        self._pending = [
            (spawn_times[i], i, approaches[i], draw_phase(rng.substream("beacon_phase", i), self.ipg))
            for i in range(n_vehicles)
        ]
        self._next_arrival = 0
        self.vehicles: list[_Veh] = []
        self.all_vehicles: list[_Veh] = []
        self.manager = _Manager(self.geom, self._duration_for)
        self._next_tick = 0.0
        self.t = 0.0
        self._step_index = 0
        self.fault = False

    def _duration_for(self, length: float) -> float:
        return (self.geom.box_side + length) / V_MAX * CROSS_SLACK

    # --- geometry ---------------------------------------------------------

    def _dist_to_center(self, veh: _Veh) -> float:
        return abs(veh.u - self.geom.center_u)

    # --- spawning ---------------------------------------------------------

    def _try_spawn(self) -> None:
        while self._next_arrival < len(self._pending):
            t_arr, vid, appr, phase = self._pending[self._next_arrival]
            if t_arr > self.t:
                break
            tail = None
            for v in self.vehicles:
                if v.approach == appr and (tail is None or v.u < tail.u):
                    tail = v
            u0, v0 = 0.0, V_MAX
            if tail is not None and tail.u - tail.length - S0_JAM < 0.0:
                # approach entry is backed up: join upstream of the queue
                u0 = tail.u - tail.length - S0_JAM
                v0 = tail.v
            veh = _Veh(vid, appr, self.t, u0, v0, phase)
            self.vehicles.append(veh)
            self.all_vehicles.append(veh)
            self._next_arrival += 1

    # --- communication ----------------------------------------------------

    def _comm_step(self) -> None:
        # vehicle beacons reach the manager when within range
        for v in self.vehicles:
            due = False
            while quantize_up(v.next_beacon, self.dt) <= self.t + 1e-9:
                v.next_beacon += self.ipg
                due = True
            if due and self._dist_to_center(v) <= self.mhr_m:
                self.manager.hear(self.t, v)
        # manager tick: rebuild and broadcast grants
        fired = False
        while quantize_up(self._next_tick, self.dt) <= self.t + 1e-9:
            self._next_tick += self.ipg
            fired = True
        if fired:
            self.manager.rebuild(self.t)
            for v in self.vehicles:
                slot = self.manager.schedule.get(v.id)
                if slot is not None and self._dist_to_center(v) <= self.mhr_m:
                    v.grant = slot

    # --- control ----------------------------------------------------------

    def _box_occupants(self) -> list[_Veh]:
        out = []
        for v in self.vehicles:
            if v.u > self.geom.box_entry and v.u - v.length < self.geom.box_exit:
                out.append(v)
        return out

    def _control_step(self) -> None:
        by_approach: dict[int, list[_Veh]] = {}
        for v in self.vehicles:
            by_approach.setdefault(v.approach, []).append(v)
        for row in by_approach.values():
            row.sort(key=lambda v: (v.u, v.id))
        occupants = self._box_occupants()

        for appr, row in sorted(by_approach.items()):
            for i, v in enumerate(row):
                caps = [v.v + A_MAX * self.dt, V_MAX]
                if i + 1 < len(row):
                    lead = row[i + 1]
                    gap = lead.u - lead.length - v.u - S0_JAM
                    caps.append(
                        safe_velocity(lead.v, max(0.0, gap), TAU, B_DECEL, 0.5 * (v.v + lead.v))
                    )
                if v.u < self.geom.box_entry:
                    grant = v.grant
                    if grant is not None and self.t >= grant[1] - 1e-9:
                        v.grant = grant = None  # window missed; wait for a re-grant
                    window_open = grant is not None and self.t >= grant[0] - 1e-9
                    box_clear = all(o.approach == v.approach for o in occupants)
                    if window_open and box_clear:
                        pass  # cleared to enter
                    else:
                        if grant is not None and self.t < grant[0]:
                            # pace to arrive at the boundary at the granted time
                            caps.append(
                                max(0.0, (self.geom.box_entry - v.u) / (grant[0] - self.t))
                            )
                        gap = self.geom.box_entry - STOP_OFFSET - v.u
                        caps.append(
                            safe_velocity(0.0, max(0.0, gap), TAU, B_DECEL, 0.5 * v.v)
                        )
                        caps.append(math.sqrt(max(0.0, 2.0 * YIELD_DECEL * gap)))
                v.v_cmd = max(0.0, min(caps))

    # --- physics -----------------------------------------------------------

    def _physics_step(self) -> None:
        t_next = self.t + self.dt
        for v in self.vehicles:
            v.v = v.v_cmd
            v.u += v.v * self.dt
        survivors = []
        for v in self.vehicles:
            if v.entered_at is None and v.u > self.geom.box_entry:
                v.entered_at = t_next
                self.manager.note_entered(t_next, v.id)
            if v.cleared_at is None and v.u - v.length >= self.geom.box_exit:
                v.cleared_at = t_next
                self.manager.note_cleared(t_next, v.id)
            if v.u - v.length > self.geom.despawn_u:
                continue
            survivors.append(v)
        self.vehicles = survivors
        self._check_safety()

    def _check_safety(self) -> None:
        occupants = self._box_occupants()
        approaches = {o.approach for o in occupants}
        if len(approaches) > 1:
            self.fault = True
            ids = [(o.id, o.approach) for o in occupants]
            raise SimulationFault(f"conflicting box co-occupancy at t={self.t:.1f}: {ids}")
        by_approach: dict[int, list[_Veh]] = {}
        for v in self.vehicles:
            by_approach.setdefault(v.approach, []).append(v)
        for row in by_approach.values():
            row.sort(key=lambda v: (v.u, v.id))
            for a, b in zip(row, row[1:]):
                if b.u - b.length - a.u < -1e-6:
                    self.fault = True
                    raise SimulationFault(
                        f"overlap on approach {a.approach}: {a.id} vs {b.id} at t={self.t:.1f}"
                    )

    # --- run ----------------------------------------------------------------

    def step(self) -> None:
        self._try_spawn()
        self._comm_step()
        self._control_step()
        self._physics_step()
        self._step_index += 1
        self.t = self._step_index * self.dt

    def run(self) -> "IntersectionRunResult":
        gridlock = False
        try:
            while self.t < self.horizon_s:
                if (
                    self._next_arrival >= len(self._pending)
                    and all(v.cleared_at is not None for v in self.all_vehicles)
                ):
                    break
                self.step()
            if any(v.cleared_at is None for v in self.all_vehicles) or self._next_arrival < len(
                self._pending
            ):
                gridlock = True
        except SimulationFault:
            gridlock = any(v.cleared_at is None for v in self.all_vehicles)
        first_spawn = min((v.spawn_time for v in self.all_vehicles), default=0.0)
        last_clear = max(
            (v.cleared_at for v in self.all_vehicles if v.cleared_at is not None), default=0.0
        )
        total = last_clear - first_spawn if last_clear > 0.0 and not gridlock else 0.0
        detail = [
            {
                "vehicle": v.id,
                "approach": v.approach,
                "spawn_s": v.spawn_time,
                "entered_s": v.entered_at,
                "cleared_s": v.cleared_at,
            }
            for v in self.all_vehicles
        ]
        return IntersectionRunResult(
            total_time=total,
            detail=detail,
            gridlock=gridlock,
            fault=self.fault,
            request_log=list(self.manager.log),
            schedule={k: v for k, v in self.manager.schedule.items()},
            fcfs_order=list(self.manager.fcfs),
        )


@dataclass
class IntersectionRunResult:
    total_time: float
    detail: list[dict]
    gridlock: bool
    fault: bool
    request_log: list[tuple]
    schedule: dict[int, tuple[float, float]]
    fcfs_order: list[int]


def replay_fcfs_oracle(
    log: list[tuple],
    duration_for,
) -> dict[int, tuple[float, float]]:
    """Independent sequential replay of the manager's request log.

    Walks the logged requests and tick inputs and rebuilds the schedule with
    the documented discipline (FCFS order, serial conflicting exits, per
    vehicle monotone entries). The final schedule must match the manager's.
    """
    fcfs: list[int] = []
    approach: dict[int, int] = {}
    floor: dict[int, float] = {}
    completed: set[int] = set()
    schedule: dict[int, tuple[float, float]] = {}
    for event in log:
        if event[0] == "request":
            _, _t, vid, appr, _est0 = event
            fcfs.append(vid)
            approach[vid] = appr
        elif event[0] == "cleared":
            completed.add(event[2])
        elif event[0] == "tick":
            _, _t, inputs = event
            ests = {vid: (appr, est, duration) for vid, appr, est, duration in inputs}
            max_exit_by_approach: dict[int, float] = {}
            for vid in fcfs:
                if vid in completed:
                    continue
                if vid not in ests:
                    # entered but not yet cleared: its frozen slot stays in the chain
                    if vid in schedule:
                        appr = approach[vid]
                        max_exit_by_approach[appr] = max(
                            max_exit_by_approach.get(appr, 0.0), schedule[vid][1]
                        )
                    continue
                appr, est, duration = ests[vid]
                conflicting = max(
                    (e for a, e in max_exit_by_approach.items() if a != appr), default=0.0
                )
                entry = max(est, conflicting, floor.get(vid, 0.0))
                schedule[vid] = (entry, entry + duration)
                floor[vid] = entry
                max_exit_by_approach[appr] = max(
                    max_exit_by_approach.get(appr, 0.0), entry + duration
                )
    return schedule
