"""Angled ramp merge: projection onto the mainline, beacon-informed yielding.

Coordinates: one unified longitudinal axis. Mainline vehicles run 0..250 m
(merge point at 100, exit at 250). Ramp vehicles run 0..100 on their own leg;
their coordinate doubles as the virtual mainline projection, so the merge
order is the total order over everyone's coordinate.

Cross-leg awareness is communication-only: a ramp vehicle reasons about
mainline traffic exclusively from received beacons (same-lane leaders are
always sensed). Stale beacons are handled with worst-case envelopes - a
predecessor may have braked since its last report, a follower may have
accelerated - which is what makes a long inter-packet gap costly. A ramp
vehicle that cannot rule out an unheard conflicting mainline vehicle plans
to stop at the merge point. The mainline has priority and never yields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .comms import (
    BeaconEntry,
    BeaconTable,
    Protocol,
    braked_travel,
    draw_phase,
    max_travel,
    protocol_params,
    quantize_up,
)
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
    spawn_arrivals,
)

MAINLINE = "mainline"
RAMP = "ramp"

S0_JAM = 2.0  # standstill buffer fed into the car-following gap, m
MERGE_MARGIN = 1.0  # extra clearance demanded at the merge decision, m
STOP_BUFFER = 0.5  # stop this short of the merge point when yielding, m
BEHIND_WINDOW = 30.0  # how far back an unheard mainline follower blocks, m
YIELD_DECEL = 1.2  # comfortable planning deceleration while uncleared, m/s^2


@dataclass(frozen=True)
class RampGeometry:
    """Merge layout: two 100 m legs joining at a configurable angle."""

    mainline_pre: float = 100.0
    post_merge: float = 150.0
    ramp_len: float = 100.0
    theta_deg: float = 24.0

    def __post_init__(self):
        if not 0.0 < self.theta_deg < 90.0:
            raise DomainError(f"theta must be in (0, 90) degrees, got {self.theta_deg}")
        if min(self.mainline_pre, self.post_merge, self.ramp_len) <= 0:
            raise DomainError("all ramp segments must have positive length")

    @property
    def merge_s(self) -> float:
        return self.mainline_pre

    @property
    def exit_s(self) -> float:
        return self.mainline_pre + self.post_merge


def ramp_euclid(d_m: float, d_r: float, theta_deg: float) -> float:
    """Euclidean distance between points d_m / d_r metres short of the merge
    point on the mainline and ramp legs (law of cosines)."""
    if d_m < 0 or d_r < 0:
        raise DomainError("distances to the merge point must be nonnegative")
    c = math.cos(math.radians(theta_deg))
    return math.sqrt(max(0.0, d_m * d_m + d_r * d_r - 2.0 * d_m * d_r * c))


def project_ramp(d_r: float, merge_s: float = 100.0) -> float:
    """Virtual mainline coordinate of a ramp vehicle d_r short of the merge."""
    if d_r < 0:
        raise DomainError("d_r must be nonnegative")
    return merge_s - d_r


class _Veh:
    __slots__ = (
        "id",
        "lane",
        "origin",
        "virt",
        "v",
        "length",
        "spawn_time",
        "next_beacon",
        "table",
        "merged_at",
        "v_cmd",
    )

    def __init__(self, vid: int, lane: str, spawn_time: float, v0: float, phase: float):
        self.id = vid
        self.lane = lane
        self.origin = lane
        self.virt = 0.0
        self.v = v0
        self.length = CAR_LEN
        self.spawn_time = spawn_time
        self.next_beacon = spawn_time + phase
        self.table = BeaconTable()
        self.merged_at: Optional[float] = None
        self.v_cmd = 0.0


@dataclass
class RampRunResult:
    road_times: list[float]
    detail: list[dict]
    gridlock: bool
    fault: bool

    @property
    def mean_road_time(self) -> float:
        return sum(self.road_times) / len(self.road_times) if self.road_times else 0.0


class RampSim:
    """Single deterministic ramp-merge run."""

    def __init__(
        self,
        protocol: Protocol,
        density_vph: float,
        seed: int,
        theta_deg: float = 24.0,
        horizon_s: float = 600.0,
        warmup_s: float = 60.0,
        drain_s: float = 300.0,
        dt: float = 0.1,
    ):
        self.geom = RampGeometry(theta_deg=theta_deg)
        mhr_km, ipg_ms = protocol_params(protocol, density_vph)
        self.mhr_m = mhr_km * 1000.0
        self.ipg = ipg_ms / 1000.0
        self.dt = dt
        self.horizon_s = horizon_s
        self.warmup_s = warmup_s
        self.t_cap = horizon_s + drain_s
        self.rng = RngStreams(seed)
        # even density split between the two legs; ids and beacon phases are
        # assigned in global arrival order so they do not depend on the
        # protocol under test
        per_leg = density_vph / 2.0
        a_main = spawn_arrivals(per_leg, horizon_s, self.rng.substream("arrivals", 0))
        a_ramp = spawn_arrivals(per_leg, horizon_s, self.rng.substream("arrivals", 1))
        events = sorted(
            [(t, MAINLINE) for t in a_main] + [(t, RAMP) for t in a_ramp],
            key=lambda e: (e[0], e[1]),
        )
        self._queues: dict[str, list[tuple[float, int, float]]] = {MAINLINE: [], RAMP: []}
        for vid, (t_arr, lane) in enumerate(events):
            phase = draw_phase(self.rng.substream("beacon_phase", vid), self.ipg)
            self._queues[lane].append((t_arr, vid, phase))
        self._qpos = {MAINLINE: 0, RAMP: 0}
        self.vehicles: list[_Veh] = []
        self.t = 0.0
        self._step_index = 0
        self.fault = False
        self.road_times: list[float] = []
        self.detail: list[dict] = []
        self._cos_theta = math.cos(math.radians(self.geom.theta_deg))
        self._sin_theta = math.sin(math.radians(self.geom.theta_deg))

    # --- geometry -----------------------------------------------------

    def _pos2d(self, veh: _Veh) -> tuple[float, float]:
        if veh.lane == MAINLINE:
            return veh.virt - self.geom.merge_s, 0.0
        d_r = self.geom.merge_s - veh.virt
        return -d_r * self._cos_theta, d_r * self._sin_theta

    # --- spawning -----------------------------------------------------

    def _tail_vehicle(self, lane: str) -> Optional[_Veh]:
        tail = None
        for v in self.vehicles:
            if v.origin == lane and (tail is None or v.virt < tail.virt):
                tail = v
        return tail

    def _arrivals_exhausted(self) -> bool:
        return all(self._qpos[lane] >= len(self._queues[lane]) for lane in (MAINLINE, RAMP))

    def _try_spawn(self) -> None:
        for lane in (MAINLINE, RAMP):
            queue = self._queues[lane]
            while self._qpos[lane] < len(queue):
                t_arr, vid, phase = queue[self._qpos[lane]]
                if t_arr > self.t:
                    break
                tail = self._tail_vehicle(lane)
                blocked = tail is not None and tail.lane == lane and tail.virt - tail.length < S0_JAM
                if blocked:
                    break  # entry occupied; retry next step (FIFO per leg)
                v0 = V_MAX
                if tail is not None and tail.lane == lane:
                    gap = max(0.0, tail.virt - tail.length - S0_JAM)
                    v0 = min(v0, safe_velocity(tail.v, gap, TAU, B_DECEL, 0.5 * (V_MAX + tail.v)))
                self.vehicles.append(_Veh(vid, lane, self.t, v0, phase))
                self._qpos[lane] += 1

    # --- communication --------------------------------------------------

    def _comm_step(self) -> None:
        # mainline vehicles broadcast; pre-merge ramp vehicles listen
        receivers = [v for v in self.vehicles if v.lane == RAMP]
        if not receivers:
            # still advance schedules so timing stays protocol-only
            for v in self.vehicles:
                while quantize_up(v.next_beacon, self.dt) <= self.t + 1e-9:
                    v.next_beacon += self.ipg
            return
        rec_pos = [(r, self._pos2d(r)) for r in receivers]
        for v in self.vehicles:
            due = False
            while quantize_up(v.next_beacon, self.dt) <= self.t + 1e-9:
                v.next_beacon += self.ipg
                due = True
            if not due or v.lane != MAINLINE:
                continue
            sx, sy = self._pos2d(v)
            entry = BeaconEntry(sender=v.id, sent_at=self.t, s=v.virt, lane=v.lane, v=v.v)
            for r, (rx, ry) in rec_pos:
                if math.hypot(sx - rx, sy - ry) <= self.mhr_m:
                    r.table.update(entry)

    # --- control ----------------------------------------------------------

    def _krauss_cap(self, v: float, v_l: float, gap: float, ) -> float:
        return safe_velocity(v_l, max(0.0, gap), TAU, B_DECEL, 0.5 * (v + v_l))

    def _clearance(self, r: _Veh, pred: Optional[_Veh], foll: Optional[_Veh]) -> bool:
        merge_s = self.geom.merge_s
        ahead_limit = merge_s + V_MAX * TAU + CAR_LEN + 2.0
        if pred is not None and pred.virt <= ahead_limit:
            e = r.table.get(pred.id)
            if e is None:
                return False  # unheard conflicting predecessor in the window
            age = self.t - e.sent_at
            wc_s = e.s + braked_travel(e.v, age, B_DECEL)
            if (wc_s - pred.length) - r.virt < r.v * TAU + MERGE_MARGIN:
                return False
        if foll is not None and foll.virt >= r.virt - BEHIND_WINDOW:
            e = r.table.get(foll.id)
            if e is None:
                return False  # unheard conflicting follower close behind
            age = self.t - e.sent_at
            hi_s = e.s + max_travel(e.v, age, A_MAX, V_MAX)
            hi_v = min(V_MAX, e.v + A_MAX * age)
            if r.virt - r.length - hi_s < hi_v * TAU + MERGE_MARGIN:
                return False
        return True

    def _control_step(self) -> None:
        order = sorted(self.vehicles, key=lambda v: (v.virt, v.id))
        main_sorted = [v for v in order if v.lane == MAINLINE]
        ramp_sorted = [v for v in order if v.lane == RAMP]
        main_index = {v.id: i for i, v in enumerate(main_sorted)}
        ramp_index = {v.id: i for i, v in enumerate(ramp_sorted)}

        for v in self.vehicles:
            caps = [v.v + A_MAX * self.dt, V_MAX]
            if v.lane == MAINLINE:
                i = main_index[v.id]
                if i + 1 < len(main_sorted):
                    lead = main_sorted[i + 1]
                    gap = lead.virt - lead.length - v.virt - S0_JAM
                    caps.append(self._krauss_cap(v.v, lead.v, gap))
            else:
                i = ramp_index[v.id]
                if i + 1 < len(ramp_sorted):
                    lead = ramp_sorted[i + 1]
                    gap = lead.virt - lead.length - v.virt - S0_JAM
                    caps.append(self._krauss_cap(v.v, lead.v, gap))
                pred = foll = None
                for m in main_sorted:
                    if (m.virt, m.id) > (v.virt, v.id):
                        pred = m
                        break
                for m in reversed(main_sorted):
                    if (m.virt, m.id) < (v.virt, v.id):
                        foll = m
                        break
                if self._clearance(v, pred, foll):
                    if pred is not None:
                        e = v.table.get(pred.id)
                        if e is not None:
                            age = self.t - e.sent_at
                            wc_s = e.s + braked_travel(e.v, age, B_DECEL)
                            wc_v = max(0.0, e.v - B_DECEL * age)
                            gap = wc_s - pred.length - v.virt - S0_JAM
                            caps.append(self._krauss_cap(v.v, wc_v, gap))
                else:
                    gap = self.geom.merge_s - STOP_BUFFER - v.virt
                    caps.append(self._krauss_cap(v.v, 0.0, gap))
                    # comfortable stop envelope: uncleared vehicles shed speed
                    # early instead of braking hard at the merge point
                    caps.append(math.sqrt(max(0.0, 2.0 * YIELD_DECEL * gap)))
            v.v_cmd = max(0.0, min(caps))

    # --- physics ---------------------------------------------------------

    def _physics_step(self) -> None:
        t_next = self.t + self.dt
        for v in self.vehicles:
            v.v = v.v_cmd
            v.virt += v.v * self.dt
        survivors = []
        for v in self.vehicles:
            if v.lane == RAMP and v.virt >= self.geom.merge_s:
                v.lane = MAINLINE
                v.merged_at = t_next
                road_time = t_next - v.spawn_time
                self.detail.append(
                    {
                        "vehicle": v.id,
                        "origin": v.origin,
                        "spawn_s": v.spawn_time,
                        "merge_s": t_next,
                        "road_time_s": road_time,
                    }
                )
                if v.spawn_time >= self.warmup_s:
                    self.road_times.append(road_time)
            if v.lane == MAINLINE and v.virt - v.length > self.geom.exit_s:
                continue  # fully off the network
            survivors.append(v)
        self.vehicles = survivors
        self._check_overlap()

    def _check_overlap(self) -> None:
        for lane in (MAINLINE, RAMP):
            row = sorted((v for v in self.vehicles if v.lane == lane), key=lambda v: (v.virt, v.id))
            for a, b in zip(row, row[1:]):
                if b.virt - b.length - a.virt < -1e-6:
                    self.fault = True
                    raise SimulationFault(
                        f"overlap on {lane}: vehicle {a.id} at {a.virt:.3f} vs "
                        f"{b.id} at {b.virt:.3f} (t={self.t:.1f})"
                    )

    # --- run -------------------------------------------------------------

    def step(self) -> None:
        self._try_spawn()
        self._comm_step()
        self._control_step()
        self._physics_step()
        self._step_index += 1
        self.t = self._step_index * self.dt

    def run(self) -> RampRunResult:
        gridlock = False
        try:
            while self.t < self.t_cap:
                if not self.vehicles and self._arrivals_exhausted():
                    break
                self.step()
            if self.vehicles or not self._arrivals_exhausted():
                gridlock = True
        except SimulationFault:
            gridlock = bool(self.vehicles)
        return RampRunResult(
            road_times=self.road_times,
            detail=self.detail,
            gridlock=gridlock,
            fault=self.fault,
        )
