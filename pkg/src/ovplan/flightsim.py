"""Monte-Carlo point-mass simulation of a fleet following a route.

The fleet is held as numpy arrays.  Every ``t_d`` seconds the fleet is
re-spawned: counts per active waypoint are kept, positions are bootstrap
resampled within each waypoint group and jittered, speeds are redrawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import LocalPoint
from .router import Route


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AircraftState:
    position: LocalPoint
    alt: float
    active_waypoint: int
    airspeed: float


@dataclass
class SimConfig:
    n_aircraft: int = 100
    dt: float = 1.0
    t_d: float = 60.0
    r0: float = 50.0
    speed_low: float = 13.0
    speed_high: float = 17.0
    capture_radius: float = 100.0
    jitter: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n_aircraft < 2:
            raise ValueError("n_aircraft must be >= 2")
        if not 0 < self.dt <= self.t_d:
            raise ValueError("need 0 < dt <= t_d")
        if not 0 < self.speed_low <= self.speed_high:
            raise ValueError("need 0 < speed_low <= speed_high")
        steps = self.t_d / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("t_d must be a multiple of dt")

    @property
    def steps_per_segment(self) -> int:
        return int(round(self.t_d / self.dt))


@dataclass
class Fleet:
    positions: np.ndarray      # (N, 2)
    speeds: np.ndarray         # (N,)
    waypoint: np.ndarray       # (N,) int
    alt: float = 120.0
    t: float = 0.0

    def __len__(self) -> int:
        return len(self.speeds)

    def copy(self) -> Fleet:
        return Fleet(self.positions.copy(), self.speeds.copy(), self.waypoint.copy(), self.alt, self.t)

    def states(self) -> list[AircraftState]:
        return [AircraftState(LocalPoint(float(x), float(y)), self.alt, int(w), float(v))
                for (x, y), w, v in zip(self.positions, self.waypoint, self.speeds)]


@dataclass
class SegmentRecord:
    segment_index: int
    times: np.ndarray          # (T,)
    positions: np.ndarray      # (T, N, 2)
    waypoints: np.ndarray      # (T, N)
    speeds: np.ndarray         # (T, N)
    arrived: np.ndarray        # (T, N) bool
    alt: float = 120.0

    @property
    def n_aircraft(self) -> int:
        return self.positions.shape[1]

    @property
    def states(self) -> dict[float, list[AircraftState]]:
        out = {}
        for k, t in enumerate(self.times):
            out[float(t)] = [AircraftState(LocalPoint(float(x), float(y)), self.alt, int(w), float(v))
                             for (x, y), w, v in zip(self.positions[k], self.waypoints[k],
                                                     self.speeds[k])]
        return out

    def final_fleet(self) -> Fleet:
        return Fleet(self.positions[-1].copy(), self.speeds[-1].copy(), self.waypoints[-1].copy(),
                     self.alt, float(self.times[-1]))


def _arrived(fleet: Fleet, route_pts: np.ndarray) -> np.ndarray:
    last = len(route_pts) - 1
    return (fleet.waypoint == last) & np.all(fleet.positions == route_pts[last], axis=1)


def init_fleet(route: Route, cfg: SimConfig, rng: np.random.Generator) -> Fleet:
    n = cfg.n_aircraft
    r = cfg.r0 * np.sqrt(rng.random(n))
    a = rng.random(n) * 2 * math.pi
    w0 = route.points[0]
    pos = np.column_stack([w0[0] + r * np.cos(a), w0[1] + r * np.sin(a)])
    speeds = rng.uniform(cfg.speed_low, cfg.speed_high, n)
    wp = np.full(n, min(1, len(route.waypoints) - 1), dtype=int)
    return Fleet(pos, speeds, wp, route.altitude, route.departure_time)


def step(fleet: Fleet, route: Route, cfg: SimConfig, route_pts: np.ndarray | None = None) -> Fleet:
    """Advance every aircraft by one ``dt`` towards its active waypoint."""
    pts = route.points if route_pts is None else route_pts
    last = len(pts) - 1
    out = fleet.copy()
    out.t = fleet.t + cfg.dt
    done = _arrived(fleet, pts)
    # waypoint switching
    target = pts[out.waypoint]
    d = np.hypot(*(target - out.positions).T)
    switch = (d <= cfg.capture_radius) & (out.waypoint < last) & ~done
    out.waypoint[switch] += 1
    target = pts[out.waypoint]
    vec = target - out.positions
    d = np.hypot(vec[:, 0], vec[:, 1])
    move = out.speeds * cfg.dt
    terminal = (out.waypoint == last) & (d <= move)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(d[:, None] > 0, vec / d[:, None], 0.0)
    moving = ~terminal & ~done
    out.positions[moving] += unit[moving] * move[moving, None]
    out.positions[terminal & ~done] = pts[last]
    return out


def run_segment(fleet: Fleet, route: Route, cfg: SimConfig, segment_index: int = 0,
                route_pts: np.ndarray | None = None) -> SegmentRecord:
    """Run one ``t_d`` segment; records t_d/dt + 1 slices and updates ``fleet`` in place."""
    pts = route.points if route_pts is None else route_pts
    n_steps = cfg.steps_per_segment
    n = len(fleet)
    pos = np.empty((n_steps + 1, n, 2))
    wps = np.empty((n_steps + 1, n), dtype=int)
    spd = np.empty((n_steps + 1, n))
    arr = np.empty((n_steps + 1, n), dtype=bool)
    t0 = fleet.t
    cur = fleet
    for k in range(n_steps + 1):
        if k:
            cur = step(cur, route, cfg, pts)
        pos[k], wps[k], spd[k] = cur.positions, cur.waypoint, cur.speeds
        arr[k] = _arrived(cur, pts)
    fleet.positions, fleet.speeds, fleet.waypoint, fleet.t = (cur.positions, cur.speeds,
                                                              cur.waypoint, cur.t)
    times = t0 + cfg.dt * np.arange(n_steps + 1)
    return SegmentRecord(segment_index, times, pos, wps, spd, arr, fleet.alt)


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    quota = w / w.sum() * total
    counts = np.floor(quota).astype(int)
    short = total - counts.sum()
    if short > 0:
        order = np.argsort(-(quota - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def reinject(record: SegmentRecord, route: Route, cfg: SimConfig, rng: np.random.Generator,
             n: int | None = None) -> Fleet:
    """Fresh fleet matching the final slice's active-waypoint histogram.

    Arrived aircraft stay parked on the final waypoint without jitter.
    """
    if record.positions.shape[0] == 0:
        raise ValueError("empty record")
    n = n or cfg.n_aircraft
    final_pos = record.positions[-1]
    final_wp = record.waypoints[-1]
    arrived = record.arrived[-1]
    # arrived aircraft form their own group so they are not jittered off the pad
    group = np.where(arrived, -1, final_wp)
    labels, hist = np.unique(group, return_counts=True)
    counts = hist if hist.sum() == n else largest_remainder(hist, n)
    pos, wp = [], []
    for lab, cnt in zip(labels, counts):
        if cnt == 0:
            continue
        members = np.flatnonzero(group == lab)
        pick = members[rng.integers(0, len(members), cnt)]
        p = final_pos[pick].copy()
        if lab >= 0 and cfg.jitter > 0:
            p += rng.normal(0.0, cfg.jitter, size=p.shape)
        pos.append(p)
        wp.append(final_wp[pick])
    positions = np.concatenate(pos)
    speeds = rng.uniform(cfg.speed_low, cfg.speed_high, len(positions))
    return Fleet(positions, speeds, np.concatenate(wp).astype(int), record.alt,
                 float(record.times[-1]))


def simulate_route(route: Route, cfg: SimConfig, rng: np.random.Generator | None = None
                   ) -> list[SegmentRecord]:
    """Segments until every aircraft has arrived and the nominal arrival is covered."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    pts = route.points
    fleet = init_fleet(route, cfg, rng)
    nominal = max(route.duration, cfg.t_d)
    limit = max(1, math.ceil(4 * nominal / cfg.t_d))
    records: list[SegmentRecord] = []
    for s in range(limit):
        if s:
            fleet = reinject(records[-1], route, cfg, rng)
        rec = run_segment(fleet, route, cfg, s, pts)
        records.append(rec)
        if rec.arrived[-1].all() and rec.times[-1] >= route.arrival_time - 1e-9:
            return records
    raise SimulationError(f"fleet did not arrive within {limit} segments")


def nominal_segment_count(route: Route, cfg: SimConfig) -> int:
    return max(1, math.ceil(route.duration / cfg.t_d))
