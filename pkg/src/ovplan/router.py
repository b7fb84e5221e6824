"""Arc-expansion A* over open airspace.

Nodes are generated on a fan of radius ``arc_radius`` ahead of the current
heading; nearby nodes are merged; connections are checked against no-fly
zones (with a clearance buffer) and against the time-aligned ellipses of
contracts already in the store.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .airspace import AirspaceModel, ContractStore, RegionTable
from .geometry import (LocalPoint, Polygon, distance, first_crossing, point_in_polygon,
                       point_polygon_distance,
                       segment_ellipses_clearance,
                       segment_within_clearance, wrap_angle)

log = logging.getLogger(__name__)


class NoRouteFound(RuntimeError):
    def __init__(self, message: str, nodes_expanded: int = 0):
        super().__init__(f"{message} (nodes expanded: {nodes_expanded})")
        self.nodes_expanded = nodes_expanded


class Status(str, Enum):
    OPEN = "open"
    CLOSED = "closed"
    INVALID_CONNECTION = "invalid-connection"


class Connection(str, Enum):
    VALID = "valid"
    INVALID_CONNECTION = "invalid-connection"
    INVALID_NODE = "invalid-node"


@dataclass
class RouterConfig:
    arc_radius: float = 500.0
    arc_angle: float = math.pi / 2
    arc_children: int = 7
    dedup_radius: float = 200.0
    omega: float = 1.2
    beta: float = 500.0
    v_cruise: float = 15.0
    ov_margin: float = 200.0
    nfz_clearance: float = 50.0
    delta_samples: int = 16
    # widens the [eta_a, eta_b] window used for ellipse deconfliction
    eta_pad: float = 0.0
    max_expansions: int = 50_000
    cache_heuristic: bool = True
    # also try the goal from any node with a valid straight connection
    goal_line_of_sight: bool = True

    def __post_init__(self):
        if self.arc_radius <= 0:
            raise ValueError("arc_radius must be > 0")
        if not 0 < self.arc_angle <= 2 * math.pi:
            raise ValueError("arc_angle must be in (0, 2pi]")
        if self.arc_children < 1:
            raise ValueError("arc_children must be >= 1")
        if not 0 <= self.dedup_radius < self.arc_radius:
            raise ValueError("dedup_radius must be < arc_radius")
        # 1.0 is allowed so the unweighted search can be exercised
        if not 1.0 <= self.omega <= 1.5:
            raise ValueError("omega must lie in [1.0, 1.5]")
        if self.beta < 0 or self.v_cruise <= 0 or self.ov_margin < 0 or self.nfz_clearance < 0:
            raise ValueError("beta, ov_margin, nfz_clearance must be >= 0 and v_cruise > 0")
        if self.delta_samples < 2:
            raise ValueError("delta_samples must be >= 2")

    @property
    def arc_spacing(self) -> float:
        return self.arc_angle / (self.arc_children - 1) if self.arc_children > 1 else self.arc_angle


@dataclass(eq=False)
class SearchNode:
    position: LocalPoint
    g: float
    h: float
    parent: SearchNode | None
    eta: float
    status: Status = Status.OPEN
    delta: float = 0.0
    id: int = 0
    version: int = 0


@dataclass(frozen=True)
class Route:
    waypoints: tuple[tuple[LocalPoint, float], ...]
    total_length: float
    departure_time: float
    v_cruise: float
    origin_id: str = ""
    destination_id: str = ""
    altitude: float = 120.0

    @classmethod
    def from_points(cls, points: Sequence[Sequence[float]], departure_time: float, v_cruise: float,
                    origin_id: str = "", destination_id: str = "", altitude: float = 120.0) -> Route:
        pts = [LocalPoint(float(p[0]), float(p[1])) for p in points]
        wps, g = [(pts[0], float(departure_time))], 0.0
        for p, q in zip(pts, pts[1:]):
            g += distance(p, q)
            wps.append((q, departure_time + g / v_cruise))
        return cls(tuple(wps), g, float(departure_time), float(v_cruise), origin_id, destination_id,
                   altitude)

    @property
    def points(self) -> np.ndarray:
        return np.array([p for p, _ in self.waypoints], dtype=float)

    @property
    def etas(self) -> np.ndarray:
        return np.array([t for _, t in self.waypoints], dtype=float)

    @property
    def arrival_time(self) -> float:
        return self.waypoints[-1][1]

    @property
    def duration(self) -> float:
        return self.arrival_time - self.departure_time


# --------------------------------------------------------------------------
# search primitives
# --------------------------------------------------------------------------

def expand(node: SearchNode, cfg: RouterConfig, goal: LocalPoint | None = None,
           connection_ok: Callable[[LocalPoint], bool] | None = None) -> list[LocalPoint]:
    """Candidate children of ``node`` on the arc ahead of its heading.

    The root (no parent) gets a full circle at the same angular spacing,
    starting at the bearing to ``goal`` when one is given.
    """
    x, y = node.position
    r = cfg.arc_radius
    if node.parent is None:
        step = cfg.arc_spacing
        count = max(1, int(round(2 * math.pi / step)))
        start = math.atan2(goal[1] - y, goal[0] - x) if goal is not None else 0.0
        angles = [start + k * 2 * math.pi / count for k in range(count)]
    else:
        px, py = node.parent.position
        heading = math.atan2(y - py, x - px)
        if cfg.arc_children == 1:
            offsets = [0.0]
        else:
            half = cfg.arc_angle / 2
            offsets = [-half + k * cfg.arc_spacing for k in range(cfg.arc_children)]
            # centre first so the straight-ahead child survives merging
            offsets.sort(key=lambda o: (abs(round(o, 12)), o))
        angles = [heading + o for o in offsets]
    out = [LocalPoint(x + r * math.cos(a), y + r * math.sin(a)) for a in angles]
    if goal is not None and (distance(node.position, goal) <= r or cfg.goal_line_of_sight):
        if connection_ok is None or connection_ok(goal):
            out.append(LocalPoint(*goal))
    return out


class NodeIndex:
    """Spatial hash of search nodes with cell size equal to the merge radius."""

    def __init__(self, cell: float):
        self.cell = max(cell, 1.0)
        self._cells: dict[tuple[int, int], list[SearchNode]] = {}

    def _key(self, p) -> tuple[int, int]:
        return math.floor(p[0] / self.cell), math.floor(p[1] / self.cell)

    def add(self, node: SearchNode) -> None:
        self._cells.setdefault(self._key(node.position), []).append(node)

    def nearest(self, p, radius: float) -> SearchNode | None:
        kx, ky = self._key(p)
        reach = int(math.ceil(radius / self.cell))
        best, best_d = None, radius
        for i in range(kx - reach, kx + reach + 1):
            for j in range(ky - reach, ky + reach + 1):
                for n in self._cells.get((i, j), ()):
                    d = distance(n.position, p)
                    if d <= best_d and (best is None or d < best_d or n.id < best.id):
                        best, best_d = n, d
        return best

    def __iter__(self):
        for nodes in self._cells.values():
            yield from nodes


def dedup(candidate: LocalPoint, explored: NodeIndex, cfg: RouterConfig) -> SearchNode | None:
    """The explored node that ``candidate`` merges into, or None for a new node."""
    return explored.nearest(candidate, cfg.dedup_radius)


def angle_set(n, goal, poly: Polygon) -> list[float]:
    """Signed angle of each vertex off the ray n->goal; positive to the right."""
    base = math.atan2(goal[1] - n[1], goal[0] - n[0])
    return [wrap_angle(base - math.atan2(v[1] - n[1], v[0] - n[0])) for v in poly.vertices]


def _blocking_polygon(n, goal, airspace: AirspaceModel) -> Polygon | None:
    best, best_d = None, math.inf
    for poly in airspace.nfzs:
        d = first_crossing(n, goal, poly)
        if d is not None and d < best_d:
            best, best_d = poly, d
    return best


def heuristic(n, goal, airspace: AirspaceModel, cfg: RouterConfig) -> float:
    """Weighted detour distance via the extreme vertex of the nearest blocking NFZ."""
    poly = _blocking_polygon(n, goal, airspace)
    if poly is None:
        return cfg.omega * distance(n, goal)
    angles = angle_set(n, goal, poly)
    lo = min(range(len(angles)), key=lambda i: angles[i])
    hi = max(range(len(angles)), key=lambda i: angles[i])
    best = None
    for i in (lo, hi):
        v = poly.vertices[i]
        cost = distance(n, v) + distance(v, goal)
        key = (abs(angles[i]), cost)
        if best is None or key < best[0]:
            best = (key, cost)
    return cfg.omega * best[1]


def _ov_scan(pa, pb, eta_a: float, eta_b: float, table: RegionTable | None,
             cfg: RouterConfig) -> tuple[bool, float]:
    """(blocked, delta) for segment pa-pb against time-aligned regions."""
    if table is None or not table.refs:
        return False, 0.0
    rows = table.aligned(eta_a - cfg.eta_pad, eta_b + cfg.eta_pad)
    if rows.size == 0:
        return False, 0.0
    c = table.centers[rows]
    a = table.semi_a[rows]
    # cheap reject: segment far beyond any ellipse's reach
    seg_mid = ((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2)
    half = distance(pa, pb) / 2
    near = np.hypot(c[:, 0] - seg_mid[0], c[:, 1] - seg_mid[1]) <= a + cfg.ov_margin + half
    blocked = False
    if near.any():
        r = rows[near]
        d = segment_ellipses_clearance(pa, pb, table.centers[r], table.cos_r[r], table.sin_r[r],
                                       table.semi_a[r], table.semi_b[r])
        blocked = bool((d <= 1.0 + cfg.ov_margin / table.semi_b[r]).any())
    delta = _delta(pa, pb, eta_a, eta_b, table, cfg)
    return blocked, delta


def _delta(pa, pb, eta_a, eta_b, table: RegionTable | None, cfg: RouterConfig) -> float:
    if table is None or not table.refs:
        return 0.0
    rows = table.aligned(eta_a, eta_b)
    if rows.size == 0:
        return 0.0
    if table.singular[rows].any():
        return 1.0
    s = np.linspace(0.0, 1.0, cfg.delta_samples)
    px = pa[0] + s * (pb[0] - pa[0])
    py = pa[1] + s * (pb[1] - pa[1])
    dx = px[None, :] - table.centers[rows, 0:1]
    dy = py[None, :] - table.centers[rows, 1:2]
    ic = table.inv_cov[rows]
    m2 = ic[:, 0:1] * dx * dx + 2 * ic[:, 1:2] * dx * dy + ic[:, 2:3] * dy * dy
    return float(np.exp(-0.5 * m2.min()))


def conflict_delta(a: SearchNode, b: SearchNode, store: ContractStore | None,
                   cfg: RouterConfig) -> float:
    """Peak-normalised density of time-aligned regions along segment ab, in [0, 1]."""
    table = store.region_table() if store is not None and len(store) else None
    return _delta(a.position, b.position, a.eta, b.eta, table, cfg)


def node_valid(p, airspace: AirspaceModel, cfg: RouterConfig, exempt: bool = False) -> bool:
    if not point_in_polygon(p, airspace.bounds):
        return False
    for poly in airspace.nfzs:
        x0, y0, x1, y1 = poly.bbox
        c = cfg.nfz_clearance
        if p[0] < x0 - c or p[0] > x1 + c or p[1] < y0 - c or p[1] > y1 + c:
            continue
        if point_in_polygon(p, poly):
            return False
        if not exempt and point_polygon_distance(p, poly) < cfg.nfz_clearance:
            return False
    return True


def segment_valid(pa, pb, airspace: AirspaceModel, cfg: RouterConfig) -> bool:
    bounds = airspace.bounds
    if not (point_in_polygon(pa, bounds) and point_in_polygon(pb, bounds)):
        return False
    if _crosses_properly(pa, pb, bounds):
        return False
    if not point_in_polygon(((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2), bounds):
        return False
    for poly in airspace.nfzs:
        if segment_within_clearance(pa, pb, poly, cfg.nfz_clearance):
            return False
    return True


def _crosses_properly(pa, pb, poly: Polygon) -> bool:
    a, b = poly.edges
    dx, dy = pb[0] - pa[0], pb[1] - pa[1]
    o1 = dx * (a[:, 1] - pa[1]) - dy * (a[:, 0] - pa[0])
    o2 = dx * (b[:, 1] - pa[1]) - dy * (b[:, 0] - pa[0])
    ex, ey = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    o3 = ex * (pa[1] - a[:, 1]) - ey * (pa[0] - a[:, 0])
    o4 = ex * (pb[1] - a[:, 1]) - ey * (pb[0] - a[:, 0])
    return bool(((o1 * o2 < 0) & (o3 * o4 < 0)).any())


def connection_valid(a: SearchNode, b, airspace: AirspaceModel, store: ContractStore | None,
                     cfg: RouterConfig, exempt_node: bool = False) -> Connection:
    """Classify the connection a -> b."""
    if not node_valid(b, airspace, cfg, exempt=exempt_node):
        return Connection.INVALID_NODE
    if not segment_valid(a.position, b, airspace, cfg):
        return Connection.INVALID_CONNECTION
    table = store.region_table() if store is not None and len(store) else None
    eta_b = a.eta + distance(a.position, b) / cfg.v_cruise
    blocked, _ = _ov_scan(a.position, b, a.eta, eta_b, table, cfg)
    return Connection.INVALID_CONNECTION if blocked else Connection.VALID


# --------------------------------------------------------------------------
# main loop
# --------------------------------------------------------------------------

@dataclass
class PlanStats:
    expanded: int = 0
    created: int = 0
    heuristic_calls: int = 0
    extra: dict = field(default_factory=dict)


def plan(airspace: AirspaceModel, store: ContractStore | None, from_id: str, to_id: str,
         departure_time: float, cfg: RouterConfig | None = None,
         stats: PlanStats | None = None) -> Route:
    """Minimum-cost deconflicted route between two vertiports.

    Priority is g + h + beta * delta, ties broken by lower g then insertion order.
    Raises NoRouteFound when the open list is exhausted.
    """
    cfg = cfg or RouterConfig()
    stats = stats if stats is not None else PlanStats()
    if from_id == to_id:
        raise ValueError("origin and destination must differ")
    start = airspace.vertiport(from_id)
    goal = airspace.vertiport(to_id)
    table = store.region_table() if store is not None and len(store) else None
    h_cache: dict[tuple[float, float], float] = {}

    def h_of(p) -> float:
        key = (p[0], p[1])
        if cfg.cache_heuristic and key in h_cache:
            return h_cache[key]
        stats.heuristic_calls += 1
        v = 0.0 if key == (goal[0], goal[1]) else heuristic(p, goal, airspace, cfg)
        h_cache[key] = v
        return v

    seq = itertools.count()
    ids = itertools.count()
    heap: list = []
    index = NodeIndex(cfg.dedup_radius)
    root = SearchNode(LocalPoint(*start), 0.0, h_of(start), None, float(departure_time),
                      Status.OPEN, 0.0, next(ids))
    index.add(root)
    goal_node: SearchNode | None = None

    def push(n: SearchNode):
        n.version += 1
        f = n.g + (n.h if cfg.cache_heuristic else h_of(n.position)) + cfg.beta * n.delta
        heapq.heappush(heap, (f, n.g, next(seq), n.id, n.version, n))

    def link(parent: SearchNode, p) -> tuple[bool, float, float, float]:
        length = distance(parent.position, p)
        eta = parent.eta + length / cfg.v_cruise
        if not segment_valid(parent.position, p, airspace, cfg):
            return False, length, eta, 0.0
        blocked, delta = _ov_scan(parent.position, p, parent.eta, eta, table, cfg)
        return not blocked, length, eta, delta

    def goal_ok(p) -> bool:
        return link(node, p)[0]

    push(root)
    while heap:
        _, _, _, _, version, node = heapq.heappop(heap)
        if version != node.version or node.status is not Status.OPEN:
            continue
        if node is goal_node:
            return _extract(node, cfg, departure_time, from_id, to_id)
        node.status = Status.CLOSED
        stats.expanded += 1
        if stats.expanded > cfg.max_expansions:
            break
        for cand in expand(node, cfg, goal, goal_ok):
            is_goal = cand == goal
            target = goal_node if is_goal else dedup(cand, index, cfg)
            if target is node:
                continue
            pos = target.position if target is not None else cand
            if target is None and not is_goal and not node_valid(pos, airspace, cfg):
                continue
            ok, length, eta, delta = link(node, pos)
            g_new = node.g + length
            if target is None:
                target = SearchNode(LocalPoint(*pos), g_new, h_of(pos), node, eta,
                                    Status.OPEN if ok else Status.INVALID_CONNECTION,
                                    delta, next(ids))
                stats.created += 1
                index.add(target)
                if is_goal:
                    goal_node = target
                if ok:
                    push(target)
                continue
            if target is root or not ok:
                continue
            if target.status is Status.INVALID_CONNECTION or g_new < target.g - 1e-9:
                target.g, target.parent, target.eta, target.delta = g_new, node, eta, delta
                target.status = Status.OPEN
                push(target)
    raise NoRouteFound(f"no route from {from_id} to {to_id}", stats.expanded)


def _extract(node: SearchNode, cfg: RouterConfig, departure_time: float, from_id: str,
             to_id: str) -> Route:
    chain = []
    while node is not None:
        chain.append(node.position)
        node = node.parent
    chain.reverse()
    return Route.from_points(chain, departure_time, cfg.v_cruise, from_id, to_id)
