"""Post-hoc checks: contract deconfliction, holdout accuracy, congested runs."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .airspace import AirspaceModel, ContractStore
from .flightsim import SimConfig, SimulationError, simulate_route
from .geometry import ellipses_overlap, points_in_ellipse
from .ovgen import Contract, OvGenConfig, OvGenError, build_contract
from .router import NoRouteFound, Route, RouterConfig, plan

log = logging.getLogger(__name__)


class ScenarioInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class ConflictPair:
    contract_a: str
    contract_b: str
    ov_a: int
    ov_b: int
    region_a: int
    region_b: int
    t_start: float
    t_end: float

    def to_dict(self) -> dict:
        return {"contract_a": self.contract_a, "contract_b": self.contract_b,
                "ov_a": self.ov_a, "ov_b": self.ov_b,
                "region_a": self.region_a, "region_b": self.region_b,
                "interval": [self.t_start, self.t_end]}


@dataclass
class ConflictReport:
    pairs: list[ConflictPair] = field(default_factory=list)
    n_contracts: int = 0

    @property
    def clear(self) -> bool:
        return not self.pairs

    def to_dict(self) -> dict:
        return {"clear": self.clear, "n_contracts": self.n_contracts,
                "pairs": [p.to_dict() for p in self.pairs]}


@dataclass
class AccuracyReport:
    total_records: int
    included_records: int
    per_ov: list[dict] = field(default_factory=list)
    contract_id: str = ""

    @property
    def accuracy(self) -> float:
        return self.included_records / self.total_records if self.total_records else 1.0

    def to_dict(self) -> dict:
        return {"contract": self.contract_id, "total_records": self.total_records,
                "included_records": self.included_records, "accuracy": self.accuracy,
                "per_ov": self.per_ov}


# --------------------------------------------------------------------------
# contract vs contract
# --------------------------------------------------------------------------

def _region_list(c: Contract):
    return [(k, j, reg, reg.ellipse) for k, j, reg in c.regions()]


def _pair_conflicts(a: Contract, b: Contract, margin: float,
                    time_buffer: float = 0.0) -> list[ConflictPair]:
    ra, rb = _region_list(a), _region_list(b)
    if not ra or not rb:
        return []
    ta = np.array([[r[2].t_start, r[2].t_end] for r in ra])
    tb = np.array([[r[2].t_start, r[2].t_end] for r in rb])
    ca = np.array([r[3].center for r in ra])
    cb = np.array([r[3].center for r in rb])
    sa = np.array([r[3].semi_major for r in ra])
    sb = np.array([r[3].semi_major for r in rb])
    # closed-interval overlap and a circumscribed-circle prefilter
    t_ok = ((ta[:, None, 0] <= tb[None, :, 1] + time_buffer)
            & (tb[None, :, 0] <= ta[:, None, 1] + time_buffer))
    reach = sa[:, None] + sb[None, :] + margin
    d_ok = np.hypot(ca[:, None, 0] - cb[None, :, 0], ca[:, None, 1] - cb[None, :, 1]) <= reach
    out = []
    for i, j in zip(*np.nonzero(t_ok & d_ok)):
        ka, ja, rega, ea = ra[i]
        kb, jb, regb, eb = rb[j]
        if margin > 0:
            ea = ea.inflated(margin)
        if ellipses_overlap(ea, eb):
            out.append(ConflictPair(a.id, b.id, ka, kb, ja, jb,
                                    max(rega.t_start, regb.t_start), min(rega.t_end, regb.t_end)))
    return out


def _ordered(a: Contract, b: Contract, pairs: list[ConflictPair]) -> list[ConflictPair]:
    if a.id <= b.id:
        return pairs
    return [ConflictPair(p.contract_b, p.contract_a, p.ov_b, p.ov_a, p.region_b, p.region_a,
                         p.t_start, p.t_end) for p in pairs]


def _sort_key(p: ConflictPair):
    return (p.contract_a, p.contract_b, p.ov_a, p.ov_b, p.region_a, p.region_b)


def check_contract_against_store(contract: Contract, store: ContractStore, margin: float = 0.0,
                                 time_buffer: float = 0.0) -> list[ConflictPair]:
    """Conflicts between ``contract`` and every other contract in ``store``.

    ``time_buffer`` treats regions whose intervals are that close as
    concurrent; used when admitting new contracts.
    """
    others = {}
    for ov in contract.ovs:
        for cid, _ in store.index.candidates(ov.start - time_buffer, ov.end + time_buffer):
            if cid != contract.id:
                others.setdefault(cid, None)
    out = []
    for cid in sorted(others):
        other = store.contracts[cid]
        if other.start > contract.end + time_buffer or other.end < contract.start - time_buffer:
            continue
        out.extend(_ordered(contract, other,
                            _pair_conflicts(contract, other, margin, time_buffer)))
    return sorted(out, key=_sort_key)


def check_contracts(store: ContractStore, margin: float = 0.0) -> ConflictReport:
    """Exhaustive pairwise check of all registered contracts.

    Candidate pairs come from the time-bin index; each pair of regions with
    overlapping closed intervals is tested with ``ellipses_overlap``.
    """
    contracts = sorted(store, key=lambda c: c.id)
    pairs: list[ConflictPair] = []
    for c in contracts:
        cand = set()
        for ov in c.ovs:
            for cid, _ in store.index.candidates(ov.start, ov.end):
                if cid > c.id:
                    cand.add(cid)
        for cid in sorted(cand):
            other = store.contracts[cid]
            if other.start > c.end or other.end < c.start:
                continue
            pairs.extend(_pair_conflicts(c, other, margin))
    return ConflictReport(sorted(pairs, key=_sort_key), len(contracts))


# --------------------------------------------------------------------------
# route vs store, exact Euclidean distance
# --------------------------------------------------------------------------

def _point_ellipse_distance(px: np.ndarray, py: np.ndarray, a: np.ndarray,
                            b: np.ndarray) -> np.ndarray:
    """Distance from points (in each ellipse's own frame) to solid axis-aligned ellipses."""
    y0, y1 = np.abs(px), np.abs(py)
    inside = (y0 / a) ** 2 + (y1 / b) ** 2 <= 1.0
    lo = np.zeros_like(y0)
    hi = np.hypot(y0, y1) * np.maximum(a, b) + 1.0
    for _ in range(80):
        t = 0.5 * (lo + hi)
        f = (a * y0 / (t + a * a)) ** 2 + (b * y1 / (t + b * b)) ** 2 - 1.0
        lo = np.where(f > 0, t, lo)
        hi = np.where(f > 0, hi, t)
    t = 0.5 * (lo + hi)
    x0 = a * a * y0 / (t + a * a)
    x1 = b * b * y1 / (t + b * b)
    d = np.hypot(y0 - x0, y1 - x1)
    return np.where(inside, 0.0, d)


def segment_ellipse_distance(p, q, centers: np.ndarray, rot: np.ndarray, a: np.ndarray,
                             b: np.ndarray) -> np.ndarray:
    """Euclidean distance from segment pq to each of many solid ellipses.

    The distance to a convex set is convex along the segment, so a
    golden-section search over the segment parameter finds the minimum.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    c, s = np.cos(rot), np.sin(rot)

    def dist_at(t):
        x = p[0] + t * (q[0] - p[0]) - centers[:, 0]
        y = p[1] + t * (q[1] - p[1]) - centers[:, 1]
        return _point_ellipse_distance(c * x + s * y, -s * x + c * y, a, b)

    g = (math.sqrt(5) - 1) / 2
    lo = np.zeros(len(centers))
    hi = np.ones(len(centers))
    x1 = hi - g * (hi - lo)
    x2 = lo + g * (hi - lo)
    f1, f2 = dist_at(x1), dist_at(x2)
    for _ in range(60):
        left = f1 <= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x2n = np.where(left, x1, lo + g * (hi - lo))
        x1n = np.where(left, hi - g * (hi - lo), x2)
        x1, x2 = x1n, x2n
        f1, f2 = dist_at(x1), dist_at(x2)
    best = np.minimum(np.minimum(f1, f2), np.minimum(dist_at(np.zeros(len(centers))),
                                                     dist_at(np.ones(len(centers)))))
    return best


@dataclass(frozen=True)
class RouteViolation:
    segment: int
    contract: str
    ov: int
    region: int
    distance: float


def route_violations(route: Route, store: ContractStore, margin: float = 200.0
                     ) -> list[RouteViolation]:
    """Every (segment, region) pair where a time-aligned region is within ``margin``."""
    if not len(store):
        return []
    table = store.region_table()
    rot = np.arctan2(table.sin_r, table.cos_r)
    pts, etas = route.points, route.etas
    out = []
    for i in range(len(pts) - 1):
        rows = table.aligned(float(etas[i]), float(etas[i + 1]))
        if len(rows) == 0:
            continue
        cen = table.centers[rows]
        # circumscribed-circle prefilter
        p, q = pts[i], pts[i + 1]
        d = q - p
        L2 = float(d @ d)
        tt = np.clip(((cen - p) @ d) / L2, 0, 1) if L2 > 0 else np.zeros(len(rows))
        near = np.hypot(*(p + tt[:, None] * d - cen).T) <= table.semi_a[rows] + margin
        rows = rows[near]
        if len(rows) == 0:
            continue
        dist = segment_ellipse_distance(p, q, table.centers[rows], rot[rows],
                                        table.semi_a[rows], table.semi_b[rows])
        for r, dd in zip(rows, dist):
            if dd < margin:
                cid, k, j = table.refs[r]
                out.append(RouteViolation(i, cid, k, j, float(dd)))
    return out


# --------------------------------------------------------------------------
# holdout accuracy
# --------------------------------------------------------------------------

def _contract_arrays(contract: Contract):
    regs = [(k, reg, reg.ellipse) for k, _, reg in contract.regions()]
    t0 = np.array([r[1].t_start for r in regs])
    t1 = np.array([r[1].t_end for r in regs])
    return regs, t0, t1


def accuracy_config(contract: Contract, trials: int = 100, seed: int = 1,
                    base: SimConfig | None = None) -> SimConfig:
    """Fresh-simulation config: same uncertainty model, contract speed band, new seed."""
    base = base or SimConfig()
    lo, hi = contract.speed_band
    return replace(base, n_aircraft=trials, speed_low=lo, speed_high=hi, seed=seed)


def check_accuracy(contract: Contract, cfg: SimConfig | None = None, trials: int = 100,
                   seed: int = 1) -> AccuracyReport:
    """Fraction of fresh 1-second records lying in a time-valid region.

    Only airborne records count; an aircraft that has landed is no longer
    in the airspace.

    ``cfg`` defaults to the standard uncertainty model with the contract's
    speed band; when given it is used as-is apart from the fleet size and seed.
    """
    cfg = accuracy_config(contract, trials, seed) if cfg is None else \
        replace(cfg, n_aircraft=trials, seed=seed)
    records = simulate_route(contract.route, cfg)
    regs, r0, r1 = _contract_arrays(contract)
    per_ov = {k: [0, 0] for k in range(len(contract.ovs))}
    total = included = 0
    for rec in records:
        for ti, t in enumerate(rec.times):
            pts = rec.positions[ti][~rec.arrived[ti]]
            if len(pts) == 0:
                continue
            hit = np.zeros(len(pts), dtype=bool)
            for r in np.flatnonzero((r0 <= t) & (r1 >= t)):
                hit |= points_in_ellipse(pts, regs[r][2])
            n_in = int(hit.sum())
            total += len(pts)
            included += n_in
            k = rec.segment_index
            slot = per_ov.setdefault(k, [0, 0])
            slot[0] += len(pts)
            slot[1] += n_in
    breakdown = [{"ov": k, "total": v[0], "included": v[1],
                  "accuracy": v[1] / v[0] if v[0] else 1.0} for k, v in sorted(per_ov.items())]
    return AccuracyReport(total, included, breakdown, contract.id)


def joint_resimulation(store: ContractStore, cfg: SimConfig | None = None, trials: int = 100,
                       seed: int = 7) -> dict[str, int]:
    """Fresh fleet per contract; count records inside another contract's time-valid region."""
    table = store.region_table() if len(store) else None
    counts: dict[str, int] = {}
    for n, c in enumerate(sorted(store, key=lambda c: c.id)):
        counts[c.id] = 0
        if table is None:
            continue
        scfg = accuracy_config(c, trials, seed + n, cfg)
        own = np.array([ref[0] == c.id for ref in table.refs], dtype=bool)
        for rec in simulate_route(c.route, scfg):
            for ti, t in enumerate(rec.times):
                rows = table.aligned(float(t), float(t))
                rows = rows[~own[rows]]
                pts = rec.positions[ti][~rec.arrived[ti]]
                if len(rows) == 0 or len(pts) == 0:
                    continue
                dx = pts[:, None, 0] - table.centers[None, rows, 0]
                dy = pts[:, None, 1] - table.centers[None, rows, 1]
                u = (table.cos_r[rows] * dx + table.sin_r[rows] * dy) / table.semi_a[rows]
                v = (-table.sin_r[rows] * dx + table.cos_r[rows] * dy) / table.semi_b[rows]
                counts[c.id] += int(((u * u + v * v) <= 1.0).any(axis=1).sum())
    return counts


# --------------------------------------------------------------------------
# congested scenario
# --------------------------------------------------------------------------

@dataclass
class CongestedConfig:
    target: int = 31
    window: float = 300.0
    retry_step: float = 30.0
    speed_low: float = 13.0
    speed_high: float = 20.0
    speed_margin: float = 2.0
    separation: float = 0.0
    # admission treats regions this close in time as concurrent
    time_buffer: float = 30.0
    attempts_factor: int = 10
    seed: int = 0
    router: RouterConfig = field(default_factory=RouterConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    ovgen: OvGenConfig = field(default_factory=OvGenConfig)

    def __post_init__(self):
        if self.target < 1:
            raise ValueError("target must be >= 1")
        if self.window <= 0 or self.retry_step <= 0:
            raise ValueError("window and retry_step must be > 0")
        if not 0 < self.speed_low <= self.speed_high:
            raise ValueError("need 0 < speed_low <= speed_high")


@dataclass
class ScheduleEntry:
    contract_id: str
    origin: str
    destination: str
    requested: float
    granted: float
    v_cruise: float
    plan_time: float
    route_length: float
    n_ovs: int


def poisson_departures(rng: np.random.Generator, rate: float, window: float):
    """Endless Poisson-process departure times folded into [0, window)."""
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        yield float(math.floor(t % window))


def retry_offsets(requested: float, window: float, step: float) -> list[float]:
    """Requested time, then alternately later/earlier by ``step`` within the window."""
    out = [requested]
    k = 1
    while True:
        later, earlier = requested + k * step, requested - k * step
        added = False
        if later <= window:
            out.append(later)
            added = True
        if earlier >= 0:
            out.append(earlier)
            added = True
        if not added:
            return out
        k += 1


def contract_for_route(route: Route, sim: SimConfig, ovgen: OvGenConfig, seed: int,
                       speed_margin: float = 2.0, contract_id: str = "") -> Contract:
    """Simulate ``route`` with speeds V_cruise +- speed_margin and fit its contract."""
    band = (max(0.5, route.v_cruise - speed_margin), route.v_cruise + speed_margin)
    scfg = replace(sim, speed_low=band[0], speed_high=band[1], seed=seed)
    records = simulate_route(route, scfg)
    return build_contract(route, records, ovgen, seed=seed, contract_id=contract_id,
                          speed_band=band)


def make_contract(airspace: AirspaceModel, store: ContractStore, origin: str, destination: str,
                  departure: float, v_cruise: float, router: RouterConfig, sim: SimConfig,
                  ovgen: OvGenConfig, seed: int, speed_margin: float = 2.0,
                  contract_id: str = "") -> Contract:
    """Plan against ``store``, simulate and fit the contract (not registered)."""
    route = plan(airspace, store, origin, destination, departure, replace(router, v_cruise=v_cruise))
    return contract_for_route(route, sim, ovgen, seed, speed_margin, contract_id)


def run_congested(airspace: AirspaceModel, cfg: CongestedConfig | None = None,
                  store: ContractStore | None = None
                  ) -> tuple[ContractStore, ConflictReport, list[ScheduleEntry]]:
    """Fill the airspace with ``cfg.target`` deconflicted contracts.

    Each request draws a uniform vertiport pair, a Poisson departure and a
    cruise speed.  On no-route or a conflict with the store the departure is
    moved in ``retry_step`` increments within the window; when those run out
    a new request is drawn.
    """
    cfg = cfg or CongestedConfig()
    store = store if store is not None else ContractStore()
    rng = np.random.default_rng(cfg.seed)
    ids = sorted(airspace.vertiports)
    departures = poisson_departures(rng, cfg.target / cfg.window, cfg.window)
    schedule: list[ScheduleEntry] = []
    attempts = 0
    n0 = len(store)
    while len(store) - n0 < cfg.target:
        if attempts >= cfg.attempts_factor * cfg.target:
            raise ScenarioInfeasible(f"only {len(store) - n0} of {cfg.target} contracts after "
                                     f"{attempts} requests")
        attempts += 1
        i, j = rng.choice(len(ids), size=2, replace=False)
        origin, dest = ids[int(i)], ids[int(j)]
        requested = next(departures)
        v = float(np.round(rng.uniform(cfg.speed_low, cfg.speed_high), 3))
        seed = int(rng.integers(0, 2 ** 31))
        for dep in retry_offsets(requested, cfg.window, cfg.retry_step):
            t0 = time.perf_counter()
            try:
                c = make_contract(airspace, store, origin, dest, dep, v, cfg.router, cfg.sim,
                                  cfg.ovgen, seed, cfg.speed_margin)
            except NoRouteFound:
                log.debug("no route %s->%s at %.0f", origin, dest, dep)
                continue
            except (OvGenError, SimulationError) as exc:
                log.warning("contract %s->%s at %.0f not built: %s", origin, dest, dep, exc)
                continue
            if check_contract_against_store(c, store, cfg.separation, cfg.time_buffer):
                log.debug("contract %s->%s at %.0f conflicts, retrying", origin, dest, dep)
                continue
            cid = store.register(c)
            wall = time.perf_counter() - t0
            schedule.append(ScheduleEntry(cid, origin, dest, requested, dep, v, wall,
                                          c.route.total_length, len(c.ovs)))
            log.info("%s %s->%s dep %.0f (req %.0f) %.0f m, %d OVs", cid, origin, dest, dep,
                     requested, c.route.total_length, len(c.ovs))
            break
    return store, check_contracts(store, cfg.separation), schedule
