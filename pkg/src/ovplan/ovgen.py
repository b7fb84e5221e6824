"""Ellipse operational volumes from simulated fleet positions.

Each region is a covariance ellipse sized by a normal quantile plus a bloat
term.  The bloat grows until a held-out part of the fleet is sufficiently
covered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .flightsim import SegmentRecord
from .geometry import Ellipse, LocalPoint
from .router import Route

REGULARIZE_BELOW = 1e-9
DIAGONAL_LOAD = 1e-6


class OvGenError(RuntimeError):
    pass


class ValidationExhausted(OvGenError):
    pass


@dataclass
class OvGenConfig:
    inclusion: float = 0.95
    alpha0: float = 0.1
    alpha_step: float = 0.1
    alpha_max_iters: int = 50
    t_e: float = 10.0
    min_fit_sample: int = 15

    def __post_init__(self):
        if not 0 < self.inclusion < 1:
            raise ValueError("inclusion must lie in (0, 1)")
        if self.alpha_step <= 0:
            raise ValueError("alpha_step must be > 0")
        if self.t_e <= 0:
            raise ValueError("t_e must be > 0")

    @property
    def base_z(self) -> float:
        return abs(NormalDist().inv_cdf((1 - self.inclusion) / 2))


@dataclass(frozen=True)
class EllipseRegion:
    mean: LocalPoint
    covariance: tuple[tuple[float, float], tuple[float, float]]
    z: float
    t_start: float
    t_end: float
    regularized: bool = False

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
            raise ValueError("covariance must be a symmetric 2x2 matrix")
        if self.z <= 0:
            raise ValueError("z must be > 0")
        if self.t_start >= self.t_end:
            raise ValueError("t_start must be < t_end")
        object.__setattr__(self, "mean", LocalPoint(float(self.mean[0]), float(self.mean[1])))
        object.__setattr__(self, "covariance",
                           ((float(cov[0, 0]), float(cov[0, 1])), (float(cov[0, 1]), float(cov[1, 1]))))

    @property
    def cov(self) -> np.ndarray:
        return np.asarray(self.covariance, dtype=float)

    @property
    def ellipse(self) -> Ellipse:
        return covariance_ellipse(self.mean, self.cov, self.z)

    def contains_time(self, t: float) -> bool:
        return self.t_start <= t <= self.t_end


@dataclass(frozen=True)
class OperationalVolume:
    regions: tuple[EllipseRegion, ...]
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Contract:
    id: str
    route: Route
    ovs: tuple[OperationalVolume, ...]
    departure_time: float
    speed_band: tuple[float, float] = (13.0, 17.0)

    @property
    def start(self) -> float:
        return self.ovs[0].start

    @property
    def end(self) -> float:
        return self.ovs[-1].end

    @property
    def duration(self) -> float:
        return sum(ov.duration for ov in self.ovs)

    def regions(self):
        for k, ov in enumerate(self.ovs):
            for j, reg in enumerate(ov.regions):
                yield k, j, reg


@dataclass
class Validation:
    passed: bool
    fraction: float
    threshold: float


def eig_sorted(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(cov)
    order = vals.argsort()[::-1]
    return vals[order], vecs[:, order]


def covariance_ellipse(mean, cov: np.ndarray, z: float) -> Ellipse:
    vals, vecs = eig_sorted(np.asarray(cov, dtype=float))
    v1 = vecs[:, 0]
    rot = math.atan2(v1[1], v1[0])
    # the eigenvector sign is arbitrary: pin the major axis to (-pi/2, pi/2]
    if rot > math.pi / 2:
        rot -= math.pi
    elif rot <= -math.pi / 2:
        rot += math.pi
    a = z * math.sqrt(max(vals[0], 0.0))
    b = z * math.sqrt(max(vals[1], 0.0))
    return Ellipse(LocalPoint(*mean), max(a, b), min(a, b), rot)


def _positions(states) -> np.ndarray:
    if isinstance(states, np.ndarray):
        return states.reshape(-1, 2).astype(float)
    return np.array([s.position for s in states], dtype=float).reshape(-1, 2)


def split_sample(states: Sequence, cfg: OvGenConfig, rng: np.random.Generator):
    """Random fit/holdout split with |fit| = ceil(n/2) >= min_fit_sample."""
    n = len(states)
    if n < 2 * cfg.min_fit_sample:
        raise OvGenError(f"too few states: {n} < {2 * cfg.min_fit_sample}")
    perm = rng.permutation(n)
    k = math.ceil(n / 2)
    fit_idx, hold_idx = np.sort(perm[:k]), np.sort(perm[k:])
    if isinstance(states, np.ndarray):
        return states[fit_idx], states[hold_idx]
    return [states[i] for i in fit_idx], [states[i] for i in hold_idx]


def fit_ellipse(fit, cfg: OvGenConfig, alpha: float, t_start: float = 0.0,
                t_end: float | None = None) -> EllipseRegion:
    """Mean and sample covariance of ``fit``; z = |PPF((1 - x) / 2)| + alpha."""
    pts = _positions(fit)
    if len(pts) < 2:
        raise OvGenError("need at least 2 points to fit")
    mu = pts.mean(axis=0)
    cov = np.cov(pts, rowvar=False, ddof=1)
    regularized = False
    if np.linalg.eigvalsh(cov)[0] < REGULARIZE_BELOW:
        cov = cov + DIAGONAL_LOAD * np.eye(2)
        regularized = True
    t_end = t_start + cfg.t_e if t_end is None else t_end
    return EllipseRegion(LocalPoint(*mu), cov, cfg.base_z + alpha, t_start, t_end, regularized)


def mahalanobis(y, region: EllipseRegion) -> float:
    return float(mahalanobis_many(np.asarray(y, dtype=float).reshape(1, 2), region)[0])


def mahalanobis_many(pts: np.ndarray, region: EllipseRegion) -> np.ndarray:
    d = np.asarray(pts, dtype=float).reshape(-1, 2) - np.asarray(region.mean)
    sol = np.linalg.solve(region.cov, d.T)
    return np.sqrt(np.maximum(np.einsum("ij,ji->i", d, sol), 0.0))


def validate_region(region: EllipseRegion, fit, holdout, cfg: OvGenConfig) -> Validation:
    """Check the ellipse against the fit percentile and the holdout.

    The threshold is the x-th percentile of fit distances.  The region passes
    when its radius z reaches that threshold and at least a fraction x of the
    holdout lies within z.
    """
    hold = _positions(holdout)
    if len(hold) == 0:
        raise OvGenError("holdout is empty")
    d_fit = mahalanobis_many(_positions(fit), region)
    threshold = float(np.percentile(d_fit, 100 * cfg.inclusion))
    fraction = float(np.mean(mahalanobis_many(hold, region) <= region.z))
    return Validation(region.z >= threshold and fraction >= cfg.inclusion, fraction, threshold)


def _split_window(arr: np.ndarray, airborne: np.ndarray, cfg: OvGenConfig,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Fit and holdout point sets for one window of records.

    Landed aircraft no longer occupy airspace and are left out; a window with
    nobody airborne falls back to every record (the landing pad).  Records
    are split at random; below the sample floor the holdout is the fit set.
    """
    pts = arr[airborne] if airborne.sum() >= 2 else arr.reshape(-1, 2)
    if len(pts) >= 2 * cfg.min_fit_sample:
        return split_sample(pts, cfg, rng)
    return pts, pts


def build_region(window, cfg: OvGenConfig, rng: np.random.Generator, t_start: float = 0.0,
                 t_end: float | None = None, airborne: np.ndarray | None = None) -> EllipseRegion:
    """Fit, validate and bloat one region.

    ``window`` is either one slice of states (N x 2) or a stack of slices
    (T x N x 2) covering the region's interval; ``airborne`` optionally masks
    out records of aircraft that have already landed.
    """
    arr = window if isinstance(window, np.ndarray) else _positions(window)
    if arr.ndim == 2:
        arr = arr[None]
    if airborne is None:
        if arr.shape[1] < 2 * cfg.min_fit_sample:
            raise OvGenError(f"too few states: {arr.shape[1]} < {2 * cfg.min_fit_sample}")
        airborne = np.ones(arr.shape[:2], dtype=bool)
    fit, hold = _split_window(arr, np.asarray(airborne, dtype=bool).reshape(arr.shape[:2]), cfg, rng)
    alpha = cfg.alpha0
    base = fit_ellipse(fit, cfg, 0.0, t_start, t_end)
    for _ in range(cfg.alpha_max_iters + 1):
        region = EllipseRegion(base.mean, base.covariance, base.z + alpha, base.t_start, base.t_end,
                               base.regularized)
        if validate_region(region, fit, hold, cfg).passed:
            return region
        alpha += cfg.alpha_step
    raise ValidationExhausted(f"region [{t_start}, {region.t_end}] failed validation after "
                              f"{cfg.alpha_max_iters} bloat steps")


def region_rng(seed: int, segment: int, interval: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, segment, interval])


def build_ov(record: SegmentRecord, cfg: OvGenConfig, seed: int, t_d: float | None = None
             ) -> OperationalVolume:
    times = record.times
    t0 = float(times[0])
    t_d = float(times[-1] - times[0]) if t_d is None else t_d
    n_int = int(round(t_d / cfg.t_e))
    if abs(n_int * cfg.t_e - t_d) > 1e-9:
        raise OvGenError("t_e must divide t_d")
    regions = []
    for j in range(n_int):
        a, b = t0 + j * cfg.t_e, t0 + (j + 1) * cfg.t_e
        sel = (times >= a - 1e-9) & (times <= b + 1e-9)
        try:
            regions.append(build_region(record.positions[sel], cfg,
                                        region_rng(seed, record.segment_index, j), a, b,
                                        airborne=~record.arrived[sel]))
        except OvGenError as exc:
            raise OvGenError(f"segment {record.segment_index} interval {j}: {exc}") from exc
    return OperationalVolume(tuple(regions), t0, t0 + t_d)


def build_contract(route: Route, records: Sequence[SegmentRecord], cfg: OvGenConfig,
                   seed: int = 0, contract_id: str = "", speed_band: tuple[float, float] = (13.0, 17.0),
                   t_d: float | None = None) -> Contract:
    """One OV per simulated segment."""
    if not records:
        raise OvGenError("no segment records")
    ovs = tuple(build_ov(rec, cfg, seed, t_d) for rec in records)
    for prev, nxt in zip(ovs, ovs[1:]):
        if abs(prev.end - nxt.start) > 1e-9:
            raise OvGenError("OVs are not contiguous")
    return Contract(contract_id, route, ovs, route.departure_time, tuple(speed_band))
