"""Ellipse fitting, validation, bloating and contract assembly."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovplan.flightsim import SimConfig, simulate_route
from ovplan.geometry import point_in_ellipse, wrap_angle
from ovplan.ovgen import (EllipseRegion, OvGenConfig, OvGenError, ValidationExhausted, build_contract,
                          build_ov, build_region, covariance_ellipse, fit_ellipse, mahalanobis,
                          region_rng, split_sample, validate_region)
from ovplan.router import Route

Z95 = 1.959963984540054


def region(cov, z=2.0, mean=(0.0, 0.0)) -> EllipseRegion:
    return EllipseRegion(mean, cov, z, 0.0, 10.0)


def cloud(rng, n, cov=((1.0, 0.0), (0.0, 1.0)), mean=(0.0, 0.0)) -> np.ndarray:
    return rng.multivariate_normal(mean, cov, n)


# --------------------------------------------------------------------------
# split
# --------------------------------------------------------------------------

def test_split_sizes():
    cfg = OvGenConfig()
    rng = np.random.default_rng(0)
    pts = np.arange(200.0).reshape(100, 2)
    fit, hold = split_sample(pts, cfg, rng)
    assert len(fit) == 50 and len(hold) == 50
    both = np.vstack([fit, hold])
    assert sorted(map(tuple, both)) == sorted(map(tuple, pts))
    fit, hold = split_sample(pts[:30], cfg, rng)
    assert len(fit) == 15 and len(hold) == 15
    fit, hold = split_sample(pts[:31], cfg, rng)
    assert len(fit) == 16 and len(hold) == 15
    with pytest.raises(OvGenError):
        split_sample(pts[:29], cfg, rng)


# --------------------------------------------------------------------------
# fitting and distances
# --------------------------------------------------------------------------

def test_z_for_95_percent():
    cfg = OvGenConfig(inclusion=0.95)
    assert cfg.base_z == pytest.approx(1.95996, abs=1e-4)
    e = covariance_ellipse((0, 0), np.eye(2), cfg.base_z)
    assert 2 * e.semi_major == pytest.approx(3.91993, abs=1e-4)


def test_diagonal_covariance_axes():
    e = covariance_ellipse((0, 0), np.diag([4.0, 1.0]), 1.0)
    assert e.rotation == pytest.approx(0.0, abs=1e-12)
    assert e.semi_major / e.semi_minor == pytest.approx(2.0)
    tall = covariance_ellipse((0, 0), np.diag([1.0, 4.0]), 1.0)
    assert abs(tall.rotation) == pytest.approx(math.pi / 2)


def test_fit_ellipse_moments():
    rng = np.random.default_rng(1)
    pts = cloud(rng, 400, ((9.0, 2.0), (2.0, 4.0)), (100.0, -50.0))
    reg = fit_ellipse(pts, OvGenConfig(), 0.3, 20.0)
    assert np.allclose(reg.mean, pts.mean(axis=0))
    assert np.allclose(reg.cov, np.cov(pts, rowvar=False, ddof=1))
    assert reg.z == pytest.approx(Z95 + 0.3)
    assert (reg.t_start, reg.t_end) == (20.0, 30.0)
    assert not reg.regularized


def test_collinear_fit_is_regularised():
    pts = np.column_stack([np.linspace(0, 100, 40), np.zeros(40)])
    reg = fit_ellipse(pts, OvGenConfig(), 0.0)
    assert reg.regularized
    assert np.linalg.eigvalsh(reg.cov)[0] > 0


def test_mahalanobis_examples():
    ident = region(((1.0, 0.0), (0.0, 1.0)), mean=(3.0, -2.0))
    assert mahalanobis((3.0, -2.0), ident) == 0.0
    assert mahalanobis((6.0, 2.0), ident) == pytest.approx(5.0)
    assert mahalanobis((2.0, 0.0), region(((4.0, 0.0), (0.0, 1.0)))) == pytest.approx(1.0)


@settings(max_examples=150)
@given(st.floats(0.5, 100), st.floats(0.5, 100), st.floats(-0.9, 0.9), st.floats(0.5, 4),
       st.floats(-300, 300), st.floats(-300, 300))
def test_mahalanobis_agrees_with_ellipse_membership(sx, sy, rho, z, px, py):
    c = rho * sx * sy
    reg = region(((sx * sx, c), (c, sy * sy)), z=z, mean=(10.0, -5.0))
    d = mahalanobis((px, py), reg)
    if abs(d - z) > 1e-9 * max(1.0, z):
        assert (d <= z) == point_in_ellipse((px, py), reg.ellipse)


def _rotate(pts, theta, about):
    c, s = math.cos(theta), math.sin(theta)
    d = pts - about
    return about + d @ np.array([[c, s], [-s, c]])


@settings(max_examples=50, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(0.1, 10), st.integers(0, 1000))
def test_fit_equivariance(theta, scale, seed):
    rng = np.random.default_rng(seed)
    pts = cloud(rng, 60, ((25.0, 6.0), (6.0, 4.0)), (500.0, 200.0))
    cfg = OvGenConfig()
    base = fit_ellipse(pts, cfg, 0.0).ellipse
    mu = pts.mean(axis=0)
    rot = fit_ellipse(_rotate(pts, theta, mu), cfg, 0.0).ellipse
    assert rot.semi_major == pytest.approx(base.semi_major, rel=1e-9)
    assert rot.semi_minor == pytest.approx(base.semi_minor, rel=1e-9)
    diff = wrap_angle(2 * (rot.rotation - base.rotation - theta)) / 2
    assert abs(diff) < 1e-9
    big = fit_ellipse(mu + scale * (pts - mu), cfg, 0.0).ellipse
    assert big.semi_major == pytest.approx(scale * base.semi_major, rel=1e-9)
    assert big.semi_minor == pytest.approx(scale * base.semi_minor, rel=1e-9)


# --------------------------------------------------------------------------
# validation and bloating
# --------------------------------------------------------------------------

def _ring(n, r):
    a = np.linspace(0, 2 * math.pi, n, endpoint=False)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


def test_validate_examples():
    cfg = OvGenConfig(inclusion=0.95)
    rng = np.random.default_rng(2)
    pts = cloud(rng, 200)
    reg = fit_ellipse(pts, cfg, 0.0)
    reg = region(reg.covariance, z=3.5, mean=reg.mean)
    assert validate_region(reg, pts, pts, cfg).passed
    far = validate_region(reg, pts, pts * 100, cfg)
    assert not far.passed and far.fraction == 0.0
    # constructed holdout with exactly 90% inside
    ident = region(((1.0, 0.0), (0.0, 1.0)), z=2.0)
    fit = _ring(40, 1.0)
    hold = np.vstack([_ring(90, 1.0), _ring(10, 10.0)])
    v = validate_region(ident, fit, hold, cfg)
    assert not v.passed and v.fraction == pytest.approx(0.90)
    assert v.threshold == pytest.approx(1.0)


def test_validate_requires_radius_to_reach_fit_percentile():
    cfg = OvGenConfig(inclusion=0.95)
    ident = region(((1.0, 0.0), (0.0, 1.0)), z=2.0)
    fit = np.vstack([_ring(10, 1.0), _ring(10, 3.0)])
    assert not validate_region(ident, fit, _ring(10, 1.0), cfg).passed


def test_gaussian_cloud_bloats_to_chi2_radius():
    # 2-D normal data: Mahalanobis radius is chi with 2 dof, so the 95% point is
    # sqrt(-2 ln 0.05) ~= 2.448 and the 1-D quantile (1.96) must be bloated
    cfg = OvGenConfig()
    rng = np.random.default_rng(3)
    reg = build_region(cloud(rng, 4000), cfg, rng)
    chi = math.sqrt(-2 * math.log(0.05))
    assert reg.z > Z95 + cfg.alpha0
    assert reg.z == pytest.approx(chi, abs=0.15)
    # z lies on the alpha grid
    k = (reg.z - Z95 - cfg.alpha0) / cfg.alpha_step
    assert abs(k - round(k)) < 1e-9


def test_validation_passes_at_alpha0_when_radius_suffices():
    cfg = OvGenConfig(inclusion=0.9)
    # points on a circle all sit at Mahalanobis radius sqrt(2) < 1.645 + alpha0
    rng = np.random.default_rng(0)
    pts = _ring(100, 1.0) + rng.normal(0, 1e-3, (100, 2))
    reg = build_region(pts, cfg, rng)
    assert reg.z == pytest.approx(cfg.base_z + cfg.alpha0)


def test_outliers_force_bloating():
    cfg = OvGenConfig()
    rng = np.random.default_rng(4)
    pts = np.vstack([cloud(rng, 90), cloud(rng, 10, mean=(30.0, 30.0))])
    reg = build_region(pts, cfg, rng)
    assert reg.z >= cfg.base_z + cfg.alpha0 + cfg.alpha_step - 1e-12


def test_exhaustion_raises():
    cfg = OvGenConfig(alpha_max_iters=0)
    rng = np.random.default_rng(5)
    with pytest.raises(ValidationExhausted):
        build_region(cloud(rng, 200), cfg, rng)
    with pytest.raises(OvGenError):
        build_region(cloud(rng, 20), OvGenConfig(), rng)


def test_alpha_monotone():
    rng = np.random.default_rng(6)
    pts = cloud(rng, 100, ((5.0, 1.0), (1.0, 2.0)))
    cfg = OvGenConfig()
    fit, hold = pts[:50], pts[50:]
    prev, passed_before = None, False
    for k in range(30):
        reg = fit_ellipse(fit, cfg, 0.1 * k)
        e = reg.ellipse
        if prev is not None:
            assert e.semi_major > prev.semi_major and e.semi_minor > prev.semi_minor
        ok = validate_region(reg, fit, hold, cfg).passed
        assert ok or not passed_before
        passed_before |= ok
        prev = e
    assert passed_before


def test_airborne_mask_excludes_landed_records():
    cfg = OvGenConfig()
    rng = np.random.default_rng(7)
    air = cloud(rng, 100) * 10
    window = np.stack([np.vstack([air[:50], np.full((50, 2), 1000.0)]),
                       np.vstack([air[50:], np.full((50, 2), 1000.0)])])
    mask = np.zeros((2, 100), dtype=bool)
    mask[:, :50] = True
    reg = build_region(window, cfg, rng, airborne=mask)
    assert np.hypot(*reg.mean) < 5.0


# --------------------------------------------------------------------------
# contracts
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def long_flight():
    route = Route.from_points([(0, 0), (6000, 0), (6000, 6390)], 0.0, 15.0)
    return route, simulate_route(route, SimConfig(seed=3))


def test_contract_structure(long_flight):
    route, records = long_flight
    c = build_contract(route, records, OvGenConfig(), seed=3, contract_id="x")
    assert len(c.ovs) == len(records)
    assert abs(len(c.ovs) - 14) <= 1
    assert all(len(ov.regions) == 6 for ov in c.ovs)
    assert c.ovs[0].start == route.departure_time
    assert c.duration == pytest.approx(60.0 * len(c.ovs))
    for prev, nxt in zip(c.ovs, c.ovs[1:]):
        assert prev.end == nxt.start
    for ov in c.ovs:
        for a, b in zip(ov.regions, ov.regions[1:]):
            assert a.t_end == b.t_start
        assert ov.regions[0].t_start == ov.start and ov.regions[-1].t_end == ov.end
    for _, eta in route.waypoints:
        assert any(ov.start <= eta <= ov.end for ov in c.ovs)


def test_per_region_streams_are_order_independent(long_flight):
    route, records = long_flight
    cfg = OvGenConfig()
    c = build_contract(route, records, cfg, seed=11)
    assert build_ov(records[5], cfg, 11) == c.ovs[5]
    a = region_rng(11, 5, 2).random(3)
    assert np.array_equal(a, region_rng(11, 5, 2).random(3))
    assert not np.array_equal(a, region_rng(11, 5, 3).random(3))


def test_single_segment_contract():
    route = Route.from_points([(0, 0), (600, 0)], 30.0, 15.0)
    recs = simulate_route(route, SimConfig())
    c = build_contract(route, recs, OvGenConfig())
    assert len(c.ovs) == 1 and c.duration == 60.0 and c.start == 30.0


def test_build_errors():
    route = Route.from_points([(0, 0), (600, 0)], 0.0, 15.0)
    with pytest.raises(OvGenError):
        build_contract(route, [], OvGenConfig())
    recs = simulate_route(route, SimConfig())
    with pytest.raises(OvGenError):
        build_contract(route, recs, OvGenConfig(t_e=7.0))
    with pytest.raises(ValueError):
        OvGenConfig(inclusion=1.0)
    with pytest.raises(ValueError):
        region(((1.0, 0.5), (0.0, 1.0)))
