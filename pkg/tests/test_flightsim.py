"""Point-mass Monte-Carlo fleet simulation."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovplan.flightsim import (Fleet, SegmentRecord, SimConfig, SimulationError, init_fleet,
                              largest_remainder, nominal_segment_count, reinject, run_segment,
                              simulate_route, step)
from ovplan.router import Route


def straight(length: float = 3000.0, v: float = 15.0, dep: float = 0.0) -> Route:
    return Route.from_points([(0, 0), (length / 2, 0), (length, 0)], dep, v)


def bent() -> Route:
    return Route.from_points([(0, 0), (1500, 0), (1500, 1500), (3000, 2000)], 0.0, 15.0)


def record_with(waypoints, positions, arrived=None) -> SegmentRecord:
    wp = np.asarray(waypoints)[None]
    pos = np.asarray(positions, dtype=float)[None]
    n = wp.shape[1]
    arr = np.zeros((1, n), dtype=bool) if arrived is None else np.asarray(arrived)[None]
    return SegmentRecord(0, np.array([60.0]), pos, wp, np.full((1, n), 15.0), arr)


# --------------------------------------------------------------------------
# initialisation and kinematics
# --------------------------------------------------------------------------

def test_init_fleet_within_radius_and_band():
    cfg = SimConfig(n_aircraft=1000)
    fleet = init_fleet(straight(), cfg, np.random.default_rng(0))
    assert len(fleet) == 1000
    assert np.all(np.hypot(*fleet.positions.T) <= cfg.r0)
    assert np.all((fleet.speeds >= 13) & (fleet.speeds <= 17))
    assert fleet.speeds.mean() == pytest.approx(15.0, abs=0.2)
    assert np.all(fleet.waypoint == 1)


def test_init_fleet_seeded():
    cfg = SimConfig()
    a = init_fleet(straight(), cfg, np.random.default_rng(4))
    b = init_fleet(straight(), cfg, np.random.default_rng(4))
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.speeds, b.speeds)


def fleet_of(points, speeds, wps) -> Fleet:
    return Fleet(np.asarray(points, dtype=float), np.asarray(speeds, dtype=float),
                 np.asarray(wps, dtype=int))


def test_step_advances_along_bearing():
    route = Route.from_points([(0, 0), (100, 0), (300, 0)], 0.0, 15.0)
    cfg = SimConfig(capture_radius=10.0)
    f = fleet_of([[0.0, 0.0]], [15.0], [1])
    out = step(f, route, cfg)
    assert out.positions[0] == pytest.approx([15.0, 0.0])
    assert out.waypoint[0] == 1
    assert f.positions[0, 0] == 0.0


def test_step_switches_waypoint_inside_capture_radius():
    route = Route.from_points([(0, 0), (100, 0), (100, 300)], 0.0, 15.0)
    cfg = SimConfig(capture_radius=100.0)
    f = fleet_of([[50.0, 0.0]], [15.0], [1])
    out = step(f, route, cfg)
    assert out.waypoint[0] == 2
    # now heading for (100, 300)
    d = out.positions[0] - f.positions[0]
    assert math.hypot(*d) == pytest.approx(15.0)


def test_terminal_hold():
    route = Route.from_points([(0, 0), (100, 0)], 0.0, 15.0)
    cfg = SimConfig()
    f = fleet_of([[100.0, 0.0], [100.0, 0.0]], [15.0, 14.0], [1, 1])
    out = step(f, route, cfg)
    assert np.array_equal(out.positions, f.positions)


def test_run_segment_slices():
    cfg = SimConfig(n_aircraft=20)
    route = straight()
    fleet = init_fleet(route, cfg, np.random.default_rng(1))
    start = fleet.positions.copy()
    rec = run_segment(fleet, route, cfg)
    assert rec.positions.shape == (61, 20, 2)
    assert np.array_equal(rec.positions[0], start)
    assert rec.times[0] == 0.0 and rec.times[-1] == 60.0
    assert np.array_equal(fleet.positions, rec.positions[-1])
    assert len(rec.states) == 61 and all(len(v) == 20 for v in rec.states.values())


def test_run_segment_zero_length_remaining():
    route = Route.from_points([(0, 0), (100, 0)], 0.0, 15.0)
    cfg = SimConfig(n_aircraft=3)
    fleet = fleet_of([[100.0, 0.0]] * 3, [15.0] * 3, [1] * 3)
    rec = run_segment(fleet, route, cfg)
    assert np.all(rec.positions == rec.positions[0])
    assert rec.arrived.all()


def test_per_step_displacement_is_v_dt():
    route = bent()
    cfg = SimConfig(n_aircraft=30, capture_radius=60.0)
    fleet = init_fleet(route, cfg, np.random.default_rng(2))
    rec = run_segment(fleet, route, cfg)
    step_len = np.hypot(*np.diff(rec.positions, axis=0).transpose(2, 0, 1))
    moving = ~rec.arrived[1:]
    # terminal steps may be shorter (snap onto the final waypoint)
    assert np.allclose(step_len[moving], rec.speeds[1:][moving] * cfg.dt)


# --------------------------------------------------------------------------
# re-injection
# --------------------------------------------------------------------------

def test_reinject_matches_histogram_exactly():
    wps = [1] * 25 + [2] * 71 + [3] * 4
    rng = np.random.default_rng(0)
    pos = rng.normal(0, 50, (100, 2))
    route = Route.from_points([(0, 0), (100, 0), (200, 0), (300, 0)], 0.0, 15.0)
    fleet = reinject(record_with(wps, pos), route, SimConfig(), rng)
    assert np.bincount(fleet.waypoint, minlength=4)[1:].tolist() == [25, 71, 4]


def test_reinject_single_waypoint_and_bootstrap():
    rng = np.random.default_rng(1)
    pos = rng.normal(0, 50, (100, 2))
    route = Route.from_points([(0, 0), (100, 0), (200, 0)], 0.0, 15.0)
    fleet = reinject(record_with([2] * 100, pos), route, SimConfig(), rng)
    assert np.all(fleet.waypoint == 2)
    exact = reinject(record_with([2] * 100, pos), route, SimConfig(jitter=0.0), rng)
    src = {tuple(p) for p in pos}
    assert all(tuple(p) in src for p in exact.positions)


def test_reinject_keeps_arrived_on_the_pad():
    route = Route.from_points([(0, 0), (100, 0)], 0.0, 15.0)
    pos = [[100.0, 0.0]] * 50 + [[50.0, 0.0]] * 50
    arrived = [True] * 50 + [False] * 50
    fleet = reinject(record_with([1] * 100, pos, arrived), route, SimConfig(),
                     np.random.default_rng(0))
    assert (np.all(fleet.positions == [100.0, 0.0], axis=1)).sum() == 50


@given(st.lists(st.integers(0, 50), min_size=1, max_size=8).filter(lambda w: sum(w) > 0),
       st.integers(1, 300))
def test_largest_remainder_exact_total(weights, total):
    counts = largest_remainder(np.array(weights), total)
    assert counts.sum() == total
    quota = np.array(weights) / sum(weights) * total
    assert np.all(np.abs(counts - quota) < 1.0)


# --------------------------------------------------------------------------
# whole routes
# --------------------------------------------------------------------------

def test_segment_count_for_826_s_flight():
    route = straight(826 * 15.0)
    cfg = SimConfig()
    assert nominal_segment_count(route, cfg) == 14
    recs = simulate_route(route, cfg)
    assert abs(len(recs) - 14) <= 1


def test_short_hop_segments():
    # 900 m at 15 m/s is one nominal segment; the slowest aircraft (13 m/s) need a second
    hop = Route.from_points([(0, 0), (900, 0)], 0.0, 15.0)
    assert nominal_segment_count(hop, SimConfig()) == 1
    assert len(simulate_route(hop, SimConfig())) in (1, 2)
    # a hop every aircraft completes inside t_d is a single segment
    assert len(simulate_route(Route.from_points([(0, 0), (700, 0)], 0.0, 15.0), SimConfig())) == 1


def test_non_termination_guard():
    # a fleet far slower than planned cannot arrive within 4x the nominal time
    route = straight(3000.0, v=15.0)
    cfg = SimConfig(speed_low=1.0, speed_high=1.5)
    with pytest.raises(SimulationError):
        simulate_route(route, cfg)


def test_simulation_invariants_and_determinism():
    route = bent()
    cfg = SimConfig(n_aircraft=40, seed=9)
    a = simulate_route(route, cfg)
    b = simulate_route(route, cfg)
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.positions, rb.positions)
        assert np.array_equal(ra.speeds, rb.speeds)
        # fleet size is constant and waypoints never decrease within a segment
        assert ra.positions.shape[1] == 40
        assert np.all(np.diff(ra.waypoints, axis=0) >= 0)
        assert np.all(ra.speeds > 0)
    # segments tile time contiguously
    for prev, nxt in zip(a, a[1:]):
        assert prev.times[-1] == nxt.times[0]


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_spread_never_collapses(seed):
    route = bent()
    cfg = SimConfig(n_aircraft=30, seed=seed)
    for rec in simulate_route(route, cfg):
        air = ~rec.arrived[0]
        if air.sum() >= 2:
            pts = rec.positions[0][air]
            assert np.ptp(pts[:, 0]) + np.ptp(pts[:, 1]) > 0


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(n_aircraft=1)
    with pytest.raises(ValueError):
        SimConfig(dt=2.0, t_d=1.0)
    with pytest.raises(ValueError):
        SimConfig(speed_low=20.0, speed_high=10.0)
    with pytest.raises(ValueError):
        SimConfig(dt=7.0, t_d=60.0)
    assert replace(SimConfig(), dt=0.5).steps_per_segment == 120
