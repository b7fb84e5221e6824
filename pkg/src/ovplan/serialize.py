"""JSON, GeoJSON and CSV exchange formats.

Positions are written both as local x/y (exact floats, used on load) and as
lat/lon about the airspace origin, so every file round-trips without loss
and still opens in ordinary mapping tools.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Iterable

from .airspace import ContractStore
from .flightsim import SegmentRecord
from .geometry import GeoPoint, LocalPoint, ellipse_polygon, project, unproject
from .ovgen import Contract, EllipseRegion, OperationalVolume
from .router import Route


class FormatError(ValueError):
    pass


def dumps(obj: Any) -> str:
    """Canonical JSON text: sorted keys, fixed indent, trailing newline."""
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def _point(p, origin: GeoPoint) -> dict:
    g = unproject(p, origin)
    return {"x": float(p[0]), "y": float(p[1]), "lat": g.lat, "lon": g.lon}


def _read_point(d: dict, origin: GeoPoint | None, where: str) -> LocalPoint:
    try:
        if "x" in d and "y" in d:
            return LocalPoint(float(d["x"]), float(d["y"]))
        if origin is None:
            raise FormatError(f"{where}: lat/lon given but no origin to project about")
        return project(GeoPoint(float(d["lat"]), float(d["lon"])), origin)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{where}: bad point {d!r}") from exc


def _origin(d: dict | None) -> GeoPoint | None:
    if d is None:
        return None
    return GeoPoint(float(d["lat"]), float(d["lon"]))


# --------------------------------------------------------------------------
# routes and contracts
# --------------------------------------------------------------------------

def route_to_dict(route: Route, origin: GeoPoint) -> dict:
    return {
        "origin": {"lat": origin.lat, "lon": origin.lon},
        "from": route.origin_id,
        "to": route.destination_id,
        "departure_time": route.departure_time,
        "v_cruise": route.v_cruise,
        "altitude": route.altitude,
        "total_length": route.total_length,
        "waypoints": [{**_point(p, origin), "eta": eta} for p, eta in route.waypoints],
    }


def route_from_dict(d: dict, origin: GeoPoint | None = None) -> Route:
    try:
        origin = _origin(d.get("origin")) or origin
        pts = [_read_point(w, origin, f"waypoint {i}") for i, w in enumerate(d["waypoints"])]
        route = Route.from_points(pts, float(d["departure_time"]), float(d["v_cruise"]),
                                  str(d.get("from", "")), str(d.get("to", "")),
                                  float(d.get("altitude", 120.0)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed route: {exc}") from exc
    if len(route.waypoints) < 2:
        raise FormatError("route needs at least 2 waypoints")
    return route


def region_to_dict(reg: EllipseRegion, origin: GeoPoint) -> dict:
    return {
        "mean": _point(reg.mean, origin),
        "covariance": [list(row) for row in reg.covariance],
        "z": reg.z,
        "t_start": reg.t_start,
        "t_end": reg.t_end,
        "regularized": reg.regularized,
    }


def contract_to_dict(c: Contract, origin: GeoPoint) -> dict:
    return {
        "id": c.id,
        "departure_time": c.departure_time,
        "v_cruise": c.route.v_cruise,
        "speed_band": list(c.speed_band),
        "route": route_to_dict(c.route, origin),
        "ovs": [{"start": ov.start, "end": ov.end,
                 "regions": [region_to_dict(r, origin) for r in ov.regions]} for ov in c.ovs],
    }


def contract_from_dict(d: dict, origin: GeoPoint | None = None) -> Contract:
    try:
        route = route_from_dict(d["route"], origin)
        origin = _origin(d["route"].get("origin")) or origin
        ovs = []
        for k, ov in enumerate(d["ovs"]):
            regions = tuple(
                EllipseRegion(_read_point(r["mean"], origin, f"ov {k} region {j}"),
                              tuple(tuple(float(v) for v in row) for row in r["covariance"]),
                              float(r["z"]), float(r["t_start"]), float(r["t_end"]),
                              bool(r.get("regularized", False)))
                for j, r in enumerate(ov["regions"]))
            ovs.append(OperationalVolume(regions, float(ov["start"]), float(ov["end"])))
        band = d.get("speed_band", (13.0, 17.0))
        return Contract(str(d["id"]), route, tuple(ovs), float(d["departure_time"]),
                        (float(band[0]), float(band[1])))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed contract: {exc}") from exc


def store_to_dict(store: ContractStore, origin: GeoPoint) -> dict:
    return {"origin": {"lat": origin.lat, "lon": origin.lon},
            "contracts": [contract_to_dict(c, origin) for c in sorted(store, key=lambda c: c.id)]}


def store_from_dict(d: dict, origin: GeoPoint | None = None) -> ContractStore:
    origin = _origin(d.get("origin")) or origin
    store = ContractStore()
    for c in d.get("contracts", []):
        store.register(contract_from_dict(c, origin))
    return store


def read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_json(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


# --------------------------------------------------------------------------
# GeoJSON
# --------------------------------------------------------------------------

def _lonlat(p, origin: GeoPoint) -> list[float]:
    g = unproject(p, origin)
    return [round(g.lon, 9), round(g.lat, 9)]


def route_feature(route: Route, origin: GeoPoint, **props) -> dict:
    return {"type": "Feature",
            "geometry": {"type": "LineString",
                         "coordinates": [_lonlat(p, origin) for p, _ in route.waypoints]},
            "properties": {"kind": "route", "from": route.origin_id, "to": route.destination_id,
                           "length_m": route.total_length, **props}}


def contract_geojson(c: Contract, origin: GeoPoint, n: int = 64) -> dict:
    """Route LineString plus one closed n-gon per derived ellipse."""
    feats = [route_feature(c.route, origin, contract=c.id)]
    for k, j, reg in c.regions():
        ring = [_lonlat(p, origin) for p in ellipse_polygon(reg.ellipse, n)]
        ring.append(ring[0])
        feats.append({"type": "Feature",
                      "geometry": {"type": "Polygon", "coordinates": [ring]},
                      "properties": {"kind": "region", "contract": c.id, "ov": k, "region": j,
                                     "t_start": reg.t_start, "t_end": reg.t_end, "z": reg.z}})
    return {"type": "FeatureCollection", "features": feats}


def airspace_geojson(model) -> dict:
    feats = []

    def ring(poly):
        pts = [_lonlat(p, model.origin) for p in poly.vertices]
        return [pts + [pts[0]]]

    feats.append({"type": "Feature", "geometry": {"type": "Polygon", "coordinates": ring(model.bounds)},
                  "properties": {"kind": "bounds"}})
    for nid, z in zip(model.nfz_ids, model.nfzs):
        feats.append({"type": "Feature", "geometry": {"type": "Polygon", "coordinates": ring(z)},
                      "properties": {"kind": "nfz", "id": nid}})
    for vid, p in sorted(model.vertiports.items()):
        feats.append({"type": "Feature",
                      "geometry": {"type": "Point", "coordinates": _lonlat(p, model.origin)},
                      "properties": {"kind": "vertiport", "id": vid}})
    return {"type": "FeatureCollection", "features": feats}


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

TRAJECTORY_COLUMNS = ["segment", "t", "aircraft_id", "lat", "lon", "alt", "waypoint", "speed"]


def trajectory_csv(records: Iterable[SegmentRecord], origin: GeoPoint) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    for rec in records:
        for ti, t in enumerate(rec.times):
            for i in range(rec.n_aircraft):
                g = unproject(rec.positions[ti, i], origin)
                w.writerow([rec.segment_index, repr(float(t)), i, f"{g.lat:.9f}", f"{g.lon:.9f}",
                            rec.alt, int(rec.waypoints[ti, i]), repr(float(rec.speeds[ti, i]))])
    return buf.getvalue()


SCHEDULE_COLUMNS = ["contract_id", "origin", "destination", "requested_departure",
                    "granted_departure", "v_cruise", "plan_wall_time_s", "route_length_m", "n_ovs"]


def schedule_csv(schedule, include_wall_time: bool = True) -> str:
    """Schedule log; wall-times may be blanked for byte-stable output."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCHEDULE_COLUMNS)
    for e in schedule:
        wall = f"{e.plan_time:.3f}" if include_wall_time else ""
        w.writerow([e.contract_id, e.origin, e.destination, f"{e.requested:.0f}",
                    f"{e.granted:.0f}", f"{e.v_cruise:.3f}", wall, f"{e.route_length:.3f}",
                    e.n_ovs])
    return buf.getvalue()
