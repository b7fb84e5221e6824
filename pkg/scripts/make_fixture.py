"""Regenerate src/ovplan/data/fixture_airspace.json.

The mock airspace is drawn in local meters and written as lat/lon about a
fixed origin.  Ten vertiports, six concave no-fly zones.
"""

from __future__ import annotations

import json
from pathlib import Path

from ovplan.geometry import GeoPoint, unproject

ORIGIN = GeoPoint(50.0, 5.0)

BOUNDS = [(-7500, -6500), (6500, -6500), (7500, -5500), (7500, 6500), (-6500, 6500), (-7500, 5500)]

VERTIPORTS = {
    "0": (-6200, 4800),
    "1": (800, 5600),
    "2": (2300, -2400),
    "3": (6400, 5200),
    "4": (6300, -5400),
    "5": (-1200, -5700),
    "6": (-6500, -3600),
    "7": (-3000, 1000),
    "8": (3100, 2300),
    "9": (6600, 600),
}


def u_shape(x0, y0, w, h, t, opening="north"):
    """U outline with arm thickness t; opening on the named side."""
    pts = [(0, 0), (w, 0), (w, h), (w - t, h), (w - t, t), (t, t), (t, h), (0, h)]
    if opening == "south":
        pts = [(x, h - y) for x, y in pts]
    elif opening == "east":
        pts = [(y * w / h, x * h / w) for x, y in pts]
        pts = [(w - x, y) for x, y in pts]
    elif opening == "west":
        pts = [(y * w / h, x * h / w) for x, y in pts]
    return [(x0 + x, y0 + y) for x, y in pts]


NFZS = {
    # U opening north-east of vertiport 0
    "nfz-a": u_shape(-4300, 2500, 1700, 1500, 400, "north"),
    # L across the middle
    "nfz-b": [(-1100, -200), (1300, -200), (1300, 300), (-600, 300), (-600, 2300), (-1100, 2300)],
    # C opening west, south of vertiport 3
    "nfz-c": u_shape(3300, 3100, 1700, 1700, 400, "west"),
    # chevron pointing east between 8/9 and 2/4
    "nfz-d": [(3300, -2000), (5200, -800), (3300, 400), (3300, -150), (4300, -800), (3300, -1450)],
    # T south-west
    "nfz-e": [(-5000, -2000), (-2600, -2000), (-2600, -1550), (-3550, -1550), (-3550, 0),
              (-4050, 0), (-4050, -1550), (-5000, -1550)],
    # U opening south, above vertiport 5
    "nfz-f": u_shape(-200, -4900, 2400, 1500, 450, "south"),
}


SCALE = 1.4


def _scaled(ring, k=SCALE):
    cx = sum(x for x, _ in ring) / len(ring)
    cy = sum(y for _, y in ring) / len(ring)
    return [(round(cx + k * (x - cx)), round(cy + k * (y - cy))) for x, y in ring]


def to_geo(p):
    g = unproject(p, ORIGIN)
    return {"lat": round(g.lat, 9), "lon": round(g.lon, 9)}


def build() -> dict:
    return {
        "name": "mock-10-vertiport",
        "origin": {"lat": ORIGIN.lat, "lon": ORIGIN.lon},
        "bounds": [to_geo(p) for p in BOUNDS],
        "nfzs": [{"id": k, "ring": [to_geo(p) for p in _scaled(v)]} for k, v in NFZS.items()],
        "vertiports": [{"id": k, **to_geo(v)} for k, v in VERTIPORTS.items()],
    }


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "ovplan" / "data" / "fixture_airspace.json"
    out.write_text(json.dumps(build(), indent=1) + "\n")
    print(f"wrote {out}")
