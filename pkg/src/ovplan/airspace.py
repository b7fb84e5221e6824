"""Airspace model, airspace file loader and the time-binned contract store."""

from __future__ import annotations

import itertools
import json
import math
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable

import numpy as np

from .geometry import (GeoPoint, GeometryError, LocalPoint, Polygon, point_in_polygon,
                       point_polygon_distance, project, unproject)

if TYPE_CHECKING:
    from .ovgen import Contract, OperationalVolume

DEFAULT_BIN_DURATION = 60.0


class AirspaceError(ValueError):
    """Invalid airspace document.  ``element`` names the offending item."""

    def __init__(self, message: str, element: str | None = None):
        super().__init__(f"{element}: {message}" if element else message)
        self.element = element


@dataclass
class AirspaceModel:
    origin: GeoPoint
    bounds: Polygon
    nfzs: list[Polygon] = field(default_factory=list)
    nfz_ids: list[str] = field(default_factory=list)
    vertiports: dict[str, LocalPoint] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if not self.nfz_ids:
            self.nfz_ids = [f"nfz-{i}" for i in range(len(self.nfzs))]

    def vertiport(self, vid: str) -> LocalPoint:
        try:
            return self.vertiports[vid]
        except KeyError:
            raise KeyError(f"unknown vertiport {vid!r}") from None

    def validate(self) -> None:
        if len(self.vertiports) < 2:
            raise AirspaceError("need at least 2 vertiports", "vertiports")
        for nid, poly in zip(self.nfz_ids, self.nfzs):
            if not all(point_in_polygon(v, self.bounds) for v in poly.vertices):
                raise AirspaceError("NFZ extends outside the operational bounds", nid)
        for vid, p in self.vertiports.items():
            if not point_in_polygon(p, self.bounds):
                raise AirspaceError("vertiport outside operational bounds", vid)
            for nid, poly in zip(self.nfz_ids, self.nfzs):
                if point_in_polygon(p, poly):
                    raise AirspaceError(f"vertiport lies inside {nid}", vid)

    def nfz_distance(self, p) -> float:
        if not self.nfzs:
            return math.inf
        return min(point_polygon_distance(p, z) for z in self.nfzs)


def _geo(obj: Any, where: str) -> GeoPoint:
    try:
        return GeoPoint(float(obj["lat"]), float(obj["lon"]), float(obj.get("alt", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise AirspaceError(f"bad coordinate {obj!r} ({exc})", where) from None


def _ring(obj: Any, origin: GeoPoint, where: str) -> Polygon:
    if not isinstance(obj, list) or len(obj) < 3:
        raise AirspaceError("ring must be a list of >= 3 points", where)
    pts = [project(_geo(p, where), origin) for p in obj]
    try:
        return Polygon(tuple(pts))
    except GeometryError as exc:
        raise AirspaceError(str(exc), where) from None


def load_airspace(document: str | bytes | dict | Path) -> AirspaceModel:
    """Parse an airspace JSON document (text, dict or path) into the local frame."""
    if isinstance(document, Path):
        document = document.read_text()
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise AirspaceError(f"not valid JSON: {exc}") from None
    if not isinstance(document, dict):
        raise AirspaceError("document must be a JSON object")
    for key in ("origin", "bounds", "vertiports"):
        if key not in document:
            raise AirspaceError("missing required key", key)
    origin = _geo(document["origin"], "origin")
    bounds = _ring(document["bounds"], origin, "bounds")
    nfzs, nfz_ids = [], []
    for i, z in enumerate(document.get("nfzs", [])):
        if not isinstance(z, dict) or "ring" not in z:
            raise AirspaceError("NFZ entry needs a 'ring'", f"nfzs[{i}]")
        nid = str(z.get("id", f"nfz-{i}"))
        nfzs.append(_ring(z["ring"], origin, nid))
        nfz_ids.append(nid)
    vertiports: dict[str, LocalPoint] = {}
    for i, v in enumerate(document["vertiports"]):
        if not isinstance(v, dict) or "id" not in v:
            raise AirspaceError("vertiport entry needs an 'id'", f"vertiports[{i}]")
        vid = str(v["id"])
        if vid in vertiports:
            raise AirspaceError("duplicate vertiport id", vid)
        vertiports[vid] = project(_geo(v, vid), origin)
    model = AirspaceModel(origin, bounds, nfzs, nfz_ids, vertiports, str(document.get("name", "")))
    model.validate()
    return model


def airspace_to_dict(model: AirspaceModel) -> dict:
    def ring(poly: Polygon):
        out = []
        for v in poly.vertices:
            g = unproject(v, model.origin)
            out.append({"lat": g.lat, "lon": g.lon})
        return out

    return {
        "name": model.name,
        "origin": {"lat": model.origin.lat, "lon": model.origin.lon},
        "bounds": ring(model.bounds),
        "nfzs": [{"id": nid, "ring": ring(z)} for nid, z in zip(model.nfz_ids, model.nfzs)],
        "vertiports": [
            {"id": vid, **{k: getattr(unproject(p, model.origin), k) for k in ("lat", "lon")}}
            for vid, p in model.vertiports.items()
        ],
    }


def fixture_path() -> Path:
    return Path(__file__).parent / "data" / "fixture_airspace.json"


def load_fixture() -> AirspaceModel:
    return load_airspace(fixture_path())


# --------------------------------------------------------------------------
# time-binned contract index
# --------------------------------------------------------------------------

@dataclass
class TimeBinIndex:
    bin_duration: float = DEFAULT_BIN_DURATION
    bins: dict[int, list[tuple[str, int]]] = field(default_factory=dict)

    def bin_range(self, start: float, end: float) -> range:
        return range(math.floor(start / self.bin_duration), math.floor(end / self.bin_duration) + 1)

    def add(self, contract_id: str, ov_index: int, start: float, end: float) -> None:
        for b in self.bin_range(start, end):
            self.bins.setdefault(b, []).append((contract_id, ov_index))

    def remove(self, contract_id: str) -> None:
        for b in list(self.bins):
            kept = [ref for ref in self.bins[b] if ref[0] != contract_id]
            if kept:
                self.bins[b] = kept
            else:
                del self.bins[b]

    def candidates(self, start: float, end: float) -> list[tuple[str, int]]:
        seen: dict[tuple[str, int], None] = {}
        for b in self.bin_range(start, end):
            for ref in self.bins.get(b, ()):
                seen.setdefault(ref, None)
        return list(seen)


@dataclass
class RegionTable:
    """Flattened view of every registered ellipse region, for vectorised queries."""

    centers: np.ndarray
    cos_r: np.ndarray
    sin_r: np.ndarray
    semi_a: np.ndarray
    semi_b: np.ndarray
    inv_cov: np.ndarray      # (M, 3): a, b, c of [[a, b], [b, c]]
    singular: np.ndarray
    t_start: np.ndarray
    t_end: np.ndarray
    refs: list[tuple[str, int, int]]
    bin_rows: dict[int, np.ndarray]
    bin_duration: float

    def aligned(self, t0: float, t1: float) -> np.ndarray:
        """Row indices of regions whose closed interval meets [t0, t1]."""
        b0 = math.floor(t0 / self.bin_duration)
        b1 = math.floor(t1 / self.bin_duration)
        parts = [self.bin_rows[b] for b in range(b0, b1 + 1) if b in self.bin_rows]
        if not parts:
            return np.empty(0, dtype=np.intp)
        rows = parts[0] if len(parts) == 1 else np.unique(np.concatenate(parts))
        keep = (self.t_start[rows] <= t1) & (self.t_end[rows] >= t0)
        return rows[keep]


class ContractStore:
    """Registered contracts plus their time-bin index.

    Writers take the lock for the whole insertion, so readers never see a
    half-registered contract.
    """

    def __init__(self, bin_duration: float = DEFAULT_BIN_DURATION):
        self.contracts: dict[str, Contract] = {}
        self.index = TimeBinIndex(bin_duration)
        self._lock = threading.RLock()
        self._counter = itertools.count(1)
        self._table: RegionTable | None = None

    def __len__(self) -> int:
        return len(self.contracts)

    def __iter__(self):
        return iter(list(self.contracts.values()))

    def _next_id(self) -> str:
        while True:
            cid = f"C{next(self._counter):04d}"
            if cid not in self.contracts:
                return cid

    def register(self, c: Contract) -> str:
        with self._lock:
            cid = c.id or self._next_id()
            if cid in self.contracts:
                raise ValueError(f"duplicate contract id {cid!r}")
            if cid != c.id:
                c = replace(c, id=cid)
            for k, ov in enumerate(c.ovs):
                self.index.add(cid, k, ov.start, ov.end)
            self.contracts[cid] = c
            self._table = None
            return cid

    def remove(self, contract_id: str) -> Contract:
        with self._lock:
            c = self.contracts.pop(contract_id)
            self.index.remove(contract_id)
            self._table = None
            return c

    def query_interval(self, t_start: float, t_end: float) -> list[tuple[str, OperationalVolume]]:
        if t_start > t_end:
            raise ValueError("t_start must be <= t_end")
        with self._lock:
            out = []
            for cid, k in self.index.candidates(t_start, t_end):
                ov = self.contracts[cid].ovs[k]
                if ov.start <= t_end and ov.end >= t_start:
                    out.append((cid, ov))
            return out

    def region_table(self) -> RegionTable:
        with self._lock:
            if self._table is None:
                self._table = _build_table(self.contracts.values(), self.index.bin_duration)
            return self._table


def register_contract(store: ContractStore, c: Contract) -> str:
    return store.register(c)


def query_interval(store: ContractStore, t_start: float, t_end: float):
    return store.query_interval(t_start, t_end)


def _build_table(contracts: Iterable[Contract], bin_duration: float) -> RegionTable:
    rows = []
    refs = []
    for c in contracts:
        for k, ov in enumerate(c.ovs):
            for j, reg in enumerate(ov.regions):
                e = reg.ellipse
                cov = np.asarray(reg.covariance, dtype=float)
                det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
                if det > 0:
                    inv = (cov[1, 1] / det, -cov[0, 1] / det, cov[0, 0] / det)
                    singular = False
                else:
                    inv, singular = (0.0, 0.0, 0.0), True
                rows.append((e.center.x, e.center.y, math.cos(e.rotation), math.sin(e.rotation),
                             e.semi_major, e.semi_minor, *inv, singular, reg.t_start, reg.t_end))
                refs.append((c.id, k, j))
    arr = np.array(rows, dtype=float).reshape(-1, 12)
    t0, t1 = arr[:, 10], arr[:, 11]
    buckets: dict[int, list[int]] = {}
    for i in range(len(arr)):
        for b in range(math.floor(t0[i] / bin_duration), math.floor(t1[i] / bin_duration) + 1):
            buckets.setdefault(b, []).append(i)
    return RegionTable(
        centers=arr[:, 0:2].copy(), cos_r=arr[:, 2].copy(), sin_r=arr[:, 3].copy(),
        semi_a=arr[:, 4].copy(), semi_b=arr[:, 5].copy(), inv_cov=arr[:, 6:9].copy(),
        singular=arr[:, 9].astype(bool), t_start=t0.copy(), t_end=t1.copy(), refs=refs,
        bin_rows={b: np.array(v, dtype=np.intp) for b, v in buckets.items()},
        bin_duration=bin_duration,
    )
