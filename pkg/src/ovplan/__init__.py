"""Strategic deconfliction for small UAS: routes, operational volumes, contracts."""

from .airspace import AirspaceModel, ContractStore, load_airspace, load_fixture
from .flightsim import SimConfig, simulate_route
from .geometry import Ellipse, GeoPoint, LocalPoint, Polygon
from .ovgen import Contract, EllipseRegion, OperationalVolume, OvGenConfig, build_contract
from .router import NoRouteFound, Route, RouterConfig, plan

__version__ = "0.1.0"

__all__ = [
    "AirspaceModel", "ContractStore", "Contract", "Ellipse", "EllipseRegion", "GeoPoint",
    "LocalPoint", "NoRouteFound", "OperationalVolume", "OvGenConfig", "Polygon", "Route",
    "RouterConfig", "SimConfig", "build_contract", "load_airspace", "load_fixture", "plan",
    "simulate_route",
]
