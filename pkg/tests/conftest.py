from __future__ import annotations

import math

import numpy as np
import pytest

from ovplan import ContractStore, load_fixture
from ovplan.geometry import Polygon
from ovplan.flightsim import SimConfig
from ovplan.ovgen import OvGenConfig
from ovplan.router import RouterConfig, plan
from ovplan.verify import contract_for_route


def star_polygon(rng: np.random.Generator, n: int, center=(0.0, 0.0), r_lo=0.3, r_hi=1.0,
                 scale: float = 1.0) -> list[tuple[float, float]]:
    """Random star-shaped (hence simple, usually concave) polygon."""
    angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    # keep angles distinct so no two vertices share a ray
    angles += np.arange(n) * 1e-6
    radii = rng.uniform(r_lo, r_hi, n) * scale
    return [(center[0] + r * math.cos(a), center[1] + r * math.sin(a)) for a, r in zip(angles, radii)]


def c_polygon() -> Polygon:
    """C shape opening to the right: outer 0..10 square, notch x in [3, 10], y in [3, 7]."""
    return Polygon(((0, 0), (10, 0), (10, 3), (3, 3), (3, 7), (10, 7), (10, 10), (0, 10)))


UNIT_SQUARE = Polygon(((0, 0), (1, 0), (1, 1), (0, 1)))


@pytest.fixture(scope="session")
def airspace():
    return load_fixture()


class ContractCache:
    """Fixture contracts planned on an empty store, built once per session."""

    def __init__(self, model):
        self.model = model
        self._cache = {}

    def get(self, a: str, b: str, depart: float = 0.0, seed: int = 0, speed: float = 15.0):
        key = (a, b, depart, seed, speed)
        if key not in self._cache:
            route = plan(self.model, None, a, b, depart, RouterConfig(v_cruise=speed))
            self._cache[key] = contract_for_route(route, SimConfig(), OvGenConfig(), seed,
                                                  contract_id=f"{a}-{b}-{depart:g}")
        return self._cache[key]


@pytest.fixture(scope="session")
def contracts(airspace):
    return ContractCache(airspace)


@pytest.fixture
def empty_store():
    return ContractStore()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
