import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gridtree.grid_model import Topology, build_z_paths
from gridtree.impedance_est import ZEstimate, distance_from_z

settings.register_profile(
    "gridtree", deadline=None, suppress_health_check=[HealthCheck.too_slow], print_blob=True
)
settings.load_profile("gridtree")


def chain3():
    """slack(1) - 2 - 3 with z12 = 1+1j, z23 = 2+1j."""
    return Topology({1: "slack", 2: "observed", 3: "observed"}, [(1, 2, 1 + 1j), (2, 3, 2 + 1j)])


def exact_distances(topo, magnitude=False):
    Z = build_z_paths(topo)
    obs = topo.observed
    idx = [topo.bus_order.index(b) for b in obs]
    mode = "magnitude" if magnitude else "plain"
    return distance_from_z(ZEstimate(Z[np.ix_(idx, idx)], obs, mode))


@pytest.fixture
def chain():
    return chain3()


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
