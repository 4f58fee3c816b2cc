import numpy as np
import pytest

from triplewell.geodesics import pairwise_costs
from triplewell.junction import surface_tensions
from triplewell.partitions import solve_problem1, three_arcs
from triplewell.potential import symmetric_well
from triplewell.solver import disc_spec, network_field, relax


@pytest.fixture(scope="session")
def pot():
    return symmetric_well()


@pytest.fixture(scope="session")
def costs(pot):
    return tuple(pairwise_costs(pot))


@pytest.fixture(scope="session")
def sym_network(costs):
    b = three_arcs()
    return b, surface_tensions(*costs), solve_problem1(b, surface_tensions(*costs))


@pytest.fixture(scope="session")
def junction_field(pot, sym_network):
    """Relaxed triple-junction Dirichlet field, 256^2 unit disc, R = 32."""
    b, _, net = sym_network
    f0 = network_field(net, b, pot, 32.0, disc_spec(256))
    return relax(f0, pot, 32.0, tol=1e-7)


def constant_field(grid, well, bc="neumann"):
    from triplewell.solver import Field

    return Field(np.broadcast_to(np.asarray(well, float), grid.shape + (2,)).copy(), grid, bc)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0].split()[0])):
            terminalreporter.write_line(line)
