import numpy as np
import pytest

from permnet import PhysicalConstants, PoreNetwork
from permnet.network import NUM_EDGE_FEATURES, NUM_NODE_FEATURES

UNIT_PHYSICAL = PhysicalConstants(
    viscosity=1.0, domain_length=1.0, cross_section_area=1.0,
    inlet_pressure=1.0, outlet_pressure=0.0)


def make_network(endpoints, inlet, outlet, physical=UNIT_PHYSICAL,
                 target=None, num_pores=None):
    """Hand-built network with placeholder (positive) geometric features."""
    ep = np.asarray(endpoints, dtype=np.int64).reshape(-1, 2)
    n = num_pores if num_pores is not None else int(ep.max()) + 1
    t = len(ep)
    node = np.full((n, NUM_NODE_FEATURES), 0.1)
    edge = np.full((t, NUM_EDGE_FEATURES), 0.1)
    return PoreNetwork(
        num_pores=n, num_throats=t, throat_endpoints=ep,
        node_features=node, edge_features=edge,
        inlet_pores=np.asarray(inlet, dtype=np.int64),
        outlet_pores=np.asarray(outlet, dtype=np.int64),
        physical=physical, target_permeability=target)


@pytest.fixture
def chain3():
    """Inlet(0) -- g1 -- internal(1) -- g2 -- outlet(2)."""
    return make_network([(0, 1), (1, 2)], inlet=[0], outlet=[2])


@pytest.fixture
def parallel2():
    """Two throats directly joining the inlet pore to the outlet pore."""
    return make_network([(0, 1), (0, 1)], inlet=[0], outlet=[1])
