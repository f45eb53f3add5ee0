import numpy as np
import pytest

from permnet import (SolverError, ValidationError, analytic_conductance,
                     assemble, generate_synthetic, solve)
from permnet.network import truth_conductance
from permnet import solver

from conftest import make_network


def _forward(net, g):
    system = assemble(net, np.asarray(g, dtype=float))
    return solve(system, net, np.asarray(g, dtype=float))


# ---------------------------------------------------------------------------
# Hand-solved micro-networks (series / parallel Kirchhoff analysis)

def test_series_chain_oracle(chain3):
    # A = [g1+g2], b = [g1*P_in]; x1 = g1/(g1+g2); Q = g1*g2/(g1+g2)
    sol = _forward(chain3, [2.0, 2.0])
    assert abs(sol.pressures[1] - 0.5) < 1e-12
    assert abs(sol.inlet_flow - 1.0) < 1e-12
    assert abs(sol.permeability - 1.0) < 1e-12  # c = 1 here


def test_series_chain_general(chain3):
    g1, g2 = 3.0, 7.0
    sol = _forward(chain3, [g1, g2])
    assert abs(sol.inlet_flow - g1 * g2 / (g1 + g2)) < 1e-12 * sol.inlet_flow
    assert abs(sol.pressures[1] - g1 / (g1 + g2)) < 1e-12


def test_parallel_oracle(parallel2):
    # No internal pores; Q = dP * (g1 + g2) through the direct throats.
    sol = _forward(parallel2, [3.0, 5.0])
    assert abs(sol.inlet_flow - 8.0) < 1e-12 * 8.0
    assert abs(sol.permeability - 8.0) < 1e-12 * 8.0


def test_permeability_is_darcy_factor_times_flow():
    net = make_network([(0, 1), (1, 2)], inlet=[0], outlet=[2])
    import dataclasses
    phys = dataclasses.replace(net.physical, viscosity=1e-3,
                               domain_length=2.0, cross_section_area=4.0,
                               inlet_pressure=5.0, outlet_pressure=1.0)
    net = dataclasses.replace(net, physical=phys)
    sol = _forward(net, [2.0, 2.0])
    c = 1e-3 * 2.0 / (4.0 * 4.0)
    assert sol.darcy_factor == c
    assert sol.permeability == c * sol.inlet_flow


# ---------------------------------------------------------------------------
# Independent dense oracle on a random network

def _dense_reference(net, g):
    """Naive dense assembly + solve, written independently of the solver."""
    n = net.num_pores
    A = np.zeros((n, n))
    for (p, q), gi in zip(net.throat_endpoints, g):
        A[p, p] += gi
        A[q, q] += gi
        A[p, q] -= gi
        A[q, p] -= gi
    x = np.zeros(n)
    x[net.inlet_pores] = net.physical.inlet_pressure
    x[net.outlet_pores] = net.physical.outlet_pressure
    free = net.internal_mask()
    rhs = -(A[np.ix_(free, ~free)] @ x[~free])
    x[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
    q_in = 0.0
    inlet = set(net.inlet_pores.tolist())
    for (p, q), gi in zip(net.throat_endpoints, g):
        if p in inlet and q in inlet:
            continue
        if p in inlet:
            q_in += gi * (x[p] - x[q])
        elif q in inlet:
            q_in += gi * (x[q] - x[p])
    return x, q_in


def test_matches_dense_reference():
    rng = np.random.default_rng(1)
    for seed in (0, 1, 2):
        net = generate_synthetic(seed, 35, 4.0)
        g = np.exp(rng.normal(0, 0.5, net.num_throats))
        sol = _forward(net, g)
        x_ref, q_ref = _dense_reference(net, g)
        assert np.allclose(sol.pressures, x_ref, rtol=1e-10, atol=1e-12)
        assert abs(sol.inlet_flow - q_ref) < 1e-10 * abs(q_ref)


# ---------------------------------------------------------------------------
# Physical invariants

def test_homogeneity():
    net = generate_synthetic(3, 30, 4.0)
    g = truth_conductance(net, 9)
    k1 = _forward(net, g).permeability
    k2 = _forward(net, 3.5 * g).permeability
    assert abs(k2 - 3.5 * k1) < 1e-12 * abs(k2)


def test_maximum_principle():
    net = generate_synthetic(6, 60, 4.0)
    g = truth_conductance(net, 10)
    sol = _forward(net, g)
    lo = net.physical.outlet_pressure
    hi = net.physical.inlet_pressure
    assert np.all(sol.pressures >= lo - 1e-12)
    assert np.all(sol.pressures <= hi + 1e-12)


def test_mass_balance_at_internal_pores():
    net = generate_synthetic(8, 60, 4.0)
    g = truth_conductance(net, 11)
    sol = _forward(net, g)
    q = solver.throat_flows(net, sol.pressures, g)
    imbalance = np.zeros(net.num_pores)
    np.add.at(imbalance, net.throat_endpoints[:, 0], -q)
    np.add.at(imbalance, net.throat_endpoints[:, 1], q)
    scale = np.abs(q).max()
    assert np.abs(imbalance[net.internal_mask()]).max() < 1e-9 * scale


def test_pressure_drop_invariance():
    # Scaling dP scales Q proportionally; c absorbs it, so K is unchanged.
    import dataclasses
    net = generate_synthetic(12, 30, 4.0)
    g = truth_conductance(net, 12)
    k1 = _forward(net, g).permeability
    phys = dataclasses.replace(net.physical, inlet_pressure=250.0)
    k2 = _forward(dataclasses.replace(net, physical=phys), g).permeability
    assert abs(k2 - k1) < 1e-12 * abs(k1)


# ---------------------------------------------------------------------------
# Q_in throat bookkeeping

def test_inlet_inlet_throat_excluded():
    # 0,1 inlets, 2 internal, 3 outlet; throat (0,1) must not enter Q_in.
    net = make_network([(0, 1), (0, 2), (1, 2), (2, 3)],
                       inlet=[0, 1], outlet=[3])
    system = assemble(net, np.ones(4))
    assert 0 not in system.inlet_throats.tolist()
    assert sorted(system.inlet_throats.tolist()) == [1, 2]


def test_direct_inlet_outlet_throat_included():
    net = make_network([(0, 2), (0, 1), (1, 2)], inlet=[0], outlet=[2])
    system = assemble(net, np.ones(3))
    assert 0 in system.inlet_throats.tolist()


def test_inlet_sign_orientation():
    # Sign +1 when p1 is the inlet endpoint, -1 when p2 is.
    net = make_network([(0, 1), (2, 0)], inlet=[0], outlet=[2],
                       num_pores=3)
    system = assemble(net, np.ones(2))
    signs = dict(zip(system.inlet_throats.tolist(),
                     system.inlet_signs.tolist()))
    assert signs[0] == 1.0
    assert signs[1] == -1.0


# ---------------------------------------------------------------------------
# Analytic conductance

def test_analytic_conductance_column_and_scale():
    net = generate_synthetic(1, 20, 4.0)
    g = analytic_conductance(net, "cones-cylinders")
    assert np.array_equal(g, net.edge_features[:, 7] / 1e-3)
    g2 = analytic_conductance(net, "cubes-cuboids")
    assert np.array_equal(g2, net.edge_features[:, 9] / 1e-3)


def test_analytic_conductance_unknown_shape():
    net = generate_synthetic(1, 20, 4.0)
    with pytest.raises(ValidationError, match="unknown shape"):
        analytic_conductance(net, "spheres")


# ---------------------------------------------------------------------------
# Error handling and instrumentation

def test_assemble_rejects_nonpositive_conductance(chain3):
    with pytest.raises(ValidationError, match="throat 1"):
        assemble(chain3, np.array([1.0, 0.0]))
    with pytest.raises(ValidationError, match="throat 0"):
        assemble(chain3, np.array([-1.0, 1.0]))
    with pytest.raises(ValidationError, match="throat 0"):
        assemble(chain3, np.array([np.nan, 1.0]))


def test_assemble_rejects_wrong_length(chain3):
    with pytest.raises(ValidationError, match="num_throats"):
        assemble(chain3, np.ones(5))


def test_isolated_internal_pore_raises():
    # Pore 3 is internal with no incident throat: its balance row is all-zero.
    net = make_network([(0, 1), (1, 2)], inlet=[0], outlet=[2], num_pores=4)
    with pytest.raises(SolverError, match="no incident throat"):
        assemble(net, np.ones(2))


def test_one_solve_one_factorization():
    net = generate_synthetic(5, 40, 4.0)
    g = truth_conductance(net, 5)
    solver.reset_counters()
    system = assemble(net, g)
    sol = solve(system, net, g)
    assert solver.counters() == {"solves": 1, "factorizations": 1}
    # An adjoint on the same system must not refactorize.
    from permnet import adjoint_solve
    adjoint_solve(system, sol, net, 0.9 * sol.permeability)
    assert solver.counters() == {"solves": 2, "factorizations": 1}
