"""Pore-pressure linear system: assembly, solve, and bulk permeability.

Boundary pressures are eliminated into the right-hand side (reduced system
over internal pores only), which keeps the matrix symmetric positive
definite so one sparse factorization serves both the forward and the
adjoint solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError, ValidationError
from .network import PoreNetwork

# Edge-feature columns holding the five precomputed hydraulic size factors.
SHAPE_FACTOR_COLUMNS = {
    "pyramids-cuboids": 6,
    "cones-cylinders": 7,
    "trapezoids-rectangles": 8,
    "cubes-cuboids": 9,
    "squares-rectangles": 10,
}

RESIDUAL_TOL = 1e-10
DIRECT_SOLVE_LIMIT = 50_000

# Instrumentation for the one-solve / one-factorization guarantees.
_counters = {"solves": 0, "factorizations": 0}


def reset_counters():
    _counters["solves"] = 0
    _counters["factorizations"] = 0


def counters():
    return dict(_counters)


@dataclass(eq=False)
class AssembledSystem:
    matrix: sp.csr_matrix          # reduced SPD matrix over internal pores
    rhs: np.ndarray
    internal_index: np.ndarray     # pore index -> row index, -1 for boundary
    inlet_throats: np.ndarray      # throat indices contributing to Q_in
    inlet_signs: np.ndarray        # +1 if p1 is the inlet-side endpoint
    conductance: np.ndarray        # g used at assembly (adjoint reuse)
    _factor: object = field(default=None, repr=False)

    @property
    def num_internal(self):
        return self.matrix.shape[0]

    def factorization(self):
        """Sparse LU of the reduced matrix, computed once and reused."""
        if self._factor is None:
            _counters["factorizations"] += 1
            self._factor = spla.splu(self.matrix.tocsc())
        return self._factor

    def solve_with(self, rhs: np.ndarray, what: str) -> np.ndarray:
        """Solve the reduced system for an arbitrary right-hand side,
        enforcing the relative-residual tolerance."""
        _counters["solves"] += 1
        n = self.num_internal
        if n == 0:
            return np.zeros(0)
        if n <= DIRECT_SOLVE_LIMIT:
            try:
                lu = self.factorization()
                x = lu.solve(rhs)
                # One step of iterative refinement: keeps the solution (and
                # every quantity differenced from it) near machine precision.
                x += lu.solve(rhs - self.matrix @ x)
            except RuntimeError as exc:
                raise SolverError(f"{what}: singular system ({exc})") from exc
        else:
            x = _jacobi_cg(self.matrix, rhs)
        rhs_norm = np.linalg.norm(rhs)
        if rhs_norm == 0.0:
            return np.zeros_like(rhs)
        residual = np.linalg.norm(self.matrix @ x - rhs) / rhs_norm
        if not np.isfinite(residual) or residual > RESIDUAL_TOL:
            raise SolverError(
                f"{what}: relative residual {residual:.3e} exceeds "
                f"{RESIDUAL_TOL:.0e}", residual=residual)
        return x


def _jacobi_cg(A, b):
    diag = A.diagonal()
    M = spla.LinearOperator(A.shape, matvec=lambda v: v / diag)
    x, info = spla.cg(A, b, rtol=RESIDUAL_TOL / 10, atol=0.0, M=M)
    if info != 0:
        raise SolverError(f"conjugate gradient did not converge (info={info})")
    return x


@dataclass(eq=False)
class FlowSolution:
    pressures: np.ndarray      # full-length, boundary entries prescribed
    inlet_flow: float          # Q_in, m^3/s
    permeability: float        # K = c * Q_in, m^2
    darcy_factor: float        # c = mu*L/(A_s*dP)
    system: AssembledSystem


def analytic_conductance(net: PoreNetwork, shape: str) -> np.ndarray:
    """Baseline conductance g = F/mu from the selected size-factor column."""
    if shape not in SHAPE_FACTOR_COLUMNS:
        raise ValidationError(
            f"unknown shape {shape!r}; expected one of "
            f"{sorted(SHAPE_FACTOR_COLUMNS)}")
    F = net.edge_features[:, SHAPE_FACTOR_COLUMNS[shape]]
    bad = np.flatnonzero(F <= 0)
    if len(bad):
        raise ValidationError(
            f"nonpositive size factor at throat {int(bad[0])}")
    return F / net.physical.viscosity


def assemble(net: PoreNetwork, g: np.ndarray) -> AssembledSystem:
    """Build the reduced mass-balance system A x = b over internal pores."""
    g = np.asarray(g, dtype=float)
    if g.shape != (net.num_throats,):
        raise ValidationError(
            f"conductance length {g.shape} != num_throats {net.num_throats}")
    bad = np.flatnonzero(~(g > 0))
    if len(bad):
        raise ValidationError(
            f"nonpositive conductance at throat {int(bad[0])}")

    internal = net.internal_mask()
    index = np.full(net.num_pores, -1, dtype=np.int64)
    index[internal] = np.arange(internal.sum())
    n = int(internal.sum())

    isolated = np.flatnonzero(internal & (net.degrees() == 0))
    if len(isolated):
        raise SolverError(
            f"internal pore {int(isolated[0])} has no incident throat "
            "(singular row)")

    p1 = net.throat_endpoints[:, 0]
    p2 = net.throat_endpoints[:, 1]
    i1 = index[p1]
    i2 = index[p2]
    bc = _boundary_pressures(net)

    rows, cols, data = [], [], []
    b = np.zeros(n)
    both = (i1 >= 0) & (i2 >= 0)
    if both.any():
        a, bdx, gv = i1[both], i2[both], g[both]
        rows += [a, bdx, a, bdx]
        cols += [a, bdx, bdx, a]
        data += [gv, gv, -gv, -gv]
    only1 = (i1 >= 0) & (i2 < 0)
    if only1.any():
        a, gv = i1[only1], g[only1]
        rows.append(a)
        cols.append(a)
        data.append(gv)
        np.add.at(b, a, gv * bc[p2[only1]])
    only2 = (i2 >= 0) & (i1 < 0)
    if only2.any():
        a, gv = i2[only2], g[only2]
        rows.append(a)
        cols.append(a)
        data.append(gv)
        np.add.at(b, a, gv * bc[p1[only2]])

    if rows:
        A = sp.coo_matrix(
            (np.concatenate(data),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsr()
    else:
        A = sp.csr_matrix((n, n))

    inlet = np.zeros(net.num_pores, dtype=bool)
    inlet[net.inlet_pores] = True
    outlet = np.zeros(net.num_pores, dtype=bool)
    outlet[net.outlet_pores] = True
    # Q_in counts throats with exactly one inlet endpoint, plus direct
    # inlet-to-outlet throats; inlet-inlet throats carry no net inflow.
    in1, in2 = inlet[p1], inlet[p2]
    touches = (in1 ^ in2) | (in1 & outlet[p2]) | (in2 & outlet[p1])
    inlet_throats = np.flatnonzero(touches)
    inlet_signs = np.where(in1[inlet_throats], 1.0, -1.0)

    return AssembledSystem(
        matrix=A, rhs=b, internal_index=index,
        inlet_throats=inlet_throats, inlet_signs=inlet_signs,
        conductance=g)


def _boundary_pressures(net: PoreNetwork) -> np.ndarray:
    bc = np.zeros(net.num_pores)
    bc[net.inlet_pores] = net.physical.inlet_pressure
    bc[net.outlet_pores] = net.physical.outlet_pressure
    return bc


def solve(system: AssembledSystem, net: PoreNetwork,
          g: np.ndarray) -> FlowSolution:
    """Solve for pore pressures and evaluate Q_in and K = c*Q_in."""
    g = np.asarray(g, dtype=float)
    x_int = system.solve_with(system.rhs, "forward solve")

    x = _boundary_pressures(net)
    x[system.internal_index >= 0] = x_int

    q_in = inlet_flow(system, net, x, g)
    c = net.physical.darcy_factor
    return FlowSolution(
        pressures=x, inlet_flow=float(q_in),
        permeability=float(c * q_in), darcy_factor=float(c),
        system=system)


def inlet_flow(system: AssembledSystem, net: PoreNetwork,
               x: np.ndarray, g: np.ndarray) -> float:
    """Signed sum of flows through inlet-touching throats, oriented so
    Q_in > 0 when the inlet pressure exceeds the outlet pressure."""
    t = system.inlet_throats
    p1 = net.throat_endpoints[t, 0]
    p2 = net.throat_endpoints[t, 1]
    return float(np.sum(system.inlet_signs * g[t] * (x[p1] - x[p2])))


def throat_flows(net: PoreNetwork, x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Per-throat flow q_i = g_i (x_p1 - x_p2), sign set by endpoint order."""
    p1 = net.throat_endpoints[:, 0]
    p2 = net.throat_endpoints[:, 1]
    return g * (x[p1] - x[p2])


def diagnostic_dump(net: PoreNetwork, sol: FlowSolution,
                    g: np.ndarray) -> dict:
    """Pressures and per-throat flows keyed by index, for inspection."""
    q = throat_flows(net, sol.pressures, g)
    return {
        "pressures": {str(i): float(p) for i, p in enumerate(sol.pressures)},
        "throat_flows": {str(i): float(v) for i, v in enumerate(q)},
        "inlet_flow": sol.inlet_flow,
        "permeability": sol.permeability,
        "darcy_factor": sol.darcy_factor,
    }
