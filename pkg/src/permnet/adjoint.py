"""Discrete adjoint: all per-throat loss gradients from one extra solve.

The adjoint system is A^T lambda = (dJ/dx)^T with A symmetric, so the
forward factorization is reused. The closed-form gradient per throat is

    dJ/dg_i = (lam_p2 - lam_p1) (x_p1 - x_p2)
              + (K - K*) c s_i (x_p1 - x_p2)   for inlet-touching throats

with lambda defined as 0 at boundary pores (their pressures are data, not
unknowns) and s_i the orientation sign used in Q_in. A central-difference
oracle is provided for testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import SolverError, ValidationError
from .network import PoreNetwork
from . import solver
from .solver import AssembledSystem, FlowSolution


@dataclass(eq=False)
class AdjointResult:
    lam: np.ndarray            # adjoint vector over internal pores
    dJ_dK: float               # K - K*
    dJ_dg: np.ndarray | None = None


def _inlet_flow_cotangent(system: AssembledSystem,
                          net: PoreNetwork) -> np.ndarray:
    """dQ_in/dx over internal pores (the L_Q vector restricted to unknowns)."""
    lq = np.zeros(system.num_internal)
    t = system.inlet_throats
    s = system.inlet_signs
    gt = system.conductance[t]
    p1 = net.throat_endpoints[t, 0]
    p2 = net.throat_endpoints[t, 1]
    i1 = system.internal_index[p1]
    i2 = system.internal_index[p2]
    m1 = i1 >= 0
    m2 = i2 >= 0
    np.add.at(lq, i1[m1], (s * gt)[m1])
    np.add.at(lq, i2[m2], -(s * gt)[m2])
    return lq


def adjoint_solve(system: AssembledSystem, sol: FlowSolution,
                  net: PoreNetwork, K_star: float) -> AdjointResult:
    """Solve A^T lambda = (K - K*) c (dQ_in/dx)^T, reusing the forward
    factorization (A is symmetric)."""
    if sol.system is not system:
        raise ValidationError("solution was not produced from this system")
    if not np.isfinite(K_star):
        raise SolverError("target permeability is not finite")
    dJ_dK = sol.permeability - K_star
    rhs = dJ_dK * sol.darcy_factor * _inlet_flow_cotangent(system, net)
    lam = system.solve_with(rhs, "adjoint solve")
    return AdjointResult(lam=lam, dJ_dK=float(dJ_dK))


def _gradient(net: PoreNetwork, sol: FlowSolution, lam: np.ndarray,
              dJ_dK: float) -> np.ndarray:
    system = sol.system
    lam_full = np.zeros(net.num_pores)
    lam_full[system.internal_index >= 0] = lam

    p1 = net.throat_endpoints[:, 0]
    p2 = net.throat_endpoints[:, 1]
    dx = sol.pressures[p1] - sol.pressures[p2]
    grad = (lam_full[p2] - lam_full[p1]) * dx

    t = system.inlet_throats
    grad[t] += dJ_dK * sol.darcy_factor * system.inlet_signs * dx[t]
    return grad


def gradient_wrt_conductance(net: PoreNetwork, g: np.ndarray,
                             sol: FlowSolution,
                             adj: AdjointResult) -> np.ndarray:
    """Closed-form dJ/dg for every throat from one forward and one adjoint
    solve."""
    grad = _gradient(net, sol, adj.lam, adj.dJ_dK)
    adj.dJ_dg = grad
    return grad


def permeability_gradient(net: PoreNetwork, g: np.ndarray,
                          sol: FlowSolution) -> np.ndarray:
    """dK/dg for every throat: the adjoint machinery with dJ/dK := 1."""
    system = sol.system
    rhs = sol.darcy_factor * _inlet_flow_cotangent(system, net)
    lam = system.solve_with(rhs, "permeability adjoint solve")
    return _gradient(net, sol, lam, 1.0)


def loss_value(net: PoreNetwork, g: np.ndarray, K_star: float) -> float:
    """Full forward pipeline to the scalar loss J = (K - K*)^2 / 2."""
    system = solver.assemble(net, g)
    sol = solver.solve(system, net, g)
    return 0.5 * (sol.permeability - K_star) ** 2


class _PerturbedLoss:
    """Evaluates J(g + d e_i) without reassembling from scratch.

    A single-throat perturbation touches at most four matrix entries and one
    right-hand-side entry, so the sparsity pattern (and the entry positions
    for every throat) are located once; each evaluation then patches a copy
    of the data array and refactorizes.
    """

    def __init__(self, net, g, K_star):
        self.net = net
        self.g = np.asarray(g, dtype=float)
        self.K_star = K_star
        system = solver.assemble(net, self.g)
        A = system.matrix.tocsc()
        A.sum_duplicates()
        self.A = A
        self.data0 = A.data.copy()
        # Test networks are small; a dense Cholesky per perturbation beats
        # the sparse factorization's setup overhead by a wide margin.
        self.dense = A.shape[0] <= 400
        self.A0 = A.toarray() if self.dense else None
        self.b0 = system.rhs.copy()
        self.system = system
        self.bc = solver._boundary_pressures(net)
        index = system.internal_index
        p1 = net.throat_endpoints[:, 0]
        p2 = net.throat_endpoints[:, 1]
        self.p1, self.p2 = p1, p2
        i1, i2 = index[p1], index[p2]
        self.internal_rows = np.flatnonzero(index >= 0)

        def pos(r, c):
            lo, hi = A.indptr[c], A.indptr[c + 1]
            k = lo + np.searchsorted(A.indices[lo:hi], r)
            assert k < hi and A.indices[k] == r
            return k

        # Per throat: (entry rows, cols, data positions, signs,
        #              rhs row or -1, rhs coefficient)
        self.patch = []
        for t in range(net.num_throats):
            a, b = i1[t], i2[t]
            if a >= 0 and b >= 0:
                rows = np.array([a, b, a, b])
                cols = np.array([a, b, b, a])
                sign = np.array([1.0, 1.0, -1.0, -1.0])
                brow, bcoef = -1, 0.0
            elif a >= 0:
                rows = cols = np.array([a])
                sign = np.array([1.0])
                brow, bcoef = a, self.bc[p2[t]]
            elif b >= 0:
                rows = cols = np.array([b])
                sign = np.array([1.0])
                brow, bcoef = b, self.bc[p1[t]]
            else:
                rows = cols = np.array([], dtype=int)
                sign = np.array([])
                brow, bcoef = -1, 0.0
            idx = np.array([pos(r, c) for r, c in zip(rows, cols)],
                           dtype=int)
            self.patch.append((rows, cols, idx, sign, brow, bcoef))

    def __call__(self, i, d):
        rows, cols, idx, sign, brow, bcoef = self.patch[i]
        b = self.b0
        if brow >= 0:
            b = b.copy()
            b[brow] += d * bcoef
        try:
            if self.dense:
                A = self.A0.copy()
                A[rows, cols] += sign * d
                cho = sla.cho_factor(A, check_finite=False)
                x_int = sla.cho_solve(cho, b, check_finite=False)
                x_int += sla.cho_solve(cho, b - A @ x_int,
                                       check_finite=False)
            else:
                A = self.A
                A.data = self.data0.copy()
                A.data[idx] += sign * d
                lu = spla.splu(A)
                x_int = lu.solve(b)
                x_int += lu.solve(b - A @ x_int)
        except (RuntimeError, np.linalg.LinAlgError) as exc:
            raise SolverError(f"fd oracle: singular system ({exc})") from exc
        x = self.bc.copy()
        x[self.internal_rows] = x_int
        g = self.g
        sys_ = self.system
        t = sys_.inlet_throats
        gt = g[t].copy()
        gt[t == i] += d
        q_in = np.sum(sys_.inlet_signs * gt
                      * (x[self.p1[t]] - x[self.p2[t]]))
        c = self.net.physical.darcy_factor
        return 0.5 * (c * q_in - self.K_star) ** 2


def _central_diff(net, g, K_star, i, d, fast=None):
    if fast is not None:
        return (fast(i, d) - fast(i, -d)) / (2.0 * d)
    gp = g.copy()
    gp[i] += d
    gm = g.copy()
    gm[i] -= d
    return (loss_value(net, gp, K_star)
            - loss_value(net, gm, K_star)) / (2.0 * d)


# Base steps (relative to max(g_i, 1)) for the self-selecting oracle.
_FD_BASES = (4e-3, 1.6e-2, 6.4e-2)


def _richardson(net, g, K_star, i, d, fast=None):
    coarse = _central_diff(net, g, K_star, i, d, fast)
    fine = _central_diff(net, g, K_star, i, d / 2.0, fast)
    return (4.0 * fine - coarse) / 3.0


def fd_gradient(net: PoreNetwork, g: np.ndarray, K_star: float,
                delta: float | None = None,
                richardson: bool = True) -> np.ndarray:
    """Finite-difference oracle built on central differences
    (J(g + d e_i) - J(g - d e_i)) / 2d, one throat at a time.

    Gradient entries span many orders of magnitude, and no single step
    resolves both ends in float64: small steps drown tiny entries in
    solver round-off, large steps bias the dominant ones with truncation.
    So by default each throat takes the median of Richardson-extrapolated
    central differences at three relative step sizes, which discards
    whichever failure mode strikes. Pass `delta` for a fixed step
    (richardson=False then yields the plain central difference).
    """
    g = np.asarray(g, dtype=float)
    grad = np.zeros_like(g)
    fast = _PerturbedLoss(net, g, K_star)
    for i in range(len(g)):
        if delta is not None:
            if g[i] - delta <= 0:
                raise ValidationError(
                    f"step {delta} would make conductance at throat {i} "
                    "nonpositive")
            if richardson:
                grad[i] = _richardson(net, g, K_star, i, delta, fast)
            else:
                grad[i] = _central_diff(net, g, K_star, i, delta, fast)
            continue
        scale = max(g[i], 1.0)
        ests = [_richardson(net, g, K_star, i, b * scale, fast)
                for b in _FD_BASES]
        grad[i] = np.median(ests)
    return grad
