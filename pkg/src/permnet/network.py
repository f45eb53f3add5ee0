"""Pore network data model, file format, normalization and synthetic generation.

A pore network is a graph: pores are nodes carrying 8 geometric features,
throats are edges carrying 15 geometric features (see NODE_FEATURE_NAMES /
EDGE_FEATURE_NAMES for the column order). Boundary pores carry prescribed
pressures; everything is SI.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ParseError, ValidationError

NODE_FEATURE_NAMES = [
    "pore_diameter",
    "pore_inscribed_diameter",
    "pore_extended_diameter",
    "coordination_number",
    "surface_area_cube",
    "surface_area_sphere",
    "volume_cube",
    "volume_sphere",
]

EDGE_FEATURE_NAMES = [
    "throat_diameter",
    "throat_inscribed_diameter",
    "throat_total_length",
    "throat_direct_length",
    "throat_cross_sectional_area",
    "throat_equivalent_diameter",
    "size_factor_pyramids_cuboids",
    "size_factor_cones_cylinders",
    "size_factor_trapezoids_rectangles",
    "size_factor_cubes_cuboids",
    "size_factor_squares_rectangles",
    "throat_area_cuboid",
    "throat_area_cylinder",
    "throat_perimeter_cuboid",
    "throat_perimeter_cylinder",
]

NUM_NODE_FEATURES = len(NODE_FEATURE_NAMES)
NUM_EDGE_FEATURES = len(EDGE_FEATURE_NAMES)


@dataclass(frozen=True)
class PhysicalConstants:
    viscosity: float          # Pa*s
    domain_length: float      # m
    cross_section_area: float  # m^2
    inlet_pressure: float     # Pa
    outlet_pressure: float    # Pa

    @property
    def pressure_drop(self):
        return self.inlet_pressure - self.outlet_pressure

    @property
    def darcy_factor(self):
        """c such that K = c * Q_in."""
        return self.viscosity * self.domain_length / (
            self.cross_section_area * self.pressure_drop)


@dataclass(frozen=True, eq=False)
class PoreNetwork:
    num_pores: int
    num_throats: int
    throat_endpoints: np.ndarray   # (T, 2) int, ordered (p1, p2)
    node_features: np.ndarray      # (N, 8) float
    edge_features: np.ndarray      # (T, 15) float
    inlet_pores: np.ndarray        # int indices
    outlet_pores: np.ndarray       # int indices
    physical: PhysicalConstants
    target_permeability: float | None = None

    def boundary_pores(self):
        return np.concatenate([self.inlet_pores, self.outlet_pores])

    def internal_mask(self):
        mask = np.ones(self.num_pores, dtype=bool)
        mask[self.inlet_pores] = False
        mask[self.outlet_pores] = False
        return mask

    def degrees(self):
        return np.bincount(self.throat_endpoints.ravel(),
                           minlength=self.num_pores)

    def equals(self, other):
        """Field-by-field equality, floating values bit-exact."""
        return (
            self.num_pores == other.num_pores
            and self.num_throats == other.num_throats
            and np.array_equal(self.throat_endpoints, other.throat_endpoints)
            and np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.edge_features, other.edge_features)
            and np.array_equal(self.inlet_pores, other.inlet_pores)
            and np.array_equal(self.outlet_pores, other.outlet_pores)
            and self.physical == other.physical
            and self.target_permeability == other.target_permeability
        )


@dataclass(frozen=True)
class NormStats:
    node_mean: np.ndarray
    node_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray

    def to_dict(self):
        return {
            "node_mean": self.node_mean.tolist(),
            "node_std": self.node_std.tolist(),
            "edge_mean": self.edge_mean.tolist(),
            "edge_std": self.edge_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                node_mean=np.asarray(d["node_mean"], dtype=float),
                node_std=np.asarray(d["node_std"], dtype=float),
                edge_mean=np.asarray(d["edge_mean"], dtype=float),
                edge_std=np.asarray(d["edge_std"], dtype=float),
            )
        except KeyError as exc:
            raise ParseError(f"norm stats missing key {exc}") from exc


def validate_network(net: PoreNetwork) -> None:
    """Check every structural invariant; raise ValidationError naming the
    first violation and the offending index."""
    ep = net.throat_endpoints
    if ep.shape != (net.num_throats, 2):
        raise ValidationError(
            f"throat_endpoints shape {ep.shape} != ({net.num_throats}, 2)")
    if net.node_features.shape != (net.num_pores, NUM_NODE_FEATURES):
        raise ValidationError(
            f"node_features shape {net.node_features.shape} != "
            f"({net.num_pores}, {NUM_NODE_FEATURES})")
    if net.edge_features.shape != (net.num_throats, NUM_EDGE_FEATURES):
        raise ValidationError(
            f"edge_features shape {net.edge_features.shape} != "
            f"({net.num_throats}, {NUM_EDGE_FEATURES})")
    if net.num_throats and (ep.min() < 0 or ep.max() >= net.num_pores):
        bad = int(np.flatnonzero((ep < 0).any(1) | (ep >= net.num_pores).any(1))[0])
        raise ValidationError(f"throat endpoint out of range at throat {bad}")
    loops = np.flatnonzero(ep[:, 0] == ep[:, 1]) if net.num_throats else []
    if len(loops):
        raise ValidationError(f"self-loop throat at index {int(loops[0])}")
    for name, idx in (("inlet", net.inlet_pores), ("outlet", net.outlet_pores)):
        if len(idx) == 0:
            raise ValidationError(f"empty {name} pore set")
        if len(idx) and (idx.min() < 0 or idx.max() >= net.num_pores):
            raise ValidationError(f"{name} pore index out of range")
    overlap = np.intersect1d(net.inlet_pores, net.outlet_pores)
    if len(overlap):
        raise ValidationError(
            f"pore {int(overlap[0])} is both inlet and outlet")
    deg = net.degrees()
    internal = net.internal_mask()
    isolated = np.flatnonzero(internal & (deg == 0))
    if len(isolated):
        raise ValidationError(
            f"internal pore {int(isolated[0])} has no incident throat")
    if not _has_inlet_outlet_path(net):
        raise ValidationError("disconnected network: no inlet-to-outlet path")
    if np.any(net.node_features < 0):
        i, j = np.argwhere(net.node_features < 0)[0]
        raise ValidationError(
            f"negative node feature {NODE_FEATURE_NAMES[j]} at pore {i}")
    if np.any(net.edge_features < 0):
        i, j = np.argwhere(net.edge_features < 0)[0]
        raise ValidationError(
            f"negative edge feature {EDGE_FEATURE_NAMES[j]} at throat {i}")
    phys = net.physical
    if phys.pressure_drop <= 0:
        raise ValidationError("inlet_pressure must exceed outlet_pressure")
    if phys.viscosity <= 0:
        raise ValidationError("viscosity must be positive")
    if phys.domain_length <= 0:
        raise ValidationError("domain_length must be positive")
    if phys.cross_section_area <= 0:
        raise ValidationError("cross_section_area must be positive")


def _has_inlet_outlet_path(net: PoreNetwork) -> bool:
    if net.num_throats == 0:
        return False
    ep = net.throat_endpoints
    adj = coo_matrix(
        (np.ones(net.num_throats), (ep[:, 0], ep[:, 1])),
        shape=(net.num_pores, net.num_pores))
    _, labels = connected_components(adj, directed=False)
    return bool(np.intersect1d(labels[net.inlet_pores],
                               labels[net.outlet_pores]).size)


# ---------------------------------------------------------------------------
# File format

def network_to_dict(net: PoreNetwork) -> dict:
    d = {
        "num_pores": net.num_pores,
        "num_throats": net.num_throats,
        "throat_endpoints": net.throat_endpoints.tolist(),
        "node_features": net.node_features.tolist(),
        "edge_features": net.edge_features.tolist(),
        "inlet_pores": net.inlet_pores.tolist(),
        "outlet_pores": net.outlet_pores.tolist(),
        "physical": {
            "viscosity": net.physical.viscosity,
            "domain_length": net.physical.domain_length,
            "cross_section_area": net.physical.cross_section_area,
            "inlet_pressure": net.physical.inlet_pressure,
            "outlet_pressure": net.physical.outlet_pressure,
        },
    }
    if net.target_permeability is not None:
        d["target_permeability"] = net.target_permeability
    return d


def network_from_dict(d: dict) -> PoreNetwork:
    try:
        phys = PhysicalConstants(
            viscosity=float(d["physical"]["viscosity"]),
            domain_length=float(d["physical"]["domain_length"]),
            cross_section_area=float(d["physical"]["cross_section_area"]),
            inlet_pressure=float(d["physical"]["inlet_pressure"]),
            outlet_pressure=float(d["physical"]["outlet_pressure"]),
        )
        net = PoreNetwork(
            num_pores=int(d["num_pores"]),
            num_throats=int(d["num_throats"]),
            throat_endpoints=np.asarray(d["throat_endpoints"],
                                        dtype=np.int64).reshape(-1, 2),
            node_features=np.asarray(d["node_features"], dtype=float),
            edge_features=np.asarray(d["edge_features"], dtype=float),
            inlet_pores=np.asarray(d["inlet_pores"], dtype=np.int64),
            outlet_pores=np.asarray(d["outlet_pores"], dtype=np.int64),
            physical=phys,
            target_permeability=(float(d["target_permeability"])
                                 if "target_permeability" in d else None),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed network object: {exc}") from exc
    return net


def load_network(path) -> PoreNetwork:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read network file {path}: {exc}") from exc
    net = network_from_dict(d)
    validate_network(net)
    return net


def save_network(net: PoreNetwork, path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Normalization (z-score, population statistics pooled over all networks)

def compute_norm_stats(networks) -> NormStats:
    networks = list(networks)
    if not networks:
        raise ValidationError("compute_norm_stats requires at least one network")
    nodes = np.vstack([n.node_features for n in networks])
    edges = np.vstack([n.edge_features for n in networks])
    return NormStats(
        node_mean=nodes.mean(axis=0),
        node_std=nodes.std(axis=0),
        edge_mean=edges.mean(axis=0),
        edge_std=edges.std(axis=0),
    )


def _safe_std(std):
    # A stored std of exactly 0 acts as 1: constant features map to z = 0.
    return np.where(std == 0.0, 1.0, std)


def normalize(net: PoreNetwork, stats: NormStats) -> PoreNetwork:
    if stats.node_mean.shape != (NUM_NODE_FEATURES,):
        raise ValidationError("node stats dimension mismatch")
    if stats.edge_mean.shape != (NUM_EDGE_FEATURES,):
        raise ValidationError("edge stats dimension mismatch")
    return replace(
        net,
        node_features=(net.node_features - stats.node_mean)
        / _safe_std(stats.node_std),
        edge_features=(net.edge_features - stats.edge_mean)
        / _safe_std(stats.edge_std),
    )


def save_norm_stats(stats: NormStats, path) -> None:
    with open(path, "w") as fh:
        json.dump(stats.to_dict(), fh)
        fh.write("\n")


def load_norm_stats(path) -> NormStats:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read norm stats {path}: {exc}") from exc
    return NormStats.from_dict(d)


# ---------------------------------------------------------------------------
# Synthetic generation
#
# Feature ranges (log-uniform draws, metre-scale so conductances land O(0.01-10)
# with water-like viscosity):
#   pore diameter      in [0.02, 0.2]  m
#   throat diameter    in [0.02, 0.15] m
# Dependent features are derived deterministically from the drawn diameters
# and positions, mirroring the idealized-shape definitions of the feature set.

_DEFAULT_PHYSICAL = PhysicalConstants(
    viscosity=1e-3, domain_length=1.0, cross_section_area=1.0,
    inlet_pressure=1.0, outlet_pressure=0.0)

# Shape constants for the five size-factor columns, multiplying d^4 / length.
_SIZE_FACTOR_COEFF = np.array([0.028, np.pi / 128.0, 0.026, 0.035, 0.033])


def _log_uniform(rng, lo, hi, size):
    return np.exp(rng.uniform(np.log(lo), np.log(hi), size=size))


def generate_synthetic(seed: int, num_pores: int,
                       avg_coordination: float) -> PoreNetwork:
    """Deterministic random network: pores in the unit cube, nearest-neighbor
    throats until the target average coordination is met, leftmost/rightmost
    ~10% of pores as inlets/outlets."""
    if num_pores < 4:
        raise ValidationError("num_pores must be at least 4")
    if not 2.0 <= avg_coordination <= num_pores - 1:
        raise ValidationError(
            f"avg_coordination must lie in [2, {num_pores - 1}]")
    rng = np.random.default_rng(seed)
    pos = rng.random((num_pores, 3))

    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1)

    edges = set()
    k = 1
    while 2 * len(edges) < avg_coordination * num_pores:
        if k >= num_pores:
            break
        for p in range(num_pores):
            q = int(order[p, k - 1])
            edges.add((min(p, q), max(p, q)))
        k += 1

    n_bound = max(1, int(round(0.1 * num_pores)))
    by_x = np.argsort(pos[:, 0], kind="stable")
    inlet = np.sort(by_x[:n_bound])
    outlet = np.sort(by_x[-n_bound:])

    # Bridge disconnected components so an inlet-outlet path always exists.
    edges = _bridge_components(edges, dist, num_pores)

    ep = np.array(sorted(edges), dtype=np.int64)
    num_throats = len(ep)

    node_features = _draw_node_features(rng, num_pores, ep)
    edge_features = _draw_edge_features(rng, pos, ep)

    net = PoreNetwork(
        num_pores=num_pores,
        num_throats=num_throats,
        throat_endpoints=ep,
        node_features=node_features,
        edge_features=edge_features,
        inlet_pores=inlet,
        outlet_pores=outlet,
        physical=_DEFAULT_PHYSICAL,
    )
    validate_network(net)
    return net


def _bridge_components(edges, dist, num_pores):
    edges = set(edges)
    while True:
        ep = np.array(sorted(edges), dtype=np.int64)
        adj = coo_matrix((np.ones(len(ep)), (ep[:, 0], ep[:, 1])),
                         shape=(num_pores, num_pores))
        n_comp, labels = connected_components(adj, directed=False)
        if n_comp == 1:
            return edges
        # Connect the closest pair spanning the main component and any other.
        main = labels == labels[0]
        sub = ~main
        block = dist[np.ix_(main, sub)]
        i, j = np.unravel_index(np.argmin(block), block.shape)
        p = int(np.flatnonzero(main)[i])
        q = int(np.flatnonzero(sub)[j])
        edges.add((min(p, q), max(p, q)))


def _draw_node_features(rng, num_pores, ep):
    d = _log_uniform(rng, 0.02, 0.2, num_pores)
    inscribed = d * rng.uniform(0.5, 0.9, num_pores)
    extended = d * rng.uniform(1.1, 1.6, num_pores)
    coord = np.bincount(ep.ravel(), minlength=num_pores).astype(float)
    return np.column_stack([
        d, inscribed, extended, coord,
        6.0 * d ** 2, np.pi * d ** 2,
        d ** 3, np.pi / 6.0 * d ** 3,
    ])


def _draw_edge_features(rng, pos, ep):
    num_throats = len(ep)
    d = _log_uniform(rng, 0.02, 0.15, num_throats)
    inscribed = d * rng.uniform(0.5, 0.9, num_throats)
    direct = np.linalg.norm(pos[ep[:, 0]] - pos[ep[:, 1]], axis=1)
    total = direct * rng.uniform(1.05, 1.4, num_throats)
    area = np.pi / 4.0 * d ** 2
    equiv = np.sqrt(4.0 * area / np.pi)
    size_factors = _SIZE_FACTOR_COEFF[None, :] * (d ** 4 / total)[:, None]
    return np.column_stack([
        d, inscribed, total, direct, area, equiv,
        size_factors,
        d ** 2, np.pi / 4.0 * d ** 2,
        4.0 * d, np.pi * d,
    ])


# ---------------------------------------------------------------------------
# Synthetic ground truth

def truth_conductance(net: PoreNetwork, truth_seed: int) -> np.ndarray:
    """Hidden per-throat conductances behind the synthetic permeability target.

    Smooth positive law on raw edge features, deliberately unlike any single
    size-factor column: diameter^4 over tortuous length with a saturating
    dependence on the inscribed-diameter ratio, times a small seeded
    log-normal jitter so the target is not an exact function of the features.
    """
    rng = np.random.default_rng(truth_seed)
    d = net.edge_features[:, 0]
    length = net.edge_features[:, 2]
    ratio = net.edge_features[:, 1] / d
    base = 0.05 / net.physical.viscosity * (d ** 4 / length) * (
        0.3 + np.tanh(2.5 * ratio))
    jitter = np.exp(rng.normal(0.0, 0.03, size=net.num_throats))
    return base * jitter


def synthetic_truth(net: PoreNetwork, truth_seed: int,
                    return_conductance: bool = False):
    """Assign target_permeability by solving the forward model with the
    hidden truth conductances; the conductances are not stored on the
    returned network."""
    from . import solver  # deferred: solver depends on this module's types

    g = truth_conductance(net, truth_seed)
    system = solver.assemble(net, g)
    sol = solver.solve(system, net, g)
    out = replace(net, target_permeability=float(sol.permeability))
    if return_conductance:
        return out, g
    return out
