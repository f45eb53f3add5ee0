"""Metrics over prediction sets and gradient-based feature sensitivity.

Sensitivities are d(predicted permeability)/d(z-scored feature), pooled over
every pore/throat instance of a network set and summarized as box-plot
statistics (median, quartiles, whiskers at 1.5x the interquartile range).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import adjoint, gnn, solver
from .errors import ValidationError
from .network import (EDGE_FEATURE_NAMES, NODE_FEATURE_NAMES, NormStats,
                      normalize)


@dataclass
class MetricReport:
    mae: float
    rmse: float
    mape_percent: float | None   # None when some observed value is 0
    r_squared: float | None      # None when observed variance is 0
    n: int

    def to_dict(self):
        return {"mae": self.mae, "rmse": self.rmse,
                "mape_percent": self.mape_percent,
                "r_squared": self.r_squared, "n": self.n}


def metrics(y, y_hat) -> MetricReport:
    """MAE, RMSE, MAPE (percent) and R^2 of predictions against observations."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise ValidationError(
            f"prediction shape {y_hat.shape} != observation shape {y.shape}")
    if len(y) == 0:
        raise ValidationError("empty prediction set")
    err = y - y_hat
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    mape = (float(100.0 * np.mean(np.abs(err / y)))
            if np.all(y != 0) else None)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = (float(1.0 - np.sum(err ** 2) / ss_tot) if ss_tot > 0 else None)
    return MetricReport(mae=mae, rmse=rmse, mape_percent=mape,
                        r_squared=r2, n=len(y))


# ---------------------------------------------------------------------------
# Feature sensitivity

@dataclass
class FeatureSummary:
    feature: str
    median: float
    q25: float
    q75: float
    lo_whisker: float
    hi_whisker: float
    n: int


@dataclass
class SensitivityReport:
    node: list        # FeatureSummary per node feature
    edge: list        # FeatureSummary per edge feature
    node_samples: np.ndarray   # (total pores, 8) raw gradient samples
    edge_samples: np.ndarray   # (total throats, 15)


def _summarize(name, values) -> FeatureSummary:
    q25, med, q75 = np.percentile(values, [25, 50, 75])
    iqr = q75 - q25
    lo_fence, hi_fence = q25 - 1.5 * iqr, q75 + 1.5 * iqr
    inside = values[(values >= lo_fence) & (values <= hi_fence)]
    return FeatureSummary(
        feature=name, median=float(med), q25=float(q25), q75=float(q75),
        lo_whisker=float(inside.min()), hi_whisker=float(inside.max()),
        n=len(values))


def feature_sensitivity(networks, params: gnn.GnnParameters) -> SensitivityReport:
    """dK/dz for every feature instance across a set of networks that were
    normalized with the checkpoint's statistics; the solver only reads raw
    physics, so normalized inputs are sufficient."""
    node_grads, edge_grads = [], []
    for net in networks:
        g, tape = gnn.gnn_forward(net, params)
        system = solver.assemble(net, g)
        sol = solver.solve(system, net, g)
        dK_dg = adjoint.permeability_gradient(net, g, sol)
        _, dnode, dedge = gnn.gnn_backward(tape, params, dK_dg)
        node_grads.append(dnode)
        edge_grads.append(dedge)
    nodes = np.vstack(node_grads)
    edges = np.vstack(edge_grads)
    return SensitivityReport(
        node=[_summarize(name, nodes[:, j])
              for j, name in enumerate(NODE_FEATURE_NAMES)],
        edge=[_summarize(name, edges[:, j])
              for j, name in enumerate(EDGE_FEATURE_NAMES)],
        node_samples=nodes, edge_samples=edges)


def write_sensitivity_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "median", "q25", "q75",
                         "lo_whisker", "hi_whisker", "n"])
        for r in rows:
            writer.writerow([r.feature, repr(r.median), repr(r.q25),
                             repr(r.q75), repr(r.lo_whisker),
                             repr(r.hi_whisker), r.n])


# ---------------------------------------------------------------------------
# Dataset evaluation

def predict_embedded(net_raw, params: gnn.GnnParameters,
                     stats: NormStats) -> float:
    net = normalize(net_raw, stats)
    g, _ = gnn.gnn_forward(net, params)
    system = solver.assemble(net_raw, g)
    sol = solver.solve(system, net_raw, g)
    return sol.permeability


def predict_baseline(net_raw, params: gnn.BaselineParameters,
                     stats: NormStats) -> float:
    net = normalize(net_raw, stats)
    K, _ = gnn.baseline_forward(net, params)
    return K


def predict_analytic(net_raw, shape: str) -> float:
    g = solver.analytic_conductance(net_raw, shape)
    system = solver.assemble(net_raw, g)
    sol = solver.solve(system, net_raw, g)
    return sol.permeability


def evaluate(networks, predictor, jobs: int = 1):
    """Run `predictor(network) -> K` over a dataset carrying targets;
    returns (MetricReport, predictions list). Sample order is preserved
    regardless of parallelism."""
    for k, net in enumerate(networks):
        if net.target_permeability is None:
            raise ValidationError(f"network {k} has no target_permeability")
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            preds = list(pool.map(predictor, networks))
    else:
        preds = [predictor(net) for net in networks]
    targets = [net.target_permeability for net in networks]
    return metrics(targets, preds), preds
