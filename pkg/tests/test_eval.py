import csv

import numpy as np
import pytest

from permnet import (GnnDims, ValidationError, evaluate, feature_sensitivity,
                     generate_synthetic, init_params, metrics, normalize,
                     compute_norm_stats, synthetic_truth)
from permnet.evaluate import (predict_analytic, predict_embedded,
                              write_sensitivity_csv)


# ---------------------------------------------------------------------------
# Metric oracles

def test_metrics_hand_values():
    # y=[1,3], yhat=[2,2]: MAE=1, RMSE=1, MAPE=(1/1+1/3)/2*100, R2=1-2/2=0
    rep = metrics([1.0, 3.0], [2.0, 2.0])
    assert rep.mae == 1.0
    assert rep.rmse == 1.0
    assert abs(rep.mape_percent - 200.0 / 3.0) < 1e-12
    assert rep.r_squared == 0.0
    assert rep.n == 2


def test_metrics_perfect_prediction():
    y = np.array([0.5, 1.5, 2.5])
    rep = metrics(y, y)
    assert rep.mae == 0.0 and rep.rmse == 0.0
    assert rep.mape_percent == 0.0
    assert rep.r_squared == 1.0


def test_metrics_undefined_cases():
    assert metrics([0.0, 1.0], [1.0, 1.0]).mape_percent is None
    assert metrics([2.0, 2.0], [1.0, 3.0]).r_squared is None


def test_metric_identities_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = rng.integers(2, 30)
        y = rng.normal(size=n)
        yh = rng.normal(size=n)
        rep = metrics(y, yh)
        assert rep.mae <= rep.rmse + 1e-15
        # RMSE^2 * n = sum of squared errors
        assert abs(rep.rmse ** 2 * n - np.sum((y - yh) ** 2)) < 1e-10


def test_metrics_scale_covariance():
    rng = np.random.default_rng(1)
    y = rng.uniform(1, 2, 20)
    yh = rng.uniform(1, 2, 20)
    a = metrics(y, yh)
    b = metrics(-3.0 * y, -3.0 * yh)
    assert abs(b.mae - 3.0 * a.mae) < 1e-12
    assert abs(b.rmse - 3.0 * a.rmse) < 1e-12
    assert abs(b.mape_percent - a.mape_percent) < 1e-9
    assert abs(b.r_squared - a.r_squared) < 1e-12


def test_metrics_rejects_bad_input():
    with pytest.raises(ValidationError):
        metrics([1.0, 2.0], [1.0])
    with pytest.raises(ValidationError):
        metrics([], [])


# ---------------------------------------------------------------------------
# Dataset evaluation

def _dataset(n=6):
    return [synthetic_truth(generate_synthetic(40 + k, 20, 4.0), 90 + k)
            for k in range(n)]


def test_evaluate_preserves_order_and_matches_serial():
    nets = _dataset()
    rep1, preds1 = evaluate(nets, lambda n: predict_analytic(
        n, "cones-cylinders"), jobs=1)
    rep4, preds4 = evaluate(nets, lambda n: predict_analytic(
        n, "cones-cylinders"), jobs=4)
    assert preds1 == preds4
    assert rep1.to_dict() == rep4.to_dict()


def test_evaluate_requires_targets():
    net = generate_synthetic(0, 10, 4.0)
    with pytest.raises(ValidationError, match="target_permeability"):
        evaluate([net], lambda n: 1.0)


def test_predict_embedded_runs():
    nets = _dataset(3)
    stats = compute_norm_stats(nets)
    params = init_params(GnnDims(out_scale=1e-3), 0)
    k = predict_embedded(nets[0], params, stats)
    assert np.isfinite(k) and k > 0


# ---------------------------------------------------------------------------
# Feature sensitivity

def test_sensitivity_shapes_and_whiskers():
    nets = _dataset(4)
    stats = compute_norm_stats(nets)
    params = init_params(GnnDims(out_scale=1e-3), 7)
    rep = feature_sensitivity([normalize(n, stats) for n in nets], params)
    assert len(rep.node) == 8
    assert len(rep.edge) == 15
    assert rep.node_samples.shape == (sum(n.num_pores for n in nets), 8)
    for s in rep.node + rep.edge:
        assert s.q25 <= s.median <= s.q75
        # whiskers are data points inside the 1.5*IQR fences
        iqr = s.q75 - s.q25
        assert s.lo_whisker >= s.q25 - 1.5 * iqr - 1e-12
        assert s.hi_whisker <= s.q75 + 1.5 * iqr + 1e-12
        assert s.lo_whisker <= s.q25 and s.hi_whisker >= s.q75


def test_sensitivity_matches_fd_single_feature():
    import dataclasses
    nets = _dataset(1)
    stats = compute_norm_stats(nets)
    params = init_params(GnnDims(out_scale=1e-3), 7)
    nrm = normalize(nets[0], stats)
    rep = feature_sensitivity([nrm], params)

    from permnet import gnn, solver

    def K_of(edge_features):
        p = dataclasses.replace(nrm, edge_features=edge_features)
        g, _ = gnn.gnn_forward(p, params)
        return solver.solve(solver.assemble(p, g), p, g).permeability

    i, j = 2, 0   # throat 2, throat_diameter (z-scored)
    d = 1e-5
    up = nrm.edge_features.copy()
    dn = nrm.edge_features.copy()
    up[i, j] += d
    dn[i, j] -= d
    fd = (K_of(up) - K_of(dn)) / (2 * d)
    assert abs(rep.edge_samples[i, j] - fd) <= 1e-4 * max(abs(fd), 1e-12)


def test_sensitivity_csv_roundtrip(tmp_path):
    nets = _dataset(2)
    stats = compute_norm_stats(nets)
    params = init_params(GnnDims(out_scale=1e-3), 1)
    rep = feature_sensitivity([normalize(n, stats) for n in nets], params)
    path = tmp_path / "node.csv"
    write_sensitivity_csv(rep.node, path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["feature"] for r in rows] == [s.feature for s in rep.node]
    for r, s in zip(rows, rep.node):
        assert float(r["median"]) == s.median
        assert int(r["n"]) == s.n
