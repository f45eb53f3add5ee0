import json

import numpy as np
import pytest
from click.testing import CliRunner

from permnet.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def _gen(runner, out_dir, count=6, pores=15, seed=4, extra=()):
    res = runner.invoke(main, ["--quiet", "gen", "--seed", str(seed),
                               "--count", str(count), "--pores", str(pores),
                               "--out-dir", str(out_dir), *extra])
    assert res.exit_code == 0, res.output
    return res


def _train(runner, data_dir, ck, epochs=3, extra=()):
    res = runner.invoke(main, [
        "--quiet", "train", "--data", str(data_dir), "--out", str(ck),
        "--epochs", str(epochs), "--batch-size", "4", "--seed", "1",
        "--hidden", "8", *extra])
    assert res.exit_code == 0, res.output
    return res


# ---------------------------------------------------------------------------
# gen

def test_gen_writes_networks_and_manifest(runner, tmp_path):
    _gen(runner, tmp_path / "d")
    files = sorted((tmp_path / "d").glob("net_*.json"))
    assert len(files) == 6
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert [f["file"] for f in manifest["files"]] == [f.name for f in files]
    for entry in manifest["files"]:
        assert entry["target_permeability"] > 0


def test_gen_deterministic(runner, tmp_path):
    _gen(runner, tmp_path / "a")
    _gen(runner, tmp_path / "b")
    for fa, fb in zip(sorted((tmp_path / "a").iterdir()),
                      sorted((tmp_path / "b").iterdir())):
        assert fa.read_bytes() == fb.read_bytes()


# ---------------------------------------------------------------------------
# train / eval / predict pipeline

def test_train_eval_predict(runner, tmp_path):
    data = tmp_path / "data"
    _gen(runner, data)
    ck = tmp_path / "model.json"
    log = tmp_path / "log.jsonl"
    _train(runner, data, ck, extra=["--log", str(log)])
    assert ck.exists()
    assert len(log.read_text().splitlines()) == 3

    res = runner.invoke(main, ["--quiet", "eval", "--data", str(data),
                               "--model", "embedded",
                               "--checkpoint", str(ck)])
    assert res.exit_code == 0, res.output
    rep = json.loads(res.output.strip().splitlines()[-1])
    assert set(rep) == {"mae", "rmse", "mape_percent", "r_squared", "n"}
    assert rep["n"] == 6

    one = sorted(data.glob("net_*.json"))[0]
    res = runner.invoke(main, ["--quiet", "predict", "--network", str(one),
                               "--checkpoint", str(ck)])
    assert res.exit_code == 0, res.output
    out = json.loads(res.output.strip())
    assert out["model"] == "embedded"
    assert out["predicted_permeability"] > 0


def test_eval_analytic_needs_shape(runner, tmp_path):
    data = tmp_path / "data"
    _gen(runner, data)
    res = runner.invoke(main, ["--quiet", "eval", "--data", str(data),
                               "--model", "analytic"])
    assert res.exit_code == 3
    err = json.loads(res.output.strip().splitlines()[-1])
    assert "--shape" in err["message"]

    res = runner.invoke(main, ["--quiet", "eval", "--data", str(data),
                               "--model", "analytic",
                               "--shape", "cones-cylinders"])
    assert res.exit_code == 0, res.output


def test_eval_pred_out_csv(runner, tmp_path):
    data = tmp_path / "data"
    _gen(runner, data)
    pred = tmp_path / "pred.csv"
    res = runner.invoke(main, ["--quiet", "eval", "--data", str(data),
                               "--model", "analytic",
                               "--shape", "cubes-cuboids",
                               "--pred-out", str(pred)])
    assert res.exit_code == 0, res.output
    lines = pred.read_text().splitlines()
    assert lines[0] == "index,target_permeability,predicted_permeability"
    assert len(lines) == 7


def test_checkpoint_model_mismatch(runner, tmp_path):
    data = tmp_path / "data"
    _gen(runner, data)
    ck = tmp_path / "base.json"
    _train(runner, data, ck, extra=["--model", "baseline"])
    res = runner.invoke(main, ["--quiet", "eval", "--data", str(data),
                               "--model", "embedded",
                               "--checkpoint", str(ck)])
    assert res.exit_code == 3
    assert "baseline" in res.output


# ---------------------------------------------------------------------------
# gradcheck

def test_gradcheck_passes_on_random_problem(runner):
    res = runner.invoke(main, ["--quiet", "gradcheck", "--seed", "2",
                               "--pores", "12", "--json"])
    assert res.exit_code == 0, res.output
    doc = json.loads(res.output.strip().splitlines()[-1])
    assert doc["max_rel_error"] < doc["tol"]


def test_gradcheck_fails_with_impossible_tolerance(runner):
    res = runner.invoke(main, ["--quiet", "gradcheck", "--seed", "2",
                               "--pores", "12", "--tol", "1e-300"])
    assert res.exit_code == 4


# ---------------------------------------------------------------------------
# error channels

def test_parse_error_exit_code(runner, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    res = runner.invoke(main, ["--quiet", "eval", "--data", str(bad),
                               "--model", "analytic",
                               "--shape", "cones-cylinders"])
    assert res.exit_code == 3
    err = json.loads(res.output.strip().splitlines()[-1])
    assert err["error"] == "ParseError"


def test_usage_error_exit_code(runner):
    res = runner.invoke(main, ["train"])   # missing required options
    assert res.exit_code == 2


def test_predict_stats_mismatch(runner, tmp_path):
    from permnet import compute_norm_stats, generate_synthetic
    from permnet.network import save_norm_stats
    data = tmp_path / "data"
    _gen(runner, data)
    ck = tmp_path / "model.json"
    _train(runner, data, ck)
    other = compute_norm_stats([generate_synthetic(99, 10, 4.0)])
    stats_path = tmp_path / "stats.json"
    save_norm_stats(other, stats_path)
    one = sorted(data.glob("net_*.json"))[0]
    res = runner.invoke(main, ["--quiet", "predict", "--network", str(one),
                               "--checkpoint", str(ck),
                               "--stats", str(stats_path)])
    assert res.exit_code == 3
    assert "mismatch" in res.output


# ---------------------------------------------------------------------------
# config file merge

def test_config_file_defaults_and_flag_priority(runner, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gen": {"count": 3, "pores": 12}}))
    out = tmp_path / "d"
    res = runner.invoke(main, ["--config", str(cfg), "gen", "--seed", "4",
                               "--pores", "10", "--out-dir", str(out)])
    assert res.exit_code == 0, res.output
    effective = json.loads(res.output.strip().splitlines()[0])
    assert effective["count"] == 3      # from config file
    assert effective["pores"] == 10     # flag wins over config
    assert len(list(out.glob("net_*.json"))) == 3


# ---------------------------------------------------------------------------
# figures and sensitivity outputs

def test_figures_and_sens_outputs(runner, tmp_path):
    data = tmp_path / "data"
    _gen(runner, data)
    ck = tmp_path / "model.json"
    fig = tmp_path / "loss.png"
    _train(runner, data, ck, extra=["--figure", str(fig)])
    assert fig.exists() and fig.stat().st_size > 0

    parity = tmp_path / "parity.png"
    res = runner.invoke(main, ["--quiet", "eval", "--data", str(data),
                               "--model", "embedded", "--checkpoint", str(ck),
                               "--figure", str(parity)])
    assert res.exit_code == 0, res.output
    assert parity.exists() and parity.stat().st_size > 0

    sens_dir = tmp_path / "sens"
    res = runner.invoke(main, ["--quiet", "sens", "--checkpoint", str(ck),
                               "--data", str(data),
                               "--out-dir", str(sens_dir)])
    assert res.exit_code == 0, res.output
    for name in ("sensitivity_node.csv", "sensitivity_edge.csv",
                 "sensitivity_node.png", "sensitivity_edge.png"):
        assert (sens_dir / name).exists()
