"""Command-line interface: gen, train, eval, gradcheck, sens, predict.

Machine-readable outputs are JSON/CSV; report figures (loss curve, parity
scatter, sensitivity box plots) are rendered next to them. Exit codes:
0 ok, 2 usage, 3 validation/parse failure, 4 numeric failure.
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import adjoint, gnn, network as nw, solver, training
# The package root re-exports a function named `evaluate`, which shadows the
# submodule attribute of the same name, so import its members directly.
from .evaluate import (evaluate as run_evaluate, feature_sensitivity,
                       predict_analytic, predict_baseline, predict_embedded,
                       write_sensitivity_csv)
from .errors import ParseError, PermnetError, SolverError, ValidationError


def _fail(code, kind, message):
    click.echo(json.dumps({"error": kind, "message": message}), err=True)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ParseError, ValidationError) as exc:
            _fail(3, type(exc).__name__, str(exc))
        except SolverError as exc:
            _fail(4, "SolverError", str(exc))
        except PermnetError as exc:
            _fail(4, type(exc).__name__, str(exc))
    return wrapper


def _load_config(path):
    if not path:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc


def _effective(ctx, command, **options):
    """Merge config-file values under `command` with CLI flags; flags win.
    Returns the materialized option dict."""
    cfg = dict(ctx.obj.get("config", {}).get(command, {}))
    out = {}
    for name, value in options.items():
        src = ctx.get_parameter_source(name)
        if (src is not None and src.name == "DEFAULT" and name in cfg):
            out[name] = cfg[name]
        else:
            out[name] = value
    if not ctx.obj.get("quiet"):
        block = {"command": command, **{k: _jsonable(v)
                                        for k, v in sorted(out.items())}}
        click.echo(json.dumps(block))
    return out


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    return v


def load_dataset(path):
    """A dataset path is either one network file or a directory of
    net_*.json files (manifest and stats files are ignored)."""
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("net_*.json"))
        if not files:
            raise ValidationError(f"no net_*.json files in {p}")
        return [nw.load_network(f) for f in files]
    return [nw.load_network(p)]


def _stats_hash(stats: nw.NormStats) -> str:
    blob = json.dumps(stats.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


@click.group()
@click.option("--jobs", type=int, default=None,
              help="Sample-level parallelism (default: available cores).")
@click.option("--seed", type=int, default=0, help="Global default seed.")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="JSON config file mirroring the flags.")
@click.option("--quiet", is_flag=True, default=False)
@click.pass_context
def main(ctx, jobs, seed, config_path, quiet):
    """GNN-embedded pore network model for permeability prediction."""
    ctx.obj = {
        "jobs": jobs if jobs is not None else (os.cpu_count() or 1),
        "seed": seed,
        "config": _load_config(config_path),
        "quiet": quiet,
    }


@main.command()
@click.option("--seed", type=int, default=None)
@click.option("--count", type=int, default=10)
@click.option("--pores", type=int, default=50)
@click.option("--coord", type=float, default=4.0)
@click.option("--out-dir", type=click.Path(), required=True)
@click.pass_context
@handle_errors
def gen(ctx, seed, count, pores, coord, out_dir):
    """Generate synthetic networks with oracle ground-truth permeability."""
    if seed is None:
        seed = ctx.obj["seed"]
    opts = _effective(ctx, "gen", seed=seed, count=count, pores=pores,
                      coord=coord, out_dir=out_dir)
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": opts["seed"], "count": opts["count"],
                "pores": opts["pores"], "coord": opts["coord"], "files": []}
    for k in range(opts["count"]):
        net = nw.generate_synthetic(
            seed=opts["seed"] + k, num_pores=opts["pores"],
            avg_coordination=opts["coord"])
        net = nw.synthetic_truth(net, truth_seed=opts["seed"] * 1_000_003 + k)
        name = f"net_{k:04d}.json"
        nw.save_network(net, out / name)
        manifest["files"].append(
            {"file": name, "target_permeability": net.target_permeability})
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    if not ctx.obj["quiet"]:
        click.echo(f"wrote {opts['count']} networks to {out}")


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", "checkpoint_path", type=click.Path(), required=True)
@click.option("--log", "log_path", type=click.Path(), default=None)
@click.option("--model", type=click.Choice(["embedded", "baseline"]),
              default="embedded")
@click.option("--epochs", type=int, default=200)
@click.option("--lr", type=float, default=0.2)
@click.option("--batch-size", type=int, default=20)
@click.option("--seed", type=int, default=None)
@click.option("--loss-scale", type=float, default=None)
@click.option("--out-scale", type=float, default=None,
              help="Fixed multiplier on the Softplus head "
                   "(default: set from the training data).")
@click.option("--checkpoint-every", type=int, default=0)
@click.option("--hidden", type=int, default=32,
              help="Width of every hidden layer.")
@click.option("--resume", type=click.Path(exists=True), default=None)
@click.option("--figure", type=click.Path(), default=None,
              help="Render the loss curve to this file.")
@click.pass_context
@handle_errors
def train(ctx, data, checkpoint_path, log_path, model, epochs, lr,
          batch_size, seed, loss_scale, out_scale, checkpoint_every, hidden,
          resume, figure):
    """Train the embedded model (adjoint-coupled) or the pure-GNN baseline."""
    if seed is None:
        seed = ctx.obj["seed"]
    opts = _effective(ctx, "train", data=data, out=checkpoint_path,
                      log=log_path, model=model, epochs=epochs, lr=lr,
                      batch_size=batch_size, seed=seed,
                      loss_scale=loss_scale, out_scale=out_scale,
                      checkpoint_every=checkpoint_every, hidden=hidden,
                      resume=resume, figure=figure)
    networks = load_dataset(opts["data"])
    config = training.TrainConfig(
        learning_rate=opts["lr"], num_epochs=opts["epochs"],
        batch_size=opts["batch_size"], seed=opts["seed"],
        loss_scale=opts["loss_scale"], out_scale=opts["out_scale"],
        model=opts["model"],
        checkpoint_every=opts["checkpoint_every"],
        hidden1=opts["hidden"], hidden2=opts["hidden"],
        edge_hidden=opts["hidden"])
    state = training.train(
        config, networks, log_path=opts["log"],
        checkpoint_path=opts["out"], resume_from=opts["resume"])
    if opts["figure"]:
        from . import report
        report.save_loss_curves(state.loss_history, opts["figure"])
    if not ctx.obj["quiet"]:
        last = state.loss_history[-1] if state.loss_history else {}
        click.echo(f"trained {opts['model']} model to epoch {state.epoch}; "
                   f"final train loss {last.get('train_loss')}")


def _make_predictor(model, checkpoint, shape):
    if model == "analytic":
        if shape is None:
            raise ValidationError("--shape is required with --model analytic")
        return lambda net: predict_analytic(net, shape)
    if checkpoint is None:
        raise ValidationError(f"--checkpoint is required with --model {model}")
    state = training.load_checkpoint(checkpoint)
    if state.model != model:
        raise ValidationError(
            f"checkpoint holds a {state.model!r} model, not {model!r}")
    if model == "embedded":
        return lambda net: predict_embedded(
            net, state.params, state.norm_stats)
    return lambda net: predict_baseline(net, state.params, state.norm_stats)


@main.command("eval")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--model", type=click.Choice(["embedded", "baseline",
                                            "analytic"]), required=True)
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--shape",
              type=click.Choice(sorted(solver.SHAPE_FACTOR_COLUMNS)),
              default=None)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the metric report JSON here.")
@click.option("--pred-out", type=click.Path(), default=None,
              help="Write per-sample predictions CSV here.")
@click.option("--figure", type=click.Path(), default=None,
              help="Render a parity scatter plot to this file.")
@click.pass_context
@handle_errors
def eval_cmd(ctx, data, model, checkpoint, shape, out_path, pred_out, figure):
    """Evaluate a model over a dataset and report MAE/RMSE/MAPE/R^2."""
    opts = _effective(ctx, "eval", data=data, model=model,
                      checkpoint=checkpoint, shape=shape, out=out_path,
                      pred_out=pred_out, figure=figure)
    networks = load_dataset(opts["data"])
    predictor = _make_predictor(opts["model"], opts["checkpoint"],
                                opts["shape"])
    report_, preds = run_evaluate(networks, predictor, jobs=ctx.obj["jobs"])
    doc = report_.to_dict()
    click.echo(json.dumps(doc))
    if opts["out"]:
        with open(opts["out"], "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")
    if opts["pred_out"]:
        with open(opts["pred_out"], "w") as fh:
            fh.write("index,target_permeability,predicted_permeability\n")
            for i, (net, p) in enumerate(zip(networks, preds)):
                fh.write(f"{i},{net.target_permeability!r},{p!r}\n")
    if opts["figure"]:
        from . import report
        report.save_parity_plot(
            [n.target_permeability for n in networks], preds,
            opts["figure"], title=f"model: {opts['model']}")


@main.command()
@click.option("--network", "network_path", type=click.Path(exists=True),
              default=None, help="Network file; default: a random network.")
@click.option("--checkpoint", type=click.Path(exists=True), default=None,
              help="Model checkpoint; default: a random model.")
@click.option("--pores", type=int, default=15)
@click.option("--seed", type=int, default=None)
@click.option("--tol", type=float, default=1e-5)
@click.option("--json", "json_out", is_flag=True, default=False)
@click.pass_context
@handle_errors
def gradcheck(ctx, network_path, checkpoint, pores, seed, tol, json_out):
    """Compare adjoint per-throat gradients against the central-difference
    oracle; nonzero exit if any relative error exceeds the tolerance."""
    if seed is None:
        seed = ctx.obj["seed"]
    opts = _effective(ctx, "gradcheck", network=network_path,
                      checkpoint=checkpoint, pores=pores, seed=seed, tol=tol,
                      json=json_out)
    if opts["network"]:
        net = nw.load_network(opts["network"])
        if net.target_permeability is None:
            net = nw.synthetic_truth(net, truth_seed=opts["seed"])
    else:
        net = nw.generate_synthetic(opts["seed"], opts["pores"], 4.0)
        net = nw.synthetic_truth(net, truth_seed=opts["seed"])

    if opts["checkpoint"]:
        state = training.load_checkpoint(opts["checkpoint"])
        if state.model != "embedded":
            raise ValidationError("gradcheck needs an embedded checkpoint")
        params, stats = state.params, state.norm_stats
    else:
        params = gnn.init_params(gnn.GnnDims(), opts["seed"])
        stats = nw.compute_norm_stats([net])

    g, _ = gnn.gnn_forward(nw.normalize(net, stats), params)
    system = solver.assemble(net, g)
    sol = solver.solve(system, net, g)
    K_star = net.target_permeability
    adj = adjoint.adjoint_solve(system, sol, net, K_star)
    grad = adjoint.gradient_wrt_conductance(net, g, sol, adj)
    fd = adjoint.fd_gradient(net, g, K_star)
    rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-14)

    rows = [{"throat": i, "adjoint": float(grad[i]), "fd": float(fd[i]),
             "rel_error": float(rel[i])} for i in range(len(g))]
    if opts["json"]:
        click.echo(json.dumps({"max_rel_error": float(rel.max()),
                               "tol": opts["tol"], "throats": rows}))
    else:
        click.echo(f"{'throat':>6} {'adjoint':>14} {'fd':>14} {'rel_err':>10}")
        for r in rows:
            click.echo(f"{r['throat']:>6} {r['adjoint']:>14.6e} "
                       f"{r['fd']:>14.6e} {r['rel_error']:>10.2e}")
        click.echo(f"max relative error: {rel.max():.3e} (tol {opts['tol']})")
    if rel.max() > opts["tol"]:
        _fail(4, "GradCheckFailure",
              f"max relative error {rel.max():.3e} exceeds {opts['tol']}")


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--figures/--no-figures", default=True)
@click.pass_context
@handle_errors
def sens(ctx, checkpoint, data, out_dir, figures):
    """Gradient-based feature sensitivity: CSV tables plus box-plot figures."""
    opts = _effective(ctx, "sens", checkpoint=checkpoint, data=data,
                      out_dir=out_dir, figures=figures)
    state = training.load_checkpoint(opts["checkpoint"])
    if state.model != "embedded":
        raise ValidationError("sensitivity analysis needs an embedded model")
    networks = [nw.normalize(n, state.norm_stats)
                for n in load_dataset(opts["data"])]
    rep = feature_sensitivity(networks, state.params)
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_sensitivity_csv(rep.node, out / "sensitivity_node.csv")
    write_sensitivity_csv(rep.edge, out / "sensitivity_edge.csv")
    if opts["figures"]:
        from . import report
        report.save_sensitivity_boxplot(
            rep.node, out / "sensitivity_node.png",
            "permeability gradients: pore features")
        report.save_sensitivity_boxplot(
            rep.edge, out / "sensitivity_edge.png",
            "permeability gradients: throat features")
    if not ctx.obj["quiet"]:
        click.echo(f"sensitivity tables written to {out}")


@main.command()
@click.option("--network", "network_path", type=click.Path(exists=True),
              required=True)
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--stats", "stats_path", type=click.Path(exists=True),
              default=None,
              help="Norm-stats file that must match the checkpoint's.")
@click.pass_context
@handle_errors
def predict(ctx, network_path, checkpoint, stats_path):
    """Predict permeability for one network with a trained model."""
    opts = _effective(ctx, "predict", network=network_path,
                      checkpoint=checkpoint, stats=stats_path)
    state = training.load_checkpoint(opts["checkpoint"])
    if opts["stats"]:
        supplied = nw.load_norm_stats(opts["stats"])
        if _stats_hash(supplied) != _stats_hash(state.norm_stats):
            raise ValidationError(
                "normalization statistics mismatch: the supplied stats file "
                "does not match the checkpoint's training-time stats")
    net = nw.load_network(opts["network"])
    if state.model == "embedded":
        K = predict_embedded(net, state.params, state.norm_stats)
    else:
        K = predict_baseline(net, state.params, state.norm_stats)
    click.echo(json.dumps({"predicted_permeability": K,
                           "target_permeability": net.target_permeability,
                           "model": state.model}))


if __name__ == "__main__":
    main()
