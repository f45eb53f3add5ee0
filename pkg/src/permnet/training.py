"""End-to-end training loop: GNN forward -> PNM solve -> loss -> adjoint ->
GNN backward -> plain gradient-descent update; plus direct regression for
the graph-level baseline.

Permeability in SI can be a tiny number, so the loss operates on scaled
permeability (K multiplied by `loss_scale`, default 1/mean target); this
multiplies all gradients by a constant and leaves the minimizer unchanged.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import adjoint, gnn, solver
from .errors import PermnetError, SolverError, ValidationError
from .network import NormStats, PoreNetwork, compute_norm_stats, normalize


@dataclass
class TrainConfig:
    learning_rate: float = 0.2
    num_epochs: int = 200
    batch_size: int = 20
    seed: int = 0
    loss_scale: float | None = None    # None: 1 / mean target permeability
    checkpoint_every: int = 0          # 0: final checkpoint only
    model: str = "embedded"            # "embedded" | "baseline"
    hidden1: int = 32
    hidden2: int = 32
    edge_hidden: int = 32
    val_fraction: float = 0.1
    # Fixed multiplier on the Softplus head. None: mean analytic conductance
    # of the training throats (embedded) or mean target permeability
    # (baseline), so predictions start at the right order of magnitude.
    out_scale: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0 and self.learning_rate != 0.0:
            raise ValidationError("learning_rate must be >= 0")
        if self.num_epochs < 1:
            raise ValidationError("num_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.model not in ("embedded", "baseline"):
            raise ValidationError(f"unknown model {self.model!r}")


@dataclass
class TrainState:
    params: object               # GnnParameters or BaselineParameters
    model: str
    epoch: int
    norm_stats: NormStats
    loss_scale: float
    learning_rate: float = 0.0
    loss_history: list = field(default_factory=list)


def loss(K: float, K_star: float) -> float:
    """J = (K - K*)^2 / 2."""
    if not (np.isfinite(K) and np.isfinite(K_star)):
        raise SolverError("non-finite permeability in loss")
    return 0.5 * (K - K_star) ** 2


def _sample_gradient_embedded(state: TrainState, net: PoreNetwork,
                              net_raw: PoreNetwork):
    """One forward/adjoint/backward pass; returns (scaled J, param grads)."""
    s = state.loss_scale
    g, tape = gnn.gnn_forward(net, state.params)
    system = solver.assemble(net_raw, g)
    sol = solver.solve(system, net_raw, g)
    K_star = net_raw.target_permeability
    J = loss(s * sol.permeability, s * K_star)
    adj = adjoint.adjoint_solve(system, sol, net_raw, K_star)
    dJ_dg = adjoint.gradient_wrt_conductance(net_raw, g, sol, adj)
    # Scaled loss: dJ/dg picks up the constant factor loss_scale^2.
    grads, _, _ = gnn.gnn_backward(tape, state.params, s * s * dJ_dg)
    return J, grads


def _sample_gradient_baseline(state: TrainState, net: PoreNetwork,
                              net_raw: PoreNetwork):
    s = state.loss_scale
    K, tape = gnn.baseline_forward(net, state.params)
    K_star = net_raw.target_permeability
    J = loss(s * K, s * K_star)
    grads = gnn.baseline_backward(tape, state.params,
                                  s * s * (K - K_star))
    return J, grads


def train_step(state: TrainState, batch):
    """One gradient-descent step on a batch of (normalized, raw) network
    pairs; the parameter gradient is the batch mean. Returns (state, mean J).
    """
    sample_fn = (_sample_gradient_embedded if state.model == "embedded"
                 else _sample_gradient_baseline)
    total = None
    mean_J = 0.0
    for k, (net, net_raw) in enumerate(batch):
        if net_raw.target_permeability is None:
            raise ValidationError(f"sample {k} has no target_permeability")
        try:
            J, grads = sample_fn(state, net, net_raw)
        except PermnetError as exc:
            raise SolverError(f"training step failed on sample {k}: {exc}") \
                from exc
        if not np.isfinite(J):
            raise SolverError(f"non-finite loss on sample {k}")
        mean_J += J
        gvec = grads.flatten()
        total = gvec if total is None else total + gvec
    n = len(batch)
    mean_J /= n
    update = total / n
    new_flat = state.params.flatten() - state.learning_rate * update
    state.params = type(state.params).unflatten(state.params.dims, new_flat)
    return state, mean_J


def _eval_loss(state: TrainState, pairs):
    s = state.loss_scale
    vals = []
    for net, net_raw in pairs:
        if state.model == "embedded":
            g, _ = gnn.gnn_forward(net, state.params)
            system = solver.assemble(net_raw, g)
            sol = solver.solve(system, net_raw, g)
            K = sol.permeability
        else:
            K, _ = gnn.baseline_forward(net, state.params)
        vals.append(loss(s * K, s * net_raw.target_permeability))
    return float(np.mean(vals)) if vals else float("nan")


def split_dataset(networks, seed: int, val_fraction: float = 0.1):
    """Seeded shuffle, then hold out the trailing fraction for validation."""
    idx = np.arange(len(networks))
    np.random.default_rng(np.random.SeedSequence([seed, 0xD5])).shuffle(idx)
    n_val = int(round(val_fraction * len(networks)))
    train_idx, val_idx = idx[:len(idx) - n_val], idx[len(idx) - n_val:]
    return ([networks[i] for i in train_idx],
            [networks[i] for i in val_idx])


def train(config: TrainConfig, networks, log_path=None, checkpoint_path=None,
          resume_from=None) -> TrainState:
    """Run the full training loop; deterministic in config.seed."""
    if not networks:
        raise ValidationError("empty training dataset")
    for k, net in enumerate(networks):
        if net.target_permeability is None:
            raise ValidationError(f"network {k} has no target_permeability")

    train_nets, val_nets = split_dataset(
        networks, config.seed, config.val_fraction)
    stats = compute_norm_stats(train_nets)

    if resume_from is not None:
        state = load_checkpoint(resume_from)
        stats = state.norm_stats
    else:
        out_scale = config.out_scale
        if out_scale is None:
            if config.model == "embedded":
                out_scale = float(np.mean(np.concatenate(
                    [solver.analytic_conductance(n, "cones-cylinders")
                     for n in train_nets])))
            else:
                out_scale = float(np.mean(
                    [n.target_permeability for n in train_nets]))
        dims = gnn.GnnDims(hidden1=config.hidden1, hidden2=config.hidden2,
                           edge_hidden=config.edge_hidden,
                           out_scale=out_scale)
        if config.model == "embedded":
            params = gnn.init_params(dims, config.seed)
        else:
            params = gnn.init_baseline_params(dims, config.seed)
        scale = config.loss_scale
        if scale is None:
            scale = 1.0 / float(np.mean(
                [n.target_permeability for n in train_nets]))
        state = TrainState(params=params, model=config.model, epoch=0,
                           norm_stats=stats, loss_scale=scale)
    state.learning_rate = config.learning_rate

    train_pairs = [(normalize(n, stats), n) for n in train_nets]
    val_pairs = [(normalize(n, stats), n) for n in val_nets]

    log_fh = open(log_path, "a") if log_path else None
    try:
        for epoch in range(state.epoch + 1, config.num_epochs + 1):
            t0 = time.perf_counter()
            order = np.arange(len(train_pairs))
            np.random.default_rng(
                np.random.SeedSequence([config.seed, epoch])).shuffle(order)
            epoch_J = []
            for start in range(0, len(order), config.batch_size):
                batch = [train_pairs[i]
                         for i in order[start:start + config.batch_size]]
                state, J = train_step(state, batch)
                epoch_J.append(J)
            entry = {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_J)),
                "val_loss": _eval_loss(state, val_pairs),
                "wall_ms": round((time.perf_counter() - t0) * 1e3, 3),
            }
            state.epoch = epoch
            state.loss_history.append(
                {"epoch": epoch, "train_loss": entry["train_loss"],
                 "val_loss": entry["val_loss"]})
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            if checkpoint_path and config.checkpoint_every and \
                    epoch % config.checkpoint_every == 0:
                save_checkpoint(state, checkpoint_path)
        if checkpoint_path:
            save_checkpoint(state, checkpoint_path)
    finally:
        if log_fh:
            log_fh.close()
    return state


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(state: TrainState, path) -> None:
    doc = {
        "model": state.model,
        "dims": state.params.dims.to_dict(),
        "params": state.params.flatten().tolist(),
        "norm_stats": state.norm_stats.to_dict(),
        "loss_scale": state.loss_scale,
        "epoch": state.epoch,
        "loss_history": state.loss_history,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> TrainState:
    from .errors import ParseError
    try:
        with open(path) as fh:
            doc = json.load(fh)
        dims = gnn.GnnDims.from_dict(doc["dims"])
        vec = np.asarray(doc["params"], dtype=float)
        if doc["model"] == "embedded":
            params = gnn.GnnParameters.unflatten(dims, vec)
        elif doc["model"] == "baseline":
            params = gnn.BaselineParameters.unflatten(dims, vec)
        else:
            raise ParseError(f"unknown model {doc['model']!r} in checkpoint")
        return TrainState(
            params=params,
            model=doc["model"],
            epoch=int(doc["epoch"]),
            norm_stats=NormStats.from_dict(doc["norm_stats"]),
            loss_scale=float(doc["loss_scale"]),
            loss_history=list(doc.get("loss_history", [])),
        )
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        from .errors import ParseError
        raise ParseError(f"cannot read checkpoint {path}: {exc}") from exc
