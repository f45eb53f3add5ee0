"""Edge-level message-passing GNN predicting per-throat conductance, with
hand-written reverse mode producing parameter and input-feature gradients.

Two message-passing layers (mean aggregation over neighbors, ReLU), then a
per-edge MLP on [h_p1; h_p2; e] with a Softplus output so conductance is
always positive. The graph-level baseline shares the message-passing stack
and mean-pools node embeddings into a single permeability prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import SolverError, ValidationError
from .network import (NUM_EDGE_FEATURES, NUM_NODE_FEATURES, PoreNetwork)


def relu(z):
    return np.maximum(z, 0.0)


def softplus(z):
    # Stable form: max(z, 0) + log1p(exp(-|z|))
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


@dataclass
class Affine:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray    # (out_dim,)

    def __call__(self, x):
        return x @ self.weight.T + self.bias

    def zeros_like(self):
        return Affine(np.zeros_like(self.weight), np.zeros_like(self.bias))


@dataclass(frozen=True)
class GnnDims:
    node_in: int = NUM_NODE_FEATURES
    edge_in: int = NUM_EDGE_FEATURES
    hidden1: int = 32
    hidden2: int = 32
    edge_hidden: int = 32
    # Fixed (untrained) multiplier on the Softplus output. Conductances and
    # permeabilities live many orders of magnitude below 1, where Softplus
    # gradients vanish; predicting in units of out_scale keeps the head's
    # pre-activation in its well-conditioned range.
    out_scale: float = 1.0

    def __post_init__(self):
        if self.node_in != NUM_NODE_FEATURES or self.edge_in != NUM_EDGE_FEATURES:
            raise ValidationError(
                "input dimensions are fixed by the feature tables "
                f"({NUM_NODE_FEATURES} node, {NUM_EDGE_FEATURES} edge)")
        if min(self.hidden1, self.hidden2, self.edge_hidden) < 1:
            raise ValidationError("all hidden dimensions must be positive")
        if not (np.isfinite(self.out_scale) and self.out_scale > 0):
            raise ValidationError("out_scale must be positive and finite")

    def to_dict(self):
        return {"node_in": self.node_in, "edge_in": self.edge_in,
                "hidden1": self.hidden1, "hidden2": self.hidden2,
                "edge_hidden": self.edge_hidden,
                "out_scale": self.out_scale}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        scale = float(d.pop("out_scale", 1.0))
        return cls(out_scale=scale, **{k: int(v) for k, v in d.items()})


def _glorot(rng, out_dim, in_dim):
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return Affine(rng.uniform(-limit, limit, size=(out_dim, in_dim)),
                  np.zeros(out_dim))


@dataclass
class GnnParameters:
    msg1: Affine
    apply1: Affine
    msg2: Affine
    apply2: Affine
    hid: Affine
    out: Affine
    dims: GnnDims

    _ORDER = ("msg1", "apply1", "msg2", "apply2", "hid", "out")

    def layers(self):
        return [(name, getattr(self, name)) for name in self._ORDER]

    def flatten(self):
        parts = []
        for _, layer in self.layers():
            parts.append(layer.weight.ravel())
            parts.append(layer.bias)
        return np.concatenate(parts)

    @classmethod
    def layer_shapes(cls, dims: GnnDims):
        d0, de = dims.node_in, dims.edge_in
        d1, d2, dp = dims.hidden1, dims.hidden2, dims.edge_hidden
        return {
            "msg1": (d0, d0 + de),
            "apply1": (d1, 2 * d0),
            "msg2": (d1, d1 + de),
            "apply2": (d2, 2 * d1),
            "hid": (dp, 2 * d2 + de),
            "out": (1, dp),
        }

    @classmethod
    def unflatten(cls, dims: GnnDims, vec: np.ndarray) -> "GnnParameters":
        shapes = cls.layer_shapes(dims)
        layers = {}
        pos = 0
        for name in cls._ORDER:
            o, i = shapes[name]
            w = vec[pos:pos + o * i].reshape(o, i).copy()
            pos += o * i
            b = vec[pos:pos + o].copy()
            pos += o
            layers[name] = Affine(w, b)
        if pos != len(vec):
            raise ValidationError(
                f"flat vector length {len(vec)} does not match dims")
        return cls(dims=dims, **layers)

    def zeros_like(self):
        return GnnParameters(
            dims=self.dims,
            **{name: layer.zeros_like() for name, layer in self.layers()})

    def copy(self):
        return GnnParameters.unflatten(self.dims, self.flatten())


def init_params(dims: GnnDims, seed: int) -> GnnParameters:
    rng = np.random.default_rng(seed)
    shapes = GnnParameters.layer_shapes(dims)
    return GnnParameters(
        dims=dims,
        **{name: _glorot(rng, *shapes[name])
           for name in GnnParameters._ORDER})


# ---------------------------------------------------------------------------
# Forward pass with tape

@dataclass(eq=False)
class _LayerTape:
    h_in: np.ndarray       # node embeddings entering the layer
    z_msg: np.ndarray      # message pre-activations, per directed edge
    msg: np.ndarray        # ReLU(z_msg)
    agg: np.ndarray        # mean-aggregated messages per node
    z_apply: np.ndarray
    h_out: np.ndarray


@dataclass(eq=False)
class ForwardTape:
    num_pores: int
    num_throats: int
    src: np.ndarray        # directed-edge source node (neighbor)
    dst: np.ndarray        # directed-edge destination node (aggregating)
    deg: np.ndarray        # incident-edge count per node
    edge2: np.ndarray      # edge features duplicated per direction
    edge: np.ndarray       # edge features per throat
    p1: np.ndarray
    p2: np.ndarray
    layer1: _LayerTape = None
    layer2: _LayerTape = None
    concat: np.ndarray = None   # [h_p1; h_p2; e] per throat
    z_hid: np.ndarray = None
    m: np.ndarray = None
    z_out: np.ndarray = None
    g: np.ndarray = None


def _check_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        idx = np.argwhere(~np.isfinite(arr))[0]
        raise SolverError(
            f"non-finite activation in {where} at index {tuple(idx)}")


def _mp_layer(h, tape: ForwardTape, msg: Affine, apply_: Affine) -> _LayerTape:
    z_msg = msg(np.concatenate([h[tape.src], tape.edge2], axis=1))
    m = relu(z_msg)
    agg = np.zeros((tape.num_pores, m.shape[1]))
    np.add.at(agg, tape.dst, m)
    agg /= np.maximum(tape.deg, 1)[:, None]
    z_apply = apply_(np.concatenate([h, agg], axis=1))
    h_out = relu(z_apply)
    return _LayerTape(h_in=h, z_msg=z_msg, msg=m, agg=agg,
                      z_apply=z_apply, h_out=h_out)


def _run_message_passing(net: PoreNetwork, msg1, apply1, msg2, apply2):
    _check_finite(net.node_features, "node features")
    _check_finite(net.edge_features, "edge features")
    p1 = net.throat_endpoints[:, 0]
    p2 = net.throat_endpoints[:, 1]
    tape = ForwardTape(
        num_pores=net.num_pores,
        num_throats=net.num_throats,
        src=np.concatenate([p2, p1]),
        dst=np.concatenate([p1, p2]),
        deg=net.degrees(),
        edge2=np.vstack([net.edge_features, net.edge_features]),
        edge=net.edge_features,
        p1=p1, p2=p2)
    tape.layer1 = _mp_layer(net.node_features, tape, msg1, apply1)
    _check_finite(tape.layer1.h_out, "message-passing layer 1")
    tape.layer2 = _mp_layer(tape.layer1.h_out, tape, msg2, apply2)
    _check_finite(tape.layer2.h_out, "message-passing layer 2")
    return tape


def gnn_forward(net: PoreNetwork, params: GnnParameters):
    """Predict per-throat conductance; returns (g, tape) with g_i > 0."""
    if net.node_features.shape[1] != params.dims.node_in:
        raise ValidationError("node feature dimension mismatch")
    if net.num_throats and net.edge_features.shape[1] != params.dims.edge_in:
        raise ValidationError("edge feature dimension mismatch")
    tape = _run_message_passing(
        net, params.msg1, params.apply1, params.msg2, params.apply2)
    h2 = tape.layer2.h_out
    tape.concat = np.concatenate(
        [h2[tape.p1], h2[tape.p2], tape.edge], axis=1)
    tape.z_hid = params.hid(tape.concat)
    tape.m = relu(tape.z_hid)
    tape.z_out = params.out(tape.m)
    tape.g = params.dims.out_scale * softplus(tape.z_out).ravel()
    _check_finite(tape.g, "edge output layer")
    return tape.g, tape


def _mp_layer_backward(ltape: _LayerTape, dh_out, tape: ForwardTape,
                       msg: Affine, apply_: Affine, g_msg: Affine,
                       g_apply: Affine):
    """Backprop one message-passing layer; returns (dh_in, d_edge2)."""
    d_in = ltape.h_in.shape[1]
    dz_apply = dh_out * (ltape.z_apply > 0)
    g_apply.weight += dz_apply.T @ np.concatenate(
        [ltape.h_in, ltape.agg], axis=1)
    g_apply.bias += dz_apply.sum(axis=0)
    dcat = dz_apply @ apply_.weight
    dh_in = dcat[:, :d_in].copy()
    dagg = dcat[:, d_in:]

    scale = np.maximum(tape.deg, 1)[:, None]
    dmsg = (dagg / scale)[tape.dst]
    dz_msg = dmsg * (ltape.z_msg > 0)
    g_msg.weight += dz_msg.T @ np.concatenate(
        [ltape.h_in[tape.src], tape.edge2], axis=1)
    g_msg.bias += dz_msg.sum(axis=0)
    dcat_msg = dz_msg @ msg.weight
    np.add.at(dh_in, tape.src, dcat_msg[:, :d_in])
    return dh_in, dcat_msg[:, d_in:]


def gnn_backward(tape: ForwardTape, params: GnnParameters,
                 cotangent: np.ndarray):
    """Reverse pass: given dJ/dg per throat, return
    (parameter gradients, node-feature gradients, edge-feature gradients)."""
    cotangent = np.asarray(cotangent, dtype=float)
    if cotangent.shape != (tape.num_throats,):
        raise ValidationError(
            f"cotangent length {cotangent.shape} != num_throats "
            f"{tape.num_throats}")
    grads = params.zeros_like()
    d2 = params.dims.hidden2

    dz_out = params.dims.out_scale * cotangent[:, None] * expit(tape.z_out)
    grads.out.weight += dz_out.T @ tape.m
    grads.out.bias += dz_out.sum(axis=0)
    dm = dz_out @ params.out.weight

    dz_hid = dm * (tape.z_hid > 0)
    grads.hid.weight += dz_hid.T @ tape.concat
    grads.hid.bias += dz_hid.sum(axis=0)
    dcat = dz_hid @ params.hid.weight

    dh2 = np.zeros_like(tape.layer2.h_out)
    np.add.at(dh2, tape.p1, dcat[:, :d2])
    np.add.at(dh2, tape.p2, dcat[:, d2:2 * d2])
    d_edge = dcat[:, 2 * d2:].copy()

    dh1, de2 = _mp_layer_backward(
        tape.layer2, dh2, tape, params.msg2, params.apply2,
        grads.msg2, grads.apply2)
    d_edge += de2[:tape.num_throats] + de2[tape.num_throats:]

    dh0, de1 = _mp_layer_backward(
        tape.layer1, dh1, tape, params.msg1, params.apply1,
        grads.msg1, grads.apply1)
    d_edge += de1[:tape.num_throats] + de1[tape.num_throats:]

    return grads, dh0, d_edge


# ---------------------------------------------------------------------------
# Graph-level baseline: same message-passing stack, mean pooling, scalar K.

@dataclass
class BaselineParameters:
    msg1: Affine
    apply1: Affine
    msg2: Affine
    apply2: Affine
    out: Affine        # (1, hidden2) weight w_K and bias beta
    dims: GnnDims

    _ORDER = ("msg1", "apply1", "msg2", "apply2", "out")

    def layers(self):
        return [(name, getattr(self, name)) for name in self._ORDER]

    def flatten(self):
        parts = []
        for _, layer in self.layers():
            parts.append(layer.weight.ravel())
            parts.append(layer.bias)
        return np.concatenate(parts)

    @classmethod
    def layer_shapes(cls, dims: GnnDims):
        shapes = GnnParameters.layer_shapes(dims)
        return {name: shapes[name] for name in ("msg1", "apply1", "msg2",
                                                "apply2")} | {
            "out": (1, dims.hidden2)}

    @classmethod
    def unflatten(cls, dims: GnnDims, vec: np.ndarray) -> "BaselineParameters":
        shapes = cls.layer_shapes(dims)
        layers = {}
        pos = 0
        for name in cls._ORDER:
            o, i = shapes[name]
            layers[name] = Affine(
                vec[pos:pos + o * i].reshape(o, i).copy(),
                vec[pos + o * i:pos + o * i + o].copy())
            pos += o * i + o
        if pos != len(vec):
            raise ValidationError(
                f"flat vector length {len(vec)} does not match dims")
        return cls(dims=dims, **layers)

    def zeros_like(self):
        return BaselineParameters(
            dims=self.dims,
            **{name: layer.zeros_like() for name, layer in self.layers()})


def init_baseline_params(dims: GnnDims, seed: int) -> BaselineParameters:
    rng = np.random.default_rng(seed)
    shapes = BaselineParameters.layer_shapes(dims)
    return BaselineParameters(
        dims=dims,
        **{name: _glorot(rng, *shapes[name])
           for name in BaselineParameters._ORDER})


@dataclass(eq=False)
class BaselineTape:
    mp: ForwardTape
    pooled: np.ndarray
    z_out: float
    K: float


def baseline_forward(net: PoreNetwork, params: BaselineParameters):
    """Graph-level prediction K = Softplus(beta + w_K . mean_p h_p)."""
    tape = _run_message_passing(
        net, params.msg1, params.apply1, params.msg2, params.apply2)
    pooled = tape.layer2.h_out.mean(axis=0)
    z = float((params.out.weight @ pooled + params.out.bias)[0])
    K = params.dims.out_scale * float(softplus(np.array([z]))[0])
    return K, BaselineTape(mp=tape, pooled=pooled, z_out=z, K=K)


def baseline_backward(tape: BaselineTape, params: BaselineParameters,
                      dK: float):
    """Reverse pass for the baseline; returns parameter gradients."""
    grads = params.zeros_like()
    dz = params.dims.out_scale * dK * float(expit(tape.z_out))
    grads.out.weight += dz * tape.pooled[None, :]
    grads.out.bias += dz
    dpooled = dz * params.out.weight.ravel()
    dh2 = np.broadcast_to(
        dpooled / tape.mp.num_pores, tape.mp.layer2.h_out.shape).copy()
    dh1, _ = _mp_layer_backward(
        tape.mp.layer2, dh2, tape.mp, params.msg2, params.apply2,
        grads.msg2, grads.apply2)
    _mp_layer_backward(
        tape.mp.layer1, dh1, tape.mp, params.msg1, params.apply1,
        grads.msg1, grads.apply1)
    return grads
