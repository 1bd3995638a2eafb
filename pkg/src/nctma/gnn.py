"""Gated graph neural network with neighbour attention, written against numpy.

Forward pass for a graph with node inputs ``x``::

    h0_v    = x_v W_enc[type(v)] + b_enc[type(v)]
    m_v     = sum_{u in Nbr(v)} a_vu (h_u W_msg)
    a_vu    = softmax_u leaky_relu(h_v . att_self + h_u . att_nbr)   (or 1)
    z, r    = sigmoid([m, h] W_z + b_z), sigmoid([m, h] W_r + b_r)
    c       = tanh([m, r * h] W_h + b_h)
    h'      = (1 - z) * h + z * c
    p_v     = sigmoid(tanh(h_v W_1 + b_1) W_2 + b_2)     for cut nodes v

Gradients are computed by hand (backpropagation through the unrolled
iterations); ``tests/test_gnn.py`` checks them against finite differences.

Several graphs are processed at once as one disjoint union (``GraphBatch``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .encoding import FEATURE_WIDTH, NUM_TYPES, EncodedGraph
from .network import make_rng

LEAK = 0.2
CLAMP = 1e-12


class ShapeMismatch(ValueError):
    pass


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def param_shapes(hidden: int) -> dict[str, tuple[int, ...]]:
    H = hidden
    return {
        "enc_w": (NUM_TYPES, FEATURE_WIDTH, H),
        "enc_b": (NUM_TYPES, H),
        "msg_w": (H, H),
        "att_self": (H,),
        "att_nbr": (H,),
        "gru_wz": (2 * H, H),
        "gru_bz": (H,),
        "gru_wr": (2 * H, H),
        "gru_br": (H,),
        "gru_wh": (2 * H, H),
        "gru_bh": (H,),
        "out_w1": (H, H),
        "out_b1": (H,),
        "out_w2": (H, 1),
        "out_b2": (1,),
    }


BIASES = {"enc_b", "gru_bz", "gru_br", "gru_bh", "out_b1", "out_b2"}


@dataclass
class ModelParams:
    hidden: int
    iterations: int
    attention: bool
    tensors: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, hidden: int = 64, iterations: int = 15, attention: bool = True,
                   seed: int = 0) -> "ModelParams":
        """Weights uniform in +-1/sqrt(fan_in), biases zero."""
        rng = make_rng(seed, 0)
        tensors = {}
        for name, shape in param_shapes(hidden).items():
            if name in BIASES:
                tensors[name] = np.zeros(shape)
                continue
            fan_in = shape[-2] if len(shape) >= 2 else 2 * hidden  # attention: [h_v, h_u]
            bound = 1.0 / math.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        return cls(hidden, iterations, attention, tensors)

    @classmethod
    def zeros(cls, hidden: int, iterations: int, attention: bool = True) -> "ModelParams":
        return cls(hidden, iterations, attention,
                   {k: np.zeros(s) for k, s in param_shapes(hidden).items()})

    def copy(self) -> "ModelParams":
        return ModelParams(self.hidden, self.iterations, self.attention,
                           {k: v.copy() for k, v in self.tensors.items()})

    def check(self):
        for name, shape in param_shapes(self.hidden).items():
            if name not in self.tensors:
                raise ShapeMismatch(f"missing tensor {name!r}")
            if self.tensors[name].shape != shape:
                raise ShapeMismatch(
                    f"tensor {name!r} has shape {self.tensors[name].shape}, expected {shape}")
        extra = set(self.tensors) - set(param_shapes(self.hidden))
        if extra:
            raise ShapeMismatch(f"unexpected tensors {sorted(extra)}")


# -- batching -------------------------------------------------------------------

@dataclass
class GraphBatch:
    """Disjoint union of encoded graphs with dst-sorted directed edges."""

    node_type: np.ndarray
    x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    indptr: np.ndarray
    cut_nodes: np.ndarray          # global ids of all cut nodes, graph by graph
    cut_offsets: np.ndarray        # cut_nodes[cut_offsets[i]:cut_offsets[i+1]] belong to graph i
    graphs: list[EncodedGraph] = field(repr=False)
    node_offsets: np.ndarray = field(repr=False, default=None)

    @property
    def num_nodes(self) -> int:
        return len(self.node_type)

    @classmethod
    def build(cls, graphs: Sequence[EncodedGraph]) -> "GraphBatch":
        types, xs, srcs, dsts, cuts = [], [], [], [], []
        offsets = [0]
        cut_offsets = [0]
        off = 0
        for g in graphs:
            if g.features.shape[1] != FEATURE_WIDTH:
                raise ShapeMismatch(
                    f"graph features have width {g.features.shape[1]}, expected {FEATURE_WIDTH}")
            types.append(g.node_type)
            xs.append(g.features)
            e = g.edges + off
            srcs.extend((e[:, 0], e[:, 1]))
            dsts.extend((e[:, 1], e[:, 0]))
            cut = np.array(sorted(g.cut_index.values()), dtype=np.int64) + off
            cuts.append(cut)
            off += g.num_nodes
            offsets.append(off)
            cut_offsets.append(cut_offsets[-1] + len(cut))
        src = np.concatenate(srcs) if srcs else np.zeros(0, np.int64)
        dst = np.concatenate(dsts) if dsts else np.zeros(0, np.int64)
        order = np.lexsort((src, dst))
        src, dst = src[order], dst[order]
        indptr = np.zeros(off + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=off), out=indptr[1:])
        return cls(np.concatenate(types), np.concatenate(xs), src, dst, indptr,
                   np.concatenate(cuts) if cuts else np.zeros(0, np.int64),
                   np.array(cut_offsets), list(graphs), np.array(offsets))

    def cut_probabilities(self, probs: np.ndarray) -> list[dict[tuple[int, int], float]]:
        """Split batch-level cut probabilities into per-graph ``cut_index`` maps."""
        out = []
        for i, g in enumerate(self.graphs):
            lo = self.cut_offsets[i]
            local = probs[lo:self.cut_offsets[i + 1]]
            ids = sorted(g.cut_index.values())
            by_node = dict(zip(ids, local))
            out.append({key: float(by_node[node]) for key, node in g.cut_index.items()})
        return out


# -- forward / backward ----------------------------------------------------------

class _Trace:
    __slots__ = ("h0", "steps", "y1", "hT", "probs", "logits")


def _attention(P, batch: GraphBatch, h):
    """Per-edge neighbour-softmax weights and pre-activation scores."""
    s = (h @ P["att_self"])[batch.dst] + (h @ P["att_nbr"])[batch.src]
    e = np.where(s > 0, s, LEAK * s)
    nonempty = batch.indptr[:-1] < batch.indptr[1:]
    seg_max = np.zeros(batch.num_nodes)
    if len(e):
        seg_max[nonempty] = np.maximum.reduceat(e, batch.indptr[:-1][nonempty])
    w = np.exp(e - seg_max[batch.dst])
    denom = np.bincount(batch.dst, weights=w, minlength=batch.num_nodes)
    return w / denom[batch.dst], s


def _adjacency(batch: GraphBatch, weights):
    n = batch.num_nodes
    return sp.csr_matrix((weights, batch.src, batch.indptr), shape=(n, n))


def _forward(params: ModelParams, batch: GraphBatch, iterations: int, keep: bool):
    P = params.tensors
    H = params.hidden
    h = np.empty((batch.num_nodes, H))
    for t in range(NUM_TYPES):
        sel = batch.node_type == t
        if sel.any():
            h[sel] = batch.x[sel] @ P["enc_w"][t] + P["enc_b"][t]
    trace = _Trace()
    trace.h0 = h
    trace.steps = []
    ones = None if params.attention else np.ones(len(batch.src))
    wz_m, wz_h = P["gru_wz"][:H], P["gru_wz"][H:]
    wr_m, wr_h = P["gru_wr"][:H], P["gru_wr"][H:]
    wh_m, wh_h = P["gru_wh"][:H], P["gru_wh"][H:]
    for _ in range(iterations):
        hw = h @ P["msg_w"]
        if params.attention:
            alpha, s = _attention(P, batch, h)
        else:
            alpha, s = ones, None
        A = _adjacency(batch, alpha)
        m = A @ hw
        z = _sigmoid(m @ wz_m + h @ wz_h + P["gru_bz"])
        r = _sigmoid(m @ wr_m + h @ wr_h + P["gru_br"])
        c = np.tanh(m @ wh_m + (r * h) @ wh_h + P["gru_bh"])
        h_new = h + z * (c - h)
        if keep:
            trace.steps.append((h, hw, alpha, s, A, m, z, r, c))
        h = h_new
    hc = h[batch.cut_nodes]
    y1 = np.tanh(hc @ P["out_w1"] + P["out_b1"])
    logits = (y1 @ P["out_w2"] + P["out_b2"])[:, 0]
    trace.hT = h
    trace.y1 = y1
    trace.logits = logits
    trace.probs = _sigmoid(logits)
    return trace


def _backward(params: ModelParams, batch: GraphBatch, trace: _Trace, dlogits):
    P = params.tensors
    H = params.hidden
    G = {k: np.zeros_like(v) for k, v in P.items()}

    hc = trace.hT[batch.cut_nodes]
    G["out_w2"] += trace.y1.T @ dlogits[:, None]
    G["out_b2"] += dlogits.sum(keepdims=True)
    dy1 = dlogits[:, None] * P["out_w2"][:, 0] * (1.0 - trace.y1 ** 2)
    G["out_w1"] += hc.T @ dy1
    G["out_b1"] += dy1.sum(axis=0)
    dh = np.zeros_like(trace.hT)
    np.add.at(dh, batch.cut_nodes, dy1 @ P["out_w1"].T)

    wz_m, wz_h = P["gru_wz"][:H], P["gru_wz"][H:]
    wr_m, wr_h = P["gru_wr"][:H], P["gru_wr"][H:]
    wh_m, wh_h = P["gru_wh"][:H], P["gru_wh"][H:]
    for h, hw, alpha, s, A, m, z, r, c in reversed(trace.steps):
        dz = dh * (c - h)
        dc = dh * z
        dh_prev = dh * (1.0 - z)
        dc_pre = dc * (1.0 - c * c)
        rh = r * h
        G["gru_wh"][:H] += m.T @ dc_pre
        G["gru_wh"][H:] += rh.T @ dc_pre
        G["gru_bh"] += dc_pre.sum(axis=0)
        dm = dc_pre @ wh_m.T
        drh = dc_pre @ wh_h.T
        dh_prev += drh * r
        dr_pre = drh * h * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        G["gru_wz"][:H] += m.T @ dz_pre
        G["gru_wz"][H:] += h.T @ dz_pre
        G["gru_bz"] += dz_pre.sum(axis=0)
        G["gru_wr"][:H] += m.T @ dr_pre
        G["gru_wr"][H:] += h.T @ dr_pre
        G["gru_br"] += dr_pre.sum(axis=0)
        dm += dz_pre @ wz_m.T + dr_pre @ wr_m.T
        dh_prev += dz_pre @ wz_h.T + dr_pre @ wr_h.T

        dhw = A.T @ dm
        G["msg_w"] += h.T @ dhw
        dh_prev += dhw @ P["msg_w"].T
        if params.attention:
            dalpha = np.einsum("ij,ij->i", dm[batch.dst], hw[batch.src])
            seg = np.bincount(batch.dst, weights=alpha * dalpha, minlength=batch.num_nodes)
            de = alpha * (dalpha - seg[batch.dst])
            ds = de * np.where(s > 0, 1.0, LEAK)
            ds_dst = np.bincount(batch.dst, weights=ds, minlength=batch.num_nodes)
            ds_src = np.bincount(batch.src, weights=ds, minlength=batch.num_nodes)
            G["att_self"] += h.T @ ds_dst
            G["att_nbr"] += h.T @ ds_src
            dh_prev += np.outer(ds_dst, P["att_self"]) + np.outer(ds_src, P["att_nbr"])
        dh = dh_prev

    for t in range(NUM_TYPES):
        sel = batch.node_type == t
        if sel.any():
            G["enc_w"][t] += batch.x[sel].T @ dh[sel]
            G["enc_b"][t] += dh[sel].sum(axis=0)
    return G


def _as_batch(graph) -> GraphBatch:
    return graph if isinstance(graph, GraphBatch) else GraphBatch.build([graph])


def forward_batch(params: ModelParams, batch: GraphBatch, iterations: int | None = None) -> np.ndarray:
    """Cut probabilities for ``batch.cut_nodes`` (in that order)."""
    t = params.iterations if iterations is None else iterations
    if not 0 <= t <= params.iterations:
        raise ValueError(f"iterations must be in 0..{params.iterations}, got {t}")
    return _forward(params, batch, t, keep=False).probs


def forward(params: ModelParams, graph: EncodedGraph) -> dict[tuple[int, int], float]:
    """Cut probability per ``(flow id, boundary)`` key of ``graph.cut_index``."""
    batch = GraphBatch.build([graph])
    return batch.cut_probabilities(forward_batch(params, batch))[0]


def forward_with_iterations(params: ModelParams, graph: EncodedGraph,
                            iterations: int) -> dict[tuple[int, int], float]:
    batch = GraphBatch.build([graph])
    return batch.cut_probabilities(forward_batch(params, batch, iterations))[0]


# -- loss and training ------------------------------------------------------------

def loss(probs: dict, labels: dict) -> float:
    """Mean binary cross-entropy over matching keys, probabilities clamped."""
    if set(probs) != set(labels):
        raise KeyError("probabilities and labels cover different cut nodes")
    if not probs:
        return 0.0
    keys = sorted(probs)
    p = np.clip(np.array([probs[k] for k in keys], dtype=float), CLAMP, 1.0 - CLAMP)
    y = np.array([labels[k] for k in keys], dtype=float)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def _bce_and_grad(probs, logits, y, mask):
    """Loss over masked entries and d loss / d logits."""
    count = mask.sum()
    if count == 0:
        return 0.0, np.zeros_like(probs)
    p = np.clip(probs, CLAMP, 1.0 - CLAMP)
    ll = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    value = float(ll[mask].sum() / count)
    inside = (probs > CLAMP) & (probs < 1.0 - CLAMP)
    dlogits = np.where(mask & inside, (probs - y) / count, 0.0)
    return value, dlogits


@dataclass
class TrainSample:
    """An encoded graph with 0/1 labels keyed by cut node id."""

    graph: EncodedGraph
    labels: dict[int, int]

    def targets(self) -> tuple[np.ndarray, np.ndarray]:
        """(labels, mask) aligned with the graph's cut nodes in id order."""
        ids = sorted(self.graph.cut_index.values())
        y = np.array([self.labels.get(i, 0) for i in ids], dtype=float)
        mask = np.array([i in self.labels for i in ids], dtype=bool)
        return y, mask


def loss_and_gradients(params: ModelParams, samples: Sequence[TrainSample],
                       batch: GraphBatch | None = None):
    """Mean loss over the labelled cut nodes of ``samples`` and its exact gradient."""
    if batch is None:
        batch = GraphBatch.build([s.graph for s in samples])
    ys, masks = zip(*(s.targets() for s in samples))
    y = np.concatenate(ys)
    mask = np.concatenate(masks)
    trace = _forward(params, batch, params.iterations, keep=True)
    value, dlogits = _bce_and_grad(trace.probs, trace.logits, y, mask)
    return value, _backward(params, batch, trace, dlogits)


def gradients(params: ModelParams, sample: TrainSample) -> dict[str, np.ndarray]:
    return loss_and_gradients(params, [sample])[1]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    attention: bool = True
    hidden: int = 64
    iterations: int = 15
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning_rate, epochs and batch_size must be positive")
        if self.hidden < 1 or self.iterations < 0:
            raise ValueError("hidden must be >= 1 and iterations >= 0")


class Adam:
    def __init__(self, params: ModelParams, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: ModelParams, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(grads):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params.tensors[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _clip(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


def train_epochs(data: Sequence[TrainSample], cfg: TrainConfig, params: ModelParams | None = None,
                 log=None) -> tuple[ModelParams, list[float]]:
    """Minibatch Adam training; returns the model and the per-epoch mean loss.

    Fully determined by ``cfg.seed`` and the order of ``data``.
    """
    if not data:
        raise ValueError("no training data")
    if params is None:
        params = ModelParams.initialize(cfg.hidden, cfg.iterations, cfg.attention, cfg.seed)
    opt = Adam(params, cfg.learning_rate)
    rng = make_rng(cfg.seed, 1)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        total, weight = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            chunk = [data[i] for i in order[lo:lo + cfg.batch_size]]
            n_lab = sum(len(s.labels) for s in chunk)
            if n_lab == 0:
                continue
            value, grads = loss_and_gradients(params, chunk)
            opt.step(params, _clip(grads, cfg.clip_norm))
            total += value * n_lab
            weight += n_lab
        history.append(total / max(weight, 1))
        if log is not None:
            log(epoch, history[-1])
    return params, history


# -- checkpoints -----------------------------------------------------------------

def model_to_dict(params: ModelParams) -> dict:
    return {
        "hidden": params.hidden,
        "iterations": params.iterations,
        "attention": params.attention,
        "tensors": {name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                    for name, arr in sorted(params.tensors.items())},
    }


def model_from_dict(obj: dict) -> ModelParams:
    try:
        hidden = int(obj["hidden"])
        iterations = int(obj["iterations"])
        attention = bool(obj["attention"])
        raw = obj["tensors"]
    except (KeyError, TypeError, ValueError) as err:
        raise ValueError(f"malformed checkpoint: {err!r}") from err
    expected = param_shapes(hidden)
    tensors = {}
    for name, entry in raw.items():
        if name not in expected:
            raise ShapeMismatch(f"unexpected tensor {name!r}")
        shape = tuple(int(d) for d in entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if shape != expected[name] or data.size != math.prod(shape):
            raise ShapeMismatch(
                f"tensor {name!r}: shape {shape} with {data.size} values, expected {expected[name]}")
        tensors[name] = data.reshape(shape)
    params = ModelParams(hidden, iterations, attention, tensors)
    params.check()
    return params


def save_model(params: ModelParams, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(params)), encoding="utf-8")


def load_model(path) -> ModelParams:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
