"""Multi-channel relational graph attention with initial residuals and readout."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch, UnknownRelation, WrongLayerCount
from .fusion import fuse, glorot
from .kgraph import N_EDGE_TYPES, CosmeticKG
from .tensor import Tensor


@dataclass(frozen=True)
class GraphIndex:
    """Edge list the encoder propagates over: message ``src[e] -> tgt[e]`` of type ``typ[e]``."""

    tgt: np.ndarray
    src: np.ndarray
    typ: np.ndarray
    n: int

    @classmethod
    def from_kg(cls, kg: CosmeticKG) -> "GraphIndex":
        tgt, src, typ = kg.edge_arrays()
        return cls(tgt, src, typ, kg.n_entities)

    @classmethod
    def from_edges(cls, edges, n: int) -> "GraphIndex":
        """From ``(target, edge_type, source)`` tuples."""
        arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0].copy(), arr[:, 2].copy(), arr[:, 1].copy(), int(n))

    def __len__(self) -> int:
        return len(self.tgt)


@dataclass
class RgatLayerParams:
    proj: list  # K tensors, d x d/K
    att_w: list  # K tensors, 3 d/K: [target | relation | source] weights
    att_b: list  # K tensors, shape (1,)
    rel: list  # K tensors, N_EDGE_TYPES x d/K

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int, channels: int):
        if hidden % channels:
            raise ValueError(f"channels ({channels}) must divide hidden ({hidden})")
        dk = hidden // channels
        bound = 1.0 / np.sqrt(3 * dk)
        return cls(
            [glorot(rng, hidden, dk) for _ in range(channels)],
            [Tensor(rng.uniform(-bound, bound, 3 * dk), requires_grad=True) for _ in range(channels)],
            [Tensor(np.zeros(1), requires_grad=True) for _ in range(channels)],
            # messages are e_u * r, so relation vectors start near one
            [Tensor(rng.normal(1.0, 0.1, (N_EDGE_TYPES, dk)), requires_grad=True)
             for _ in range(channels)],
        )

    @property
    def channels(self) -> int:
        return len(self.proj)

    @property
    def channel_width(self) -> int:
        return self.proj[0].shape[1]

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for k in range(self.channels):
            base = f"{prefix}.chan{k}"
            out[f"{base}.proj"] = self.proj[k]
            out[f"{base}.att_w"] = self.att_w[k]
            out[f"{base}.att_b"] = self.att_b[k]
            out[f"{base}.rel"] = self.rel[k]
        return out


@dataclass
class ReadoutParams:
    W: Tensor  # (L d) x d
    b: Tensor  # d

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int, layers: int):
        return cls(glorot(rng, layers * hidden, hidden), Tensor(np.zeros(hidden), requires_grad=True))

    @property
    def layers(self) -> int:
        return self.W.shape[0] // self.W.shape[1]

    def named(self, prefix: str = "readout") -> dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}


def _check_types(layer: RgatLayerParams, graph: GraphIndex) -> None:
    n_types = layer.rel[0].shape[0]
    if len(graph.typ) and (graph.typ.min() < 0 or graph.typ.max() >= n_types):
        raise UnknownRelation(f"edge type outside the {n_types} embedded relation kinds")


def _channel_logits(layer: RgatLayerParams, k: int, graph: GraphIndex, ek: Tensor) -> Tensor:
    # f(x) = w . leaky_relu(x) + b on x = [e_v | r | e_u]; the dot product splits by block
    dk = layer.channel_width
    w = layer.att_w[k]
    w_v, w_r, w_u = (T.reshape(T.gather(w, np.arange(i * dk, (i + 1) * dk)), (dk, 1)) for i in range(3))
    act = T.leaky_relu(ek)
    s_v = T.reshape(act @ w_v, (graph.n,))
    s_u = T.reshape(act @ w_u, (graph.n,))
    s_r = T.reshape(T.leaky_relu(layer.rel[k]) @ w_r, (layer.rel[k].shape[0],))
    z = T.gather(s_v, graph.tgt) + T.gather(s_r, graph.typ) + T.gather(s_u, graph.src)
    return z + layer.att_b[k]


def attention_logits(layer: RgatLayerParams, k: int, graph: GraphIndex, feats: Tensor) -> Tensor:
    """Unnormalised attention score of every edge on channel ``k``."""
    _check_types(layer, graph)
    if feats.shape[0] != graph.n:
        raise ShapeMismatch(f"feats has {feats.shape[0]} rows for {graph.n} entities")
    return _channel_logits(layer, k, graph, feats @ layer.proj[k])


def _all_channel_attention(layer: RgatLayerParams, graph: GraphIndex, feats: Tensor):
    """Channel features ``V x d`` (K blocks) and softmax attention ``E x K`` in one pass."""
    K, dk = layer.channels, layer.channel_width
    proj = T.concat(layer.proj, axis=1) if K > 1 else layer.proj[0]
    rel = T.concat(layer.rel, axis=1) if K > 1 else layer.rel[0]
    ek = feats @ proj

    def block_weights(i):
        parts = [T.gather(w, np.arange(i * dk, (i + 1) * dk)) for w in layer.att_w]
        return T.concat(parts) if K > 1 else parts[0]

    def channel_dot(x, w):
        rows = x.shape[0]
        prod = T.leaky_relu(x) * T.broadcast_rows(w, rows)
        return T.sum(T.reshape(prod, (rows, K, dk)), axis=2)

    s_v = channel_dot(ek, block_weights(0))
    s_r = channel_dot(rel, block_weights(1))
    s_u = channel_dot(ek, block_weights(2))
    bias = T.concat(layer.att_b) if K > 1 else layer.att_b[0]
    logits = (T.gather(s_v, graph.tgt) + T.gather(s_r, graph.typ) + T.gather(s_u, graph.src)
              + T.broadcast_rows(bias, len(graph)))
    return ek, rel, T.segment_softmax(logits, graph.tgt, graph.n)


def attend_and_aggregate(layer: RgatLayerParams, graph: GraphIndex, feats: Tensor) -> Tensor:
    """Attention-weighted sum of ``e_u * r`` messages per target, all channels concatenated.

    Channel ``k`` occupies output columns ``k*d/K .. (k+1)*d/K``.
    """
    _check_types(layer, graph)
    if feats.shape[0] != graph.n:
        raise ShapeMismatch(f"feats has {feats.shape[0]} rows for {graph.n} entities")
    ek, rel, att = _all_channel_attention(layer, graph, feats)
    agg = T.edge_aggregate(ek, rel, att, graph.src, graph.typ, graph.tgt, graph.n)
    return T.leaky_relu(agg)


def attention_weights(layer: RgatLayerParams, graph: GraphIndex, feats: Tensor) -> np.ndarray:
    """Normalised attention per edge and channel, shape ``(E, K)``."""
    _check_types(layer, graph)
    with T.no_grad():
        return _all_channel_attention(layer, graph, feats)[2].data.copy()


def residual_combine(alpha: float, layer_out: Tensor, e0: Tensor) -> Tensor:
    """``leaky_relu((1 - alpha) * layer_out + alpha * e0)``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"residual strength must lie in [0, 1], got {alpha}")
    if layer_out.shape != e0.shape:
        raise ShapeMismatch(f"residual: {layer_out.shape} vs {e0.shape}")
    if alpha == 0.0:
        return T.leaky_relu(layer_out)
    return T.leaky_relu(layer_out * (1.0 - alpha) + e0 * alpha)


def readout(params: ReadoutParams, per_layer) -> Tensor:
    """``leaky_relu([e^(1) | ... | e^(L)] W + b)`` row by row."""
    per_layer = list(per_layer)
    if len(per_layer) != params.layers or not per_layer:
        raise WrongLayerCount(f"readout expects {params.layers} layers, got {len(per_layer)}")
    shape = per_layer[0].shape
    if any(p.shape != shape for p in per_layer):
        raise ShapeMismatch("readout inputs differ in shape")
    x = T.concat(per_layer, axis=1) if len(per_layer) > 1 else per_layer[0]
    return T.leaky_relu(x @ params.W + T.broadcast_rows(params.b, shape[0]))


def gcn_propagate(graph: GraphIndex, x: Tensor) -> Tensor:
    """Apply ``D^-1/2 (A + I) D^-1/2`` built from the edge list (self-loops included).

    Diagnostic/alternative propagation; the default encoder relies on the
    attention-normalised aggregation instead.
    """
    deg = np.bincount(graph.tgt, minlength=graph.n).astype(np.float64)
    w = 1.0 / np.sqrt(deg[graph.tgt] * deg[graph.src])
    return T.scatter_add(T.scale_rows(T.gather(x, graph.src), Tensor(w)), graph.tgt, graph.n)


def encode(params, graph: GraphIndex, initial=None, *, residual_alpha=None, gcn_step=None,
           trace: list | None = None) -> Tensor:
    """Final entity representations ``|V| x d``.

    ``params`` is a :class:`halalkg.model.ModelParams`; ``initial`` defaults
    to ``params.initial``. When ``trace`` is a list, the ``(E, K)`` attention
    weights of every layer are appended to it.
    """
    initial = initial if initial is not None else params.initial
    alpha = params.residual_alpha if residual_alpha is None else residual_alpha
    gcn_step = params.gcn_step if gcn_step is None else gcn_step
    if not params.layers:
        raise WrongLayerCount("the encoder needs at least one layer")
    if initial.entity_embed.shape[0] != graph.n:
        raise ShapeMismatch(f"{initial.entity_embed.shape[0]} embeddings for {graph.n} entities")
    e0 = fuse(params.fusion, initial.entity_embed, initial.numeric)
    e, outs = e0, []
    for layer in params.layers:
        if trace is not None:
            trace.append(attention_weights(layer, graph, e))
        agg = attend_and_aggregate(layer, graph, e)
        if gcn_step:
            agg = gcn_propagate(graph, agg)
        e = residual_combine(alpha, agg, e0)
        outs.append(e)
    return readout(params.readout, outs)
