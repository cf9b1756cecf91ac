"""GRAPHIX encoder: semantic transformer block, relational graph attention
block, their joint mixture, and the stacked encoder.

Each block comes as a ``*_forward`` returning ``(output, cache)`` and a
``*_backward`` that accumulates parameter gradients into a dict and returns
the gradient with respect to its input. The short-named functions (``mha``,
``ffn``, ``semantic_block``, ...) are forward-only conveniences.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, MutableMapping

import numpy as np

from .graph import NUM_RELATIONS, GraphError, HeterogeneousGraph
from .serializer import SerializedInput, Vocabulary
from .tensor import (ParamStore, ShapeError, check_finite, layer_norm_backward,
                     layer_norm_forward, load_checkpoint, rowwise_matmul, softmax,
                     softmax_backward)

Params = Mapping[str, np.ndarray]
Grads = MutableMapping[str, np.ndarray]


class Variant(str, Enum):
    VANILLA = "vanilla"    # semantic blocks only
    SEVERED = "severed"    # semantic stack, then a standalone graph stack
    GRAPHIX = "graphix"    # semantic + structural mixture in every layer


@dataclass(frozen=True)
class EncoderConfig:
    d_m: int = 32
    h: int = 4
    layers: int = 2
    d_k: int | None = None
    d_v: int | None = None
    d_ff: int | None = None
    d_z: int | None = None
    num_relations: int = NUM_RELATIONS
    variant: Variant = Variant.GRAPHIX
    ln_eps: float = 1e-6
    rgat_heads: int = 1
    severed_layers: int = 2
    shared_phi: bool = True
    vocab_size: int = 64
    max_len: int = 128
    # Initialisation. Without a residual around the semantic attention, token
    # identity only survives if attention starts out peaked on the token itself:
    # tying W_K to W_Q makes q_i.k_i = |q_i|^2 the dominant score, and larger
    # embeddings sharpen the softmax.
    embed_std: float = 0.5
    tie_qk_init: bool = True

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("variant", Variant(self.variant))
        if self.d_m < 1 or self.h < 1 or self.layers < 0:
            raise ValueError("d_m and h must be positive, layers non-negative")
        if self.d_k is None or self.d_v is None:
            if self.d_m % self.h:
                raise ValueError(f"d_m={self.d_m} is not divisible by h={self.h}")
        set_("d_k", self.d_k or self.d_m // self.h)
        set_("d_v", self.d_v or self.d_m // self.h)
        set_("d_ff", self.d_ff or 4 * self.d_m)
        set_("d_z", self.d_z or self.d_m)
        if self.d_z % self.rgat_heads:
            raise ValueError(f"d_z={self.d_z} is not divisible by rgat_heads={self.rgat_heads}")
        if not self.ln_eps > 0:
            raise ValueError("ln_eps must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, obj: Mapping) -> "EncoderConfig":
        known = {k: v for k, v in obj.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    @classmethod
    def load(cls, path: str | Path) -> "EncoderConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def param_group(name: str) -> str:
    """theta (semantic + embeddings), psi (graph attention), phi (relation
    embeddings) or upsilon (decoder)."""
    if name.startswith("dec."):
        return "upsilon"
    if name.endswith("phi"):
        return "phi"
    if ".rgat." in name:
        return "psi"
    return "theta"


def phi_name(cfg: EncoderConfig, layer: int | str) -> str:
    return "enc.phi" if cfg.shared_phi else f"enc.{layer}.phi"


def _attention_params(store: ParamStore, prefix: str, d_in: int, h: int, d_k: int, d_v: int,
                      d_out: int) -> None:
    store.create(prefix + "wq", (d_in, h * d_k))
    store.create(prefix + "wk", (d_in, h * d_k))
    store.create(prefix + "wv", (d_in, h * d_v))
    store.create(prefix + "wo", (h * d_v, d_out))


def _ffn_params(store: ParamStore, prefix: str, d: int, d_ff: int) -> None:
    store.create(prefix + "w1", (d, d_ff))
    store.create(prefix + "b1", (d_ff,), "zeros")
    store.create(prefix + "w2", (d_ff, d))
    store.create(prefix + "b2", (d,), "zeros")


def _ln_params(store: ParamStore, prefix: str, d: int) -> None:
    store.create(prefix + "g", (d,), "ones")
    store.create(prefix + "b", (d,), "zeros")


def _rgat_params(store: ParamStore, prefix: str, cfg: EncoderConfig) -> None:
    for w in ("wq", "wk", "wv"):
        store.create(prefix + w, (cfg.d_m, cfg.d_z))
    store.create(prefix + "wo", (cfg.d_z, cfg.d_m))
    _ln_params(store, prefix + "ln1.", cfg.d_m)
    _ffn_params(store, prefix + "ffn.", cfg.d_m, cfg.d_ff)
    _ln_params(store, prefix + "ln2.", cfg.d_m)


def init_encoder_params(cfg: EncoderConfig, store: ParamStore | None = None,
                        seed: int = 0) -> ParamStore:
    store = ParamStore(seed) if store is None else store
    store.create("embed.tokens", (cfg.vocab_size, cfg.d_m), "normal", std=cfg.embed_std)
    store.create("embed.positions", (cfg.max_len, cfg.d_m), "normal", std=cfg.embed_std)
    for l in range(cfg.layers):
        pre = f"enc.{l}.sem.attn."
        _attention_params(store, pre, cfg.d_m, cfg.h, cfg.d_k, cfg.d_v, cfg.d_m)
        if cfg.tie_qk_init:
            store[pre + "wk"] = store[pre + "wq"]
        _ffn_params(store, f"enc.{l}.sem.ffn.", cfg.d_m, cfg.d_ff)
        _ln_params(store, f"enc.{l}.sem.ln.", cfg.d_m)
    graph_layers: list[int | str] = []
    if cfg.variant is Variant.GRAPHIX:
        graph_layers = list(range(cfg.layers))
    elif cfg.variant is Variant.SEVERED:
        graph_layers = [f"gnn{k}" for k in range(cfg.severed_layers)]
    for l in graph_layers:
        _rgat_params(store, f"enc.{l}.rgat.", cfg)
        name = phi_name(cfg, l)
        if name not in store:
            store.create(name, (cfg.num_relations, cfg.d_z))
    return store


# ---------------------------------------------------------------------------
# Multi-head attention and feed-forward
# ---------------------------------------------------------------------------

def attention_forward(xq: np.ndarray, xkv: np.ndarray, p: Params, prefix: str, h: int,
                      d_k: int, d_v: int, mask: np.ndarray | None = None):
    wq, wk, wv, wo = (p[prefix + k] for k in ("wq", "wk", "wv", "wo"))
    n, m = xq.shape[0], xkv.shape[0]
    q = (xq @ wq).reshape(n, h, d_k).transpose(1, 0, 2)
    k = (xkv @ wk).reshape(m, h, d_k).transpose(1, 0, 2)
    v = (xkv @ wv).reshape(m, h, d_v).transpose(1, 0, 2)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(d_k)
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    a = softmax(scores, axis=-1)
    o = (a @ v).transpose(1, 0, 2).reshape(n, h * d_v)
    return o @ wo, (xq, xkv, q, k, v, a, o, prefix, h, d_k, d_v)


def attention_backward(dout: np.ndarray, cache, p: Params, grads: Grads):
    xq, xkv, q, k, v, a, o, prefix, h, d_k, d_v = cache
    n, m = xq.shape[0], xkv.shape[0]
    grads[prefix + "wo"] += o.T @ dout
    do = (dout @ p[prefix + "wo"].T).reshape(n, h, d_v).transpose(1, 0, 2)
    da = do @ v.transpose(0, 2, 1)
    dv = a.transpose(0, 2, 1) @ do
    ds = softmax_backward(a, da) / np.sqrt(d_k)
    dq = (ds @ k).transpose(1, 0, 2).reshape(n, h * d_k)
    dk = (ds.transpose(0, 2, 1) @ q).transpose(1, 0, 2).reshape(m, h * d_k)
    dv = dv.transpose(1, 0, 2).reshape(m, h * d_v)
    grads[prefix + "wq"] += xq.T @ dq
    grads[prefix + "wk"] += xkv.T @ dk
    grads[prefix + "wv"] += xkv.T @ dv
    dxq = dq @ p[prefix + "wq"].T
    dxkv = dk @ p[prefix + "wk"].T + dv @ p[prefix + "wv"].T
    return dxq, dxkv


def ffn_forward(x: np.ndarray, p: Params, prefix: str, matmul=np.matmul):
    z = matmul(x, p[prefix + "w1"]) + p[prefix + "b1"]
    r = np.maximum(z, 0.0)
    return matmul(r, p[prefix + "w2"]) + p[prefix + "b2"], (x, z, r, prefix)


def ffn_backward(dout: np.ndarray, cache, p: Params, grads: Grads) -> np.ndarray:
    x, z, r, prefix = cache
    grads[prefix + "w2"] += r.T @ dout
    grads[prefix + "b2"] += dout.sum(axis=0)
    dz = (dout @ p[prefix + "w2"].T) * (z > 0)
    grads[prefix + "w1"] += x.T @ dz
    grads[prefix + "b1"] += dz.sum(axis=0)
    return dz @ p[prefix + "w1"].T


def _check_rows(x: np.ndarray, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what} must be (rows, {width}), got {x.shape}")
    return check_finite(x, what)


def mha(H, params: Params, cfg: EncoderConfig, prefix: str = "enc.0.sem.attn.") -> np.ndarray:
    """Multi-head self-attention: per-head scaled dot-product attention,
    heads concatenated and projected by ``wo``. No residual."""
    H = _check_rows(H, cfg.d_m, "hidden states")
    return attention_forward(H, H, params, prefix, cfg.h, cfg.d_k, cfg.d_v)[0]


def ffn(H, params: Params, prefix: str = "enc.0.sem.ffn.") -> np.ndarray:
    """``max(0, H W1 + b1) W2 + b2``."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] != params[prefix + "w1"].shape[0]:
        raise ShapeError(f"hidden states of shape {H.shape} do not fit {prefix}w1")
    return ffn_forward(check_finite(H, "hidden states"), params, prefix)[0]


# ---------------------------------------------------------------------------
# Semantic block: LayerNorm(MHA(H) + FFN(MHA(H)))
# ---------------------------------------------------------------------------

def semantic_forward(H: np.ndarray, p: Params, prefix: str, cfg: EncoderConfig):
    hh, c_attn = attention_forward(H, H, p, prefix + "attn.", cfg.h, cfg.d_k, cfg.d_v)
    f, c_ffn = ffn_forward(hh, p, prefix + "ffn.")
    out, c_ln = layer_norm_forward(hh + f, p[prefix + "ln.g"], p[prefix + "ln.b"], cfg.ln_eps)
    return out, (c_attn, c_ffn, c_ln, prefix)


def semantic_backward(dout: np.ndarray, cache, p: Params, grads: Grads) -> np.ndarray:
    c_attn, c_ffn, c_ln, prefix = cache
    dz, dg, db = layer_norm_backward(dout, c_ln)
    grads[prefix + "ln.g"] += dg
    grads[prefix + "ln.b"] += db
    dhh = dz + ffn_backward(dz, c_ffn, p, grads)
    dxq, dxkv = attention_backward(dhh, c_attn, p, grads)
    return dxq + dxkv


def semantic_block(H, params: Params, cfg: EncoderConfig, layer: int = 0) -> np.ndarray:
    H = _check_rows(H, cfg.d_m, "hidden states")
    return semantic_forward(H, params, f"enc.{layer}.sem.", cfg)[0]


# ---------------------------------------------------------------------------
# Relational graph attention
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgePlan:
    """Edges grouped by destination node for segment softmax/sums.

    ``src``/``dst``/``rel`` are sorted stably by ``dst``; ``starts[i]`` is the
    first edge into node ``i``. Every node must have at least one incoming edge.
    """
    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    starts: np.ndarray

    @classmethod
    def from_arrays(cls, n_nodes: int, src, dst, rel) -> "EdgePlan":
        src, dst, rel = (np.asarray(a, dtype=np.int64) for a in (src, dst, rel))
        if not (src.shape == dst.shape == rel.shape):
            raise ShapeError("edge arrays differ in length")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n_nodes):
            raise GraphError("edge endpoint out of range")
        order = np.argsort(dst, kind="stable")
        src, dst, rel = src[order], dst[order], rel[order]
        counts = np.bincount(dst, minlength=n_nodes)
        if n_nodes and counts.min() == 0:
            empty = int(np.flatnonzero(counts == 0)[0])
            raise GraphError(f"node {empty} has an empty relational neighborhood")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        return cls(n_nodes, src, dst, rel, starts)

    @classmethod
    def from_graph(cls, graph: HeterogeneousGraph) -> "EdgePlan":
        return cls.from_arrays(len(graph), *graph.edge_arrays())


def _as_plan(graph) -> EdgePlan:
    return graph if isinstance(graph, EdgePlan) else EdgePlan.from_graph(graph)


def rgat_forward(E: np.ndarray, plan: EdgePlan, p: Params, prefix: str, phi: str,
                 cfg: EncoderConfig):
    mm = rowwise_matmul
    heads, d_z = cfg.rgat_heads, cfg.d_z
    d_h = d_z // heads
    m = plan.src.size
    q, k, v = mm(E, p[prefix + "wq"]), mm(E, p[prefix + "wk"]), mm(E, p[prefix + "wv"])
    rel_emb = p[phi][plan.rel]
    keys = k[plan.src] + rel_emb
    queries = q[plan.dst]
    logits = (queries * keys).reshape(m, heads, d_h).sum(axis=-1) / np.sqrt(d_h)
    peak = np.maximum.reduceat(logits, plan.starts, axis=0)
    ex = np.exp(logits - peak[plan.dst])
    alpha = ex / np.add.reduceat(ex, plan.starts, axis=0)[plan.dst]
    msg = v[plan.src] + rel_emb
    weighted = (alpha[:, :, None] * msg.reshape(m, heads, d_h)).reshape(m, d_z)
    agg = np.add.reduceat(weighted, plan.starts, axis=0)
    u, c_ln1 = layer_norm_forward(E + mm(agg, p[prefix + "wo"]),
                                  p[prefix + "ln1.g"], p[prefix + "ln1.b"], cfg.ln_eps)
    f, c_ffn = ffn_forward(u, p, prefix + "ffn.", matmul=mm)
    out, c_ln2 = layer_norm_forward(u + f, p[prefix + "ln2.g"], p[prefix + "ln2.b"], cfg.ln_eps)
    cache = (E, plan, prefix, phi, queries, keys, msg, alpha, agg, c_ln1, c_ffn, c_ln2, heads, d_h)
    return out, cache


def rgat_backward(dout: np.ndarray, cache, p: Params, grads: Grads) -> np.ndarray:
    E, plan, prefix, phi, queries, keys, msg, alpha, agg, c_ln1, c_ffn, c_ln2, heads, d_h = cache
    m, d_z = msg.shape
    d2, dg, db = layer_norm_backward(dout, c_ln2)
    grads[prefix + "ln2.g"] += dg
    grads[prefix + "ln2.b"] += db
    du = d2 + ffn_backward(d2, c_ffn, p, grads)
    d1, dg, db = layer_norm_backward(du, c_ln1)
    grads[prefix + "ln1.g"] += dg
    grads[prefix + "ln1.b"] += db
    grads[prefix + "wo"] += agg.T @ d1
    dagg = (d1 @ p[prefix + "wo"].T)[plan.dst].reshape(m, heads, d_h)
    dmsg = (alpha[:, :, None] * dagg).reshape(m, d_z)
    dalpha = (dagg * msg.reshape(m, heads, d_h)).sum(axis=-1)
    seg = np.add.reduceat(alpha * dalpha, plan.starts, axis=0)
    dlogit = alpha * (dalpha - seg[plan.dst]) / np.sqrt(d_h)
    dlogit = np.repeat(dlogit, d_h, axis=1)
    dkeys = dlogit * queries
    dq = np.add.reduceat(dlogit * keys, plan.starts, axis=0)
    dk = np.zeros((plan.n_nodes, d_z))
    dv = np.zeros((plan.n_nodes, d_z))
    np.add.at(dk, plan.src, dkeys)
    np.add.at(dv, plan.src, dmsg)
    np.add.at(grads[phi], plan.rel, dkeys + dmsg)
    dE = d1.copy()
    for w, dw in (("wq", dq), ("wk", dk), ("wv", dv)):
        grads[prefix + w] += E.T @ dw
        dE += dw @ p[prefix + w].T
    return dE


def rgat_block(E, graph, params: Params, cfg: EncoderConfig, prefix: str = "enc.0.rgat.",
               phi: str | None = None, return_attention: bool = False):
    """One relational graph attention layer over ``graph``.

    For node i with incoming neighbours j (relation r):
    logits q_i . (k_j + phi_r) / sqrt(d_z), softmax over the neighbourhood,
    message sum of alpha_ij (v_j + phi_r), then two residual LayerNorms
    around the output projection and the feed-forward net.

    With ``return_attention`` also returns ``(alpha, plan)`` where ``alpha``
    is (edges, heads) in ``plan`` edge order.
    """
    plan = _as_plan(graph)
    E = _check_rows(E, cfg.d_m, "node embeddings")
    if E.shape[0] != plan.n_nodes:
        raise ShapeError(f"{E.shape[0]} node embeddings for {plan.n_nodes} graph nodes")
    if plan.n_nodes and plan.src.size == 0:
        raise GraphError("graph has no edges")
    out, cache = rgat_forward(E, plan, params, prefix, phi or phi_name(cfg, 0), cfg)
    if return_attention:
        return out, cache[7], plan
    return out


# ---------------------------------------------------------------------------
# Joint layer and stacked encoder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Alignment:
    """Node <-> token maps: ``pool`` averages each node's span, ``scatter``
    adds a node vector to each of its positions. Unowned positions get nothing."""
    pool: np.ndarray     # (nodes, tokens)
    scatter: np.ndarray  # (tokens, nodes)

    @classmethod
    def from_spans(cls, spans, n_tokens: int) -> "Alignment":
        pool = np.zeros((len(spans), n_tokens))
        scatter = np.zeros((n_tokens, len(spans)))
        taken = set()
        for i, (a, b) in enumerate(spans):
            if not 0 <= a < b <= n_tokens:
                raise GraphError(f"span {(a, b)} of node {i} is outside {n_tokens} tokens")
            if taken & set(range(a, b)):
                raise GraphError(f"span {(a, b)} of node {i} overlaps another node")
            taken.update(range(a, b))
            pool[i, a:b] = 1.0 / (b - a)
            scatter[a:b, i] = 1.0
        return cls(pool, scatter)


def graphix_layer_forward(H: np.ndarray, plan: EdgePlan | None, align: Alignment | None,
                          p: Params, layer: int, cfg: EncoderConfig):
    hs, c_sem = semantic_forward(H, p, f"enc.{layer}.sem.", cfg)
    if cfg.variant is not Variant.GRAPHIX:
        return hs, (c_sem, None)
    e0 = align.pool @ hs
    eg, c_rgat = rgat_forward(e0, plan, p, f"enc.{layer}.rgat.", phi_name(cfg, layer), cfg)
    return hs + align.scatter @ eg, (c_sem, (align, c_rgat))


def graphix_layer_backward(dout: np.ndarray, cache, p: Params, grads: Grads) -> np.ndarray:
    c_sem, structural = cache
    dhs = dout
    if structural is not None:
        align, c_rgat = structural
        de0 = rgat_backward(align.scatter.T @ dout, c_rgat, p, grads)
        dhs = dout + align.pool.T @ de0
    return semantic_backward(dhs, c_sem, p, grads)


def _check_alignment(graph, spans, n_tokens: int) -> tuple[EdgePlan, Alignment]:
    plan = _as_plan(graph)
    if len(spans) != plan.n_nodes:
        raise GraphError(f"{len(spans)} node spans for {plan.n_nodes} graph nodes")
    return plan, Alignment.from_spans(spans, n_tokens)


def graphix_layer(H, graph, spans, params: Params, cfg: EncoderConfig, layer: int = 0):
    """One joint layer: semantic states plus scattered graph-attention output.

    ``spans`` gives each graph node's half-open token range, in node order.
    """
    H = _check_rows(H, cfg.d_m, "hidden states")
    plan, align = _check_alignment(graph, spans, H.shape[0])
    return graphix_layer_forward(H, plan, align, params, layer, cfg)[0]


@dataclass(frozen=True)
class EncoderInputs:
    ids: np.ndarray
    plan: EdgePlan
    align: Alignment

    @classmethod
    def build(cls, x: SerializedInput, graph, vocab: Vocabulary) -> "EncoderInputs":
        if isinstance(graph, HeterogeneousGraph) and tuple(graph.nodes) != tuple(x.node_refs):
            raise GraphError("serialized input and graph disagree on node order")
        plan, align = _check_alignment(graph, x.node_spans, len(x.tokens))
        return cls(np.array(vocab.encode(x.tokens), dtype=np.int64), plan, align)


def encoder_forward(inputs: EncoderInputs, p: Params, cfg: EncoderConfig):
    n = inputs.ids.size
    if n > cfg.max_len:
        raise ShapeError(f"input of {n} tokens exceeds max_len={cfg.max_len}")
    if n and inputs.ids.max() >= cfg.vocab_size:
        raise ShapeError("token id outside the embedding table")
    H = p["embed.tokens"][inputs.ids] + p["embed.positions"][:n]
    caches = []
    for l in range(cfg.layers):
        H, c = graphix_layer_forward(H, inputs.plan, inputs.align, p, l, cfg)
        caches.append(c)
    severed = []
    if cfg.variant is Variant.SEVERED:
        e = inputs.align.pool @ H
        for k in range(cfg.severed_layers):
            name = f"gnn{k}"
            e, c = rgat_forward(e, inputs.plan, p, f"enc.{name}.rgat.", phi_name(cfg, name), cfg)
            severed.append(c)
        H = H + inputs.align.scatter @ e
    return H, (inputs, caches, severed)


def encoder_backward(dh: np.ndarray, cache, p: Params, grads: Grads) -> None:
    inputs, caches, severed = cache
    if severed:
        de = inputs.align.scatter.T @ dh
        for c in reversed(severed):
            de = rgat_backward(de, c, p, grads)
        dh = dh + inputs.align.pool.T @ de
    for c in reversed(caches):
        dh = graphix_layer_backward(dh, c, p, grads)
    np.add.at(grads["embed.tokens"], inputs.ids, dh)
    grads["embed.positions"][:inputs.ids.size] += dh


def encode(x: SerializedInput, graph, cfg: EncoderConfig, params: Params,
           vocab: Vocabulary) -> np.ndarray:
    """Final hidden states (tokens x d_m) of the configured encoder variant."""
    return encoder_forward(EncoderInputs.build(x, graph, vocab), params, cfg)[0]


def semantic_stack(x: SerializedInput, cfg: EncoderConfig, params: Params,
                   vocab: Vocabulary) -> np.ndarray:
    """Embeddings followed by ``cfg.layers`` semantic blocks, graph ignored."""
    ids = np.array(vocab.encode(x.tokens), dtype=np.int64)
    H = params["embed.tokens"][ids] + params["embed.positions"][:ids.size]
    for l in range(cfg.layers):
        H = semantic_block(H, params, cfg, l)
    return H


class CheckpointMismatch(ValueError):
    pass


def migrate_semantic_params(checkpoint: str | Path, cfg: EncoderConfig, seed: int = 0,
                            store: ParamStore | None = None) -> ParamStore:
    """Fresh parameters for ``cfg`` with the semantic weights taken from a checkpoint.

    Semantic and embedding weights (theta) must all be present with matching
    shapes. Decoder weights are copied when the checkpoint has them. Graph
    attention weights and relation embeddings stay freshly initialized.
    """
    saved, _ = load_checkpoint(checkpoint)
    store = init_encoder_params(cfg, ParamStore(seed)) if store is None else store
    for name in store.names():
        group = param_group(name)
        if group in ("psi", "phi"):
            continue
        if name not in saved:
            if group == "theta":
                raise CheckpointMismatch(f"checkpoint lacks semantic parameter {name!r}")
            continue
        if saved[name].shape != store[name].shape:
            raise CheckpointMismatch(f"shape mismatch for {name!r}: checkpoint "
                                     f"{saved[name].shape} vs config {store[name].shape}")
        store[name] = saved[name]
    return store
