"""Attention-based message passing over super-node subgraphs.

Each layer scores every directed edge with a single attention head conditioned
on the source feature, the source node-type embedding, the relation embedding,
and an affine map of the scalar edge weight; softmax-normalizes per target
node; and updates h <- tanh([h | aggregate] W + b). Messages flow along both
directions of every knowledge edge and super-edge. The super node's feature
after the last layer is the knowledge-infused context representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .extraction import SubgraphSpec
from .tensor import Tensor

__all__ = ["GnnConfig", "GnnParams", "gat_layer", "propagate", "build_edge_arrays",
           "edge_attention", "bridged_seed"]

N_NODE_TYPES = 3  # super, linked, expanded


@dataclass
class GnnConfig:
    layers: int = 5
    hidden_dim: int | None = None  # None: match the incoming embedding dim
    type_emb_dim: int = 8
    rel_emb_dim: int = 8

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError("layer count must be >= 0")
        if self.hidden_dim is not None and self.hidden_dim <= 0:
            raise ValueError("hidden dim must be positive")
        if self.type_emb_dim <= 0 or self.rel_emb_dim <= 0:
            raise ValueError("embedding dims must be positive")

    def resolve_hidden(self, input_dim: int) -> int:
        return self.hidden_dim if self.hidden_dim is not None else input_dim


class GnnParams:
    """Learnable state: input bridge, type/relation embeddings, per-layer attention."""

    def __init__(self, config: GnnConfig, input_dim: int, n_kg_relations: int, rng=None,
                 arrays=None):
        self.config = config
        self.input_dim = input_dim
        self.n_kg_relations = n_kg_relations  # super-edges use relation id n_kg_relations
        hidden = config.resolve_hidden(input_dim)
        self.hidden_dim = hidden
        if arrays is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            att_in = hidden + config.type_emb_dim + config.rel_emb_dim + 1
            arrays = {
                "bridge_w": rng.normal(0.0, 0.1, (input_dim, hidden)),
                "bridge_b": np.zeros(hidden),
                "type_emb": rng.normal(0.0, 0.1, (N_NODE_TYPES, config.type_emb_dim)),
                "rel_emb": rng.normal(0.0, 0.1, (n_kg_relations + 1, config.rel_emb_dim)),
            }
            for l in range(config.layers):
                arrays.update({
                    f"g{l}.att_w": rng.normal(0.0, 0.1, (att_in, hidden)),
                    f"g{l}.att_a": rng.normal(0.0, 0.1, hidden),
                    f"g{l}.score_w": np.ones(()),
                    f"g{l}.score_b": np.zeros(()),
                    f"g{l}.msg_w": rng.normal(0.0, 0.1, (hidden, hidden)),
                    f"g{l}.upd_w": rng.normal(0.0, 0.1, (2 * hidden, hidden)),
                    f"g{l}.upd_b": np.zeros(hidden),
                })
        self.params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def layer_params(self, l: int) -> dict[str, Tensor]:
        return {k.split(".", 1)[1]: v for k, v in self.params.items()
                if k.startswith(f"g{l}.")}

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}


def build_edge_arrays(spec: SubgraphSpec, super_relation: int):
    """Directed (src, dst, rel, score, src_type) arrays, both directions per edge."""
    types = spec.node_types()
    src, dst, rel, score = [], [], [], []

    def push(a, b, r, w):
        src.append(a), dst.append(b), rel.append(r), score.append(w)

    for h, r, t, w in spec.kg_edges:
        push(h, t, r, w)
        push(t, h, r, w)
    for node, weight in spec.super_edges:
        push(node, 0, super_relation, weight)
        push(0, node, super_relation, weight)
    return (np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64),
            np.asarray(rel, dtype=np.int64), np.asarray(score, dtype=np.float64),
            types)


def edge_attention(features: Tensor, edges, params: GnnParams, layer_index: int):
    """Per-edge attention weights (softmax over each target's incoming edges)."""
    src, dst, rel, score, types = edges
    n = features.shape[0]
    p = params.layer_params(layer_index)
    src_f = tt.take_rows(features, src)
    t_emb = tt.take_rows(params.params["type_emb"], types[src])
    r_emb = tt.take_rows(params.params["rel_emb"], rel)
    s_aff = tt.reshape(tt.add(tt.mul(Tensor(score), p["score_w"]), p["score_b"]),
                       (len(src), 1))
    att_in = tt.concat_cols([src_f, t_emb, r_emb, s_aff])
    logits = tt.reshape(
        tt.matmul(tt.tanh(tt.matmul(att_in, p["att_w"])),
                  tt.reshape(p["att_a"], (params.hidden_dim, 1))),
        (len(src),))
    # softmax per target node; max subtraction uses constants, so the
    # gradient is exact by shift invariance
    seg_max = np.full(n, -np.inf)
    np.maximum.at(seg_max, dst, logits.data)
    ex = tt.exp(tt.sub(logits, Tensor(seg_max[dst])))
    denom = tt.segment_sum(ex, dst, n)
    alpha = tt.div(ex, tt.take_rows(denom, dst))
    return alpha, src_f


def gat_layer(features: Tensor, edges, params: GnnParams, layer_index: int) -> Tensor:
    """One propagation step; rows of `features` are node states (n, hidden)."""
    src, dst, _, _, _ = edges
    n = features.shape[0]
    p = params.layer_params(layer_index)

    if len(src) == 0:
        agg = Tensor(np.zeros((n, params.hidden_dim)))
    else:
        alpha, src_f = edge_attention(features, edges, params, layer_index)
        msg = tt.matmul(src_f, p["msg_w"])
        agg = tt.segment_sum(tt.scale_rows(msg, alpha), dst, n)

    return tt.tanh(tt.add(tt.matmul(tt.concat_cols([features, agg]), p["upd_w"]),
                          p["upd_b"]))


def propagate(spec: SubgraphSpec, params: GnnParams, super_seed: Tensor = None,
              return_all: bool = False):
    """Run every layer and return the super node's final feature.

    `super_seed` overrides the seed recorded in the spec (training refreshes it
    from the live encoder each step). The seed and the frozen concept
    embeddings pass through the learned input bridge before the first layer.
    """
    if super_seed is None:
        super_seed = Tensor(spec.super_seed)
    if super_seed.shape != (params.input_dim,):
        raise tt.ShapeError(
            f"super seed must have length {params.input_dim}, got {super_seed.shape}")
    init = tt.concat_rows([
        tt.reshape(super_seed, (1, params.input_dim)),
        Tensor(spec.concept_embeddings.reshape(len(spec.concepts), params.input_dim)),
    ]) if spec.concepts else tt.reshape(super_seed, (1, params.input_dim))
    x = tt.add(tt.matmul(init, params.params["bridge_w"]), params.params["bridge_b"])

    cached = getattr(spec, "_edge_cache", None)
    if cached is not None and cached[0] == params.n_kg_relations:
        edges = cached[1]
    else:
        edges = build_edge_arrays(spec, params.n_kg_relations)
        spec._edge_cache = (params.n_kg_relations, edges)
    for l in range(params.config.layers):
        x = gat_layer(x, edges, params, l)
    h_x = tt.row(x, 0)
    if return_all:
        return h_x, x
    return h_x


def bridged_seed(params: GnnParams, super_seed: Tensor) -> Tensor:
    """The super node's initial in-graph feature: bridge(h')."""
    m = tt.reshape(super_seed, (1, params.input_dim))
    out = tt.add(tt.matmul(m, params.params["bridge_w"]), params.params["bridge_b"])
    return tt.row(out, 0)
