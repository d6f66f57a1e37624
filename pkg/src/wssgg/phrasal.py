"""Attention-weighted message passing over the caption's relation edges."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    add, concat_cols, concat_rows, matmul, normal_init, segment_softmax,
    take_rows, value, where_rows,
)


@dataclass
class ContextLayers:
    """Shared edge-update (3d -> d) and edge-weight (3d -> 1) linear layers."""

    phi_r_w: object
    phi_r_b: object
    phi_a_w: object
    phi_a_b: object
    depth: int = 2
    symmetric: bool = False

    PARAMS = ("phi_r_w", "phi_r_b", "phi_a_w", "phi_a_b")

    @classmethod
    def init(cls, d, rng, depth=2, std=0.01, symmetric=False):
        return cls(
            normal_init(rng, (3 * d, d), std), np.zeros((1, d)),
            normal_init(rng, (3 * d, 1), std), np.zeros((1, 1)),
            depth, symmetric,
        )

    def params(self, prefix="phrasal"):
        return {f"{prefix}.{k}": getattr(self, k) for k in self.PARAMS}

    @classmethod
    def bind(cls, params, prefix="phrasal", depth=2, symmetric=False):
        return cls(*(params[f"{prefix}.{k}"] for k in cls.PARAMS), depth, symmetric)


def message_pass_step(graph, H_ent, H_rel, layers):
    """One round: update every edge, then aggregate edges into their object node.

    Nodes that are never an object keep their input row.
    """
    if graph.n_relations == 0:
        return H_ent, H_rel
    subj = np.array([s for _, s, _ in graph.relations])
    obj = np.array([o for _, _, o in graph.relations])
    n_e = value(H_ent).shape[0]
    x = concat_cols([H_rel, take_rows(H_ent, subj), take_rows(H_ent, obj)])
    r_new = add(matmul(x, layers.phi_r_w), layers.phi_r_b)
    alpha = add(matmul(x, layers.phi_a_w), layers.phi_a_b)
    if layers.symmetric:
        targets = np.concatenate([obj, subj])
        weights = segment_softmax(concat_rows([alpha, alpha]), targets, n_e)
        agg = matmul(weights, concat_rows([r_new, r_new]))
    else:
        targets = obj
        weights = segment_softmax(alpha, targets, n_e)
        agg = matmul(weights, r_new)
    has_incoming = np.bincount(targets, minlength=n_e) > 0
    return where_rows(has_incoming, agg, H_ent), r_new


def contextualize(graph, H_ent0, H_rel0, layers):
    if layers.depth < 1:
        raise ValueError("stack depth must be at least 1")
    H_ent, H_rel = H_ent0, H_rel0
    for _ in range(layers.depth):
        H_ent, H_rel = message_pass_step(graph, H_ent, H_rel, layers)
    return H_ent


def phrasal_graph(graph, tables):
    """Extend ``graph`` with attribute nodes and return their initial embeddings.

    Attribute nodes are appended after the entities and linked to their
    entity with the reserved ``attr`` relation (attribute -> entity), so
    ``contextualize(...)[:n_e]`` is the entity part.
    """
    from .textgraph import TextGraph

    n_e = graph.n_entities
    c_r = tables.W_rel.shape[0]
    H_ent = tables.W_ent[np.asarray(graph.entities, dtype=np.int64)].reshape(n_e, tables.d)
    H_rel = tables.W_rel[np.asarray([r for r, _, _ in graph.relations], dtype=np.int64)].reshape(-1, tables.d)
    if not graph.attributes:
        return graph, H_ent, H_rel
    attr_vecs = np.array([tables.word_vector(w) for w, _ in graph.attributes])
    edges = list(graph.relations) + [(c_r, n_e + k, i) for k, (_, i) in enumerate(graph.attributes)]
    ext = TextGraph(list(graph.entities) + [-1] * len(graph.attributes), edges)
    H_rel = np.vstack([H_rel, np.repeat(tables.attr_rel, len(graph.attributes), axis=0)])
    return ext, np.vstack([H_ent, attr_vecs]), H_rel
