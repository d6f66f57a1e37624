"""Instance pseudo-labels and the caption-free detection heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import cross_entropy_rows, matmul, normal_init, softmax_rows, value


@dataclass
class PseudoLabels:
    Y_det: np.ndarray
    Y_relsub: np.ndarray
    Y_relobj: np.ndarray


@dataclass
class DetectionHeads:
    """``W_det`` holds one entity head per refinement iteration."""

    W_det: list
    W_relsub: object
    W_relobj: object

    @classmethod
    def init(cls, d_cnn, d, rng, n_t=0, std=0.01):
        det = [normal_init(rng, (d_cnn, d), std) for _ in range(n_t + 1)]
        return cls(det, normal_init(rng, (d_cnn, d), std), normal_init(rng, (d_cnn, d), std))

    def params(self, prefix="detection"):
        out = {f"{prefix}.W_det.{t}": w for t, w in enumerate(self.W_det)}
        out[f"{prefix}.W_relsub"] = self.W_relsub
        out[f"{prefix}.W_relobj"] = self.W_relobj
        return out

    @classmethod
    def bind(cls, params, n_t, prefix="detection"):
        det = [params[f"{prefix}.W_det.{t}"] for t in range(n_t + 1)]
        return cls(det, params[f"{prefix}.W_relsub"], params[f"{prefix}.W_relobj"])


def entity_labels(g, entities, n_v, c_e):
    Y = np.zeros((n_v, c_e))
    if len(entities):
        Y[np.asarray(g, dtype=np.int64), np.asarray(entities, dtype=np.int64)] = 1.0
    return Y


def extract_pseudo_labels(graph, g_entity, g_relation, n_v, c_e, c_r):
    """Binary targets: a proposal gets class j when some grounded entity says so."""
    Y_det = entity_labels(g_entity, graph.entities, n_v, c_e)
    Y_relsub = np.zeros((n_v, c_r))
    Y_relobj = np.zeros((n_v, c_r))
    g_relation = np.asarray(g_relation, dtype=np.int64)
    for r, s, o in graph.relations:
        Y_relsub[g_relation[s], r] = 1.0
        Y_relobj[g_relation[o], r] = 1.0
    return PseudoLabels(Y_det, Y_relsub, Y_relobj)


def class_scores(features, W, W_emb):
    return softmax_rows(matmul(matmul(features, W), np.asarray(W_emb).T))


def detection_scores(features, heads, W_ent, W_rel, t=-1):
    """``(P_det, P_relsub, P_relobj)`` using entity head ``t`` (default: last)."""
    return (
        class_scores(features, heads.W_det[t], W_ent),
        class_scores(features, heads.W_relsub, W_rel),
        class_scores(features, heads.W_relobj, W_rel),
    )


class RelationScores:
    """``P_rel[i, j, k] = min(P_relsub[i, k], P_relobj[j, k])``, evaluated on demand."""

    def __init__(self, P_relsub, P_relobj):
        self.sub = np.asarray(value(P_relsub))
        self.obj = np.asarray(value(P_relobj))
        if self.sub.shape[1] != self.obj.shape[1]:
            raise ValueError(f"relation class counts differ: {self.sub.shape[1]} vs {self.obj.shape[1]}")

    @property
    def shape(self):
        return (self.sub.shape[0], self.obj.shape[0], self.sub.shape[1])

    def __getitem__(self, key):
        i, j, k = key
        return np.minimum(self.sub[i, k], self.obj[j, k])

    def dense(self):
        return np.minimum(self.sub[:, None, :], self.obj[None, :, :])


def combine_relation(P_relsub, P_relobj):
    return RelationScores(P_relsub, P_relobj)


def detection_losses(P_det, P_relsub, P_relobj, labels):
    return (
        cross_entropy_rows(P_det, labels.Y_det),
        cross_entropy_rows(P_relsub, labels.Y_relsub),
        cross_entropy_rows(P_relobj, labels.Y_relobj),
    )
