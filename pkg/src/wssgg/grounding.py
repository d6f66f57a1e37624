"""Softmax attention from text entities to region proposals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import check_box
from .tensor import (
    ShapeError, add, as_matrix, cross_entropy_rows, matmul, normal_init,
    softmax_rows, transpose, value,
)

MASKED = -1e9


@dataclass
class ProposalSet:
    boxes: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.features = as_matrix(self.features, "features")
        if len(self.boxes) < 1:
            raise ValueError("a proposal set needs at least one box")
        if len(self.boxes) != self.features.shape[0]:
            raise ShapeError(f"{len(self.boxes)} boxes but {self.features.shape[0]} feature rows")
        for b in self.boxes:
            check_box(b)
        if not np.all(np.isfinite(self.features)):
            raise ValueError("proposal features must be finite")

    @property
    def n(self):
        return len(self.boxes)


@dataclass
class GroundingHeads:
    W_att: object
    W_cls: object

    PARAMS = ("W_att", "W_cls")

    @classmethod
    def init(cls, d_cnn, d, rng, std=0.01):
        return cls(normal_init(rng, (d_cnn, d), std), normal_init(rng, (d_cnn, d), std))

    def params(self, prefix="grounding"):
        return {f"{prefix}.W_att": self.W_att, f"{prefix}.W_cls": self.W_cls}

    @classmethod
    def bind(cls, params, prefix="grounding"):
        return cls(params[f"{prefix}.W_att"], params[f"{prefix}.W_cls"])


@dataclass
class GroundingState:
    A: object
    g: np.ndarray
    t: int = 0


def argmax_rows(m):
    # np.argmax already returns the first maximum
    return np.argmax(value(m), axis=1) if value(m).shape[0] else np.zeros(0, dtype=np.int64)


def ground(psi, proposals, heads, mask=None):
    """Attention ``A = softmax(psi (V W_att)^T)`` and grounding ``g = argmax A``.

    ``mask`` (n_e x n_v bool) restricts each entity to its own image's
    proposals when several images are stacked into one batch.
    """
    feats = proposals.features if isinstance(proposals, ProposalSet) else proposals
    H_att = matmul(feats, heads.W_att)
    D = matmul(psi, transpose(H_att))
    if mask is not None:
        D = add(D, np.where(mask, 0.0, MASKED))
    A = softmax_rows(D)
    return GroundingState(A, argmax_rows(A), 0)


def grounding_loss(state, proposals, heads, W_ent, Y_ent):
    if value(state.A).shape[0] == 0:
        return np.zeros((1, 1))
    feats = proposals.features if isinstance(proposals, ProposalSet) else proposals
    F = matmul(state.A, matmul(feats, heads.W_cls))
    P_cls = softmax_rows(matmul(F, np.asarray(W_ent).T))
    return cross_entropy_rows(P_cls, Y_ent)
