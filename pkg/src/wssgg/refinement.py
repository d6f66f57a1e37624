"""Bootstrapping grounding from the detector's own class scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detection import class_scores, entity_labels
from .tensor import cross_entropy_rows, value


@dataclass
class RefinementSchedule:
    n_t: int = 3

    def __post_init__(self):
        if self.n_t < 0:
            raise ValueError("n_t must be non-negative")


def refine_grounding(P_det, entities, mask=None):
    """Select the class column of each entity as its new attention row.

    Rows are not renormalized. ``mask`` zeroes proposals from other images
    in a stacked batch.
    """
    P = np.asarray(value(P_det))
    E = np.asarray(entities, dtype=np.int64)
    if E.size and E.max() >= P.shape[1]:
        raise ValueError(f"entity class {E.max()} outside {P.shape[1]} detector classes")
    A = P[:, E].T.copy()
    if mask is not None:
        A = np.where(mask, A, 0.0)
    g = np.argmax(A, axis=1) if len(E) else np.zeros(0, dtype=np.int64)
    return A, g, entity_labels(g, E, P.shape[0], P.shape[1])


def run_refinement(features, W_det, W_ent, entities, g0, n_t, mask=None):
    """Train heads ``0..n_t`` against successively refined targets.

    Returns the final grounding, the per-iteration detection losses and the
    ``(A, g)`` history (entry 0 is the input grounding with ``A=None``).
    Targets are constants: no gradient flows through the argmax.
    """
    n_v = np.asarray(value(features)).shape[0]
    c_e = np.asarray(W_ent).shape[0]
    g = np.asarray(g0, dtype=np.int64)
    Y = entity_labels(g, entities, n_v, c_e)
    losses, history = [], [(None, g)]
    for t in range(n_t + 1):
        P = class_scores(features, W_det[t], W_ent)
        losses.append(cross_entropy_rows(P, Y))
        if t < n_t:
            A, g, Y = refine_grounding(P, entities, mask)
            history.append((A, g))
    return g, losses, history
