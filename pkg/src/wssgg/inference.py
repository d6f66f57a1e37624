"""Initial scene graph: per-class NMS, then top-K 5-tuples by summed log-probability."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .boxes import iou_matrix
from .tensor import LOG_FLOOR, value


class FiveTuple(NamedTuple):
    s_v: int
    o_v: int
    s_e: int
    p_r: int
    o_e: int
    score: float


@dataclass
class NmsConfig:
    score_threshold: float = 0.01
    iou_threshold: float = 0.4
    max_per_class: int = 4

    def __post_init__(self):
        if not (0 <= self.score_threshold <= 1 and 0 <= self.iou_threshold <= 1):
            raise ValueError("NMS thresholds must lie in [0, 1]")
        if self.max_per_class < 1:
            raise ValueError("max_per_class must be at least 1")


def nms_per_class(P_det, boxes, cfg=None):
    """Greedy per-class suppression; returns ``(proposal, class, score)`` triples."""
    cfg = cfg or NmsConfig()
    P = np.asarray(value(P_det))
    overlap = iou_matrix(boxes)
    out = []
    for j in range(P.shape[1]):
        col = P[:, j]
        idx = np.flatnonzero(col >= cfg.score_threshold)
        idx = idx[np.lexsort((idx, -col[idx]))]
        kept = []
        for i in idx:
            if all(overlap[i, k] <= cfg.iou_threshold for k in kept):
                kept.append(int(i))
                if len(kept) == cfg.max_per_class:
                    break
        out.extend((i, j, float(col[i])) for i in kept)
    return out


def log_tables(P_det, P_relsub, P_relobj):
    """Clamped log-probabilities shared by the search and its oracle."""
    return tuple(np.log(np.maximum(np.asarray(value(p)), LOG_FLOOR)) for p in (P_det, P_relsub, P_relobj))


def _unique_candidates(candidates):
    seen = sorted({(int(c[0]), int(c[1])) for c in candidates})
    return np.array([c[0] for c in seen], dtype=np.int64), np.array([c[1] for c in seen], dtype=np.int64)


def top_k_tuples(P_det, relation, candidates, k):
    """The ``k`` best 5-tuples over candidate pairs and all predicates.

    ``relation`` is a :class:`~wssgg.detection.RelationScores` or a
    ``(P_relsub, P_relobj)`` pair. Ties break lexicographically on
    ``(s_v, o_v, s_e, p_r, o_e)``. Self-pairs are excluded.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    sub, obj = (relation.sub, relation.obj) if hasattr(relation, "sub") else relation
    ldet, lsub, lobj = log_tables(P_det, sub, obj)
    if not candidates:
        return []
    cv, ce = _unique_candidates(candidates)
    m, c_r = len(cv), lsub.shape[1]
    ls = ldet[cv, ce]
    lrel = np.minimum(lsub[cv][:, None, :], lobj[cv][None, :, :])
    score = (ls[:, None, None] + lrel) + ls[None, :, None]
    a, b, p = np.meshgrid(np.arange(m), np.arange(m), np.arange(c_r), indexing="ij")
    valid = (cv[a] != cv[b]).ravel()
    a, b, p, score = a.ravel()[valid], b.ravel()[valid], p.ravel()[valid], score.ravel()[valid]
    if score.size > k:
        kth = np.partition(-score, k - 1)[k - 1]
        sel = -score <= kth
        a, b, p, score = a[sel], b[sel], p[sel], score[sel]
    s_v, o_v, s_e, o_e = cv[a], cv[b], ce[a], ce[b]
    order = np.lexsort((o_e, p, s_e, o_v, s_v, -score))[:k]
    return [
        FiveTuple(int(s_v[i]), int(o_v[i]), int(s_e[i]), int(p[i]), int(o_e[i]), float(score[i]))
        for i in order
    ]


def brute_force_tuples(P_det, P_relsub, P_relobj, candidates, k):
    """Exhaustive enumeration with a full sort; small inputs only."""
    ldet, lsub, lobj = log_tables(P_det, P_relsub, P_relobj)
    cands = sorted({(int(c[0]), int(c[1])) for c in candidates})
    rows = []
    for sv, se in cands:
        for ov, oe in cands:
            if sv == ov:
                continue
            for pr in range(lsub.shape[1]):
                rel = min(lsub[sv, pr], lobj[ov, pr])
                rows.append(FiveTuple(sv, ov, se, pr, oe, float((ldet[sv, se] + rel) + ldet[ov, oe])))
    rows.sort(key=lambda t: (-t.score, t.s_v, t.o_v, t.s_e, t.p_r, t.o_e))
    return rows[:k]
