"""Recall@K under the triplet matching protocol, and relation statistics."""
from __future__ import annotations

import csv
from collections import Counter

import numpy as np

from .boxes import iou
from .textgraph import AnnotatedTriplet as GroundTruthTriplet

__all__ = [
    "GroundTruthTriplet", "iou", "resolve_boxes", "recall_at_k",
    "relation_frequency", "write_report", "write_histogram",
]


def resolve_boxes(tuples, boxes):
    """Attach proposal boxes: ``(subject_box, object_box, s_e, p_r, o_e)``."""
    boxes = np.asarray(boxes, dtype=np.float64)
    return [(boxes[t.s_v], boxes[t.o_v], t.s_e, t.p_r, t.o_e) for t in tuples]


def recall_at_k(predictions, gts, k, threshold=0.5):
    """Fraction of GT triplets matched by the top ``k`` predictions.

    Matching is greedy and one-to-one in rank order. An image without GT
    scores 1.0.
    """
    if not gts:
        return 1.0
    used = [False] * len(gts)
    hits = 0
    for sbox, obox, s_e, p_r, o_e in predictions[:k]:
        for j, gt in enumerate(gts):
            if used[j] or (s_e, p_r, o_e) != (gt.subject, gt.predicate, gt.object):
                continue
            if iou(sbox, gt.subject_box) >= threshold and iou(obox, gt.object_box) >= threshold:
                used[j] = True
                hits += 1
                break
    return hits / len(gts)


def relation_frequency(graphs, vocab):
    """``(name, count, fraction)`` rows sorted by count, then name."""
    counts = Counter()
    for g in graphs:
        counts.update(r for r, _, _ in g.relations)
    total = sum(counts.values())
    rows = [(name, counts[i], counts[i] / total if total else 0.0) for i, name in enumerate(vocab.relations)]
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows


def write_histogram(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "count", "fraction"])
        for name, count, frac in rows:
            w.writerow([name, count, f"{frac:.6f}"])


def write_report(path, rows, ks, missing=()):
    """Tab-separated per-image recalls, macro and micro averages, and a footer.

    ``rows`` holds ``(image_id, n_gt, {k: recall})``.
    """
    scored = [r for r in rows if r[1] > 0]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(["image_id", "n_gt"] + [f"R@{k}" for k in ks]) + "\n")
        for image_id, n_gt, rec in rows:
            fh.write("\t".join([str(image_id), str(n_gt)] + [f"{rec[k]:.6f}" for k in ks]) + "\n")
        macro = [np.mean([r[2][k] for r in scored]) if scored else 0.0 for k in ks]
        n_total = sum(r[1] for r in scored)
        micro = [sum(r[2][k] * r[1] for r in scored) / n_total if n_total else 0.0 for k in ks]
        fh.write("\t".join(["macro_avg", str(len(scored))] + [f"{v:.6f}" for v in macro]) + "\n")
        fh.write("\t".join(["micro_avg", str(n_total)] + [f"{v:.6f}" for v in micro]) + "\n")
        if missing:
            fh.write("# missing predictions: " + ",".join(map(str, missing)) + "\n")
    return dict(zip(ks, macro)), dict(zip(ks, micro))
