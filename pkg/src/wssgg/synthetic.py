"""Planted corpora with known answers, for overfitting and ablation checks."""
from __future__ import annotations

import numpy as np

from .grounding import ProposalSet
from .pipeline import ImageRecord, PipelineConfig, evaluate, infer, train
from .textgraph import AnnotatedTriplet, TextGraph, Vocab

ENTITY_NAMES = ["person", "horse", "hat", "umbrella", "dog", "bench", "plate", "pizza"]
RELATION_NAMES = ["ride", "wear", "hold", "sit_on", "under", "feed"]


def grid_boxes(n, rng, cell=100.0, cols=4):
    """``n`` disjoint jittered boxes on a grid (pairwise IoU is zero)."""
    out = []
    for k in range(n):
        r, c = divmod(k, cols)
        x0, y0 = c * cell, r * cell
        j = rng.uniform(2, 12, size=4)
        out.append([x0 + j[0], y0 + j[1], x0 + cell - j[2], y0 + cell - j[3]])
    return np.array(out)


def _record(image_id, boxes, feats, entities, slot_of, relations):
    graph = TextGraph(list(entities), list(relations))
    triplets = [
        AnnotatedTriplet(entities[s], r, entities[o], tuple(boxes[slot_of[s]]), tuple(boxes[slot_of[o]]))
        for r, s, o in relations
    ]
    return ImageRecord(image_id, ProposalSet(boxes, feats), graph=graph, triplets=triplets)


def planted_corpus(n_images=50, seed=0, n_proposals=8, c_e=6, c_r=4, d_cnn=32, noise=0.1, tie=0.9):
    """Images whose entity regions are class prototypes plus Gaussian noise.

    Each image has 2-4 distinct-class entities and 1-3 relations whose
    predicate follows a fixed (subject, object) -> predicate table with
    probability ``tie``. Remaining proposals are unit Gaussian clutter.
    """
    rng = np.random.default_rng(seed)
    vocab = Vocab(ENTITY_NAMES[:c_e], RELATION_NAMES[:c_r])
    protos = rng.standard_normal((c_e, d_cnn))
    table = rng.integers(0, c_r, size=(c_e, c_e))
    records = []
    for n in range(n_images):
        n_ent = int(rng.integers(2, 5))
        classes = rng.choice(c_e, size=n_ent, replace=False)
        slots = rng.choice(n_proposals, size=n_ent, replace=False)
        feats = rng.standard_normal((n_proposals, d_cnn))
        for cls, slot in zip(classes, slots):
            feats[slot] = protos[cls] + noise * rng.standard_normal(d_cnn)
        pairs = [(a, b) for a in range(n_ent) for b in range(n_ent) if a != b]
        n_rel = int(rng.integers(1, min(3, len(pairs)) + 1))
        picks = rng.choice(len(pairs), size=n_rel, replace=False)
        relations = []
        for p in picks:
            s, o = pairs[p]
            r = table[classes[s], classes[o]] if rng.random() < tie else rng.integers(c_r)
            relations.append((int(r), s, o))
        boxes = grid_boxes(n_proposals, rng)
        records.append(_record(f"img{n:04d}", boxes, feats, [int(c) for c in classes], slots, relations))
    return vocab, records


SUBJECT_GROUPS = (("person", "man"), ("child", "woman"))

PREDICATE_TABLE = {
    # (group, object) -> predicate; neither class alone decides it
    (0, "horse"): "ride", (1, "horse"): "feed",
    (0, "dog"): "feed", (1, "dog"): "ride",
}


def disambiguation_corpus(n_images=50, seed=0, n_proposals=8, d_cnn=32, noise=0.1, subtype=1.0,
                          n_background=0, scale=0.1):
    """Two same-class objects per image, told apart only by their relation.

    Every image has one subject from each of two groups and two instances of
    one object class (``horse`` or ``dog``). The predicate depends jointly on
    the subject group and the object class, so each image holds exactly one
    ``ride`` and one ``feed`` edge. Each object region carries its class
    prototype plus a predicate-specific component scaled by ``subtype``; as
    both components appear in every image they say nothing about which
    subjects are present. Half the images add a hat worn by the first
    subject. Unused proposals are pure noise. Small feature magnitudes
    (``scale``) keep the attention from saturating early.
    """
    rng = np.random.default_rng(seed)
    vocab = Vocab(
        ["person", "man", "child", "woman", "horse", "dog", "hat"], ["ride", "feed", "wear"]
    )
    eid, rid = vocab.entity_id, vocab.relation_id
    protos = rng.standard_normal((vocab.n_entities, d_cnn))
    delta = rng.standard_normal((vocab.n_relations, d_cnn)) * subtype
    background = rng.standard_normal((max(n_background, 1), d_cnn))
    records = []
    for n in range(n_images):
        subjects = [str(rng.choice(g)) for g in SUBJECT_GROUPS]
        groups = [0, 1]
        if rng.random() < 0.5:
            subjects.reverse()
            groups.reverse()
        obj = str(rng.choice(["horse", "dog"]))
        p1, p2 = (rid(PREDICATE_TABLE[g, obj]) for g in groups)
        entities = [eid(subjects[0]), eid(obj), eid(subjects[1]), eid(obj)]
        relations = [(p1, 0, 1), (p2, 2, 3)]
        if rng.random() < 0.5:
            entities.append(eid("hat"))
            relations.append((rid("wear"), 0, 4))
        slots = rng.choice(n_proposals, size=len(entities), replace=False)
        feats = noise * rng.standard_normal((n_proposals, d_cnn))
        if n_background:
            feats += background[rng.integers(n_background, size=n_proposals)]
        for cls, slot in zip(entities, slots):
            feats[slot] += protos[cls]
        feats[slots[1]] += delta[p1]
        feats[slots[3]] += delta[p2]
        feats *= scale
        boxes = grid_boxes(n_proposals, rng)
        records.append(_record(f"img{n:04d}", boxes, feats, entities, slots, relations))
    return vocab, records


# component switchboard, cumulative as in the ablation table
ABLATION_MODES = {
    "basic": dict(phrasal=False, n_t=0, sequential=False),
    "iterative": dict(sequential=False),
    "final": {},
}


def ablation_config(seed=0, steps=400, **changes):
    """Small-width settings used for the synthetic ablation."""
    cfg = PipelineConfig(
        d=16, d_cnn=32, hidden=32, lr=1e-2, batch_size=10, max_steps=steps, weight_decay=0.0, seed=seed
    )
    return cfg.replace(**changes)


def ablate(seed, ks=(10,), steps=400, n_images=50, subtype=0.3, **corpus):
    """Training-set micro recall per mode on one seeded disambiguation corpus."""
    vocab, records = disambiguation_corpus(n_images, seed=seed, subtype=subtype, **corpus)
    out = {}
    for name, switches in ABLATION_MODES.items():
        model, _ = train(ablation_config(seed, steps, ks=tuple(ks), **switches), records, vocab)
        out[name] = evaluate(dict(infer(model, records)), records, ks)[2]
    return out
