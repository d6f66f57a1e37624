"""Recurrent subject -> object -> predicate model and beam re-labeling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .inference import FiveTuple
from .tensor import (
    ContractError, add, concat_cols, cross_entropy_rows, dropout, matmul, mul,
    normal_init, sigmoid, slice_cols, softmax_rows, take_rows, tanh, value,
)


@dataclass
class RecurrentCore:
    """LSTM cell over ``[word slot ; projected visual slot]`` inputs.

    Gates are packed in ``i, f, g, o`` order along the columns of ``W_x``,
    ``W_h`` and ``b``.
    """

    start: object
    W_vis: object
    W_x: object
    W_h: object
    b: object
    W_out: object
    dropout: float = 0.2

    PARAMS = ("start", "W_vis", "W_x", "W_h", "b", "W_out")

    @classmethod
    def init(cls, d_cnn, d, rng, hidden=100, dropout=0.2, std=0.01):
        return cls(
            normal_init(rng, (1, d), std),
            normal_init(rng, (d_cnn, d), std),
            normal_init(rng, (2 * d, 4 * hidden), std),
            normal_init(rng, (hidden, 4 * hidden), std),
            np.zeros((1, 4 * hidden)),
            normal_init(rng, (hidden, d), std),
            dropout,
        )

    @property
    def hidden(self):
        return value(self.W_h).shape[0]

    def params(self, prefix="sequential"):
        return {f"{prefix}.{k}": getattr(self, k) for k in self.PARAMS}

    @classmethod
    def bind(cls, params, prefix="sequential", dropout=0.2):
        return cls(*(params[f"{prefix}.{k}"] for k in cls.PARAMS), dropout)


def lstm_step(core, x, h, c):
    H = core.hidden
    z = add(add(matmul(x, core.W_x), matmul(h, core.W_h)), core.b)
    i = sigmoid(slice_cols(z, 0, H))
    f = sigmoid(slice_cols(z, H, 2 * H))
    g = tanh(slice_cols(z, 2 * H, 3 * H))
    o = sigmoid(slice_cols(z, 3 * H, 4 * H))
    c_new = add(mul(f, c), mul(i, g))
    return mul(o, tanh(c_new)), c_new


def _readout(core, h, W_emb, rng):
    if rng is not None:
        h = dropout(h, core.dropout, rng)
    return softmax_rows(matmul(matmul(h, core.W_out), np.asarray(W_emb).T))


def forward_sequences(core, V_sub, V_obj, subj_classes, obj_classes, W_ent, W_rel, rng=None):
    """Teacher-forced three-step pass over ``n`` rows at once.

    Returns ``(P_sub, P_obj, P_pred)``. ``rng`` enables dropout (training).
    """
    W_ent = np.asarray(W_ent)
    n = value(V_sub).shape[0]
    c_e = W_ent.shape[0]
    for cls in (subj_classes, obj_classes):
        cls = np.asarray(cls, dtype=np.int64)
        if cls.size and (cls.min() < 0 or cls.max() >= c_e):
            raise ContractError(f"entity class outside vocab of {c_e}")
    d = W_ent.shape[1]
    h = np.zeros((n, core.hidden))
    c = np.zeros((n, core.hidden))
    start = take_rows(core.start, np.zeros(n, dtype=np.int64))
    x1 = concat_cols([start, matmul(V_sub, core.W_vis)])
    h, c = lstm_step(core, x1, h, c)
    P_sub = _readout(core, h, W_ent, rng)
    x2 = concat_cols([W_ent[np.asarray(subj_classes, dtype=np.int64)], matmul(V_obj, core.W_vis)])
    h, c = lstm_step(core, x2, h, c)
    P_obj = _readout(core, h, W_ent, rng)
    x3 = np.hstack([W_ent[np.asarray(obj_classes, dtype=np.int64)], np.zeros((n, d))])
    h, c = lstm_step(core, x3, h, c)
    P_pred = _readout(core, h, W_rel, rng)
    return P_sub, P_obj, P_pred


def forward_triplet(v_sub, v_obj, subj_class, obj_class, core, W_ent, W_rel):
    out = forward_sequences(
        core, np.atleast_2d(v_sub), np.atleast_2d(v_obj), [subj_class], [obj_class], W_ent, W_rel
    )
    return tuple(np.asarray(value(p))[0] for p in out)


@dataclass
class SequentialLabels:
    Y_cssub: np.ndarray
    Y_csobj: np.ndarray
    Y_cspred: np.ndarray


def sequential_labels(graph, Y_ent, Y_rel):
    subj = [s for _, s, _ in graph.relations]
    obj = [o for _, _, o in graph.relations]
    c_e = Y_ent.shape[1]
    return SequentialLabels(
        Y_ent[subj].reshape(-1, c_e), Y_ent[obj].reshape(-1, c_e), Y_rel.copy()
    )


def sequential_losses(graph, g, features, core, W_ent, W_rel, Y_ent, Y_rel, rng=None):
    """Cross-entropies of the three generation steps on grounded tuples."""
    if graph.n_relations == 0:
        z = np.zeros((1, 1))
        return z, z, z
    g = np.asarray(g, dtype=np.int64)
    subj = np.array([s for _, s, _ in graph.relations])
    obj = np.array([o for _, _, o in graph.relations])
    E = np.asarray(graph.entities, dtype=np.int64)
    V_sub = take_rows(features, g[subj])
    V_obj = take_rows(features, g[obj])
    P_sub, P_obj, P_pred = forward_sequences(core, V_sub, V_obj, E[subj], E[obj], W_ent, W_rel, rng)
    labels = sequential_labels(graph, Y_ent, Y_rel)
    return (
        cross_entropy_rows(P_sub, labels.Y_cssub),
        cross_entropy_rows(P_obj, labels.Y_csobj),
        cross_entropy_rows(P_pred, labels.Y_cspred),
    )


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _step_logp(core, x, h, c, W_emb):
    h, c = lstm_step(core, x, h, c)
    return _log_softmax(h @ value(core.W_out) @ np.asarray(W_emb).T), h, c


def _best(scores, keys, width):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], keys[i]))
    return order[:width]


def beam_search_pair(core, v_sub, v_obj, W_ent, W_rel, beam_width):
    """Completed ``(score, s_e, o_e, p_r)`` sequences for one region pair."""
    if beam_width < 1:
        raise ValueError("beam width must be at least 1")
    W_ent, W_rel = np.asarray(W_ent), np.asarray(W_rel)
    d = W_ent.shape[1]
    H = core.hidden
    W_vis = value(core.W_vis)
    proj_sub = np.atleast_2d(v_sub) @ W_vis
    proj_obj = np.atleast_2d(v_obj) @ W_vis

    x = np.hstack([value(core.start), proj_sub])
    logp, h, c = _step_logp(core, x, np.zeros((1, H)), np.zeros((1, H)), W_ent)
    subs = _best(list(logp[0]), [(s,) for s in range(W_ent.shape[0])], beam_width)
    beams = [(float(logp[0, s]), (s,)) for s in subs]
    hs, cs = np.repeat(h, len(beams), axis=0), np.repeat(c, len(beams), axis=0)

    x = np.hstack([W_ent[[b[1][0] for b in beams]], np.repeat(proj_obj, len(beams), axis=0)])
    logp, h, c = _step_logp(core, x, hs, cs, W_ent)
    cands = [(score + float(logp[b, o]), seq + (o,), b) for b, (score, seq) in enumerate(beams) for o in range(W_ent.shape[0])]
    keep = _best([s for s, _, _ in cands], [q for _, q, _ in cands], beam_width)
    beams = [(cands[i][0], cands[i][1]) for i in keep]
    rows = [cands[i][2] for i in keep]

    x = np.hstack([W_ent[[seq[1] for _, seq in beams]], np.zeros((len(beams), d))])
    logp, _, _ = _step_logp(core, x, h[rows], c[rows], W_rel)
    cands = [(score + float(logp[b, p]), seq + (p,)) for b, (score, seq) in enumerate(beams) for p in range(W_rel.shape[0])]
    keep = _best([s for s, _ in cands], [q for _, q in cands], beam_width)
    return [(cands[i][0], *cands[i][1]) for i in keep]


def beam_relabel(candidates, features, core, W_ent, W_rel, beam_width=5, k=None):
    """Re-label each candidate's region pair and re-rank by sequence log-probability.

    Sorting is by score, then candidate index, then class IDs; the list is
    deduplicated on the 5-tuple and optionally truncated to ``k``.
    """
    features = np.asarray(features)
    pooled, cache = [], {}
    for ci, cand in enumerate(candidates):
        pair = (cand.s_v, cand.o_v)
        if pair not in cache:
            cache[pair] = beam_search_pair(core, features[cand.s_v], features[cand.o_v], W_ent, W_rel, beam_width)
        for score, s_e, o_e, p_r in cache[pair]:
            pooled.append((-score, ci, s_e, o_e, p_r, FiveTuple(cand.s_v, cand.o_v, s_e, p_r, o_e, score)))
    pooled.sort(key=lambda t: t[:5])
    out, seen = [], set()
    for *_, tup in pooled:
        key = tup[:5]
        if key in seen:
            continue
        seen.add(key)
        out.append(tup)
        if k is not None and len(out) >= k:
            break
    return out
