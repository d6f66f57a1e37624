"""Configuration, dataset I/O, the multi-task training loop, inference and evaluation.

Training stacks the images of a batch into one disjoint union: graphs are
concatenated with offset node indices, proposals are stacked, and a
block mask keeps each entity's attention inside its own image.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .detection import DetectionHeads, class_scores, detection_scores, extract_pseudo_labels
from .evaluation import recall_at_k, resolve_boxes, write_report
from .grounding import GroundingHeads, ProposalSet, ground, grounding_loss
from .inference import FiveTuple, NmsConfig, nms_per_class, top_k_tuples
from .phrasal import ContextLayers, contextualize, phrasal_graph
from .refinement import run_refinement
from .sequential import RecurrentCore, beam_relabel, sequential_losses
from .tensor import (
    AdamState, NumericError, Tape, adam_step, add_scalars, cross_entropy_rows,
    load_checkpoint, save_checkpoint, scale, take_rows, value,
)
from .textgraph import (
    AnnotatedTriplet, EmbeddingTable, TextGraph, merge_graphs,
    one_hot_labels, parse_caption,
)

log = logging.getLogger(__name__)


class InputError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class PipelineConfig:
    d: int = 300
    d_cnn: int = 1536
    max_proposals: int = 20
    n_t: int = 3
    phrasal: bool = True
    phrasal_depth: int = 2
    symmetric_phrasal: bool = False
    sequential: bool = True
    beta: float = 0.5
    batch_size: int = 32
    lr: float = 1e-5
    weight_decay: float = 1e-6
    beam: int = 5
    hidden: int = 100
    dropout: float = 0.2
    init_std: float = 0.01
    nms_score: float = 0.01
    nms_iou: float = 0.4
    nms_max_per_class: int = 4
    ks: tuple = (50, 100)
    seed: int = 0
    max_steps: int | None = None
    entity_vocab: str | None = None
    relation_vocab: str | None = None
    embeddings: str | None = None

    def __post_init__(self):
        self.ks = tuple(int(k) for k in self.ks)
        for name in ("d", "d_cnn", "max_proposals", "phrasal_depth", "batch_size", "beam", "hidden"):
            if getattr(self, name) < 1:
                raise InputError(f"config {name} must be positive")
        if self.n_t < 0:
            raise InputError("config n_t must be non-negative")
        if not 0 < self.beta <= 1:
            raise InputError("config beta must lie in (0, 1]")
        if not self.ks or min(self.ks) < 1:
            raise InputError("config ks must be positive")

    @property
    def nms(self):
        return NmsConfig(self.nms_score, self.nms_iou, self.nms_max_per_class)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def load_config(path, **overrides):
    """Read a flat ``key = value`` TOML file; ``None`` overrides are ignored."""
    try:
        import tomllib
    except ImportError:  # Python < 3.11
        import tomli as tomllib
    values = {}
    if path:
        with open(path, "rb") as fh:
            values = tomllib.load(fh)
        base = os.path.dirname(os.path.abspath(path))
        for key in ("entity_vocab", "relation_vocab", "embeddings"):
            if values.get(key) and not os.path.isabs(values[key]):
                values[key] = os.path.join(base, values[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InputError(f"unknown config keys: {unknown}")
    return PipelineConfig(**values)


# -- dataset ----------------------------------------------------------------

@dataclass
class ImageRecord:
    image_id: str
    proposals: ProposalSet
    captions: list = field(default_factory=list)
    graph: TextGraph | None = None
    triplets: list = field(default_factory=list)


def _sidecar(path):
    return path + ".bin"


def write_dataset(path, records, vocab, binary=False):
    """Write records as JSONL; ``binary`` moves features to a float32 sidecar."""
    bin_fh = open(_sidecar(path), "wb") if binary else None
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for r in records:
                rec = {"image_id": r.image_id, "boxes": r.proposals.boxes.tolist()}
                feats = r.proposals.features
                if bin_fh is not None:
                    rec["feature_offset"] = bin_fh.tell()
                    rec["feature_dim"] = feats.shape[1]
                    bin_fh.write(feats.astype("<f4").tobytes())
                else:
                    rec["features"] = feats.tolist()
                if r.captions:
                    rec["captions"] = list(r.captions)
                if r.graph is not None:
                    g = r.graph.to_json(vocab)
                    rec["graph"] = g
                if r.triplets:
                    rec["triplets"] = [
                        {
                            "subject": vocab.entities[t.subject],
                            "predicate": vocab.relations[t.predicate],
                            "object": vocab.entities[t.object],
                            "subject_box": list(map(float, t.subject_box)),
                            "object_box": list(map(float, t.object_box)),
                        }
                        for t in r.triplets
                    ]
                fh.write(json.dumps(rec) + "\n")
    finally:
        if bin_fh is not None:
            bin_fh.close()


def _read_features(rec, blob):
    if "features" in rec:
        return np.asarray(rec["features"], dtype=np.float64)
    if blob is None:
        raise InputError("record has neither inline features nor a sidecar feature file")
    n = len(rec["boxes"])
    dim = int(rec["feature_dim"])
    arr = np.frombuffer(blob, dtype="<f4", count=n * dim, offset=int(rec["feature_offset"]))
    return arr.reshape(n, dim).astype(np.float64)


def _triplets(rec, vocab):
    out = []
    for t in rec.get("triplets", []):
        ids = (vocab.entity_id(t["subject"]), vocab.relation_id(t["predicate"]), vocab.entity_id(t["object"]))
        if None in ids:
            continue
        out.append(AnnotatedTriplet(*ids, tuple(t["subject_box"]), tuple(t["object_box"])))
    return out


def read_dataset(path, vocab, max_proposals=None, supervision=True, strict=False):
    """Load image records. With ``supervision=False`` only proposals are read.

    Malformed lines are skipped with a warning unless ``strict``.
    """
    blob = None
    if os.path.exists(_sidecar(path)):
        with open(_sidecar(path), "rb") as fh:
            blob = fh.read()
    records = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                boxes = np.asarray(rec["boxes"], dtype=np.float64)
                feats = _read_features(rec, blob)
                if max_proposals:
                    boxes, feats = boxes[:max_proposals], feats[:max_proposals]
                item = ImageRecord(str(rec["image_id"]), ProposalSet(boxes, feats))
                if supervision:
                    item.captions = list(rec.get("captions", []))
                    if rec.get("graph") is not None:
                        item.graph = TextGraph.from_json(rec["graph"], vocab)
                    item.triplets = _triplets(rec, vocab)
            except (KeyError, ValueError, TypeError) as exc:
                if strict:
                    raise InputError(f"{path}:{ln}: {exc}") from exc
                log.warning("%s:%d: skipping malformed record (%s)", path, ln, exc)
                continue
            records.append(item)
    return records


def training_graph(record, vocab):
    """The supervision graph: the pre-parsed graph, else parsed captions."""
    if record.graph is not None:
        return record.graph
    if record.captions:
        return merge_graphs(parse_caption(c, vocab) for c in record.captions)
    return None


# -- model ------------------------------------------------------------------

NO_DECAY_SUFFIXES = ("_b", ".b", ".start")


class Model:
    """Parameters plus the frozen embeddings they were trained against."""

    def __init__(self, cfg, vocab, tables, params):
        self.cfg, self.vocab, self.tables, self.params = cfg, vocab, tables, params

    @classmethod
    def init(cls, cfg, vocab, tables=None):
        seq = np.random.SeedSequence(cfg.seed)
        emb_seed, init_seed = seq.spawn(2)
        if tables is None:
            tables = EmbeddingTable.build(
                vocab, cfg.d, int(emb_seed.generate_state(1)[0]), cfg.embeddings
            )
        d = tables.d
        rng = np.random.default_rng(init_seed)
        std = cfg.init_std
        params = {}
        params.update(ContextLayers.init(d, rng, cfg.phrasal_depth, std).params())
        params.update(GroundingHeads.init(cfg.d_cnn, d, rng, std).params())
        params.update(DetectionHeads.init(cfg.d_cnn, d, rng, cfg.n_t, std).params())
        params.update(RecurrentCore.init(cfg.d_cnn, d, rng, cfg.hidden, cfg.dropout, std).params())
        return cls(cfg, vocab, tables, params)

    def bind(self, params=None):
        p = self.params if params is None else params
        cfg = self.cfg
        return (
            ContextLayers.bind(p, depth=cfg.phrasal_depth, symmetric=cfg.symmetric_phrasal),
            GroundingHeads.bind(p),
            DetectionHeads.bind(p, cfg.n_t),
            RecurrentCore.bind(p, dropout=cfg.dropout),
        )

    @property
    def decay(self):
        return {n for n in self.params if not n.endswith(NO_DECAY_SUFFIXES)}

    def save(self, path):
        blob = dict(self.params)
        blob["embed.W_ent"] = self.tables.W_ent
        blob["embed.W_rel"] = self.tables.W_rel
        blob["embed.attr_rel"] = self.tables.attr_rel
        save_checkpoint(path, blob)

    @classmethod
    def load(cls, path, cfg, vocab):
        blob = load_checkpoint(path)
        try:
            tables = EmbeddingTable(blob.pop("embed.W_ent"), blob.pop("embed.W_rel"), blob.pop("embed.attr_rel"))
        except KeyError as exc:
            raise CheckpointError(f"checkpoint lacks embedding matrix {exc}") from exc
        if tables.W_ent.shape[0] != vocab.n_entities or tables.W_rel.shape[0] != vocab.n_relations:
            raise CheckpointError(
                f"embedding tables {tables.W_ent.shape}/{tables.W_rel.shape} do not match the vocab"
            )
        expected = cls.init(cfg, vocab, tables).params
        for name, arr in expected.items():
            if name not in blob:
                raise CheckpointError(f"checkpoint lacks parameter {name}")
            if blob[name].shape != arr.shape:
                raise CheckpointError(f"parameter {name}: checkpoint {blob[name].shape} vs config {arr.shape}")
        extra = sorted(set(blob) - set(expected))
        if extra:
            raise CheckpointError(f"checkpoint has unexpected parameter {extra[0]}")
        return cls(cfg, vocab, tables, blob)


# -- batched forward pass ---------------------------------------------------

@dataclass
class Batch:
    graph: TextGraph
    features: np.ndarray
    mask: np.ndarray
    n_images: int


def assemble(items):
    """Stack ``(ProposalSet, TextGraph)`` pairs into one disjoint union."""
    feats, graphs, owners_e, owners_v = [], [], [], []
    for k, (props, graph) in enumerate(items):
        feats.append(props.features)
        graphs.append(graph)
        owners_e += [k] * graph.n_entities
        owners_v += [k] * props.n
    graph = merge_graphs(graphs)
    mask = np.asarray(owners_e)[:, None] == np.asarray(owners_v)[None, :]
    return Batch(graph, np.vstack(feats), mask.reshape(len(owners_e), len(owners_v)), len(items))


def loss_names(cfg):
    return ["grd"] + [f"det_{t}" for t in range(cfg.n_t + 1)] + ["relsub", "relobj", "cssub", "csobj", "cspred"]


def forward_losses(model, bound, batch, rng=None, frozen_g=None):
    """Per-component losses (averaged over images) for one stacked batch.

    ``frozen_g`` replaces the argmax groundings by ``(g0, g_final)`` so the
    objective is a smooth function of the parameters (gradient checks).
    """
    cfg, tables = model.cfg, model.tables
    layers, gheads, dheads, core = bound
    graph, V = batch.graph, batch.features
    W_ent, W_rel = tables.W_ent, tables.W_rel
    n_v, c_e, c_r = V.shape[0], W_ent.shape[0], W_rel.shape[0]
    E = np.asarray(graph.entities, dtype=np.int64)
    Y_ent, Y_rel = one_hot_labels(graph, model.vocab)

    if cfg.phrasal:
        ext, H0, R0 = phrasal_graph(graph, tables)
        psi = take_rows(contextualize(ext, H0, R0, layers), np.arange(graph.n_entities))
    else:
        psi = W_ent[E].reshape(len(E), tables.d)
    state = ground(psi, V, gheads, batch.mask)
    losses = {"grd": grounding_loss(state, V, gheads, W_ent, Y_ent)}

    g0 = state.g if frozen_g is None else frozen_g[0]
    g_final, det_losses, _ = run_refinement(V, dheads.W_det, W_ent, E, g0, cfg.n_t, batch.mask)
    if frozen_g is not None:
        g_final = frozen_g[1]
    for t, L in enumerate(det_losses):
        losses[f"det_{t}"] = L

    labels = extract_pseudo_labels(graph, g0, g_final, n_v, c_e, c_r)
    losses["relsub"] = cross_entropy_rows(class_scores(V, dheads.W_relsub, W_rel), labels.Y_relsub)
    losses["relobj"] = cross_entropy_rows(class_scores(V, dheads.W_relobj, W_rel), labels.Y_relobj)

    if cfg.sequential:
        cs = sequential_losses(graph, g_final, V, core, W_ent, W_rel, Y_ent, Y_rel, rng)
    else:
        cs = (np.zeros((1, 1)),) * 3
    losses["cssub"], losses["csobj"], losses["cspred"] = cs
    inv = 1.0 / max(batch.n_images, 1)
    return {k: scale(v, inv) if not isinstance(v, np.ndarray) else v * inv for k, v in losses.items()}


def total_loss(losses, beta):
    """``L_grd + beta * (every other component)``; aborts on a non-finite term."""
    for name, v in losses.items():
        x = float(np.asarray(value(v)).reshape(-1)[0])
        if not np.isfinite(x):
            raise NumericError(f"non-finite loss component {name}: {x}")
    rest = add_scalars([v for k, v in losses.items() if k != "grd"])
    return add_scalars([losses["grd"], scale(rest, beta)])


# -- training ---------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def train(cfg, records, vocab, checkpoint_path=None, trace_path=None, tables=None):
    """Train from ``records`` and return the model plus the loss trace rows."""
    if cfg.max_steps is None:
        raise InputError("config max_steps is required for training")
    usable = []
    for r in records:
        g = training_graph(r, vocab)
        if g is None or g.n_entities == 0:
            log.warning("image %s has no usable supervision; skipped", r.image_id)
            continue
        usable.append((r.proposals, g))
    if cfg.max_steps > 0 and not usable:
        raise InputError("no training record carries supervision")

    model = Model.init(cfg, vocab, tables)
    seq = np.random.SeedSequence(cfg.seed).spawn(4)
    order_rng = np.random.default_rng(seq[2])
    drop_rng = np.random.default_rng(seq[3])
    state = AdamState()
    names = loss_names(cfg)
    trace = []
    decay = model.decay
    order, pos = [], 0
    for step in range(cfg.max_steps):
        if pos >= len(order):
            order, pos = list(order_rng.permutation(len(usable))), 0
        chunk = order[pos:pos + cfg.batch_size]
        pos += len(chunk)
        batch = assemble([usable[i] for i in chunk])
        tape = Tape()
        nodes = {k: tape.param(v, k) for k, v in model.params.items()}
        losses = forward_losses(model, model.bind(nodes), batch, drop_rng if cfg.dropout > 0 else None)
        L = total_loss(losses, cfg.beta)
        if not hasattr(L, "tape"):
            continue
        grads = tape.backward(L)
        adam_step(model.params, grads, state, cfg.lr, cfg.weight_decay, decay)
        trace.append([step] + [float(value(losses[n])[0, 0]) for n in names] + [float(value(L)[0, 0])])
    if checkpoint_path:
        model.save(checkpoint_path)
    if trace_path:
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step"] + names + ["total"])
            for row in trace:
                w.writerow([row[0]] + [_fmt(x) for x in row[1:]])
    return model, trace


# -- inference --------------------------------------------------------------

def predict_image(model, proposals, k=None, rerank=None):
    """Ranked 5-tuples for one image, without any text input."""
    cfg, tables = model.cfg, model.tables
    k = k or max(cfg.ks)
    rerank = cfg.sequential if rerank is None else rerank
    _, _, dheads, core = model.bind()
    P_det, P_relsub, P_relobj = detection_scores(proposals.features, dheads, tables.W_ent, tables.W_rel)
    candidates = nms_per_class(P_det, proposals.boxes, cfg.nms)
    if not candidates:
        return []
    sg_init = top_k_tuples(P_det, (P_relsub, P_relobj), candidates, k)
    if not rerank:
        return sg_init
    return beam_relabel(sg_init, proposals.features, core, tables.W_ent, tables.W_rel, cfg.beam, k)


def infer(model, records, out_path=None, rerank=None):
    results = []
    for r in sorted(records, key=lambda r: r.image_id):
        results.append((r.image_id, predict_image(model, r.proposals, rerank=rerank)))
    if out_path:
        write_predictions(out_path, results)
    return results


def write_predictions(path, results):
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, tuples in results:
            rows = [[t.s_v, t.o_v, t.s_e, t.p_r, t.o_e, t.score] for t in tuples]
            fh.write(json.dumps({"image_id": image_id, "tuples": rows}) + "\n")


def read_predictions(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[str(rec["image_id"])] = [FiveTuple(*map(int, t[:5]), float(t[5])) for t in rec["tuples"]]
    return out


def evaluate(predictions, records, ks, report_path=None):
    """Recall@K per image; ``predictions`` maps image id to ranked tuples.

    Returns ``(rows, macro, micro, missing)``.
    """
    rows, missing = [], []
    for r in sorted(records, key=lambda r: r.image_id):
        if r.image_id not in predictions:
            missing.append(r.image_id)
            continue
        resolved = resolve_boxes(predictions[r.image_id], r.proposals.boxes)
        rows.append((r.image_id, len(r.triplets), {k: recall_at_k(resolved, r.triplets, k) for k in ks}))
    scored = [row for row in rows if row[1] > 0]
    if report_path:
        macro, micro = write_report(report_path, rows, ks, missing)
    else:
        macro = {k: float(np.mean([row[2][k] for row in scored])) if scored else 0.0 for k in ks}
        n = sum(row[1] for row in scored)
        micro = {k: sum(row[2][k] * row[1] for row in scored) / n if n else 0.0 for k in ks}
    return rows, macro, micro, missing
