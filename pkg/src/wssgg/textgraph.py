"""Text graphs from captions, pre-parsed files, or box annotations."""
from __future__ import annotations

import json
import logging
import zlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, ShapeError
from .boxes import iou

log = logging.getLogger(__name__)

ATTR = "attr"

DETERMINERS = frozenset(
    "a an the this that these those some his her its their my your our one two three several many".split()
)
PREPOSITIONS = frozenset(
    "on in under near with of at behind above below beside by over inside into onto "
    "against along across around between beneath outside through toward towards".split()
)
CONJUNCTIONS = frozenset(["and", ",", "while", "who", "which", "that"])


@dataclass
class Vocab:
    entities: list
    relations: list

    def __post_init__(self):
        for kind, names in (("entity", self.entities), ("relation", self.relations)):
            if len(set(names)) != len(names):
                dup = [n for n, c in Counter(names).items() if c > 1]
                raise ValueError(f"duplicate {kind} class names: {dup}")
        self._ent = {n: i for i, n in enumerate(self.entities)}
        self._rel = {n: i for i, n in enumerate(self.relations)}

    @property
    def n_entities(self):
        return len(self.entities)

    @property
    def n_relations(self):
        return len(self.relations)

    def entity_id(self, name):
        return self._ent.get(name)

    def relation_id(self, name):
        return self._rel.get(name)

    @classmethod
    def load(cls, entity_path, relation_path):
        def read(path):
            with open(path, encoding="utf-8") as fh:
                return [ln.strip() for ln in fh if ln.strip()]

        return cls(read(entity_path), read(relation_path))

    def save(self, entity_path, relation_path):
        for path, names in ((entity_path, self.entities), (relation_path, self.relations)):
            with open(path, "w", encoding="utf-8") as fh:
                fh.writelines(n + "\n" for n in names)


@dataclass
class TextGraph:
    """Entities are class IDs; relations are ``(class, subject, object)``.

    ``attributes`` holds ``(word, entity index)`` pairs. They take part in
    message passing only.
    """

    entities: list = field(default_factory=list)
    relations: list = field(default_factory=list)
    attributes: list = field(default_factory=list)

    @property
    def n_entities(self):
        return len(self.entities)

    @property
    def n_relations(self):
        return len(self.relations)

    def validate(self, vocab):
        for e in self.entities:
            if not 0 <= e < vocab.n_entities:
                raise ContractError(f"entity class {e} outside vocab of {vocab.n_entities}")
        for r, s, o in self.relations:
            if not 0 <= r < vocab.n_relations:
                raise ContractError(f"relation class {r} outside vocab of {vocab.n_relations}")
            if not (0 <= s < self.n_entities and 0 <= o < self.n_entities) or s == o:
                raise ContractError(f"bad relation endpoints ({s}, {o}) for {self.n_entities} entities")
        for _, i in self.attributes:
            if not 0 <= i < self.n_entities:
                raise ContractError(f"attribute attached to missing entity {i}")

    def to_json(self, vocab, image_id=None):
        rec = {} if image_id is None else {"image_id": image_id}
        rec["entities"] = [vocab.entities[e] for e in self.entities]
        rec["relations"] = [[vocab.relations[r], s, o] for r, s, o in self.relations]
        rec["attributes"] = [[w, i] for w, i in self.attributes]
        return rec

    @classmethod
    def from_json(cls, rec, vocab, stats=None):
        """Build from names; unknown entities are dropped with their relations."""
        stats = stats if stats is not None else Counter()
        remap, entities = {}, []
        for i, name in enumerate(rec.get("entities", [])):
            cid = vocab.entity_id(name)
            if cid is None:
                stats["dropped_entities"] += 1
                continue
            remap[i] = len(entities)
            entities.append(cid)
        relations = []
        for name, s, o in rec.get("relations", []):
            rid = vocab.relation_id(name)
            if rid is None:
                stats["dropped_relations"] += 1
                continue
            if s in remap and o in remap and remap[s] != remap[o]:
                relations.append((rid, remap[s], remap[o]))
        attributes = [(w, remap[i]) for w, i in rec.get("attributes", []) if i in remap]
        return cls(entities, relations, attributes)


def merge_graphs(graphs):
    out = TextGraph()
    for g in graphs:
        off = len(out.entities)
        out.entities.extend(g.entities)
        out.relations.extend((r, s + off, o + off) for r, s, o in g.relations)
        out.attributes.extend((w, i + off) for w, i in g.attributes)
    return out


# -- caption grammar --------------------------------------------------------

def _lemmas(word):
    """Candidate base forms, most literal first."""
    out = [word]
    if word.endswith("ing") and len(word) > 4:
        stem = word[:-3]
        out += [stem, stem + "e"]
        if len(stem) > 2 and stem[-1] == stem[-2]:
            out.append(stem[:-1])
    if word.endswith("ies") and len(word) > 4:
        out.append(word[:-3] + "y")
    if word.endswith("es") and len(word) > 3:
        out.append(word[:-2])
    if word.endswith("s") and len(word) > 2:
        out.append(word[:-1])
    if word.endswith("ed") and len(word) > 3:
        out += [word[:-2], word[:-1]]
    return out


def _lookup(word, table):
    for cand in _lemmas(word):
        if table(cand) is not None:
            return cand
    return None


def _is_verb(word, vocab):
    if word in PREPOSITIONS or word in DETERMINERS or word in CONJUNCTIONS:
        return False
    if _lookup(word, vocab.entity_id) is not None:
        return False
    if word.endswith("ing") and len(word) > 4:
        return True
    return _lookup(word, vocab.relation_id) is not None


def _read_relation(tokens, i, vocab):
    """Return ``(lemma or None, is_verb, next index)`` for the REL at ``tokens[i]``."""
    w = tokens[i]
    if w in PREPOSITIONS:
        return (w if vocab.relation_id(w) is not None else None), False, i + 1
    nxt = tokens[i + 1] if i + 1 < len(tokens) else None
    if nxt in PREPOSITIONS:
        for cand in _lemmas(w):
            if vocab.relation_id(f"{cand}_{nxt}") is not None:
                return f"{cand}_{nxt}", True, i + 2
    lemma = _lookup(w, vocab.relation_id)
    if lemma is not None:
        return lemma, True, i + 1
    if nxt in PREPOSITIONS:
        # verb+prep phrase with neither form known
        return None, True, i + 2
    return None, True, i + 1


def parse_caption(tokens, vocab, stats=None):
    """Single-pass ``NP REL NP`` extraction over lowercase tokens.

    ``stats`` (a Counter) receives ``dropped_entities`` and
    ``dropped_relations`` counts for out-of-vocabulary words.
    """
    if isinstance(tokens, str):
        tokens = tokens.split()
    tokens = [t.lower() for t in tokens]
    stats = stats if stats is not None else Counter()
    entities, node_of, attributes = [], {}, []
    relations = []
    n = len(tokens)

    def read_np(i):
        while i < n and tokens[i] in DETERMINERS:
            i += 1
        words = []
        while i < n and tokens[i] not in CONJUNCTIONS and tokens[i] not in PREPOSITIONS:
            if words and _is_verb(tokens[i], vocab):
                break
            if tokens[i] in DETERMINERS:
                i += 1
                continue
            words.append(tokens[i])
            i += 1
        if not words:
            return None, i, True
        head, adjs = words[-1], words[:-1]
        lemma = _lookup(head, vocab.entity_id)
        if lemma is None:
            stats["dropped_entities"] += 1
            log.warning("dropping out-of-vocab noun %r", head)
            return None, i, False
        if lemma not in node_of:
            node_of[lemma] = len(entities)
            entities.append(vocab.entity_id(lemma))
        idx = node_of[lemma]
        for a in adjs:
            if (a, idx) not in attributes:
                attributes.append((a, idx))
        return idx, i, False

    i = 0
    clause_subject = last_np = None
    seen_np = False
    while i < n:
        w = tokens[i]
        if w in CONJUNCTIONS:
            i += 1
            continue
        if w in PREPOSITIONS or (seen_np and _is_verb(w, vocab)):
            rel, is_verb, i = _read_relation(tokens, i, vocab)
            subj = clause_subject if is_verb else last_np
            obj, i, empty = read_np(i)
            if empty:
                continue
            if rel is None:
                stats["dropped_relations"] += 1
                log.warning("dropping out-of-vocab relation near %r", w)
            elif subj is not None and obj is not None and subj != obj:
                relations.append((vocab.relation_id(rel), subj, obj))
            last_np = obj
            continue
        idx, i, empty = read_np(i)
        if empty:
            i += 1
            continue
        seen_np = True
        clause_subject = last_np = idx
    return TextGraph(entities, relations, attributes)


# -- ground-truth graphs ----------------------------------------------------

@dataclass
class AnnotatedTriplet:
    subject: int
    predicate: int
    object: int
    subject_box: tuple
    object_box: tuple


def build_gt_graph(triplets):
    """Merge same-class instances whose boxes overlap (IoU > 0.5) into nodes."""
    if not triplets:
        raise ValueError("build_gt_graph needs at least one triplet")
    instances = []
    for k, t in enumerate(triplets):
        for box in (t.subject_box, t.object_box):
            x1, y1, x2, y2 = box
            if not (x2 > x1 and y2 > y1):
                raise ValueError(f"triplet {k}: degenerate box {tuple(box)}")
        instances.append((t.subject, tuple(t.subject_box)))
        instances.append((t.object, tuple(t.object_box)))

    parent = list(range(len(instances)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(len(instances)):
        for b in range(a + 1, len(instances)):
            ca, ba = instances[a]
            cb, bb = instances[b]
            if ca == cb and iou(ba, bb) > 0.5:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)

    node_of, entities = {}, []
    for a, (cls, _) in enumerate(instances):
        root = find(a)
        if root not in node_of:
            node_of[root] = len(entities)
            entities.append(cls)
    relations = []
    for k, t in enumerate(triplets):
        s, o = node_of[find(2 * k)], node_of[find(2 * k + 1)]
        if s != o:
            relations.append((t.predicate, s, o))
    return TextGraph(entities, relations)


# -- labels and embeddings --------------------------------------------------

def one_hot_labels(graph, vocab):
    graph.validate(vocab)
    y_ent = np.zeros((graph.n_entities, vocab.n_entities))
    y_ent[np.arange(graph.n_entities), graph.entities] = 1.0
    y_rel = np.zeros((graph.n_relations, vocab.n_relations))
    if graph.relations:
        y_rel[np.arange(graph.n_relations), [r for r, _, _ in graph.relations]] = 1.0
    return y_ent, y_rel


def _word_seed(word, seed):
    return zlib.crc32(word.encode("utf-8")) ^ (seed * 0x9E3779B1 & 0xFFFFFFFF)


@dataclass
class EmbeddingTable:
    """Frozen class embeddings plus lookup for attribute words."""

    W_ent: np.ndarray
    W_rel: np.ndarray
    attr_rel: np.ndarray
    words: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def d(self):
        return self.W_ent.shape[1]

    def word_vector(self, word):
        vec = self.words.get(word)
        if vec is None:
            vec = np.random.default_rng(_word_seed(word, self.seed)).standard_normal(self.d)
        return vec

    @classmethod
    def build(cls, vocab, d=300, seed=0, path=None):
        """Load ``word v1 .. vd`` lines when ``path`` is given; otherwise random."""
        rng = np.random.default_rng(seed)
        words = load_word_vectors(path) if path else {}
        if words:
            d = len(next(iter(words.values())))

        def row(name):
            if name in words:
                return words[name]
            parts = [p for p in name.split("_") if p in words]
            if parts:
                return np.mean([words[p] for p in parts], axis=0)
            return rng.standard_normal(d)

        W_ent = np.array([row(n) for n in vocab.entities]).reshape(vocab.n_entities, d)
        W_rel = np.array([row(n) for n in vocab.relations]).reshape(vocab.n_relations, d)
        attr_rel = rng.standard_normal((1, d))
        return cls(W_ent, W_rel, attr_rel, words, seed)


def load_word_vectors(path):
    words = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            vec = np.array([float(x) for x in parts[1:]])
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ShapeError(f"{path}:{ln}: expected {dim} values, got {len(vec)}")
            words[parts[0]] = vec
    return words


def embed(graph, tables):
    """``(Y_ent W_ent, Y_rel W_rel)``: plain row lookups into the frozen tables."""
    c_e, c_r = tables.W_ent.shape[0], tables.W_rel.shape[0]
    if tables.W_ent.shape[1] != tables.W_rel.shape[1]:
        raise ShapeError(f"entity width {tables.W_ent.shape[1]} != relation width {tables.W_rel.shape[1]}")
    if any(not 0 <= e < c_e for e in graph.entities) or any(not 0 <= r < c_r for r, _, _ in graph.relations):
        raise ContractError("graph class IDs exceed the embedding tables")
    y_ent = np.zeros((graph.n_entities, c_e))
    y_ent[np.arange(graph.n_entities), graph.entities] = 1.0
    y_rel = np.zeros((graph.n_relations, c_r))
    if graph.relations:
        y_rel[np.arange(graph.n_relations), [r for r, _, _ in graph.relations]] = 1.0
    return y_ent @ tables.W_ent, y_rel @ tables.W_rel


def read_graph_file(path, vocab, stats=None):
    """Yield ``(image_id, TextGraph)`` from a JSONL graph file."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                yield rec.get("image_id"), TextGraph.from_json(rec, vocab, stats)


def write_graph_file(path, items, vocab):
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, graph in items:
            fh.write(json.dumps(graph.to_json(vocab, image_id)) + "\n")
