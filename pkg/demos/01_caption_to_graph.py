# %% [markdown]
# From captions to graphs
#
# A caption becomes a small graph of entities and relations. That graph is
# the only supervision a weakly-supervised model ever sees. This script
# walks through parsing, the box-merge rule for annotated triplets, and
# one round of phrasal message passing.

# %%
import numpy as np

from wssgg.phrasal import ContextLayers, contextualize, phrasal_graph
from wssgg.textgraph import AnnotatedTriplet, EmbeddingTable, Vocab, build_gt_graph, parse_caption

vocab = Vocab(
    ["girl", "glasses", "sofa", "banana", "man", "shirt", "rails"],
    ["wear", "sit_on", "eat", "stand_on", "on"],
)


def show(graph):
    ents = [vocab.entities[e] for e in graph.entities]
    rels = [f"{ents[s]} -{vocab.relations[r]}-> {ents[o]}" for r, s, o in graph.relations]
    return f"entities {ents}\n  relations {rels}\n  attributes {graph.attributes}"


# %% [markdown]
# Verb phrases in a chain attach to the sentence subject. A preposition
# attaches to the closest noun before it. Words outside the vocabulary
# are dropped together with any relation that touches them.

# %%
for caption in [
    "a young girl wearing glasses sitting on the sofa eating a ripe banana",
    "the banana on the sofa",
    "a zorblat eating a banana",
]:
    print(caption)
    print(" ", show(parse_caption(caption, vocab)))

# %% [markdown]
# Annotated triplets (with boxes) give a graph too. Same-class boxes that
# overlap at IoU >= 0.5 collapse into one node.

# %%
man = (0, 0, 40, 100)
g = build_gt_graph([
    AnnotatedTriplet(vocab.entity_id("man"), vocab.relation_id("stand_on"), vocab.entity_id("rails"), man, (0, 90, 200, 120)),
    AnnotatedTriplet(vocab.entity_id("man"), vocab.relation_id("wear"), vocab.entity_id("shirt"), (1, 0, 40, 98), (5, 20, 35, 60)),
])
print(show(g))

# %% [markdown]
# Phrasal context: each edge computes a message from [relation; subject;
# object], and each node that is the object of some edge replaces its
# embedding with an attention-weighted mix of incoming messages. Without
# adjectives "girl" is only ever a subject, so it keeps its word vector.
# Adjectives become extra nodes with an edge into their noun, so in the
# second caption "girl" hears from "young" and moves as well.

# %%
tables = EmbeddingTable.build(vocab, d=8, seed=0)
layers = ContextLayers.init(8, np.random.default_rng(0), depth=2, std=0.3)
for caption in [
    "girl wearing glasses sitting on the sofa eating a banana",
    "a young girl wearing glasses sitting on the sofa eating a ripe banana",
]:
    graph = parse_caption(caption, vocab)
    ext, H0, R0 = phrasal_graph(graph, tables)
    psi = contextualize(ext, H0, R0, layers)[: graph.n_entities]
    moved = np.linalg.norm(psi - H0[: graph.n_entities], axis=1)
    print(caption)
    print("  ", "  ".join(f"{vocab.entities[e]} {m:.2f}" for e, m in zip(graph.entities, moved)))
