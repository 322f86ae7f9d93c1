"""Small hand-built inputs shared by the model, training and acceptance tests."""

import numpy as np

from emphasis_gnn.checkpoint import EmphasisModel
from emphasis_gnn.corpus import EmbeddingTable, SentenceRecord
from emphasis_gnn.model import ModelConfig
from emphasis_gnn.parse_tree import parse_sexpr

BASKETBALL = "(S (NP (PRP I)) (VP (VBP love) (S (VP (VBG playing) (NP (NN basketball))))))"
STAY = "(S (VP (VB Stay) (ADJP (JJ foolish) (S (VP (TO to) (VP (VB stay) (ADJP (JJ sane))))))) (. .))"

# annotator rows for the two sentences (9 each)
BASKETBALL_ROWS = ["O B O B", "O B I I", "O O O B", "O O B I", "O B O O",
             "O O O B", "O O O B", "B O O O", "O O B O"]
STAY_COUNTS = [3, 8, 2, 4, 8, 2]


def annotations_from_counts(counts):
    return tuple(tuple("B" if a < c else "O" for c in counts) for a in range(9))


def toy_records():
    fig2 = SentenceRecord("basketball", ("I", "love", "playing", "basketball"),
                          tuple(tuple(r.split()) for r in BASKETBALL_ROWS))
    stay = SentenceRecord("stay", ("Stay", "foolish", "to", "stay", "sane", "."),
                          annotations_from_counts(STAY_COUNTS))
    return [fig2, stay], [parse_sexpr(BASKETBALL), parse_sexpr(STAY)]


def toy_table(dim, seed=0):
    rng = np.random.default_rng(seed)
    words = ["i", "love", "playing", "basketball", "stay", "foolish", "to", "sane", "."]
    return EmbeddingTable.from_dict({w: rng.normal(size=dim) for w in words})


def toy_model(config: ModelConfig, seed=0, sentences=2):
    records, trees = toy_records()
    records, trees = records[:sentences], trees[:sentences]
    table = toy_table(config.d1, seed)
    model = EmphasisModel.create(config, records, trees, table, np.random.default_rng(seed))
    # nonzero biases so bias gradients are exercised away from a symmetric point
    brng = np.random.default_rng(seed + 100)
    for name, p in model.params.items():
        if p.data.ndim == 1:
            p.data = brng.normal(scale=0.3, size=p.data.shape)
    examples = model.prepare(records, trees, table)
    return model, examples, table
