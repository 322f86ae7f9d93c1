"""Per-word case table for one sentence, before and after training.

Trains a small model on a generated corpus plus the sentence
"Stay foolish to stay sane ." and prints the gold emphasis frequency and
the predicted emphasis probability of every word, each with its rank
(gold ties shown as a/b).
"""

import numpy as np

from emphasis_gnn import synthetic
from emphasis_gnn.corpus import EmbeddingTable, SentenceRecord
from emphasis_gnn.evaluation import model_case_table
from emphasis_gnn.parse_tree import parse_sexpr
from emphasis_gnn.train import TrainConfig, train_loop

TREE = "(S (VP (VB Stay) (ADJP (JJ foolish) (S (VP (TO to) (VP (VB stay) (ADJP (JJ sane))))))) (. .))"
COUNTS = [3, 8, 2, 4, 8, 2]


def main():
    corpus = synthetic.generate(30, dim=12, seed=4)
    tokens = ("Stay", "foolish", "to", "stay", "sane", ".")
    labels = tuple(tuple("B" if a < c else "O" for c in COUNTS) for a in range(9))
    records = corpus.records + [SentenceRecord("stay", tokens, labels)]
    trees = corpus.trees + [parse_sexpr(TREE)]
    rng = np.random.default_rng(0)
    vectors = dict(corpus.table.vectors)
    for t in ("stay", "foolish", "to", "sane", "."):
        vectors.setdefault(t, rng.normal(size=12))
    table = EmbeddingTable.from_dict(vectors)

    cfg = TrainConfig(d1=12, d2=4, hidden=8, d_s=8, head_hidden=16, lr=3e-3, dev_fraction=0.0, select="last")
    for epochs in (0, 40):
        result = train_loop(records, trees, table, TrainConfig(**{**cfg.to_dict(), "epochs": epochs}))
        example = result.model.prepare(records[-1:], trees[-1:], table)[0]
        print(f"after {epochs} epochs")
        print(model_case_table(result.model, example))
        print()


if __name__ == "__main__":
    main()
