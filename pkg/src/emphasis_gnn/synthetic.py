"""Small synthetic emphasis corpus for tests and demos.

Sentences come from a toy phrase-structure grammar, so each one has an
exact bracketed parse.  Word vectors are drawn around a handful of semantic
cluster centres; words in one cluster are similar.  Nine simulated
annotators each mark one or two spans, choosing words with probability
driven by a per-word salience, a per-POS prior and a bonus for words whose
cluster-mate is also in the sentence.
"""

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .corpus import N_ANNOTATORS, EmbeddingTable, SentenceRecord, serialize_emphasis
from .parse_tree import ParseTree

LEXICON: Dict[str, List[Tuple[str, str]]] = {
    # tag: (word, cluster)
    "PRP": [("i", "self"), ("you", "self"), ("we", "self"), ("they", "self"), ("she", "self")],
    "DT": [("the", "func"), ("a", "func"), ("every", "func"), ("your", "func"), ("this", "func")],
    "NN": [("dream", "hope"), ("hope", "hope"), ("wish", "hope"), ("victory", "win"),
           ("success", "win"), ("triumph", "win"), ("basketball", "sport"), ("game", "sport"),
           ("team", "sport"), ("home", "place"), ("world", "place"), ("city", "place"),
           ("love", "heart"), ("passion", "heart"), ("kindness", "heart")],
    "JJ": [("impossible", "hard"), ("difficult", "hard"), ("brave", "hard"), ("happy", "joy"),
           ("joyful", "joy"), ("bright", "joy"), ("small", "size"), ("big", "size"),
           ("foolish", "odd"), ("sane", "odd")],
    "VBP": [("love", "heart"), ("chase", "move"), ("build", "make"), ("need", "want"),
            ("find", "want"), ("make", "make")],
    "VBG": [("playing", "sport"), ("building", "make"), ("chasing", "move"), ("finding", "want")],
    "RB": [("never", "neg"), ("always", "time"), ("truly", "deg"), ("really", "deg")],
    "IN": [("for", "func"), ("with", "func"), ("in", "func"), ("of", "func")],
    ".": [(".", "punct"), ("!", "punct")],
}

POS_PRIOR = {"PRP": -1.5, "DT": -2.0, "IN": -2.0, ".": -2.5, "RB": 0.0,
             "NN": 0.8, "JJ": 0.7, "VBP": 0.2, "VBG": 0.1}


@dataclass
class SyntheticCorpus:
    records: List[SentenceRecord]
    trees: List[ParseTree]
    table: EmbeddingTable

    def write(self, emphasis_path, tree_path, embedding_path=None):
        with open(emphasis_path, "w", encoding="utf-8") as fh:
            fh.write(serialize_emphasis(self.records))
        with open(tree_path, "w", encoding="utf-8") as fh:
            fh.writelines(t.serialize() + "\n" for t in self.trees)
        if embedding_path is not None:
            write_embeddings(self.table, embedding_path)


def write_embeddings(table: EmbeddingTable, path):
    with open(path, "w", encoding="utf-8") as fh:
        for token, vec in table.vectors.items():
            fh.write(token + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def _word(rng, tag):
    options = LEXICON[tag]
    return options[rng.integers(len(options))][0], tag


def _np(rng) -> ParseTree:
    r = rng.random()
    if r < 0.25:
        w, t = _word(rng, "PRP")
        return ParseTree("NP", [ParseTree(t, [w])])
    if r < 0.55:
        return ParseTree("NP", [ParseTree(t, [w]) for w, t in (_word(rng, "DT"), _word(rng, "NN"))])
    if r < 0.8:
        return ParseTree("NP", [ParseTree(t, [w]) for w, t in
                                (_word(rng, "DT"), _word(rng, "JJ"), _word(rng, "NN"))])
    w, t = _word(rng, "NN")
    return ParseTree("NP", [ParseTree(t, [w])])


def _vp(rng, depth=0) -> ParseTree:
    w, t = _word(rng, "VBP")
    verb = ParseTree(t, [w])
    r = rng.random()
    if r < 0.35:
        return ParseTree("VP", [verb, _np(rng)])
    if r < 0.55:
        adj = ParseTree("ADJP", [ParseTree("RB", [_word(rng, "RB")[0]]), ParseTree("JJ", [_word(rng, "JJ")[0]])])
        return ParseTree("VP", [verb, adj])
    if r < 0.8 and depth == 0:
        w, t = _word(rng, "VBG")
        inner = ParseTree("S", [ParseTree("VP", [ParseTree(t, [w]), _np(rng)])])
        return ParseTree("VP", [verb, inner])
    pp = ParseTree("PP", [ParseTree("IN", [_word(rng, "IN")[0]]), _np(rng)])
    return ParseTree("VP", [verb, _np(rng), pp])


def _sentence(rng) -> ParseTree:
    kids = [_np(rng), _vp(rng)]
    if rng.random() < 0.6:
        w, t = _word(rng, ".")
        kids.append(ParseTree(t, [w]))
    return ParseTree("S", kids)


def _annotate(rng, tokens, tags, clusters, salience) -> List[List[str]]:
    score = np.array([salience[t.lower()] + POS_PRIOR[g] for t, g in zip(tokens, tags)])
    for i, c in enumerate(clusters):
        if c not in ("func", "punct", "self") and sum(1 for d in clusters if d == c) > 1:
            score[i] += 0.8
    prob = np.exp(score - score.max())
    prob /= prob.sum()
    n = len(tokens)
    annotations = []
    for _ in range(N_ANNOTATORS):
        labels = ["O"] * n
        n_spans = 1 if rng.random() < 0.6 else 2
        for _ in range(n_spans):
            i = int(rng.choice(n, p=prob))
            if labels[i] != "O":
                continue
            labels[i] = "B"
            j = i + 1
            while j < n and labels[j] == "O" and rng.random() < 0.25 * prob[j] * n:
                labels[j] = "I"
                j += 1
        annotations.append(labels)
    return annotations


def generate(n_sentences: int, dim: int = 300, seed: int = 0, min_words: int = 2) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)
    clusters = sorted({c for entries in LEXICON.values() for _, c in entries})
    centres = {c: rng.normal(size=dim) for c in clusters}
    word_cluster: Dict[str, str] = {}
    for entries in LEXICON.values():
        for w, c in entries:
            word_cluster.setdefault(w, c)
    vectors = {w: centres[c] + 0.6 * rng.normal(size=dim) for w, c in sorted(word_cluster.items())}
    salience = {w: float(rng.normal(scale=0.7)) for w in sorted(word_cluster)}
    # a few words present in the table but never in the corpus
    for k in range(5):
        vectors[f"filler{k}"] = rng.normal(size=dim)
    table = EmbeddingTable.from_dict(vectors)

    records, trees = [], []
    while len(records) < n_sentences:
        tree = _sentence(rng)
        tokens = tree.leaves()
        if len(tokens) < min_words:
            continue
        tags = [node.label for node in tree.preorder() if node.is_preterminal]
        cl = [word_cluster[t] for t in tokens]
        annotations = _annotate(rng, tokens, tags, cl, salience)
        if rng.random() < 0.5:
            tokens[0] = tokens[0].capitalize()
            _relabel_first_leaf(tree, tokens[0])
        records.append(SentenceRecord(id=f"syn{len(records):04d}", tokens=tuple(tokens),
                                      annotations=tuple(tuple(a) for a in annotations)))
        trees.append(tree)
    return SyntheticCorpus(records, trees, table)


def _relabel_first_leaf(tree: ParseTree, word: str):
    node = tree
    while not node.is_preterminal:
        node = node.children[0]
    node.children[0] = word
