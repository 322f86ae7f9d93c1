"""Align emphasis records, parse trees and embeddings into model inputs."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import EmbeddingTable, SentenceRecord, parse_emphasis_file
from .errors import FormatError
from .parse_tree import ParseTree, TagVocab, build_ssg, derive_pos_tags, read_tree_file, validate_alignment
from .wsg import build_wsg


class WordVocab:
    """Insertion-ordered token -> row map for the trainable word matrix."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.tokens: List[str] = []
        self.index: Dict[str, int] = {}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index


@dataclass
class Example:
    """Everything the model needs for one sentence."""

    id: str
    tokens: Tuple[str, ...]
    word_ids: np.ndarray
    pos_ids: np.ndarray
    node_ids: np.ndarray
    adjacency: np.ndarray
    alignment: np.ndarray
    a_hat: np.ndarray
    freq: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    record: Optional[SentenceRecord] = None

    @property
    def n(self) -> int:
        return len(self.tokens)


def build_example(tokens: Sequence[str], tree: ParseTree, table: EmbeddingTable, words: WordVocab,
                  tags: TagVocab, record: Optional[SentenceRecord] = None, sid: str = "") -> Example:
    report = validate_alignment(tree, tokens)
    if not report.ok:
        raise FormatError(f"sentence {record.id if record else sid!r}: tree does not match tokens; "
                          + report.describe())
    missing = [t for t in tokens if t not in words]
    if missing:
        raise KeyError(f"tokens missing from the word vocabulary: {missing[:5]}")
    ssg = build_ssg(tree, tags)
    pos = derive_pos_tags(tree)
    return Example(
        id=record.id if record is not None else sid,
        tokens=tuple(tokens),
        word_ids=np.array([words.index[t] for t in tokens], dtype=np.intp),
        pos_ids=np.array([tags.id(t) for t in pos], dtype=np.intp),
        node_ids=ssg.node_tags,
        adjacency=ssg.adjacency(),
        alignment=ssg.word_alignment,
        a_hat=build_wsg(table.matrix(list(tokens))).A_hat,
        freq=np.asarray(record.emphasis_freq) if record is not None else None,
        counts=record.label_counts() if record is not None else None,
        labels=record.label_ids() if record is not None else None,
        record=record,
    )


def load_split(emphasis_path, tree_path) -> Tuple[List[SentenceRecord], List[ParseTree]]:
    """Read an emphasis file and its sidecar tree file, checking they pair up."""
    records = parse_emphasis_file(emphasis_path)
    trees = read_tree_file(tree_path)
    if len(records) != len(trees):
        raise FormatError(f"{len(records)} sentences but {len(trees)} trees", source=str(tree_path))
    for k, (rec, tree) in enumerate(zip(records, trees)):
        report = validate_alignment(tree, rec.tokens)
        if not report.ok:
            raise FormatError(f"tree {k + 1} does not match sentence {rec.id!r}: {report.describe()}",
                              source=str(tree_path))
    return records, trees
