"""Bracketed constituency trees and the sentence structure graph.

The structure graph is the parse tree with its word leaves removed: one node
per tag node, undirected parent/child edges, and a self-loop on every node.
Each word is aligned to its preterminal node.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import FormatError

UNK_TAG = "<unk>"

_PTB_ESCAPES = {
    "-LRB-": "(", "-RRB-": ")", "-LSB-": "[", "-RSB-": "]", "-LCB-": "{", "-RCB-": "}",
}


@dataclass
class ParseTree:
    """A tag node with ordered children; a child is a ParseTree or a word."""

    label: str
    children: List[Union["ParseTree", str]] = field(default_factory=list)

    @property
    def is_preterminal(self) -> bool:
        return len(self.children) == 1 and isinstance(self.children[0], str)

    def leaves(self) -> List[str]:
        return _ordered_leaves(self)

    def preorder(self) -> List["ParseTree"]:
        out, stack = [], [self]
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(c for c in reversed(node.children) if isinstance(c, ParseTree))
        return out

    def serialize(self) -> str:
        parts = []

        def walk(node):
            parts.append("(" + node.label)
            for c in node.children:
                parts.append(" ")
                if isinstance(c, str):
                    parts.append(c)
                else:
                    walk(c)
            parts.append(")")

        walk(self)
        return "".join(parts)

    def __str__(self):
        return self.serialize()


def _ordered_leaves(tree: ParseTree) -> List[str]:
    out = []
    stack: list = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, str):
            out.append(node)
        else:
            stack.extend(reversed(node.children))
    return out


def _tokenize(text: str):
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            yield ch, i
            i += 1
        else:
            start = i
            while i < n and not text[i].isspace() and text[i] not in "()":
                i += 1
            yield text[start:i], start


def parse_sexpr(text: str) -> ParseTree:
    """Parse one Penn-style bracketed tree.

    An unlabeled outer bracket, as in ``( (S ...) )``, is unwrapped.
    """
    toks = list(_tokenize(text))
    if not toks:
        raise FormatError("empty tree", offset=0)
    if toks[0][0] != "(":
        raise FormatError(f"expected '(' but found {toks[0][0]!r}", offset=toks[0][1])
    pos = 0

    def parse_node():
        nonlocal pos
        open_off = toks[pos][1]
        pos += 1  # "("
        if pos >= len(toks):
            raise FormatError("unbalanced parentheses: input ends after '('", offset=open_off)
        label = ""
        if toks[pos][0] not in "()":
            label = toks[pos][0]
            pos += 1
        children: list = []
        while True:
            if pos >= len(toks):
                raise FormatError("unbalanced parentheses: missing ')'", offset=open_off)
            tok, off = toks[pos]
            if tok == ")":
                pos += 1
                break
            if tok == "(":
                children.append(parse_node())
            else:
                children.append(tok)
                pos += 1
        if not children:
            raise FormatError(f"node {label or '()'} has no children", offset=open_off)
        words = [c for c in children if isinstance(c, str)]
        if words and len(children) != 1:
            raise FormatError(f"word {words[0]!r} must be the only child of its tag node", offset=open_off)
        if not label:
            if len(children) == 1 and isinstance(children[0], ParseTree):
                return children[0]
            raise FormatError("unlabeled node", offset=open_off)
        return ParseTree(label, children)

    tree = parse_node()
    if pos != len(toks):
        tok, off = toks[pos]
        raise FormatError(f"unexpected {tok!r} after the tree ends", offset=off)
    return tree


def read_tree_file(source) -> List[ParseTree]:
    """One tree per nonblank line of a UTF-8 file (path or stream)."""
    if hasattr(source, "read"):
        lines = source.read().splitlines()
        name = getattr(source, "name", "<stream>")
    else:
        name = str(source)
        with open(name, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    trees = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            trees.append(parse_sexpr(line))
        except FormatError as exc:
            raise FormatError(exc.message, source=name, line=lineno, offset=exc.offset) from None
    return trees


class TagVocab:
    """Bijective tag <-> id map; id 0 is the reserved unknown tag."""

    def __init__(self, tags: Iterable[str] = ()):
        self.tags: List[str] = [UNK_TAG]
        self.index: Dict[str, int] = {UNK_TAG: 0}
        for t in tags:
            self.add(t)

    def add(self, tag: str) -> int:
        if tag not in self.index:
            self.index[tag] = len(self.tags)
            self.tags.append(tag)
        return self.index[tag]

    def id(self, tag: str) -> int:
        return self.index.get(tag, 0)

    def __len__(self):
        return len(self.tags)

    def __contains__(self, tag):
        return tag in self.index

    @classmethod
    def from_trees(cls, trees: Iterable[ParseTree]) -> "TagVocab":
        tags = set()
        for tree in trees:
            tags.update(node.label for node in tree.preorder())
        return cls(sorted(tags))


@dataclass
class StructureGraph:
    """Tag-node graph of one sentence.

    ``edges`` lists undirected parent/child pairs ``(parent, child)``
    followed by one ``(i, i)`` self-loop per node.
    """

    node_labels: List[str]
    node_tags: np.ndarray
    edges: List[Tuple[int, int]]
    word_alignment: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_labels)

    @property
    def tree_edges(self) -> List[Tuple[int, int]]:
        return [(i, j) for i, j in self.edges if i != j]

    def adjacency(self) -> np.ndarray:
        """Boolean neighbour mask, symmetric, with a true diagonal."""
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj


def build_ssg(tree: ParseTree, tags: Optional[TagVocab] = None) -> StructureGraph:
    labels: List[str] = []
    edges: List[Tuple[int, int]] = []
    alignment: List[int] = []
    stack: list = [(tree, -1)]
    while stack:
        node, parent = stack.pop()
        idx = len(labels)
        labels.append(node.label)
        if parent >= 0:
            edges.append((parent, idx))
        if node.is_preterminal:
            alignment.append(idx)
        else:
            stack.extend((c, idx) for c in reversed(node.children))
    edges.extend((i, i) for i in range(len(labels)))
    ids = np.array([tags.id(t) if tags is not None else 0 for t in labels], dtype=np.intp)
    return StructureGraph(labels, ids, edges, np.array(alignment, dtype=np.intp))


def derive_pos_tags(tree: ParseTree) -> List[str]:
    return [node.label for node in tree.preorder() if node.is_preterminal]


@dataclass
class AlignmentReport:
    ok: bool
    mismatches: List[int]
    leaves: List[str]
    tokens: List[str]

    def __bool__(self):
        return self.ok

    def describe(self) -> str:
        if self.ok:
            return "ok"
        first = self.mismatches[0]
        return (f"first mismatch at position {first}; tree leaves {self.leaves} "
                f"vs tokens {self.tokens}")


def _same_word(leaf: str, token: str) -> bool:
    leaf = _PTB_ESCAPES.get(leaf, leaf)
    return leaf == token or leaf.lower() == token.lower()


def validate_alignment(tree: ParseTree, tokens: Sequence[str]) -> AlignmentReport:
    leaves = tree.leaves()
    tokens = list(tokens)
    mismatches = [i for i in range(min(len(leaves), len(tokens))) if not _same_word(leaves[i], tokens[i])]
    if len(leaves) != len(tokens):
        mismatches.extend(range(min(len(leaves), len(tokens)), max(len(leaves), len(tokens))))
    return AlignmentReport(not mismatches, mismatches, leaves, tokens)
