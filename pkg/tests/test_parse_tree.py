import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from emphasis_gnn.errors import FormatError
from emphasis_gnn.parse_tree import (
    ParseTree,
    TagVocab,
    build_ssg,
    derive_pos_tags,
    parse_sexpr,
    read_tree_file,
    validate_alignment,
)

from oracles import reference_leaves, reference_parse, reference_preterminals

BASKETBALL = "(S (NP (PRP I)) (VP (VBP love) (S (VP (VBG playing) (NP (NN basketball))))))"

TAGS = ["NN", "VB", "JJ", "DT", "PRP"]
PHRASES = ["S", "NP", "VP", "PP", "ADJP"]
WORDS = ["a", "b", "stay", "sane", "I", "-LRB-", "x1"]


@st.composite
def trees(draw, depth=0):
    if depth >= 4 or draw(st.booleans()) and depth > 0:
        return ParseTree(draw(st.sampled_from(TAGS)), [draw(st.sampled_from(WORDS))])
    kids = draw(st.lists(trees(depth + 1), min_size=1, max_size=3))
    return ParseTree(draw(st.sampled_from(PHRASES)), kids)


def path_to_word(tree, index):
    ssg = build_ssg(tree)
    parent = {c: p for p, c in ssg.tree_edges}
    node = int(ssg.word_alignment[index])
    path = [ssg.node_labels[node]]
    while node in parent:
        node = parent[node]
        path.append(ssg.node_labels[node])
    return path[::-1]


def test_basketball_tree():
    tree = parse_sexpr(BASKETBALL)
    assert tree.leaves() == ["I", "love", "playing", "basketball"]
    assert derive_pos_tags(tree) == ["PRP", "VBP", "VBG", "NN"]
    ssg = build_ssg(tree)
    assert ssg.node_labels == ["S", "NP", "PRP", "VP", "VBP", "S", "VP", "VBG", "NP", "NN"]
    assert [ssg.node_labels[i] for i in ssg.word_alignment] == ["PRP", "VBP", "VBG", "NN"]
    assert path_to_word(tree, 0) == ["S", "NP", "PRP"]
    assert path_to_word(tree, 3) == ["S", "VP", "S", "VP", "NP", "NN"]


def test_minimal_tree():
    tree = parse_sexpr("(X (Y w))")
    assert tree.label == "X" and tree.leaves() == ["w"]
    assert derive_pos_tags(tree) == ["Y"]
    ssg = build_ssg(tree)
    assert ssg.n_nodes == 2
    assert ssg.tree_edges == [(0, 1)]
    assert sorted(e for e in ssg.edges if e[0] == e[1]) == [(0, 0), (1, 1)]
    np.testing.assert_array_equal(ssg.word_alignment, [1])
    np.testing.assert_array_equal(ssg.adjacency(), [[1, 1], [1, 1]])


def test_deep_right_chain_matches_reference():
    words = [f"w{k}" for k in range(10)]
    text = "(T w9)"
    for k in range(8, -1, -1):
        text = f"(X (T {words[k]}) {text})"
    tree = parse_sexpr(text)
    assert tree.leaves() == words
    assert tree.leaves() == reference_leaves(reference_parse(text))


def test_outer_bracket_and_whitespace():
    tree = parse_sexpr("( (S\n  (NP (NN a))\t(VP (VB b))) )")
    assert tree.serialize() == "(S (NP (NN a)) (VP (VB b)))"


@pytest.mark.parametrize("text, offset", [
    ("", 0),
    ("S (NP a)", 0),
    ("(S (NP (NN a))", 0),
    ("(S (NN a)))", 10),
    ("(S a (NN b))", 0),
    ("(S)", 0),
])
def test_parse_errors_carry_offsets(text, offset):
    with pytest.raises(FormatError) as info:
        parse_sexpr(text)
    assert info.value.offset == offset


def test_tree_file_errors_carry_line():
    with pytest.raises(FormatError) as info:
        read_tree_file(io.StringIO("(X (Y a))\n(X (Y b)\n"))
    assert info.value.line == 2
    assert str(info.value).count("offset") == 1


def test_tag_vocab():
    tags = TagVocab.from_trees([parse_sexpr(BASKETBALL)])
    assert tags.tags[0] == "<unk>"
    assert tags.tags[1:] == sorted(tags.tags[1:])
    assert tags.id("NN") > 0 and tags.id("never-seen") == 0


def test_alignment_reports():
    tree = parse_sexpr(BASKETBALL)
    assert validate_alignment(tree, ["i", "love", "playing", "basketball"])
    extra = validate_alignment(tree, ["I", "love", "playing"])
    assert not extra and extra.mismatches[0] == 3
    drift = validate_alignment(parse_sexpr("(S (NP (NN can)) (VP (MD not)))"), ["cannot"])
    assert not drift
    assert "['can', 'not']" in drift.describe() and "['cannot']" in drift.describe()
    paren = parse_sexpr("(S (-LRB- -LRB-) (NN a))")
    assert validate_alignment(paren, ["(", "a"])


@given(trees())
def test_ssg_invariants(tree):
    ssg = build_ssg(tree, TagVocab.from_trees([tree]))
    n = ssg.n_nodes
    edges = ssg.tree_edges
    assert len(edges) == n - 1
    # connected: every node reaches the root through parent links
    parent = {c: p for p, c in edges}
    assert len(parent) == n - 1 and 0 not in parent
    for node in range(n):
        seen = 0
        while node in parent:
            node = parent[node]
            seen += 1
            assert seen <= n
        assert node == 0
    assert sum(1 for a, b in ssg.edges if a == b) == n
    # alignment is a bijection onto the preterminals, in word order
    align = list(ssg.word_alignment)
    assert len(set(align)) == len(align) == len(tree.leaves())
    pre = [i for i, node in enumerate(tree.preorder()) if node.is_preterminal]
    assert sorted(align) == pre
    pos = derive_pos_tags(tree)
    assert pos == [ssg.node_labels[i] for i in align]
    assert pos == reference_preterminals(reference_parse(tree.serialize()))
    A = ssg.adjacency()
    np.testing.assert_array_equal(A, A.T)


@given(trees())
def test_serialize_round_trip(tree):
    text = tree.serialize()
    again = parse_sexpr(text)
    assert again == tree
    assert again.serialize() == text
    assert tree.leaves() == reference_leaves(reference_parse(text))
