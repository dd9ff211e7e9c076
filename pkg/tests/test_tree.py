import random
from fractions import Fraction
from itertools import permutations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retree.tree import (
    EmptySet,
    Node,
    NotALeaf,
    ReasoningTree,
    acc,
    dumps,
    from_paths,
    full_tree,
    leaf_descendants,
    loads,
    validate,
)

from conftest import random_full_tree, random_ragged_tree


def test_acc_counts_correct_share(e1):
    t = full_tree("t", 2, 2, [1, 0, 0, 1])
    assert acc(t, t.leaves) == Fraction(1, 2)
    assert acc(e1, e1.leaves) == Fraction(1, 4)
    everything = full_tree("t", 3, 1, [1, 1, 1])
    assert acc(everything, everything.leaves) == 1


def test_acc_e1_matches_enumeration(e1):
    labels = [e1.node(n).label for n in e1.leaves]
    assert acc(e1, e1.leaves) == Fraction(sum(labels), len(labels))


def test_acc_errors(e1):
    with pytest.raises(EmptySet):
        acc(e1, [])
    with pytest.raises(NotALeaf):
        acc(e1, [0, 3])


def test_acc_permutation_invariant(e1):
    leaves = list(e1.leaves)[:3]
    values = {acc(e1, p) for p in permutations(leaves)}
    assert len(values) == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_acc_count_additivity(seed):
    rng = random.Random(seed)
    t = random_full_tree(rng, 3, 2)
    leaves = list(t.leaves)
    rng.shuffle(leaves)
    cut = rng.randint(1, len(leaves) - 1)
    a, b = leaves[:cut], leaves[cut:]
    assert acc(t, a + b) * len(leaves) == acc(t, a) * len(a) + acc(t, b) * len(b)


def test_leaf_descendants(e1):
    assert leaf_descendants(e1, 0) == frozenset({3, 4, 5, 6})
    assert leaf_descendants(e1, 1) == frozenset({3, 4})
    assert leaf_descendants(e1, 5) == frozenset({5})
    t = full_tree("t", 4, 4, [0] * 256)
    assert len(leaf_descendants(t, t.root)) == 4**4


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_leaf_sets_partition_over_children(seed):
    t = random_ragged_tree(random.Random(seed), 3, 3)
    for n in t.internal_nodes:
        parts = [leaf_descendants(t, c) for c in t.children(n)]
        union = frozenset().union(*parts)
        assert union == leaf_descendants(t, n)
        assert sum(len(p) for p in parts) == len(union)


def test_validate_full_tree_passes():
    t = full_tree("t", 4, 4, [i % 2 for i in range(256)])
    report = validate(t, strict=True)
    assert report.ok, str(report)
    assert len(t.leaves) == 256


def test_validate_depth_mismatch(e1):
    nodes = list(e1.nodes)
    bad = nodes[3]
    nodes[3] = Node(bad.id, bad.parent, 5, bad.children, bad.label, bad.branch)
    t = ReasoningTree("bad", 2, 6, tuple(nodes))
    assert "depth mismatch" in validate(t).rules()


def test_validate_arity_exceeded():
    t = full_tree("t", 3, 1, [1, 0, 0])
    shrunk = ReasoningTree("t", 2, 1, t.nodes)
    assert "arity exceeded" in validate(shrunk).rules()


def test_validate_reports_unlabeled_leaf_and_strict_raggedness():
    t = from_paths("r", [((0,), True), ((1, 0), False)], 2, 2)
    assert t.ragged
    assert validate(t).ok
    rules = validate(t, strict=True).rules()
    assert {"short leaf", "under-full fork"} <= rules
    nodes = [Node(n.id, n.parent, n.depth, n.children, None, n.branch) for n in t.nodes]
    assert "unlabeled leaf" in validate(ReasoningTree("r", 2, 2, tuple(nodes), True)).rules()


def test_manifest_roundtrip_is_byte_stable():
    t = random_ragged_tree(random.Random(7), 3, 3)
    text = dumps(t)
    back = loads(text)
    assert back == t
    assert dumps(back) == text
    assert [back.path(n) for n in back.leaves] == [t.path(n) for n in t.leaves]
