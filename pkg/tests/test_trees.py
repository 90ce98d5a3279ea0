import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regrowth.partitions import PartitionN
from regrowth.trees import (
    LabelledTree,
    enumerate_trees,
    first_split,
    height,
    leaf_depths,
    nested_leaves,
    newick_export,
    parse_newick,
    reduced_subtree,
    relabel_nested,
    remove_leaf,
    shape,
)

T2 = (1, 2)
CHERRY = ((1, 2), 3)
STAR = (1, 2, 3)


def caterpillar(n):
    t = 1
    for i in range(2, n + 1):
        t = (t, i)
    return LabelledTree.from_nested(t)


def test_arena_rejects_degree_two_vertices():
    with pytest.raises(ValueError):
        LabelledTree(parent=(-1, 0, 1, 2), label=(0, 0, 0, 1))


def test_arena_rejects_nonpositive_lengths():
    with pytest.raises(ValueError):
        LabelledTree(parent=(-1, 0, 1, 1), label=(0, 0, 1, 2), length=(0.0, 1.0, 0.0, 1.0))


def test_json_round_trip():
    t = LabelledTree.from_nested(((1, 3), 2, (4, 5)))
    assert LabelledTree.from_json(t.to_json()) == t


@pytest.mark.parametrize("nested,blocks", [
    (T2, [[1], [2]]),
    (CHERRY, [[1, 2], [3]]),
    (STAR, [[1], [2], [3]]),
])
def test_first_split(nested, blocks):
    assert first_split(LabelledTree.from_nested(nested)) == PartitionN.from_blocks(blocks)


def test_first_split_rejects_single_leaf():
    with pytest.raises(ValueError):
        first_split(LabelledTree.single())


def test_remove_leaf_examples():
    for t in (STAR, CHERRY):
        out = remove_leaf(LabelledTree.from_nested(t), 3)
        assert out == LabelledTree.from_nested(T2)
    with pytest.raises(KeyError):
        remove_leaf(LabelledTree.from_nested(T2), 5)


def test_reduced_subtree_examples():
    t = LabelledTree.from_nested(CHERRY)
    assert reduced_subtree(t, [1, 2, 3]) == t.nested()
    assert reduced_subtree(t, [1]) == 1
    assert reduced_subtree(caterpillar(3), [1, 3]) == (1, 3)
    with pytest.raises(ValueError):
        reduced_subtree(t, [])


def test_reduced_subtree_is_monotone():
    for t in enumerate_trees(5):
        labels = nested_leaves(t)
        for r in range(1, 6):
            for big in itertools.combinations(labels, r):
                outer = reduced_subtree(t, big)
                for s in range(1, r + 1):
                    for small in itertools.combinations(big, s):
                        assert reduced_subtree(outer, small) == reduced_subtree(t, small)


def test_heights():
    assert height(LabelledTree.single()) == 1
    assert height(LabelledTree.from_nested(T2)) == 2
    assert height(LabelledTree.from_nested(tuple(range(1, 7)))) == 2
    for n in range(3, 7):
        assert height(caterpillar(n)) == n
    assert leaf_depths(LabelledTree.from_nested(CHERRY)) == {1: 3, 2: 3, 3: 2}


def test_height_with_lengths():
    t = LabelledTree(parent=(-1, 0, 1, 1), label=(0, 0, 1, 2), length=(0.0, 0.5, 1.0, 2.0))
    assert leaf_depths(t) == {1: 1.5, 2: 2.5}
    assert height(t) == 2.5


def test_shapes():
    cats = [LabelledTree.from_nested(t) for t in (((1, 2), 3), ((1, 3), 2), (1, (2, 3)))]
    assert len({shape(t) for t in cats}) == 1
    assert shape(LabelledTree.from_nested(STAR)) != shape(cats[0])
    assert len({shape(t) for t in enumerate_trees(4)}) == 5


def test_enumeration_counts():
    assert [len(enumerate_trees(n)) for n in range(1, 6)] == [1, 1, 4, 26, 236]
    for n in range(1, 6):
        keys = set(enumerate_trees(n))
        assert len(keys) == len(enumerate_trees(n))
    with pytest.raises(ValueError):
        enumerate_trees(9)


def test_newick():
    assert newick_export(LabelledTree.from_nested(T2)) == "(1,2);"
    assert newick_export(LabelledTree.from_nested(CHERRY)) == "((1,2),3);"
    for t in enumerate_trees(4):
        tree = LabelledTree.from_nested(t)
        assert parse_newick(newick_export(tree)) == tree


def test_newick_round_trip_with_lengths():
    t = LabelledTree(parent=(-1, 0, 1, 1), label=(0, 0, 1, 2), length=(0.0, 0.5, 1.25, 2.0))
    back = parse_newick(newick_export(t))
    assert back.nested() == t.nested()
    assert leaf_depths(back) == pytest.approx(leaf_depths(t))


def test_leaf_removal_replay_on_t4():
    # every T_5 tree comes from exactly one T_4 tree by inserting leaf 5
    parents = {}
    for t5 in enumerate_trees(5):
        parents.setdefault(remove_leaf(t5, 5), []).append(t5)
    assert set(parents) == set(enumerate_trees(4))
    assert sum(len(v) for v in parents.values()) == 236


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 25), st.permutations([1, 2, 3, 4]))
def test_shape_is_permutation_invariant(idx, perm):
    t = enumerate_trees(4)[idx]
    mapping = dict(zip([1, 2, 3, 4], perm))
    relabelled = LabelledTree.from_nested(relabel_nested(t, mapping))
    assert shape(relabelled) == shape(LabelledTree.from_nested(t))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 235))
def test_first_split_is_ordered_partition(idx):
    t = enumerate_trees(5)[idx]
    pi = first_split(t)
    assert sorted(x for b in pi.blocks for x in b) == [1, 2, 3, 4, 5]
    assert [b[0] for b in pi.blocks] == sorted(b[0] for b in pi.blocks)
