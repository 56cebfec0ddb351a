import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cwlabel.decomposition import (
    GROUP,
    LARGE,
    MAX_ATTACHMENTS,
    TERMINAL,
    bush_of,
    build_attachments,
    decompose,
    extract_attachment_tree,
    heavy_path,
)
from cwlabel.kexpr import evaluate, gen_cotree, gen_random, parse_kexpression
from cwlabel.union_tree import check_proper, from_kexpression, make_proper, to_kexpression
from cwlabel.verify import check_plan


def tree_of(text):
    return from_kexpression(parse_kexpression(text))


def caterpillar(n, ops="[j 1 2]"):
    text = "(v c0 1)"
    for i in range(1, n):
        text = f"(u {text} (v c{i} 2) {ops})"
    return tree_of(text)


BINARY8 = (
    "(u (u (u (v a 1) (v b 2) [j 1 2]) (u (v c 1) (v d 2) [j 1 2]) [j 1 2])"
    " (u (u (v e 1) (v f 2) [j 1 2]) (u (v g 1) (v h 2) [j 1 2]) [j 1 2]) [j 1 2])"
)


def proper_random(n, k, seed):
    return make_proper(from_kexpression(gen_random(n, k, 0.3, 0.25, seed), k=k))


def leaves_of(tree, x):
    return {tree.vertex[i] for i in tree.leaves_under(x).tolist()}


# -- heavy path ---------------------------------------------------------------


def test_heavy_path_of_caterpillar_is_the_spine():
    t = caterpillar(6)
    p = heavy_path(t)
    assert p.length == 5
    assert all(t.leaf_count(bush_of(t, p, j)) == 1 for j in range(p.length))
    assert t.vertex[p.nodes[-1]] == "c0"


def test_heavy_path_of_complete_binary_tree():
    t = tree_of(BINARY8)
    p = heavy_path(t)
    # ties go to the first child: leftmost root-leaf path
    assert t.vertex[p.nodes[-1]] == "a"
    assert [t.leaf_count(bush_of(t, p, j)) for j in range(p.length)] == [4, 2, 1]


def test_heavy_path_of_single_leaf():
    t = tree_of("(v a 1)")
    assert heavy_path(t).nodes == (0,)


@given(st.integers(2, 300), st.integers(2, 5), st.integers(0, 10**6))
def test_off_path_components_are_at_most_half(n, k, seed):
    t = from_kexpression(gen_random(n, k, 0.2, 0.2, seed), k=k)
    p = heavy_path(t)
    assert all(t.leaf_count(bush_of(t, p, j)) <= n // 2 for j in range(p.length))


# -- attachments ------------------------------------------------------------------


def describe(atts):
    return [(a.kind, a.leaf_count) for a in atts]


def test_attachments_of_complete_binary_tree():
    t = tree_of(BINARY8)
    atts = build_attachments(t, heavy_path(t))
    assert describe(atts) == [(LARGE, 4), (LARGE, 2), (GROUP, 2)]
    assert [a.rank for a in atts] == [1, 2, 3]
    assert atts[-1].includes_terminal and (atts[-1].start, atts[-1].end) == (2, 3)


def test_attachments_of_five_leaf_caterpillar():
    t = caterpillar(5)
    atts = build_attachments(t, heavy_path(t))
    # threshold ceil(5/4) = 2: pairs of single leaves close; the terminal is left alone
    assert describe(atts) == [(GROUP, 2), (GROUP, 2), (TERMINAL, 1)]
    assert sum(a.leaf_count for a in atts) == 5
    assert [(a.start, a.end) for a in atts] == [(0, 1), (2, 3), (4, 4)]


def test_attachments_of_two_leaves():
    t = tree_of("(u (v a 1) (v b 2) [j 1 2])")
    atts = build_attachments(t, heavy_path(t))
    assert describe(atts) == [(GROUP, 1), (TERMINAL, 1)]
    assert (atts[1].start, atts[1].end) == (1, 1)


def _lopsided():
    # path: root -> R -> R2 (caterpillar); bushes: B0 (2 leaves), B1 (4 leaves)
    b0 = "(u (v x 1) (v y 2) [j 1 2; r 2 3])"
    b1 = "(u (u (v p 1) (v q 2) [j 1 2]) (u (v r 1) (v s 2) []) [j 1 2])"
    r2 = "(u (u (u (u (u (v t0 1) (v t1 2) [j 1 2]) (v t2 2) [j 1 2]) (v t3 1) []) (v t4 2) [j 1 2]) (v t5 3) [j 2 3])"
    return make_proper(tree_of(f"(u {b0} (u {b1} {r2} [j 1 2; r 1 3]) [j 3 1; r 3 2])"))


def test_group_of_one_bush_keeps_suppressed_decorator():
    t = _lopsided()
    assert check_proper(t).proper
    p = heavy_path(t)
    atts = build_attachments(t, p)
    assert describe(atts)[:2] == [(GROUP, 2), (LARGE, 4)]
    sub = extract_attachment_tree(t, p, atts[0])
    # the bush (x, y) with d_{p_0} appended to its own decorator
    assert sub.n == 2
    assert sub.decorators[sub.root] == t.decorators[bush_of(t, p, 0)] + t.decorators[p.nodes[0]]


def test_large_attachment_is_the_bush_itself():
    t = _lopsided()
    p = heavy_path(t)
    att = build_attachments(t, p)[1]
    sub = extract_attachment_tree(t, p, att)
    bush = att.members[0]
    assert sub.decorators == t.decorators[t.lo(bush) : bush + 1]
    assert sub.vertices == ["p", "q", "r", "s"]


def _check_level(tree, path, atts):
    n = tree.n
    whole = evaluate(to_kexpression(tree))
    index = whole.index()
    seen = set()
    for att in atts:
        sub = extract_attachment_tree(tree, path, att)
        names = sub.vertices
        assert len(names) == att.leaf_count
        assert not seen & set(names)
        seen |= set(names)
        assert att.leaf_count <= n // 2
        if att.kind == LARGE:
            assert att.leaf_count >= math.ceil(n / 4)
        if sub.n > 1:
            assert check_proper(sub).proper
        rows = [index[v] for v in names]
        assert np.array_equal(evaluate(to_kexpression(sub)).adjacency, whole.adjacency[np.ix_(rows, rows)])
    assert seen == set(tree.vertices)
    ends = [(a.start, a.end) for a in atts]
    assert all(a1 < b0 for (_, a1), (b0, _) in zip(ends, ends[1:]))
    assert len(atts) <= MAX_ATTACHMENTS


@pytest.mark.parametrize("seed", range(40))
def test_extracted_trees_are_proper_induced_subgraphs(seed):
    t = proper_random(6 + seed * 3, 2 + seed % 4, seed)
    plan = decompose(t)
    for _, level in plan.levels():
        _check_level(level.tree, level.path, level.attachments)


@given(st.integers(2, 60), st.integers(2, 4), st.integers(0, 10**6))
def test_extraction_property(n, k, seed):
    t = proper_random(n, k, seed)
    p = heavy_path(t)
    _check_level(t, p, build_attachments(t, p))


def test_cotree_levels_extract_cleanly():
    t = make_proper(from_kexpression(gen_cotree(40, 3), k=2))
    for _, level in decompose(t).levels():
        _check_level(level.tree, level.path, level.attachments)


# -- recursion ------------------------------------------------------------------


def test_decompose_single_leaf():
    plan = decompose(tree_of("(v a 1)"))
    assert plan.depth == 0 and list(plan.levels()) == []


def test_decompose_two_leaves():
    assert decompose(tree_of("(u (v a 1) (v b 2) [j 1 2])")).depth == 1


def test_decompose_rejects_improper_when_checking():
    from cwlabel.exceptions import NotProperError

    with pytest.raises(NotProperError):
        decompose(tree_of("(u (u (v a 1) (v b 2) []) (v c 2) [j 1 2])"), check=True)


@pytest.mark.parametrize("n", [4, 5, 7, 8, 16, 31, 64, 100, 256, 1000, 4096])
def test_depth_bound(n):
    for seed in range(3):
        plan = decompose(proper_random(n, 3, seed))
        assert plan.depth <= int(math.log2(n))
        assert check_plan(plan, n) == []


def test_deep_caterpillar_decomposes():
    t = caterpillar(3000, "[j 1 2; r 2 1]")
    plan = decompose(t)
    assert plan.depth <= int(math.log2(3000))


def test_stats_shape(ex7_tree):
    s = decompose(ex7_tree).stats()
    assert s["n"] == 7 and s["depth"] == 2
    assert [row["level"] for row in s["levels"]] == [1, 2]
    assert s["levels"][0] == {
        "level": 1,
        "trees": 1,
        "max_n": 7,
        "max_path_length": 3,
        "max_attachments": 3,
        "max_attachment_leaves": 3,
    }


def test_ex7_top_level(ex7_tree):
    t = ex7_tree
    p = heavy_path(t)
    assert [t.vertex[x] for x in p.nodes if t.is_leaf(x)] == ["d"]
    atts = build_attachments(t, p)
    assert describe(atts) == [(LARGE, 3), (LARGE, 2), (GROUP, 2)]
    assert [leaves_of(t, m) for m in atts[0].members] == [{"a", "b", "c"}]
    assert [leaves_of(t, m) for m in atts[1].members] == [{"f", "g"}]
    assert atts[2].members == (bush_of(t, p, 2), p.nodes[-1])
