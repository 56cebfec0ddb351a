"""Balanced caterpillar decomposition of a union tree.

At every level a heavy path ``P = p_0 .. p_L`` is taken from the root; the
off-path subtrees hanging from ``p_0 .. p_{L-1}`` (bushes) and the terminal
leaf ``p_L`` are grouped into at most 14 attachments of at most n/2 leaves
each, and every attachment with two or more leaves is extracted as its own
proper union tree and decomposed again.
"""
from __future__ import annotations

import gc
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .exceptions import CWLabelError, DecompositionError, NotProperError
from .union_tree import UnionTree, _action_table, check_proper

__all__ = [
    "HeavyPath",
    "Attachment",
    "DecompositionPlan",
    "MAX_ATTACHMENTS",
    "heavy_path",
    "build_attachments",
    "extract_attachment_tree",
    "decompose",
]

MAX_ATTACHMENTS = 14

LARGE = "large"
GROUP = "group"
TERMINAL = "terminal"


@dataclass(frozen=True)
class HeavyPath:
    nodes: tuple

    @property
    def length(self) -> int:
        """Index ``L`` of the terminal leaf (number of edges on the path)."""
        return len(self.nodes) - 1

    def position(self, node: int) -> int:
        return self.nodes.index(node)


@dataclass(frozen=True)
class Attachment:
    kind: str
    rank: int
    start: int
    end: int
    members: tuple  # bush roots in path order; a terminal leaf comes last
    leaf_count: int
    includes_terminal: bool = False


def heavy_path(tree: UnionTree, start: Optional[int] = None) -> HeavyPath:
    """Descend to the child with more leaves (ties go left) until a leaf."""
    x = tree.root if start is None else int(start)
    left, right, size = tree.left, tree.right, tree.size
    nodes = [x]
    while left[x] >= 0:
        a, b = int(left[x]), int(right[x])
        x = a if size[a] >= size[b] else b
        nodes.append(x)
    return HeavyPath(tuple(nodes))


def bush_of(tree: UnionTree, path: HeavyPath, j: int) -> int:
    """Off-path child of ``p_j`` (``j < L``)."""
    p, nxt = path.nodes[j], path.nodes[j + 1]
    a, b = int(tree.left[p]), int(tree.right[p])
    return b if a == nxt else a


def build_attachments(tree: UnionTree, path: HeavyPath) -> list[Attachment]:
    """Group bushes along ``path`` into ranked attachments.

    A bush with at least ceil(n/4) leaves (and more than one) stands alone.
    Runs of smaller bushes are collected greedily in path order; a group
    closes once it reaches ceil(n/4) leaves, and never grows past floor(n/2).
    The terminal leaf joins the last group if that group is still open.
    """
    n = tree.leaf_count(path.nodes[0])
    L = path.length
    threshold = (n + 3) // 4
    cap = n // 2
    specs: list[tuple] = []  # (kind, start, end, members, count, terminal)
    group: Optional[list] = None  # [start, end, members, count]

    def close():
        nonlocal group
        if group is not None:
            specs.append((GROUP, group[0], group[1], tuple(group[2]), group[3], False))
            group = None

    for j in range(L):
        bush = bush_of(tree, path, j)
        s = tree.leaf_count(bush)
        if s >= threshold and s > 1:
            close()
            specs.append((LARGE, j, j, (bush,), s, False))
            continue
        if group is not None and group[3] + s > cap:
            close()
        if group is None:
            group = [j, j, [], 0]
        group[1] = j
        group[2].append(bush)
        group[3] += s
        if group[3] >= threshold:
            close()
    terminal = path.nodes[L]
    if group is not None and group[3] + 1 <= cap:
        specs.append((GROUP, group[0], L, tuple(group[2]) + (terminal,), group[3] + 1, True))
        group = None
    else:
        close()
        specs.append((TERMINAL, L, L, (terminal,), 1, True))
    if len(specs) > MAX_ATTACHMENTS:
        raise DecompositionError(f"{len(specs)} attachments at one level (limit {MAX_ATTACHMENTS})")
    return [
        Attachment(kind, rank, a, b, members, count, terminal)
        for rank, (kind, a, b, members, count, terminal) in enumerate(specs, 1)
    ]


def _gather(seq, ranges):
    out = seq[ranges[0][0] : ranges[0][1]]
    for lo, hi in ranges[1:]:
        out = out + seq[lo:hi]
    return out


def _subtree(tree: UnionTree, ranges: list, fix: Optional[dict] = None) -> UnionTree:
    """Tree on the node id ``ranges`` (sorted, half-open, postorder-closed
    once ``fix`` is applied).

    ``fix`` patches the suppressed-node case: ``bush`` gets ``decorator``
    (or ``label`` if it is a leaf), ``up`` points to ``bush`` instead of
    ``bottom``, and every node in ``shrink`` loses ``removed`` from its size.
    """
    if len(ranges) == 1:
        lo, hi = ranges[0]
        left, right = tree.left[lo:hi].copy(), tree.right[lo:hi].copy()
        label, size = tree.label[lo:hi].copy(), tree.size[lo:hi].copy()
    else:
        left = np.concatenate([tree.left[lo:hi] for lo, hi in ranges])
        right = np.concatenate([tree.right[lo:hi] for lo, hi in ranges])
        label = np.concatenate([tree.label[lo:hi] for lo, hi in ranges])
        size = np.concatenate([tree.size[lo:hi] for lo, hi in ranges])
    # old id -> new id is x - shift of the range holding x
    shifts = []
    kept = 0
    for lo, hi in ranges:
        shifts.append(lo - kept)
        kept += hi - lo

    def pos(x):
        for (lo, hi), sh in zip(ranges, shifts):
            if x < hi:
                return x - sh
        raise ValueError(x)

    decorators = _gather(tree.decorators, ranges)
    actions = _gather(tree._actions, ranges) if tree._actions is not None else None
    if fix:
        bush = fix["bush"]
        i = pos(bush)
        if "decorator" in fix:
            decorators = decorators[:i] + (fix["decorator"],) + decorators[i + 1 :]
            if actions is not None:
                table = _action_table(fix["decorator"], tree.k)
                actions = actions[:i] + [None if table == tuple(range(1, tree.k + 1)) else table] + actions[i + 1 :]
        else:
            label[i] = fix["label"]
        if "up" in fix:
            u = pos(fix["up"])
            if left[u] == fix["bottom"]:
                left[u] = bush
            else:
                right[u] = bush
            for x in fix["shrink"]:
                size[pos(x)] -= fix["removed"]
    internal = left >= 0
    if len(ranges) == 1:
        left[internal] -= shifts[0]
        right[internal] -= shifts[0]
    else:
        starts = np.array([lo for lo, _ in ranges])
        shift = np.array(shifts)
        for arr in (left, right):
            kids = arr[internal]
            arr[internal] = kids - shift[np.searchsorted(starts, kids, side="right") - 1]
    return UnionTree._trusted(
        tree.k,
        tree.w,
        left,
        right,
        decorators,
        _gather(tree.vertex, ranges),
        label,
        _gather(tree.mask, ranges),
        size,
        actions,
    )


def extract_attachment_tree(tree: UnionTree, path: HeavyPath, att: Attachment) -> UnionTree:
    """Proper union tree on the leaves of one attachment.

    For a group ending above the terminal leaf, the path continuation below
    ``p_end`` is cut off and the now-unary ``p_end`` is suppressed: its
    decorator is appended to the remaining bush root (or folded into the
    bush leaf's initial label).
    """
    nodes = path.nodes
    if att.kind in (LARGE, TERMINAL):
        root = att.members[0]
        return _subtree(tree, [(tree.lo(root), root + 1)])
    top = nodes[att.start]
    if att.end == path.length:
        return _subtree(tree, [(tree.lo(top), top + 1)])
    a, b = att.start, att.end
    bottom = nodes[b]
    cont = nodes[b + 1]
    bush = att.members[-1]
    ranges = [(tree.lo(top), tree.lo(cont)), (cont + 1, bottom), (bottom + 1, top + 1)]
    ranges = [(lo, hi) for lo, hi in ranges if lo < hi]
    fix: dict = {"bush": bush}
    if tree.left[bush] >= 0:
        fix["decorator"] = tree.decorators[bush] + tree.decorators[bottom]
    else:
        fix["label"] = tree.action(bottom)[int(tree.label[bush]) - 1]
    if b > a:
        fix.update(up=nodes[b - 1], bottom=bottom, shrink=nodes[a:b], removed=int(tree.size[cont]) + 1)
    return _subtree(tree, ranges, fix)


@dataclass
class DecompositionPlan:
    """One level of the recursive decomposition plus its sub-plans.

    ``children[t]`` is the plan for attachment rank ``t + 1`` or ``None``
    for single-leaf attachments.
    """

    tree: UnionTree
    path: Optional[HeavyPath]
    attachments: tuple
    children: tuple
    depth: int

    @property
    def n(self) -> int:
        return self.tree.n

    def levels(self, _level: int = 1) -> Iterator[tuple[int, "DecompositionPlan"]]:
        """Every plan node with attachments, paired with its level (1-based)."""
        stack = [(self, _level)]
        while stack:
            plan, lev = stack.pop()
            if not plan.attachments:
                continue
            yield lev, plan
            for child in reversed(plan.children):
                if child is not None:
                    stack.append((child, lev + 1))

    def stats(self) -> dict:
        per_level: dict[int, dict] = {}
        for lev, plan in self.levels():
            row = per_level.setdefault(
                lev,
                {"level": lev, "trees": 0, "max_n": 0, "max_path_length": 0, "max_attachments": 0, "max_attachment_leaves": 0},
            )
            row["trees"] += 1
            row["max_n"] = max(row["max_n"], plan.n)
            row["max_path_length"] = max(row["max_path_length"], plan.path.length)
            row["max_attachments"] = max(row["max_attachments"], len(plan.attachments))
            row["max_attachment_leaves"] = max(
                row["max_attachment_leaves"], max(a.leaf_count for a in plan.attachments)
            )
        return {
            "n": self.n,
            "depth": self.depth,
            "max_attachments": max((r["max_attachments"] for r in per_level.values()), default=0),
            "levels": [per_level[i] for i in sorted(per_level)],
        }


def decompose(tree: UnionTree, check: bool = False) -> DecompositionPlan:
    """Recursive decomposition down to single leaves.

    With ``check=True`` the input's properness is verified first
    (quadratic; meant for tests and diagnostics).
    """
    if check:
        report = check_proper(tree)
        if not report.proper:
            node, pair = report.violations[0]
            raise NotProperError(f"union tree is not proper: edge {pair} missing at node {node}")
    tree.actions  # materialise once; extraction slices it for every subtree
    with _gc_paused():
        return _decompose(tree)


@contextmanager
def _gc_paused():
    """The recursion allocates millions of small long-lived objects; cyclic
    GC passes over them dominate the runtime if left enabled."""
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


def _decompose(tree: UnionTree) -> DecompositionPlan:
    if tree.n == 1:
        return DecompositionPlan(tree, None, (), (), 0)
    path = heavy_path(tree)
    atts = build_attachments(tree, path)
    children = []
    depth = 0
    for att in atts:
        if att.leaf_count < 2:
            children.append(None)
            continue
        child = _decompose(extract_attachment_tree(tree, path, att))
        depth = max(depth, child.depth)
        children.append(child)
    return DecompositionPlan(tree, path, tuple(atts), tuple(children), depth + 1)
