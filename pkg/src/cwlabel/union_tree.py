"""Decorated union trees stored as flat arrays in postorder.

Node ids are postorder positions: children precede parents, the root is the
last node, and the subtree of ``x`` occupies the id range
``[x - size[x] + 1, x]``.  Because every internal node is binary, a subtree
with ``s`` nodes has ``(s + 1) // 2`` leaves, and leaves appear in
left-to-right order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .exceptions import CWLabelError, KExprError
from .kexpr import Create, Join, KExpr, Relabel, Union, iter_postorder, mask_width, width_used
from .kexpr import _apply_relabel as _relabel, _merge_classes as _merge

__all__ = [
    "RelabelMap",
    "UnionTree",
    "PropernessReport",
    "LabelTrace",
    "from_kexpression",
    "to_kexpression",
    "relabel_action",
    "check_proper",
    "joins_settled",
    "make_proper",
    "trace_labels",
]


@dataclass(frozen=True)
class RelabelMap:
    """Total map on labels ``1..k``; ``table[i - 1]`` is the image of ``i``."""

    table: tuple

    @classmethod
    def identity(cls, k: int) -> "RelabelMap":
        return cls(tuple(range(1, k + 1)))

    @property
    def k(self) -> int:
        return len(self.table)

    def __call__(self, label: int) -> int:
        return self.table[label - 1]

    def then(self, other: "RelabelMap") -> "RelabelMap":
        """Apply ``self`` first, then ``other``."""
        t = other.table
        return RelabelMap(tuple(t[x - 1] for x in self.table))

    def is_identity(self) -> bool:
        return all(x == i for i, x in enumerate(self.table, 1))

    def preimage(self, labels: Iterable[int]) -> frozenset:
        wanted = set(labels)
        return frozenset(i for i, x in enumerate(self.table, 1) if x in wanted)

    def as_dict(self) -> dict:
        return {i: x for i, x in enumerate(self.table, 1)}


def _action_table(ops, k: int) -> tuple:
    cur = list(range(1, k + 1))
    for op in ops:
        if isinstance(op, Relabel):
            i, j = op.i, op.j
            for p in range(k):
                if cur[p] == i:
                    cur[p] = j
    return tuple(cur)


def relabel_action(decorator, k: int) -> RelabelMap:
    """Net relabeling performed by a decorator; joins act as the identity."""
    return RelabelMap(_action_table(tuple(decorator), k))


class UnionTree:
    """Rooted binary tree of unions with decorated internal nodes.

    Treat instances as immutable; the arrays are marked read-only.
    """

    __slots__ = ("k", "w", "left", "right", "decorators", "vertex", "label", "mask", "size", "_parent", "_leaf_nodes", "_actions")

    def __init__(self, k, left, right, decorators, vertex, label, mask=None, w=0, size=None, actions=None):
        self.k = int(k)
        self.w = int(w)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.decorators = tuple(tuple(d) for d in decorators)
        self.vertex = tuple(vertex)
        self.label = np.asarray(label, dtype=np.int64)
        n_nodes = len(self.left)
        self.mask = tuple(mask) if mask is not None else (None,) * n_nodes
        if size is None:
            size = np.ones(n_nodes, dtype=np.int64)
            left_l, right_l = self.left.tolist(), self.right.tolist()
            sz = size.tolist()
            for x in range(n_nodes):
                if left_l[x] >= 0:
                    sz[x] = 1 + sz[left_l[x]] + sz[right_l[x]]
            size = np.asarray(sz, dtype=np.int64)
        self.size = np.asarray(size, dtype=np.int64)
        for arr in (self.left, self.right, self.label, self.size):
            arr.setflags(write=False)
        self._parent = None
        self._leaf_nodes = None
        self._actions = actions
        if n_nodes == 0 or self.size[-1] != n_nodes:
            raise KExprError("arrays do not describe a single postorder tree")

    @classmethod
    def _trusted(cls, k, w, left, right, decorators, vertex, label, mask, size, actions):
        """Build from parts that are already tuples and fresh int64 arrays,
        skipping conversion and validation (used by subtree extraction)."""
        t = object.__new__(cls)
        t.k, t.w = k, w
        t.left, t.right, t.label, t.size = left, right, label, size
        for arr in (left, right, label, size):
            arr.setflags(write=False)
        t.decorators, t.vertex, t.mask = decorators, vertex, mask
        t._parent = t._leaf_nodes = None
        t._actions = actions
        return t

    # -- basic structure ---------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def root(self) -> int:
        return self.n_nodes - 1

    @property
    def n(self) -> int:
        """Number of leaves (vertices)."""
        return (self.n_nodes + 1) // 2

    def is_leaf(self, x: int) -> bool:
        return self.left[x] < 0

    def children(self, x: int) -> tuple:
        return int(self.left[x]), int(self.right[x])

    def leaf_count(self, x: int) -> int:
        return (int(self.size[x]) + 1) // 2

    def lo(self, x: int) -> int:
        return x - int(self.size[x]) + 1

    @property
    def parent(self) -> np.ndarray:
        if self._parent is None:
            parent = np.full(self.n_nodes, -1, dtype=np.int64)
            internal = np.nonzero(self.left >= 0)[0]
            parent[self.left[internal]] = internal
            parent[self.right[internal]] = internal
            parent.setflags(write=False)
            self._parent = parent
        return self._parent

    @property
    def leaf_nodes(self) -> np.ndarray:
        """Leaf node ids in left-to-right order."""
        if self._leaf_nodes is None:
            self._leaf_nodes = np.nonzero(self.left < 0)[0]
            self._leaf_nodes.setflags(write=False)
        return self._leaf_nodes

    @property
    def actions(self) -> list:
        """Per node: net relabel table of its decorator, or None if identity."""
        if self._actions is None:
            acts = []
            k = self.k
            for d in self.decorators:
                if any(isinstance(op, Relabel) for op in d):
                    table = _action_table(d, k)
                    acts.append(None if table == tuple(range(1, k + 1)) else table)
                else:
                    acts.append(None)
            self._actions = acts
        return self._actions

    def leaves_under(self, x: int) -> np.ndarray:
        lo = self.lo(x)
        ids = np.arange(lo, x + 1)
        return ids[self.left[lo : x + 1] < 0]

    @property
    def vertices(self) -> list:
        return [self.vertex[x] for x in self.leaf_nodes.tolist()]

    def leaf_of(self, vertex: str) -> int:
        try:
            return self.vertex.index(vertex)
        except ValueError:
            raise CWLabelError(f"unknown vertex {vertex!r}") from None

    def width_used(self) -> int:
        best = int(self.label.max()) if self.n_nodes else 0
        for d in self.decorators:
            for op in d:
                best = max(best, op.i, op.j)
        return best

    def with_decorators(self, decorators) -> "UnionTree":
        return UnionTree(self.k, self.left, self.right, decorators, self.vertex, self.label, self.mask, self.w, self.size)

    def action(self, x: int) -> tuple:
        """Net relabel table of ``d_x`` (identity for leaves)."""
        table = self.actions[x]
        return tuple(range(1, self.k + 1)) if table is None else table

    def __repr__(self):
        return f"UnionTree(n={self.n}, k={self.k}, w={self.w})"


def from_kexpression(expr: KExpr, k: Optional[int] = None) -> UnionTree:
    """Union tree of an expression; ``k`` defaults to the largest label used."""
    used = width_used(expr)
    if k is None:
        k = used
    elif used > k:
        raise KExprError(f"expression uses label {used} but k={k}")
    w = mask_width(expr)
    left, right, decs, verts, labels, masks = [], [], [], [], [], []
    ids: list[int] = []
    seen = set()
    for node in iter_postorder(expr):
        x = len(left)
        if isinstance(node, Create):
            if node.vertex in seen:
                raise KExprError(f"duplicate vertex identifier {node.vertex!r}")
            seen.add(node.vertex)
            left.append(-1)
            right.append(-1)
            decs.append(())
            verts.append(node.vertex)
            labels.append(node.label)
            masks.append(node.mask)
        else:
            r = ids.pop()
            l_ = ids.pop()
            left.append(l_)
            right.append(r)
            decs.append(node.ops)
            verts.append(None)
            labels.append(0)
            masks.append(None)
        ids.append(x)
    return UnionTree(k, left, right, decs, verts, labels, masks, w)


def to_kexpression(tree: UnionTree) -> KExpr:
    built: dict[int, KExpr] = {}
    left, right = tree.left.tolist(), tree.right.tolist()
    for x in range(tree.n_nodes):
        if left[x] < 0:
            built[x] = Create(tree.vertex[x], int(tree.label[x]), tree.mask[x])
        else:
            built[x] = Union(built.pop(left[x]), built.pop(right[x]), tree.decorators[x])
    return built[tree.root]


# --------------------------------------------------------------------------
# properness


@dataclass(frozen=True)
class PropernessReport:
    proper: bool
    violations: tuple  # ((node, (u, v)), ...), u < v by name

    def __bool__(self):
        return self.proper


def _leaf_ranges(tree: UnionTree):
    """First leaf index and leaf count under every node."""
    counts = (tree.size + 1) // 2
    is_leaf = (tree.left < 0).astype(np.int64)
    leaves_before = np.cumsum(is_leaf) - is_leaf  # leaves with smaller id
    lo = np.arange(tree.n_nodes) - tree.size + 1
    first = leaves_before[lo]
    return first, counts


def check_proper(tree: UnionTree) -> PropernessReport:
    """Report every edge that is not already created at its endpoints' lca.

    Evaluates the tree bottom-up; a join that adds a pair lying on the same
    side of the current node is an edge missing from the subtree at the
    pair's lca.
    """
    n = tree.n
    names = tree.vertices
    first, counts = _leaf_ranges(tree)
    adj = np.zeros((n, n), dtype=bool)
    leaf_idx = np.full(tree.n_nodes, -1, dtype=np.int64)
    leaf_idx[tree.leaf_nodes] = np.arange(n)
    left, right = tree.left.tolist(), tree.right.tolist()
    found: list[tuple[int, int]] = []
    out: dict[int, dict] = {}
    for x in range(tree.n_nodes):
        if left[x] < 0:
            out[x] = {int(tree.label[x]): [int(leaf_idx[x])]}
            continue
        split = int(first[right[x]])
        classes = _merge(out.pop(left[x]), out.pop(right[x]))
        for op in tree.decorators[x]:
            if isinstance(op, Relabel):
                _relabel(classes, op.i, op.j)
                continue
            a, b = classes.get(op.i), classes.get(op.j)
            if not a or not b:
                continue
            ia, ib = np.asarray(a), np.asarray(b)
            block = np.ix_(ia, ib)
            new = ~adj[block]
            same = (ia < split)[:, None] == (ib < split)[None, :]
            bad = np.nonzero(new & same)
            for p, q in zip(ia[bad[0]].tolist(), ib[bad[1]].tolist()):
                found.append((p, q))
            adj[block] = True
            adj[np.ix_(ib, ia)] = True
        out[x] = classes
    violations = []
    parent = tree.parent
    for p, q in found:
        lo_, hi = min(p, q), max(p, q)
        z = int(tree.leaf_nodes[lo_])
        while not (first[z] <= hi < first[z] + counts[z]):
            z = int(parent[z])
        pair = tuple(sorted((names[p], names[q])))
        violations.append((z, pair))
    violations.sort()
    return PropernessReport(not violations, tuple(violations))


def _exit_labels(tree: UnionTree) -> list[int]:
    """Bitmask (bit l-1) of labels present at each node's output."""
    k = tree.k
    left, right = tree.left.tolist(), tree.right.tolist()
    present = [0] * tree.n_nodes
    for x in range(tree.n_nodes):
        if left[x] < 0:
            present[x] = 1 << (int(tree.label[x]) - 1)
            continue
        bits = present[left[x]] | present[right[x]]
        table = tree.action(x)
        mapped = 0
        for lab in range(k):
            if bits >> lab & 1:
                mapped |= 1 << (table[lab] - 1)
        present[x] = mapped
    return present


def make_proper(tree: UnionTree) -> UnionTree:
    """Push every join down to the nodes where its edges must already exist.

    Top-down: for each join eta_{i,j} in d_x, the pre-d_x labels currently
    mapping to i and j are joined at the end of each child's decorator,
    restricted to labels that child actually emits.
    """
    k = tree.k
    present = _exit_labels(tree)
    decs = [list(d) for d in tree.decorators]
    left, right = tree.left.tolist(), tree.right.tolist()
    for x in range(tree.n_nodes - 1, -1, -1):
        if left[x] < 0 or not decs[x]:
            continue
        kids = [c for c in (left[x], right[x]) if left[c] >= 0]
        if not kids:
            continue
        pushed = {c: set() for c in kids}
        cur = list(range(1, k + 1))
        for op in decs[x]:
            if isinstance(op, Relabel):
                for p in range(k):
                    if cur[p] == op.i:
                        cur[p] = op.j
                continue
            pre_i = [p + 1 for p in range(k) if cur[p] == op.i]
            pre_j = [p + 1 for p in range(k) if cur[p] == op.j]
            if not pre_i or not pre_j:
                continue
            for c in kids:
                emits = present[c]
                for p in pre_i:
                    if not emits >> (p - 1) & 1:
                        continue
                    for q in pre_j:
                        if not emits >> (q - 1) & 1:
                            continue
                        key = (min(p, q), max(p, q))
                        if key not in pushed[c]:
                            pushed[c].add(key)
                            decs[c].append(Join(p, q))
    return tree.with_decorators(decs)


def _settled_pairs(decorator, k: int) -> list:
    """Per exit label ``p`` (index p-1): bitmask of exit labels ``q`` that
    ``decorator`` fully joins to ``p``, i.e. by a join that comes after the
    last relabel touching either label."""
    settled = [0] * k
    for op in decorator:
        i, j = op.i - 1, op.j - 1
        if isinstance(op, Relabel):
            keep = ~((1 << i) | (1 << j))
            settled = [m & keep for m in settled]
            settled[i] = settled[j] = 0
        else:
            settled[i] |= 1 << j
            settled[j] |= 1 << i
    return settled


def _bits(mask: int):
    """1-based positions of the set bits of ``mask``."""
    while mask:
        low = mask & -mask
        yield low.bit_length()
        mask ^= low


def joins_settled(tree: UnionTree) -> list[tuple]:
    """Linear-time properness certificate.

    Returns ``(node, child, (p, q))`` for every join at ``node`` that reaches
    two exit classes ``p, q`` of ``child`` which the child's own decorator
    has not already joined in full.  An empty result proves the tree proper;
    a non-empty one only means properness could not be certified this way.
    ``make_proper`` output always certifies.
    """
    k = tree.k
    present = _exit_labels(tree)
    left, right = tree.left.tolist(), tree.right.tolist()
    gaps = []
    settled_cache: dict[int, set] = {}
    for x in range(tree.n_nodes):
        if left[x] < 0 or not tree.decorators[x]:
            continue
        kids = [c for c in (left[x], right[x]) if left[c] >= 0]
        if not kids:
            continue
        members = [1 << p for p in range(k)]  # current label -> pre-labels
        for op in tree.decorators[x]:
            i, j = op.i - 1, op.j - 1
            if isinstance(op, Relabel):
                members[j] |= members[i]
                members[i] = 0
                continue
            for c in kids:
                mi, mj = members[i] & present[c], members[j] & present[c]
                if not mi or not mj:
                    continue
                settled = settled_cache.get(c)
                if settled is None:
                    settled = settled_cache[c] = _settled_pairs(tree.decorators[c], k)
                for p in _bits(mi):
                    missing = mj & ~settled[p - 1]
                    for q in _bits(missing):
                        gaps.append((x, c, (p, q) if p < q else (q, p)))
    return gaps


# --------------------------------------------------------------------------
# label tracing


class LabelTrace:
    """Answers ``label_entering(u, x)``: the label leaf ``u`` carries when
    the decorator of its ancestor ``x`` starts to apply.

    Each leaf's whole root path is traced once, on first query.
    """

    def __init__(self, tree: UnionTree):
        self.tree = tree
        self._paths: dict[int, dict[int, int]] = {}

    def _resolve(self, u) -> int:
        if isinstance(u, str):
            return self.tree.leaf_of(u)
        u = int(u)
        if not self.tree.is_leaf(u):
            raise CWLabelError(f"node {u} is not a leaf")
        return u

    def _path(self, u: int) -> dict[int, int]:
        path = self._paths.get(u)
        if path is None:
            tree = self.tree
            parent = tree.parent
            path = {}
            lab = int(tree.label[u])
            z = int(parent[u])
            while z >= 0:
                path[z] = lab
                lab = tree.action(z)[lab - 1]
                z = int(parent[z])
            self._paths[u] = path
        return path

    def label_entering(self, u, x: int) -> int:
        u = self._resolve(u)
        try:
            return self._path(u)[int(x)]
        except KeyError:
            raise CWLabelError(f"node {x} is not a proper ancestor of leaf {u}") from None

    def label_exiting(self, u, x: int) -> int:
        """Label of ``u`` after ``d_x`` (``x`` may be ``u`` itself)."""
        u = self._resolve(u)
        if int(x) == u:
            return int(self.tree.label[u])
        lab = self.label_entering(u, x)
        return self.tree.action(int(x))[lab - 1]


def trace_labels(tree: UnionTree) -> LabelTrace:
    return LabelTrace(tree)
