"""Probe extension: leaves carry membership masks over w independent sets.

An edge of the underlying graph survives only if its endpoints share no
set, so every set ends up independent.  Labels simply append the mask.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import KExprError
from .kexpr import Create, Graph, KExpr, Union, evaluate, iter_leaves, iter_postorder, mask_width
from .labels import Label, LabelSet, decode, encode
from .union_tree import UnionTree

__all__ = [
    "ProbeInstance",
    "mask_matrix",
    "evaluate_probe",
    "verify_independent_sets",
    "encode_probe",
    "decode_probe",
    "with_masks",
    "random_masks",
]


@dataclass(frozen=True)
class ProbeInstance:
    expr: KExpr
    w: int

    def __post_init__(self):
        if self.w < 1:
            raise KExprError("a probe instance needs w >= 1")
        for leaf in iter_leaves(self.expr):
            if leaf.mask is None or len(leaf.mask) != self.w:
                raise KExprError(f"leaf {leaf.vertex!r} lacks a width-{self.w} mask")

    @classmethod
    def from_expr(cls, expr: KExpr) -> "ProbeInstance":
        return cls(expr, mask_width(expr))


def mask_matrix(expr: KExpr, w: Optional[int] = None) -> np.ndarray:
    """Boolean ``n x w`` membership matrix in leaf order; missing masks are empty."""
    leaves = list(iter_leaves(expr))
    if w is None:
        w = mask_width(expr)
    out = np.zeros((len(leaves), w), dtype=bool)
    for r, leaf in enumerate(leaves):
        if leaf.mask:
            out[r] = [c == "1" for c in leaf.mask]
    return out


def _apply_masks(graph: Graph, masks: np.ndarray) -> Graph:
    m = masks.astype(np.int64)
    clash = (m @ m.T) > 0
    adj = graph.adjacency & ~clash
    adj.setflags(write=False)
    return Graph(graph.vertices, adj, graph.final_labels)


def evaluate_probe(inst: ProbeInstance | KExpr) -> Graph:
    """Underlying graph minus every edge whose endpoints share a set."""
    expr = inst.expr if isinstance(inst, ProbeInstance) else inst
    return _apply_masks(evaluate(expr), mask_matrix(expr))


def verify_independent_sets(inst: ProbeInstance | KExpr, graph: Optional[Graph] = None) -> dict:
    """Brute-force check that each set N_t is independent in the probe graph."""
    expr = inst.expr if isinstance(inst, ProbeInstance) else inst
    if graph is None:
        graph = evaluate_probe(expr)
    masks = mask_matrix(expr)
    sets = []
    for t in range(masks.shape[1]):
        members = np.flatnonzero(masks[:, t])
        inner = graph.adjacency[np.ix_(members, members)]
        bad = [
            (graph.vertices[members[a]], graph.vertices[members[b]])
            for a, b in zip(*np.nonzero(np.triu(inner, 1)))
        ]
        sets.append({"set": t + 1, "size": int(len(members)), "independent": not bad, "edges": bad})
    return {"w": int(masks.shape[1]), "independent": all(s["independent"] for s in sets), "sets": sets}


def encode_probe(tree: UnionTree, check: bool = False) -> LabelSet:
    """Plain labels with each leaf's mask appended; the tree must carry masks."""
    if tree.w < 1:
        raise KExprError("tree has no probe masks (w = 0)")
    return encode(tree, check=check)


def decode_probe(a: Label | bytes, b: Label | bytes) -> int:
    return decode(a, b)


def with_masks(expr: KExpr, masks: dict) -> KExpr:
    """Copy of ``expr`` with leaf masks replaced from ``vertex -> bit string``."""
    stack: list = []
    for node in iter_postorder(expr):
        if isinstance(node, Create):
            stack.append(Create(node.vertex, node.label, masks.get(node.vertex, node.mask)))
        else:
            right = stack.pop()
            stack.append(Union(stack.pop(), right, node.ops))
    return stack.pop()


def random_masks(expr: KExpr, w: int, density: float = 0.25, seed: int = 0) -> KExpr:
    """Attach independent Bernoulli(``density``) masks of width ``w``."""
    rng = random.Random(seed)
    masks = {
        leaf.vertex: "".join("1" if rng.random() < density else "0" for _ in range(w))
        for leaf in iter_leaves(expr)
    }
    return with_masks(expr, masks)
