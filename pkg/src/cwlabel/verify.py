"""Brute-force oracle and the end-to-end verification harness."""
from __future__ import annotations

import itertools
import json
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .decomposition import LARGE, MAX_ATTACHMENTS, DecompositionPlan, bush_of, decompose
from .kexpr import Join, KExpr, evaluate, gen_cotree, gen_random, vertices_of
from .labels import Label, LabelSet, LevelRecord, decode, decode_all, encode, label_bits, label_stats, pack, size_bound, unpack
from .probe import evaluate_probe, mask_matrix, random_masks
from .union_tree import UnionTree, check_proper, from_kexpression, make_proper

__all__ = [
    "DENSE_LIMIT",
    "ALL_PAIRS_LIMIT",
    "Oracle",
    "oracle",
    "VerificationReport",
    "verify_instance",
    "flip_chat_bit",
    "affected_pairs",
    "check_plan",
    "instance_seed",
    "make_instance",
    "run_suite",
    "DEFAULT_GRID",
]

DENSE_LIMIT = 8192
ALL_PAIRS_LIMIT = 4096
SAMPLED_PAIRS = 10**6


class Oracle:
    """Adjacency predicate of an expression, probe masks included.

    Up to ``DENSE_LIMIT`` vertices the graph is materialised and lookups are
    O(1).  Beyond that each query walks both leaves to the root and replays
    the decorators from their lca upward.
    """

    def __init__(self, expr: KExpr, dense_limit: int = DENSE_LIMIT):
        self.vertices = tuple(vertices_of(expr))
        self.index = {v: i for i, v in enumerate(self.vertices)}
        self.n = len(self.vertices)
        self.masks = mask_matrix(expr)
        self.graph = None
        self._tree = None
        if self.n <= dense_limit:
            self.graph = evaluate_probe(expr) if self.masks.shape[1] else evaluate(expr)
        else:
            self._tree = from_kexpression(expr)
            self._leaves = self._tree.leaf_nodes.tolist()
            self._mask_ints = [int("".join("1" if b else "0" for b in row) or "0", 2) for row in self.masks]

    @property
    def dense(self) -> bool:
        return self.graph is not None

    def matrix(self) -> np.ndarray:
        if self.graph is None:
            raise ValueError("graph too large for a dense matrix")
        return self.graph.adjacency

    def __call__(self, u, v) -> bool:
        a = self.index[u] if isinstance(u, str) else int(u)
        b = self.index[v] if isinstance(v, str) else int(v)
        if a == b:
            return False
        if self.graph is not None:
            return bool(self.graph.adjacency[a, b])
        if self._mask_ints[a] & self._mask_ints[b]:
            return False
        return self._walk(self._leaves[a], self._leaves[b])

    def _entering(self, leaf: int, top: int) -> int:
        tree, parent = self._tree, self._tree.parent
        lab = int(tree.label[leaf])
        z = int(parent[leaf])
        while z != top:
            lab = tree.action(z)[lab - 1]
            z = int(parent[z])
        return lab

    def _walk(self, x: int, y: int) -> bool:
        tree, parent = self._tree, self._tree.parent
        z = x
        while not tree.lo(z) <= y <= z:
            z = int(parent[z])
        lx, ly = self._entering(x, z), self._entering(y, z)
        while z >= 0:
            for op in tree.decorators[z]:
                if isinstance(op, Join):
                    if (lx, ly) == (op.i, op.j) or (lx, ly) == (op.j, op.i):
                        return True
                else:
                    if lx == op.i:
                        lx = op.j
                    if ly == op.i:
                        ly = op.j
            z = int(parent[z])
        return False


def oracle(expr: KExpr) -> Oracle:
    return Oracle(expr)


@dataclass
class VerificationReport:
    instance: str
    n: int
    k: int
    w: int
    pairs_checked: int = 0
    mismatches: list = field(default_factory=list)
    invariant_failures: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.mismatches and not self.invariant_failures

    def as_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, **kw)


# --------------------------------------------------------------------------
# invariants


def check_plan(plan: DecompositionPlan, n: int, extracted_limit: int = 0) -> list[str]:
    """Structural invariants of a decomposition; returns failure messages.

    Extracted attachment trees with at most ``extracted_limit`` leaves are
    additionally checked for properness (quadratic, so off by default).
    """
    failures = []
    bound = int(math.log2(n)) if n > 1 else 0
    if plan.depth > bound:
        failures.append(f"depth {plan.depth} exceeds floor(log2 n) = {bound}")
    for lev, level in plan.levels():
        tree, path, atts = level.tree, level.path, level.attachments
        m = tree.n
        half, quarter = m // 2, (m + 3) // 4
        where = f"level {lev} (n={m})"
        for j in range(path.length):
            s = tree.leaf_count(bush_of(tree, path, j))
            if s > half:
                failures.append(f"{where}: off-path component of {s} leaves > {half}")
        if len(atts) > MAX_ATTACHMENTS:
            failures.append(f"{where}: {len(atts)} attachments")
        covered = 0
        prev_end = -1
        for att in atts:
            covered += att.leaf_count
            if att.leaf_count > half:
                failures.append(f"{where}: attachment {att.rank} has {att.leaf_count} leaves > {half}")
            if att.kind == LARGE and att.leaf_count < quarter:
                failures.append(f"{where}: large attachment {att.rank} below {quarter} leaves")
            if att.start <= prev_end or att.end < att.start:
                failures.append(f"{where}: attachment {att.rank} range out of order")
            prev_end = att.end
        if covered != m:
            failures.append(f"{where}: attachments cover {covered} of {m} leaves")
        for child in level.children:
            if child is None or child.tree.n > extracted_limit:
                continue
            report = check_proper(child.tree)
            if not report.proper:
                failures.append(f"{where}: extracted tree not proper at node {report.violations[0][0]}")
    return failures


def _label_failures(ls: LabelSet, n: int) -> list[str]:
    failures = []
    bound = size_bound(n, ls.k, ls.w)
    depth_cap = int(math.log2(n)) if n > 1 else 0
    for v, lab in ls.labels.items():
        bits = label_bits(lab)
        if bits > bound:
            failures.append(f"label {v}: {bits} bits > bound {bound}")
        if len(lab.levels) > depth_cap:
            failures.append(f"label {v}: {len(lab.levels)} levels > {depth_cap}")
        payload = pack(lab)
        if unpack(payload, bits) != lab:
            failures.append(f"label {v}: pack/unpack round trip differs")
    return failures


# --------------------------------------------------------------------------
# fault injection


def flip_chat_bit(label: Label, level: int, bit: int) -> Label:
    """Copy of ``label`` with bit ``bit`` of the chat set at ``level`` toggled."""
    levels = list(label.levels)
    rec = levels[level]
    levels[level] = LevelRecord(rec.rank, rec.chat ^ (1 << bit), rec.checkpoints)
    return label._replace(levels=tuple(levels))


def affected_pairs(ls: LabelSet, vertex: str, level: int, bit: int) -> set:
    """Pairs whose decode reads exactly the given chat bit of ``vertex``,
    each ordered as the vertices are."""
    order = {v: i for i, v in enumerate(ls.labels)}
    mine = ls.labels[vertex]
    prefix = [r.rank for r in mine.levels[:level]]
    rank = mine.levels[level].rank
    out = set()
    for other, lab in ls.labels.items():
        if other == vertex or len(lab.levels) <= level:
            continue
        if [r.rank for r in lab.levels[:level]] != prefix:
            continue
        rec = lab.levels[level]
        if rec.rank > rank and rec.checkpoints[rank - 1] - 1 == bit:
            if ls.w and mine.mask & lab.mask:
                continue
            out.add((vertex, other) if order[vertex] < order[other] else (other, vertex))
    return out


# --------------------------------------------------------------------------
# single instance


def _pairs(n: int, rng: random.Random, limit: int) -> list:
    if n * (n - 1) // 2 <= limit:
        return list(itertools.combinations(range(n), 2))
    out = []
    while len(out) < limit:
        a, b = rng.randrange(n), rng.randrange(n)
        if a != b:
            out.append((a, b) if a < b else (b, a))
    return out


def verify_instance(
    expr: KExpr,
    k: Optional[int] = None,
    name: str = "instance",
    fault: Optional[tuple] = None,
    all_pairs_limit: int = ALL_PAIRS_LIMIT,
    sampled_pairs: int = SAMPLED_PAIRS,
    extracted_limit: int = 256,
    seed: int = 0,
) -> VerificationReport:
    """Properize, encode, decode every pair (or a sample) and compare with
    the oracle; also run the structural and size invariants.

    ``fault = (vertex, level, bit)`` flips one chat bit after encoding, so
    the report should list exactly the pairs that read it.  Extracted
    attachment trees are checked for properness only when ``n`` is at most
    ``extracted_limit``.
    """
    tree = from_kexpression(expr, k=k)
    n = tree.n
    report = VerificationReport(name, n, tree.k, tree.w)
    fixed = make_proper(tree)
    plan = decompose(fixed)
    ls = encode(fixed, plan=plan)
    if fault is not None:
        v, level, bit = fault
        ls.labels[v] = flip_chat_bit(ls.labels[v], level, bit)
    report.stats = label_stats(ls)
    report.invariant_failures.extend(check_plan(plan, n, n if n <= extracted_limit else 0))
    names = list(ls.labels)
    truth = Oracle(expr)
    if names != list(truth.vertices):
        report.invariant_failures.append("label order differs from vertex order")
        return report
    rng = random.Random(seed)
    if n <= all_pairs_limit:
        got = decode_all([ls.labels[v] for v in names])
        want = truth.matrix()
        us, vs = np.nonzero(np.triu(got != want, 1))
        report.pairs_checked = n * (n - 1) // 2
        for a, b in zip(us.tolist(), vs.tolist()):
            report.mismatches.append([names[a], names[b], int(want[a, b]), int(got[a, b])])
        # the batch decoder must agree with the two-payload decoder
        payloads = [pack(ls.labels[v]) for v in names]
        for a, b in _pairs(n, rng, 200):
            if decode(payloads[a], payloads[b]) != got[a, b]:
                report.invariant_failures.append(f"scalar and batch decode disagree on {names[a]},{names[b]}")
                break
    else:
        labs = [ls.labels[v] for v in names]
        sample = _pairs(n, rng, sampled_pairs)
        report.pairs_checked = len(sample)
        for a, b in sample:
            got, want = decode(labs[a], labs[b]), truth(a, b)
            if got != want:
                report.mismatches.append([names[a], names[b], int(want), int(got)])
    report.mismatches.sort()
    report.invariant_failures.extend(_label_failures(ls, n))
    return report


# --------------------------------------------------------------------------
# suites

DEFAULT_GRID = {
    "family": "random",
    "n": [2, 3, 4, 8, 16, 64, 256, 1024, 4096],
    "k": [2, 3, 4, 8],
    "w": [0],
    "trials": 50,
    "seed": 0,
    "p_join": 0.3,
    "p_relabel": 0.2,
}


def instance_seed(seed: int, *key) -> int:
    """Stable per-instance seed (string seeding hashes with SHA-512)."""
    return random.Random(":".join(str(x) for x in (seed,) + key)).getrandbits(32)


def make_instance(family: str, n: int, k: int, w: int, seed: int, p_join: float = 0.3, p_relabel: float = 0.2) -> KExpr:
    if family == "cotree":
        expr = gen_cotree(n, seed)
    elif family == "random":
        expr = gen_random(n, k, p_join, p_relabel, seed)
    else:
        raise ValueError(f"unknown instance family {family!r}")
    if w:
        expr = random_masks(expr, w, seed=seed)
    return expr


def run_suite(grid: Optional[dict] = None, **verify_kw) -> dict:
    """Deterministic sweep over ``n x k x w x trials``; passes iff every
    instance passes.  Timing is deliberately left out so equal grids give
    byte-identical reports."""
    g = dict(DEFAULT_GRID)
    if grid:
        g.update(grid)
    family = g["family"]
    ks = [2] if family == "cotree" else g["k"]
    out = {"grid": g, "instances": 0, "passed": 0, "pairs_checked": 0, "mismatches": 0, "max_depth": 0,
           "max_attachments": 0, "max_bits_over_bound": 0.0, "failures": []}
    for n, k, w in itertools.product(g["n"], ks, g["w"]):
        for t in range(g["trials"]):
            s = instance_seed(g["seed"], family, n, k, w, t)
            expr = make_instance(family, n, k, w, s, g["p_join"], g["p_relabel"])
            rep = verify_instance(expr, k=k, name=f"{family}-n{n}-k{k}-w{w}-t{t}", seed=s, **verify_kw)
            out["instances"] += 1
            out["pairs_checked"] += rep.pairs_checked
            out["mismatches"] += len(rep.mismatches)
            out["max_depth"] = max(out["max_depth"], rep.stats["max_depth"])
            out["max_attachments"] = max(out["max_attachments"], rep.stats["max_attachments"])
            ratio = rep.stats["max_bits"] / rep.stats["bound_bits"]
            out["max_bits_over_bound"] = max(out["max_bits_over_bound"], round(ratio, 6))
            if rep.passed:
                out["passed"] += 1
            else:
                out["failures"].append(rep.as_dict())
    out["ok"] = out["passed"] == out["instances"]
    return out
