"""Adjacency labels for bounded clique-width graphs.

Every vertex gets one :class:`LevelRecord` per decomposition level on its
chain.  At a level where two vertices sit in different attachments, the one
with the smaller attachment rank ``t`` (the *shallower* one, ``u``) hangs
off the path at ``p_j`` and the other (``v``) lies below the bottom ``p_b``
of ``u``'s attachment, so ``lca(u, v) = p_j``.  ``u`` stores the set of
labels that ``d_{p_j}`` joins to its class, pulled back through the fixed
relabeling between ``p_b`` and ``p_j``; ``v`` stores its label entering
``d_{p_b}`` for every shallower attachment.  One bit test decides the pair.

Payload layout (little-endian bit order, fields LSB first)::

    header   k:8  w:16  L:8
    level    l:4  chat:k  checkpoints:(l-1)*ceil(log2 k)   (stored value - 1)
    mask     w bits
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, NamedTuple, Optional, Union as TUnion

import numpy as np

from .decomposition import MAX_ATTACHMENTS, Attachment, DecompositionPlan, HeavyPath, _gc_paused, decompose
from .exceptions import FormatError, LabelError, NotProperError
from .kexpr import Relabel
from .union_tree import RelabelMap, UnionTree, check_proper

__all__ = [
    "CWL_MAGIC",
    "LevelRecord",
    "Label",
    "LabelSet",
    "compute_C",
    "compute_psi",
    "build_level_records",
    "encode",
    "decode",
    "decode_all",
    "pack",
    "unpack",
    "label_bits",
    "size_bound",
    "label_stats",
    "write_cwl",
    "read_cwl",
]

HEADER_BITS = 32
RANK_BITS = 4
RESERVED_RANK = 15


def checkpoint_bits(k: int) -> int:
    """ceil(log2 k)."""
    return (k - 1).bit_length()


class LevelRecord(NamedTuple):
    rank: int
    chat: int  # bit l-1 set iff label l is in the pulled-back join set
    checkpoints: tuple = ()

    def chat_set(self) -> frozenset:
        return frozenset(i + 1 for i in range(self.chat.bit_length()) if self.chat >> i & 1)


class Label(NamedTuple):
    k: int
    w: int
    levels: tuple
    mask: int = 0

    @property
    def bits(self) -> int:
        return label_bits(self)


@dataclass
class LabelSet:
    k: int
    w: int
    labels: dict  # vertex -> Label, in leaf order
    plan_stats: Optional[dict] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.labels)

    def __getitem__(self, vertex: str) -> Label:
        return self.labels[vertex]

    def vertices(self) -> list:
        return list(self.labels)

    def payloads(self) -> dict:
        return {v: pack(lab) for v, lab in self.labels.items()}


# --------------------------------------------------------------------------
# local adjacency information


def _joined_to(ops, c: int, k: int) -> int:
    """Bitmask of entering labels that ``ops`` joins to the class of entering
    label ``c``.  Tracks, for every current label, the entering labels that
    have merged into it."""
    members = [1 << p for p in range(k)]
    u = c - 1
    found = 0
    for op in ops:
        i, j = op.i - 1, op.j - 1
        if isinstance(op, Relabel):
            members[j] |= members[i]
            members[i] = 0
            if u == i:
                u = j
        elif u == i:
            found |= members[j]
        elif u == j:
            found |= members[i]
    return found


def compute_C(decorator, c_enter: int, k: Optional[int] = None) -> frozenset:
    """Labels (as they enter ``decorator``) whose vertices get joined to a
    vertex entering with label ``c_enter``."""
    ops = tuple(decorator)
    if k is None:
        k = max([c_enter] + [max(op.i, op.j) for op in ops])
    bits = _joined_to(ops, c_enter, k)
    return frozenset(p + 1 for p in range(k) if bits >> p & 1)


def _psi_tables(tree: UnionTree, path: HeavyPath, att: Attachment) -> dict:
    """Position j -> table of the map from labels entering ``d_{p_end}``
    to labels entering ``d_{p_j}``."""
    k = tree.k
    table = tuple(range(1, k + 1))
    tables = {att.end: table}
    for j in range(att.end - 1, att.start - 1, -1):
        step = tree.actions[path.nodes[j + 1]]
        if step is not None:
            table = tuple(step[x - 1] for x in table)
        tables[j] = table
    return tables


def compute_psi(tree: UnionTree, path: HeavyPath, att: Attachment, j: int) -> RelabelMap:
    if not att.start <= j <= att.end:
        raise ValueError(f"position {j} outside attachment range [{att.start}, {att.end}]")
    return RelabelMap(_psi_tables(tree, path, att)[j])


# --------------------------------------------------------------------------
# encoder


def _level_records(plan: DecompositionPlan, join_cache: dict):
    """Level records for every leaf of one plan level, in leaf order.

    ``join_cache`` maps ``(id(decorator), c)`` to ``(decorator, joined)``;
    the decorator is kept alive so its id stays unique.
    """
    tree, path, atts = plan.tree, plan.path, plan.attachments
    k = tree.k
    nodes = path.nodes
    L = path.length
    n = tree.n

    att_at = [0] * (L + 1)
    bottom_rank = {}
    for t, att in enumerate(atts):
        for j in range(att.start, att.end + 1):
            att_at[j] = t
        if att.end < L:
            bottom_rank[nodes[att.end]] = t
    on_path = {x: j for j, x in enumerate(nodes[:-1])}

    c_enter = [0] * n
    position = [L] * n
    width = len(atts) - 1
    cps = [0] * (n * width)

    left, right = tree.left.tolist(), tree.right.tolist()
    labels = tree.label.tolist()
    actions = tree.actions
    stack: list = []  # postorder: the last two entries are x's children
    leaf_no = 0
    for x in range(tree.n_nodes):
        lx = left[x]
        if lx < 0:
            stack.append({labels[x]: [leaf_no]})
            leaf_no += 1
            continue
        b = stack.pop()
        a = stack.pop()
        j = on_path.get(x)
        if j is not None:
            bush_cls, path_cls = (b, a) if lx == nodes[j + 1] else (a, b)
            for lab, members in bush_cls.items():
                for v in members:
                    c_enter[v] = lab
                    position[v] = j
            t = bottom_rank.get(x)
            if t is not None:
                for lab, members in path_cls.items():
                    for v in members:
                        cps[v * width + t] = lab
        # merge the smaller class dict into the larger, then relabel
        if len(a) < len(b):
            a, b = b, a
        for lab, members in b.items():
            mine = a.get(lab)
            if mine is None:
                a[lab] = members
            elif len(mine) >= len(members):
                mine.extend(members)
            else:
                members.extend(mine)
                a[lab] = members
        table = actions[x]
        if table is not None:
            a = _apply_table(a, table)
        stack.append(a)

    psi = {}
    for att in atts:
        psi.update(_psi_tables(tree, path, att))
    chat_cache: dict = {}
    decorators = tree.decorators
    records = []
    for v in range(n):
        j = position[v]
        t = att_at[j]
        if j == L:
            chat = 0
        else:
            key = (j, c_enter[v])
            chat = chat_cache.get(key)
            if chat is None:
                d = decorators[nodes[j]]
                ck = (id(d), c_enter[v])
                cached = join_cache.get(ck)
                if cached is None:
                    cached = join_cache[ck] = (d, _joined_to(d, c_enter[v], k))
                joined = cached[1]
                table = psi[j]
                chat = 0
                for lam in range(k):
                    if joined >> (table[lam] - 1) & 1:
                        chat |= 1 << lam
                chat_cache[key] = chat
        records.append(LevelRecord(t + 1, chat, tuple(cps[v * width : v * width + t])))
    return records


def build_level_records(plan: DecompositionPlan) -> dict:
    """Vertex -> its record at the top level of ``plan``."""
    lt = plan.tree
    if not plan.attachments:
        return {}
    recs = _level_records(plan, {})
    return {lt.vertex[x]: rec for x, rec in zip(lt.leaf_nodes.tolist(), recs)}


def _apply_table(classes: dict, table: tuple) -> dict:
    moved = {}
    for lab, members in classes.items():
        img = table[lab - 1]
        mine = moved.get(img)
        if mine is None:
            moved[img] = members
        elif len(mine) >= len(members):
            mine.extend(members)
        else:
            members.extend(mine)
            moved[img] = members
    return moved


def _mask_int(bits: Optional[str]) -> int:
    if not bits:
        return 0
    return sum(1 << t for t, ch in enumerate(bits) if ch == "1")


def encode(tree: UnionTree, check: bool = False, plan: Optional[DecompositionPlan] = None) -> LabelSet:
    """Labels for every vertex of a proper union tree.

    The caller guarantees properness; ``check=True`` verifies it first.
    """
    if check and not check_proper(tree).proper:
        raise NotProperError("union tree is not proper; run make_proper (or `properize`) first")
    if tree.k > 255:
        raise LabelError(f"k={tree.k} does not fit the 8-bit header field")
    if tree.w > 0xFFFF:
        raise LabelError(f"w={tree.w} does not fit the 16-bit header field")
    if plan is None:
        plan = decompose(tree)
    with _gc_paused():
        records: dict[str, list] = {tree.vertex[x]: [] for x in tree.leaf_nodes.tolist()}
        join_cache: dict = {}
        for _, level in plan.levels():
            if len(level.attachments) > MAX_ATTACHMENTS:
                raise LabelError("attachment count exceeds the 4-bit rank field")
            lt = level.tree
            for x, rec in zip(lt.leaf_nodes.tolist(), _level_records(level, join_cache)):
                records[lt.vertex[x]].append(rec)
        labels = {}
        for x in tree.leaf_nodes.tolist():
            v = tree.vertex[x]
            labels[v] = Label(tree.k, tree.w, tuple(records[v]), _mask_int(tree.mask[x]))
    return LabelSet(tree.k, tree.w, labels, plan.stats())


# --------------------------------------------------------------------------
# decoders


def _decode_labels(a: Label, b: Label) -> int:
    if (a.k, a.w) != (b.k, b.w):
        raise LabelError(f"label headers differ: k={a.k},w={a.w} vs k={b.k},w={b.w}")
    for ra, rb in zip(a.levels, b.levels):
        if ra.rank == rb.rank:
            continue
        if ra.rank > rb.rank:
            ra, rb = rb, ra
        base = ra.chat >> (rb.checkpoints[ra.rank - 1] - 1) & 1
        if a.w and base:
            return int(a.mask & b.mask == 0)
        return base
    raise LabelError("indistinguishable labels")


def _decode_payloads(a: bytes, b: bytes) -> int:
    x = int.from_bytes(a, "little")
    y = int.from_bytes(b, "little")
    k = x & 0xFF
    w = x >> 8 & 0xFFFF
    if k != y & 0xFF or w != y >> 8 & 0xFFFF:
        raise LabelError("label headers differ")
    cb = (k - 1).bit_length()
    levels_x, levels_y = x >> 24 & 0xFF, y >> 24 & 0xFF
    px = py = HEADER_BITS
    for _ in range(min(levels_x, levels_y)):
        lx = x >> px & 15
        ly = y >> py & 15
        if lx != ly:
            if lx < ly:
                cp = y >> (py + 4 + k + (lx - 1) * cb) & ((1 << cb) - 1)
                base = x >> (px + 4 + cp) & 1
            else:
                cp = x >> (px + 4 + k + (ly - 1) * cb) & ((1 << cb) - 1)
                base = y >> (py + 4 + cp) & 1
            if w and base:
                return int(_mask_of(x) & _mask_of(y) == 0)
            return base
        px += 4 + k + (lx - 1) * cb
        py += 4 + k + (ly - 1) * cb
    raise LabelError("indistinguishable labels")


def _mask_of(x: int) -> int:
    k = x & 0xFF
    w = x >> 8 & 0xFFFF
    cb = (k - 1).bit_length()
    pos = HEADER_BITS
    for _ in range(x >> 24 & 0xFF):
        pos += 4 + k + ((x >> pos & 15) - 1) * cb
    return x >> pos & ((1 << w) - 1)


def decode(a: TUnion[Label, bytes], b: TUnion[Label, bytes]) -> int:
    """Adjacency (1/0) of two vertices from their labels alone.

    Accepts two :class:`Label` objects or two packed payloads.
    """
    if isinstance(a, Label) and isinstance(b, Label):
        return _decode_labels(a, b)
    if isinstance(a, (bytes, bytearray)) and isinstance(b, (bytes, bytearray)):
        return _decode_payloads(a, b)
    raise TypeError("decode takes two Labels or two payloads")


_SMALL_GROUP = 24


def decode_all(labels: list) -> np.ndarray:
    """All-pairs decode as a boolean matrix, ordered like ``labels``.

    Vertices are sorted by their rank sequences, which makes every group
    sharing a rank prefix a contiguous block.  Within a group, each pair of
    rank blocks is settled by one gather, exactly as ``decode`` would settle
    each pair at its first differing level.
    """
    n = len(labels)
    if n == 0:
        return np.zeros((0, 0), dtype=bool)
    k, w = labels[0].k, labels[0].w
    if any((lab.k, lab.w) != (k, w) for lab in labels):
        raise LabelError("label headers differ")
    depth = max(1, max(len(lab.levels) for lab in labels))
    rank = np.zeros((n, depth), dtype=np.int64)
    chat = np.zeros((n, depth, k), dtype=bool)
    cps = np.zeros((n, depth, MAX_ATTACHMENTS - 1), dtype=np.int64)
    bit_index = np.arange(k)
    for v, lab in enumerate(labels):
        for i, rec in enumerate(lab.levels):
            rank[v, i] = rec.rank
            chat[v, i] = (rec.chat >> bit_index) & 1
            if rec.checkpoints:
                cps[v, i, : len(rec.checkpoints)] = rec.checkpoints
    order = np.lexsort(rank.T[::-1])
    rank, chat, cps = rank[order], chat[order], cps[order]
    rank_l = rank.tolist()
    sorted_labels = [labels[v] for v in order.tolist()]
    out = np.zeros((n, n), dtype=bool)
    stack = [(0, n, 0)]
    while stack:
        s, e, i = stack.pop()
        if e - s < 2:
            continue
        if i >= depth or rank_l[s][i] == 0:
            raise LabelError("indistinguishable labels")
        cuts = [s] + (np.flatnonzero(np.diff(rank[s:e, i])) + 1 + s).tolist() + [e]
        blocks = list(zip(cuts, cuts[1:]))
        if e - s <= _SMALL_GROUP:
            for u in range(s, e):
                ru = rank_l[u][i]
                chat_u = sorted_labels[u].levels[i].chat
                for v in range(u + 1, e):
                    if rank_l[v][i] > ru and chat_u >> (sorted_labels[v].levels[i].checkpoints[ru - 1] - 1) & 1:
                        out[u, v] = out[v, u] = True
        else:
            for t, (a0, a1) in enumerate(blocks):
                ra = rank_l[a0][i]
                for b0, b1 in blocks[t + 1 :]:
                    blk = chat[a0:a1, i][:, cps[b0:b1, i, ra - 1] - 1]
                    out[a0:a1, b0:b1] = blk
                    out[b0:b1, a0:a1] = blk.T
        stack.extend((a0, a1, i + 1) for a0, a1 in blocks)
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n)
    result = out[np.ix_(pos, pos)]
    if w:
        masks = np.array([[lab.mask >> t & 1 for t in range(w)] for lab in labels], dtype=np.int64)
        result &= (masks @ masks.T) == 0
    return result


# --------------------------------------------------------------------------
# bit format


def label_bits(label: Label) -> int:
    """Unpadded payload length in bits."""
    cb = checkpoint_bits(label.k)
    return HEADER_BITS + sum(RANK_BITS + label.k + (r.rank - 1) * cb for r in label.levels) + label.w


def size_bound(n: int, k: int, w: int = 0) -> int:
    """32 + floor(log2 n) * (4 + k + 13 ceil(log2 k)) + w."""
    depth = max(n, 1).bit_length() - 1
    return HEADER_BITS + depth * (RANK_BITS + k + (MAX_ATTACHMENTS - 1) * checkpoint_bits(k)) + w


def pack(label: Label) -> bytes:
    k, w = label.k, label.w
    if not 1 <= k <= 255 or not 0 <= w <= 0xFFFF or len(label.levels) > 255:
        raise LabelError("label header out of range")
    cb = checkpoint_bits(k)
    value = k | w << 8 | len(label.levels) << 24
    pos = HEADER_BITS
    for rec in label.levels:
        if not 1 <= rec.rank <= MAX_ATTACHMENTS or len(rec.checkpoints) != rec.rank - 1:
            raise LabelError(f"malformed level record {rec}")
        if rec.chat >> k:
            raise LabelError("join set mentions a label above k")
        value |= rec.rank << pos
        pos += RANK_BITS
        value |= rec.chat << pos
        pos += k
        for c in rec.checkpoints:
            if not 1 <= c <= k:
                raise LabelError(f"checkpoint label {c} outside [1, {k}]")
            value |= (c - 1) << pos
            pos += cb
    if label.mask >> w:
        raise LabelError("mask wider than w")
    value |= label.mask << pos
    pos += w
    return value.to_bytes((pos + 7) // 8, "little")


def unpack(payload: bytes, bit_length: Optional[int] = None) -> Label:
    available = len(payload) * 8 if bit_length is None else bit_length
    if bit_length is not None and bit_length > len(payload) * 8:
        raise LabelError("truncated payload")
    value = int.from_bytes(payload, "little")

    def need(pos, width):
        if pos + width > available:
            raise LabelError("truncated payload")

    need(0, HEADER_BITS)
    k = value & 0xFF
    w = value >> 8 & 0xFFFF
    count = value >> 24 & 0xFF
    if k < 1:
        raise LabelError("k must be >= 1")
    cb = checkpoint_bits(k)
    pos = HEADER_BITS
    levels = []
    for _ in range(count):
        need(pos, RANK_BITS + k)
        rank = value >> pos & 15
        if rank == RESERVED_RANK:
            raise LabelError("reserved rank value 15")
        if rank == 0:
            raise LabelError("rank 0 is invalid")
        pos += RANK_BITS
        chat = value >> pos & ((1 << k) - 1)
        pos += k
        need(pos, (rank - 1) * cb)
        cps = []
        for _ in range(rank - 1):
            stored = value >> pos & ((1 << cb) - 1)
            if stored >= k:
                raise LabelError(f"checkpoint field {stored} >= k={k}")
            cps.append(stored + 1)
            pos += cb
        levels.append(LevelRecord(rank, chat, tuple(cps)))
    need(pos, w)
    mask = value >> pos & ((1 << w) - 1)
    return Label(k, w, tuple(levels), mask)


def label_stats(ls: LabelSet) -> dict:
    bits = [label_bits(lab) for lab in ls.labels.values()]
    depth = max((len(lab.levels) for lab in ls.labels.values()), default=0)
    if ls.plan_stats is not None:
        max_att = ls.plan_stats["max_attachments"]
    else:
        max_att = max((r.rank for lab in ls.labels.values() for r in lab.levels), default=0)
    return {
        "n": ls.n,
        "k": ls.k,
        "w": ls.w,
        "max_bits": max(bits, default=0),
        "mean_bits": float(np.mean(bits)) if bits else 0.0,
        "max_depth": depth,
        "max_attachments": max_att,
        "bound_bits": size_bound(ls.n, ls.k, ls.w),
    }


# --------------------------------------------------------------------------
# .cwl files

CWL_MAGIC = b"CWL1"


def write_cwl(ls: LabelSet, fh: BinaryIO) -> None:
    fh.write(CWL_MAGIC + struct.pack("<HHI", ls.k, ls.w, ls.n))
    for vertex, lab in ls.labels.items():
        name = vertex.encode("utf-8")
        payload = pack(lab)
        fh.write(struct.pack("<H", len(name)) + name)
        fh.write(struct.pack("<H", label_bits(lab)) + payload)


def _read_exact(fh: BinaryIO, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise FormatError("unexpected end of .cwl file")
    return data


def read_cwl(fh: BinaryIO) -> tuple[LabelSet, dict]:
    """Returns the label set and the raw payload of each vertex."""
    if _read_exact(fh, 4) != CWL_MAGIC:
        raise FormatError("not a .cwl file (bad magic)")
    k, w, n = struct.unpack("<HHI", _read_exact(fh, 8))
    labels, payloads = {}, {}
    for _ in range(n):
        (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, name_len).decode("utf-8")
        (bits,) = struct.unpack("<H", _read_exact(fh, 2))
        payload = _read_exact(fh, (bits + 7) // 8)
        try:
            lab = unpack(payload, bits)
        except LabelError as exc:
            raise FormatError(f"vertex {name!r}: {exc}") from None
        if (lab.k, lab.w) != (k, w):
            raise FormatError(f"vertex {name!r}: header disagrees with file header")
        if name in labels:
            raise FormatError(f"duplicate vertex {name!r}")
        labels[name] = lab
        payloads[name] = payload
    if fh.read(1):
        raise FormatError("trailing bytes after last label")
    return LabelSet(k, w, labels), payloads
