"""k-expressions: AST, the ``.kx`` text format, evaluation and random generators.

The evaluator is the brute-force ground truth used by every verification
path, so it deliberately shares no code with the labeling machinery.

All traversals are iterative; expressions built from caterpillar-shaped
union trees nest as deep as they have vertices.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union as TUnion

import numpy as np

from .exceptions import KExprError, ParseError

__all__ = [
    "Join",
    "Relabel",
    "Create",
    "Union",
    "Graph",
    "parse_kexpression",
    "render_kexpression",
    "evaluate",
    "width_used",
    "vertices_of",
    "mask_width",
    "gen_random",
    "gen_cotree",
    "format_edges",
    "iter_postorder",
]


@dataclass(frozen=True)
class Join:
    """eta_{i,j}: connect every label-i vertex to every label-j vertex."""

    i: int
    j: int

    def __post_init__(self):
        _check_op(self, "join")


@dataclass(frozen=True)
class Relabel:
    """rho_{i->j}: every label-i vertex gets label j."""

    i: int
    j: int

    def __post_init__(self):
        _check_op(self, "relabel")


DecoratorOp = TUnion[Join, Relabel]


def _check_op(op, kind):
    if not (isinstance(op.i, int) and isinstance(op.j, int)):
        raise KExprError(f"{kind} labels must be integers")
    if op.i < 1 or op.j < 1:
        raise KExprError(f"{kind} labels must be >= 1, got {op.i},{op.j}")
    if op.i == op.j:
        raise KExprError(f"{kind} with identical labels {op.i},{op.j}")


@dataclass(frozen=True)
class Create:
    vertex: str
    label: int
    mask: Optional[str] = None

    def __post_init__(self):
        if not self.vertex or _BAD_IDENT.search(self.vertex):
            raise KExprError(f"invalid vertex identifier {self.vertex!r}")
        if not isinstance(self.label, int) or self.label < 1:
            raise KExprError(f"vertex {self.vertex}: label must be >= 1")
        if self.mask is not None and not re.fullmatch(r"[01]+", self.mask):
            raise KExprError(f"vertex {self.vertex}: mask must be a non-empty bit string")


@dataclass(frozen=True, eq=False, repr=False)
class Union:
    left: "KExpr"
    right: "KExpr"
    ops: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        for op in self.ops:
            if not isinstance(op, (Join, Relabel)):
                raise KExprError(f"not a decorator op: {op!r}")

    def __eq__(self, other):
        if not isinstance(other, Union):
            return NotImplemented
        stack = [(self, other)]
        while stack:
            a, b = stack.pop()
            if isinstance(a, Union) and isinstance(b, Union):
                if a.ops != b.ops:
                    return False
                stack.append((a.left, b.left))
                stack.append((a.right, b.right))
            elif a != b:
                return False
        return True

    def __hash__(self):
        return hash(render_kexpression(self))

    def __repr__(self):
        n = sum(1 for _ in iter_leaves(self))
        return f"Union(<{n} leaves>, ops={list(self.ops)!r})"


KExpr = TUnion[Create, Union]


def iter_postorder(expr: KExpr) -> Iterator[KExpr]:
    """Yield nodes children-first, left before right."""
    stack = [(expr, False)]
    while stack:
        node, expanded = stack.pop()
        if isinstance(node, Create) or expanded:
            yield node
        else:
            stack.append((node, True))
            stack.append((node.right, False))
            stack.append((node.left, False))


def iter_leaves(expr: KExpr) -> Iterator[Create]:
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Create):
            yield node
        else:
            stack.append(node.right)
            stack.append(node.left)


def vertices_of(expr: KExpr) -> list[str]:
    """Vertex identifiers in left-to-right leaf order."""
    return [leaf.vertex for leaf in iter_leaves(expr)]


def width_used(expr: KExpr) -> int:
    """Largest label mentioned anywhere in the expression."""
    best = 0
    for node in iter_postorder(expr):
        if isinstance(node, Create):
            best = max(best, node.label)
        else:
            for op in node.ops:
                best = max(best, op.i, op.j)
    return best


def mask_width(expr: KExpr) -> int:
    """Common probe-mask width, 0 when the leaves carry no masks."""
    widths = {len(leaf.mask) if leaf.mask is not None else 0 for leaf in iter_leaves(expr)}
    if len(widths) > 1:
        raise KExprError(f"inconsistent mask widths {sorted(widths)}")
    return widths.pop()


def validate(expr: KExpr, k: Optional[int] = None) -> None:
    """Check the cross-node invariants the constructors cannot see."""
    seen = set()
    for leaf in iter_leaves(expr):
        if leaf.vertex in seen:
            raise KExprError(f"duplicate vertex identifier {leaf.vertex!r}")
        seen.add(leaf.vertex)
    mask_width(expr)
    if k is not None and width_used(expr) > k:
        raise KExprError(f"label {width_used(expr)} out of range for k={k}")


# --------------------------------------------------------------------------
# text format

_TOKEN = re.compile(r"(?P<ws>\s+)|(?P<comment>#[^\n]*)|(?P<punct>[()\[\];:])|(?P<word>[^\s()\[\];:#]+)")
_BAD_IDENT = re.compile(r"[\s()\[\];:#]")


def _tokenize(text: str):
    line, line_start = 1, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # pragma: no cover - the word class matches everything else
            raise ParseError("unexpected character", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind in ("punct", "word"):
            yield m.group(), line, pos - line_start + 1
        chunk = m.group()
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    yield None, line, pos - line_start + 1


def parse_kexpression(text: str, k: Optional[int] = None) -> KExpr:
    """Parse ``.kx`` text into an expression.

    If ``k`` is given, every label must lie in ``[1, k]``.
    """
    tokens = _tokenize(text)
    frames: list[list] = []  # open unions: [children, line, col]
    result = None
    seen: dict[str, tuple[int, int]] = {}
    width = None

    def take(expect_word=False):
        tok, ln, col = next(tokens)
        if tok is None:
            raise ParseError("unexpected end of input", ln, col)
        if expect_word and tok in "()[];:":
            raise ParseError(f"expected a word, found {tok!r}", ln, col)
        return tok, ln, col

    def nat(tok, ln, col, what):
        if not tok.isdigit():
            raise ParseError(f"expected {what}, found {tok!r}", ln, col)
        value = int(tok)
        if value < 1 or (k is not None and value > k):
            raise ParseError(f"label {value} out of range [1, {k if k else '...'}]", ln, col)
        return value

    def emit(node, ln, col):
        nonlocal result
        if frames:
            children = frames[-1][0]
            if len(children) == 2:
                raise ParseError("union takes exactly two subexpressions", ln, col)
            children.append(node)
        elif result is not None:
            raise ParseError("trailing input after expression", ln, col)
        else:
            result = node

    while True:
        tok, ln, col = next(tokens)
        if tok is None:
            break
        if tok == "(":
            head, hl, hc = take(expect_word=True)
            if head == "v":
                name, nl, nc = take(expect_word=True)
                if name in seen:
                    raise ParseError(f"duplicate vertex identifier {name!r}", nl, nc)
                seen[name] = (nl, nc)
                lab = nat(*take(), "label")
                tok2, l2, c2 = take()
                mask = None
                if tok2 == ":":
                    mask, ml, mc = take(expect_word=True)
                    if not re.fullmatch(r"[01]+", mask):
                        raise ParseError(f"mask must be a bit string, found {mask!r}", ml, mc)
                    if width is None:
                        width = len(mask)
                    elif width != len(mask):
                        raise ParseError(f"inconsistent mask widths {width} and {len(mask)}", ml, mc)
                    tok2, l2, c2 = take()
                elif width is not None and width != 0:
                    raise ParseError("inconsistent mask widths: leaf without mask", l2, c2)
                if tok2 != ")":
                    raise ParseError(f"expected ')', found {tok2!r}", l2, c2)
                if mask is None:
                    width = 0 if width is None else width
                emit(Create(name, lab, mask), ln, col)
            elif head == "u":
                frames.append([[], ln, col])
            else:
                raise ParseError(f"expected 'v' or 'u', found {head!r}", hl, hc)
        elif tok == "[":
            if not frames or len(frames[-1][0]) != 2:
                raise ParseError("unexpected '['", ln, col)
            ops = []
            tok2, l2, c2 = take()
            if tok2 != "]":
                while True:
                    kind, kl, kc = tok2, l2, c2
                    if kind not in ("j", "r"):
                        raise ParseError(f"expected 'j' or 'r', found {kind!r}", kl, kc)
                    a = nat(*take(), "label")
                    b = nat(*take(), "label")
                    if a == b:
                        raise ParseError(f"{'join' if kind == 'j' else 'relabel'} with i = j = {a}", kl, kc)
                    ops.append(Join(a, b) if kind == "j" else Relabel(a, b))
                    tok2, l2, c2 = take()
                    if tok2 == "]":
                        break
                    if tok2 != ";":
                        raise ParseError(f"expected ';' or ']', found {tok2!r}", l2, c2)
                    tok2, l2, c2 = take()
            tok3, l3, c3 = take()
            if tok3 != ")":
                raise ParseError(f"expected ')', found {tok3!r}", l3, c3)
            children, ul, uc = frames.pop()
            emit(Union(children[0], children[1], tuple(ops)), ul, uc)
        else:
            raise ParseError(f"unexpected token {tok!r}", ln, col)

    if frames:
        _, ul, uc = frames[-1]
        raise ParseError("unterminated union", ul, uc)
    if result is None:
        raise ParseError("empty input", 1, 1)
    return result


def _render_ops(ops) -> str:
    parts = [f"{'j' if isinstance(op, Join) else 'r'} {op.i} {op.j}" for op in ops]
    return "[" + "; ".join(parts) + "]"


def render_kexpression(expr: KExpr) -> str:
    """Single-line ``.kx`` rendering; ``parse_kexpression`` inverts it."""
    out: list[str] = []
    stack: list = [expr]
    while stack:
        item = stack.pop()
        if isinstance(item, str):
            out.append(item)
        elif isinstance(item, Create):
            mask = f" : {item.mask}" if item.mask is not None else ""
            out.append(f"(v {item.vertex} {item.label}{mask})")
        else:
            out.append("(u ")
            stack.append(" " + _render_ops(item.ops) + ")")
            stack.append(item.right)
            stack.append(" ")
            stack.append(item.left)
    return "".join(out)


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True, eq=False)
class Graph:
    """Explicit graph produced by evaluating an expression.

    ``adjacency`` is a symmetric boolean matrix indexed like ``vertices``.
    """

    vertices: tuple
    adjacency: np.ndarray = field(repr=False)
    final_labels: dict = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.vertices)

    def index(self) -> dict:
        return {v: i for i, v in enumerate(self.vertices)}

    @property
    def edges(self) -> set:
        """Unordered edges as name pairs ``(a, b)`` with ``a < b``."""
        us, vs = np.nonzero(np.triu(self.adjacency, 1))
        names = self.vertices
        return {tuple(sorted((names[a], names[b]))) for a, b in zip(us.tolist(), vs.tolist())}

    @property
    def m(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, 1)))

    def adjacent(self, u: str, v: str) -> bool:
        idx = self.index()
        return bool(self.adjacency[idx[u], idx[v]])


def _merge_classes(a: dict, b: dict) -> dict:
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
    return a


def _apply_relabel(classes: dict, i: int, j: int) -> None:
    moved = classes.pop(i, None)
    if moved is None:
        return
    target = classes.get(j)
    if target is None:
        classes[j] = moved
    elif len(target) >= len(moved):
        target.extend(moved)
    else:
        moved.extend(target)
        classes[j] = moved


def evaluate(expr: KExpr) -> Graph:
    """Build the graph an expression defines (probe masks are ignored)."""
    names = vertices_of(expr)
    n = len(names)
    adj = np.zeros((n, n), dtype=bool)
    stack: list[dict] = []
    leaf_no = 0
    for node in iter_postorder(expr):
        if isinstance(node, Create):
            stack.append({node.label: [leaf_no]})
            leaf_no += 1
            continue
        right = stack.pop()
        classes = _merge_classes(stack.pop(), right)
        for op in node.ops:
            if isinstance(op, Join):
                a, b = classes.get(op.i), classes.get(op.j)
                if a and b:
                    ia, ib = np.asarray(a), np.asarray(b)
                    adj[np.ix_(ia, ib)] = True
                    adj[np.ix_(ib, ia)] = True
            else:
                _apply_relabel(classes, op.i, op.j)
        stack.append(classes)
    final = {}
    for lab, members in stack.pop().items():
        for v in members:
            final[names[v]] = lab
    adj.setflags(write=False)
    return Graph(tuple(names), adj, final)


def format_edges(graph: Graph) -> str:
    """``.edges`` text: ``n m`` then one sorted ``u v`` line per edge."""
    edges = sorted(graph.edges)
    lines = [f"{graph.n} {len(edges)}"]
    lines.extend(f"{a} {b}" for a, b in edges)
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# generators


def _random_shape(rng: random.Random, n: int) -> list[int]:
    """Pre-order list of subtree leaf counts for a random binary tree."""
    pre = []
    stack = [n]
    while stack:
        s = stack.pop()
        pre.append(s)
        if s > 1:
            left = rng.randint(1, s - 1)
            stack.append(s - left)
            stack.append(left)
    return pre


def _assemble(pre: list[int], leaf, internal) -> KExpr:
    """Build an expression from a pre-order shape.

    ``leaf(idx)`` and ``internal(idx)`` receive the pre-order position.
    """
    built: list = []
    for idx in range(len(pre) - 1, -1, -1):
        if pre[idx] == 1:
            built.append(leaf(idx))
        else:
            left = built.pop()
            right = built.pop()
            built.append(Union(left, right, internal(idx)))
    return built[0]


def _check_n(n):
    if not isinstance(n, int) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")


def gen_random(n: int, k: int, p_join: float = 0.3, p_relabel: float = 0.2, seed: int = 0) -> KExpr:
    """Random k-expression with ``n`` leaves (not necessarily proper).

    Each decorator includes every join eta_{i,j} (i < j) with probability
    ``p_join`` plus a geometric number of random relabels (continue with
    probability ``p_relabel``), shuffled together.
    """
    _check_n(n)
    if not isinstance(k, int) or k < 2:
        raise ValueError(f"k must be an integer >= 2, got {k!r}")
    for name, p in (("p_join", p_join), ("p_relabel", p_relabel)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {p!r}")
    if p_relabel >= 1.0:
        raise ValueError("p_relabel must be < 1 for a finite geometric count")
    rng = random.Random(seed)
    pre = _random_shape(rng, n)
    leaves: dict[int, Create] = {}
    decorators: dict[int, tuple] = {}
    pairs = [(i, j) for i in range(1, k + 1) for j in range(i + 1, k + 1)]
    counter = 0
    for idx, size in enumerate(pre):
        if size == 1:
            leaves[idx] = Create(f"v{counter}", rng.randint(1, k))
            counter += 1
            continue
        ops = [Join(i, j) for i, j in pairs if rng.random() < p_join]
        while rng.random() < p_relabel:
            i = rng.randint(1, k)
            j = rng.randint(1, k - 1)
            ops.append(Relabel(i, j if j < i else j + 1))
        rng.shuffle(ops)
        decorators[idx] = tuple(ops)
    return _assemble(pre, leaves.__getitem__, decorators.__getitem__)


def gen_cotree(n: int, seed: int = 0) -> KExpr:
    """Random cograph as a 2-expression.

    Every subexpression leaves all its vertices on one target label; a
    series node puts its children on labels 1 and 2, joins them, and
    folds the result back onto its own target.
    """
    _check_n(n)
    rng = random.Random(seed)
    pre = _random_shape(rng, n)
    target = [0] * len(pre)
    target[0] = 1
    leaves: dict[int, Create] = {}
    decorators: dict[int, tuple] = {}
    # pre-order: left child is idx+1, right child follows the left subtree
    span = [0] * len(pre)
    for idx in range(len(pre) - 1, -1, -1):
        span[idx] = 1 if pre[idx] == 1 else 1 + span[idx + 1] + span[idx + 1 + span[idx + 1]]
    counter = 0
    for idx, size in enumerate(pre):
        if size == 1:
            leaves[idx] = Create(f"v{counter}", target[idx])
            counter += 1
            continue
        left = idx + 1
        right = left + span[left]
        if rng.random() < 0.5:
            target[left], target[right] = 1, 2
            fold = Relabel(2, 1) if target[idx] == 1 else Relabel(1, 2)
            decorators[idx] = (Join(1, 2), fold)
        else:
            target[left] = target[right] = target[idx]
            decorators[idx] = ()
    return _assemble(pre, leaves.__getitem__, decorators.__getitem__)
