"""Command-line interface: ``cwlabel <command> ...``.

Exit codes: 0 success, 1 domain error (bad input, unknown vertex, failed
verification), 2 usage error.
"""
from __future__ import annotations

import argparse
import io
import json
import random
import statistics
import sys
import time
from typing import Optional, Sequence

from .exceptions import CWLabelError
from .kexpr import evaluate, format_edges, gen_cotree, gen_random, parse_kexpression, render_kexpression
from .labels import CWL_MAGIC, decode, encode, label_stats, pack, read_cwl, write_cwl
from .probe import evaluate_probe, random_masks
from .union_tree import check_proper, from_kexpression, joins_settled, make_proper, to_kexpression
from .verify import DEFAULT_GRID, run_suite, verify_instance

# exact properness checks allocate an n x n matrix; above this size encode
# relies on the linear-time certificate instead
EXACT_CHECK_LIMIT = 4096


class DomainError(CWLabelError):
    pass


def _int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _probability(text: str) -> float:
    try:
        p = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= p <= 1.0:
        raise argparse.ArgumentTypeError(f"probability out of [0, 1]: {p}")
    return p


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _non_negative(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


# -- io helpers ---------------------------------------------------------------


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise DomainError(f"cannot read {path}: {exc.strerror}") from None


def _read_bytes(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise DomainError(f"cannot read {path}: {exc.strerror}") from None


def _read_expr(path: str, k: Optional[int] = None):
    return parse_kexpression(_read_text(path), k=k)


def _write_text(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    try:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise DomainError(f"cannot write {out}: {exc.strerror}") from None


def _print_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_cwl(path: str):
    try:
        if path == "-":
            return read_cwl(sys.stdin.buffer)
        with open(path, "rb") as fh:
            return read_cwl(fh)
    except OSError as exc:
        raise DomainError(f"cannot read {path}: {exc.strerror}") from None


# -- commands -----------------------------------------------------------------


def cmd_gen(args) -> int:
    expr = gen_random(args.n, args.k, args.p_join, args.p_relabel, args.seed)
    if args.w:
        expr = random_masks(expr, args.w, seed=args.seed)
    _write_text(render_kexpression(expr) + "\n", args.output)
    return 0


def cmd_cotree_gen(args) -> int:
    expr = gen_cotree(args.n, args.seed)
    if args.w:
        expr = random_masks(expr, args.w, seed=args.seed)
    _write_text(render_kexpression(expr) + "\n", args.output)
    return 0


def cmd_eval(args) -> int:
    expr = _read_expr(args.input)
    graph = evaluate_probe(expr) if args.probe else evaluate(expr)
    _write_text(format_edges(graph), args.output)
    return 0


def cmd_check_proper(args) -> int:
    tree = from_kexpression(_read_expr(args.input))
    report = check_proper(tree)
    _print_json(
        {
            "proper": report.proper,
            "violations": [{"node": node, "edge": list(pair)} for node, pair in report.violations],
        }
    )
    return 0 if report.proper else 1


def cmd_properize(args) -> int:
    tree = make_proper(from_kexpression(_read_expr(args.input)))
    _write_text(render_kexpression(to_kexpression(tree)) + "\n", args.output)
    return 0


def _require_proper(tree) -> None:
    if tree.n <= EXACT_CHECK_LIMIT:
        report = check_proper(tree)
        if not report.proper:
            node, pair = report.violations[0]
            raise DomainError(
                f"input is not a proper union tree (edge {pair[0]}-{pair[1]} is created above "
                f"their lca, node {node}); run `cwlabel properize` first"
            )
    elif joins_settled(tree):
        raise DomainError("cannot certify that the input is a proper union tree; run `cwlabel properize` first")


def cmd_encode(args) -> int:
    tree = from_kexpression(_read_expr(args.input, args.k), k=args.k)
    _require_proper(tree)
    ls = encode(tree)
    if args.output is None or args.output == "-":
        write_cwl(ls, sys.stdout.buffer)
        sys.stdout.buffer.flush()
        return 0
    try:
        with open(args.output, "wb") as fh:
            write_cwl(ls, fh)
    except OSError as exc:
        raise DomainError(f"cannot write {args.output}: {exc.strerror}") from None
    return 0


def cmd_query(args) -> int:
    _, payloads = _load_cwl(args.labels)
    for v in (args.u, args.v):
        if v not in payloads:
            raise DomainError(f"unknown vertex {v!r}")
    print(decode(payloads[args.u], payloads[args.v]))
    return 0


def cmd_stats(args) -> int:
    """Accepts either a .cwl label file or a .kx expression (told apart by
    the label file's magic bytes)."""
    data = _read_bytes(args.input)
    if data.startswith(CWL_MAGIC):
        ls, _ = read_cwl(io.BytesIO(data))
        _print_json({"labels": label_stats(ls)})
        return 0
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise DomainError(f"{args.input}: neither a .cwl file nor UTF-8 text") from None
    tree = from_kexpression(parse_kexpression(text, k=args.k), k=args.k)
    internal = [len(tree.decorators[x]) for x in range(tree.n_nodes) if tree.left[x] >= 0]
    out = {
        "n": tree.n,
        "k": tree.k,
        "w": tree.w,
        "decorator_length": {
            "max": max(internal, default=0),
            "mean": round(statistics.fmean(internal), 6) if internal else 0.0,
            "total": sum(internal),
        },
    }
    fixed = make_proper(tree)
    ls = encode(fixed)
    out["labels"] = label_stats(ls)
    out["decomposition"] = ls.plan_stats
    out["properized_decorator_max"] = max((len(d) for d in fixed.decorators), default=0)
    _print_json(out)
    return 0


def cmd_verify(args) -> int:
    if args.input is not None:
        if args.k_list and len(args.k_list) > 1:
            raise DomainError("a single instance takes one --k value")
        k = args.k_list[0] if args.k_list else None
        expr = _read_expr(args.input, k)
        report = verify_instance(expr, k=k, name=args.input, seed=args.seed)
        _print_json(report.as_dict())
        return 0 if report.passed else 1
    grid = {
        "family": args.family,
        "n": args.n or DEFAULT_GRID["n"],
        "k": args.k_list or DEFAULT_GRID["k"],
        "w": args.w or [0],
        "trials": DEFAULT_GRID["trials"] if args.trials is None else args.trials,
        "seed": args.seed,
        "p_join": args.p_join,
        "p_relabel": args.p_relabel,
    }
    result = run_suite(grid)
    _print_json(result)
    return 0 if result["ok"] else 1


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    expr = gen_random(args.n, args.k, args.p_join, args.p_relabel, args.seed)
    t1 = time.perf_counter()
    tree = make_proper(from_kexpression(expr, k=args.k))
    t2 = time.perf_counter()
    ls = encode(tree)
    t3 = time.perf_counter()
    payloads = [pack(lab) for lab in ls.labels.values()]
    rng = random.Random(args.seed)
    n = len(payloads)
    pairs = []
    while len(pairs) < args.queries and n > 1:
        a, b = rng.randrange(n), rng.randrange(n)
        if a != b:
            pairs.append((payloads[a], payloads[b]))
    t4 = time.perf_counter()
    hits = 0
    for a, b in pairs:
        hits += decode(a, b)
    t5 = time.perf_counter()
    _print_json(
        {
            "n": args.n,
            "k": args.k,
            "seed": args.seed,
            "generate_s": round(t1 - t0, 4),
            "properize_s": round(t2 - t1, 4),
            "encode_s": round(t3 - t2, 4),
            "queries": len(pairs),
            "adjacent_fraction": round(hits / len(pairs), 6) if pairs else 0.0,
            "decode_total_s": round(t5 - t4, 4),
            "decode_us_per_query": round((t5 - t4) / len(pairs) * 1e6, 4) if pairs else 0.0,
            "labels": label_stats(ls),
        }
    )
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cwlabel", description="Adjacency labels for bounded clique-width graphs.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def gen_flags(p, n_default=64, with_k=True):
        p.add_argument("--n", type=_positive, default=n_default, help="number of vertices")
        if with_k:
            p.add_argument("--k", type=_positive, default=4, help="number of labels")
            p.add_argument("--p-join", type=_probability, default=0.3)
            p.add_argument("--p-relabel", type=_probability, default=0.2)
        p.add_argument("--w", type=_non_negative, default=0, help="probe mask width (0 = none)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("-o", "--output", default=None, help="output file (default stdout)")

    p = sub.add_parser("gen", help="random k-expression (.kx)")
    gen_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("cotree-gen", help="random cograph as a 2-expression (.kx)")
    gen_flags(p, with_k=False)
    p.set_defaults(func=cmd_cotree_gen)

    p = sub.add_parser("eval", help="evaluate a .kx file to .edges")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("--probe", action="store_true", help="drop edges whose endpoints share a probe set")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check-proper", help="report edges created above their lca (JSON)")
    p.add_argument("input", nargs="?", default="-")
    p.set_defaults(func=cmd_check_proper)

    p = sub.add_parser("properize", help="rewrite a .kx into a proper union tree")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_properize)

    p = sub.add_parser("encode", help="label every vertex of a proper .kx (.cwl)")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("--k", type=_positive, default=None, help="label bound (default: largest label used)")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("query", help="adjacency of two vertices from a .cwl file")
    p.add_argument("labels")
    p.add_argument("u")
    p.add_argument("v")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("stats", help="label and decomposition statistics (JSON)")
    p.add_argument("input", nargs="?", default="-")
    p.add_argument("--k", type=_positive, default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("verify", help="check decoding against the brute-force oracle (JSON)")
    p.add_argument("input", nargs="?", default=None, help=".kx file; omit to run a seeded suite")
    p.add_argument("--n", type=_int_list, default=None, help="comma-separated sizes")
    p.add_argument("--k", dest="k_list", type=_int_list, default=None, help="comma-separated label counts")
    p.add_argument("--w", type=_int_list, default=None, help="comma-separated probe widths")
    p.add_argument("--trials", type=_non_negative, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--family", choices=["random", "cotree"], default="random")
    p.add_argument("--p-join", type=_probability, default=DEFAULT_GRID["p_join"])
    p.add_argument("--p-relabel", type=_probability, default=DEFAULT_GRID["p_relabel"])
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="timings for generate/properize/encode/decode (JSON)")
    p.add_argument("--n", type=_positive, default=100_000)
    p.add_argument("--k", type=_positive, default=8)
    p.add_argument("--p-join", type=_probability, default=0.3)
    p.add_argument("--p-relabel", type=_probability, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--queries", type=_non_negative, default=1_000_000)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CWLabelError as exc:
        print(f"cwlabel: error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 1


if __name__ == "__main__":
    sys.exit(main())
