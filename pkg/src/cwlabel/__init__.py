"""Adjacency labeling for graphs given by bounded-width k-expressions."""
from .decomposition import DecompositionPlan, decompose
from .exceptions import (
    CWLabelError,
    DecompositionError,
    FormatError,
    KExprError,
    LabelError,
    NotProperError,
    ParseError,
)
from .kexpr import (
    Create,
    Graph,
    Join,
    Relabel,
    Union,
    evaluate,
    gen_cotree,
    gen_random,
    parse_kexpression,
    render_kexpression,
)
from .labels import Label, LabelSet, compute_C, decode, decode_all, encode, label_stats, pack, read_cwl, unpack, write_cwl
from .probe import ProbeInstance, decode_probe, encode_probe, evaluate_probe
from .union_tree import UnionTree, check_proper, from_kexpression, make_proper, to_kexpression, trace_labels
from .verify import oracle, run_suite, verify_instance

__version__ = "0.1.0"
