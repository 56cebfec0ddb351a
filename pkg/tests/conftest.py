import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from cwlabel.kexpr import parse_kexpression
from cwlabel.union_tree import from_kexpression

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# edges of the 7-vertex example graph, derived by hand from its expression
EX7_EDGES = {("a", "b"), ("b", "c"), ("c", "d"), ("d", "e"), ("d", "g"), ("e", "f"), ("f", "g")}
IMPROPER = "(u (u (v a 1) (v b 2) []) (v c 2) [j 1 2])"


@pytest.fixture(scope="session")
def ex7_text():
    return (FIXTURES / "example7.kx").read_text()


@pytest.fixture(scope="session")
def ex7_expr(ex7_text):
    return parse_kexpression(ex7_text)


@pytest.fixture(scope="session")
def ex7_tree(ex7_expr):
    return from_kexpression(ex7_expr)


# one verdict line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
