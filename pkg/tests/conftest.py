import numpy as np
import pytest

from archstamp.nas import (
    AVG_3, DIL_3, MAX_3, SEP_3, SEP_5, SKIP,
    Architecture, Cell, CellKind, Edge, MacroParams, sample_cell, CellSupernet,
)
from archstamp.watermark import make_key

# stamp paths a->N1->N2->N3->N4 (normal) and b->N1->N2->N3->N4 (reduction)
NORMAL_PATH = [(0, 2), (2, 3), (3, 4), (4, 5)]
REDUCTION_PATH = [(1, 2), (2, 3), (3, 4), (4, 5)]


@pytest.fixture
def example_key():
    return make_key(
        (NORMAL_PATH, [AVG_3, SEP_5, DIL_3, SEP_3]),
        (REDUCTION_PATH, [DIL_3, SEP_3, SEP_3, SKIP]),
    )


def figure_normal_cell() -> Cell:
    """Eight edges in a hand-picked order: SC, pool, SC, pool, DS, skip, SC, skip."""
    edges = (
        Edge(1, 2, SEP_3),   # 1
        Edge(0, 2, AVG_3),   # 2 stamp
        Edge(2, 3, SEP_5),   # 3 stamp
        Edge(1, 3, MAX_3),   # 4
        Edge(3, 4, DIL_3),   # 5 stamp
        Edge(0, 4, SKIP),    # 6
        Edge(4, 5, SEP_3),   # 7 stamp
        Edge(1, 5, SKIP),    # 8
    )
    return Cell(CellKind.NORMAL, edges)


@pytest.fixture
def figure_arch(example_key):
    rng = np.random.default_rng(3)
    red = sample_cell(CellSupernet(4), CellKind.REDUCTION, rng, example_key.reduction.edge_ops())
    normal = figure_normal_cell()
    cells = [normal if k is CellKind.NORMAL else red for k in MacroParams().layout()]
    return Architecture(tuple(cells))


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
