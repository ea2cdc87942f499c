import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from archstamp.errors import InvalidArchitectureError, InvalidSupernetError, ShapeUnderflowError
from archstamp.nas import (
    DEFAULT_OPS, SEP_3, SKIP, Architecture, Cell, CellKind, CellSupernet, Edge, MacroParams,
    Operation, OpKind, TensorShape, build_default_supernet, default_exec_order, longest_path_edges,
    output_shape, patches, propagate_shapes, sample_cell, stack_architecture,
)


def test_default_candidate_set_has_seven_ops():
    names = [o.name for o in DEFAULT_OPS]
    assert names == ["skip", "sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5", "avg_pool_3x3", "max_pool_3x3"]


def test_operation_validation():
    with pytest.raises(ValueError):
        Operation(OpKind.SEP_CONV, 4)
    with pytest.raises(ValueError):
        Operation(OpKind.AVG_POOL, 5)
    with pytest.raises(ValueError):
        Operation(OpKind.SEP_CONV, 3, 1)
    with pytest.raises(ValueError):
        Operation.parse("conv_7x7")
    for op in DEFAULT_OPS:
        assert Operation.parse(op.name) == op
    assert Operation.parse("dil_conv_5x5").effective_kernel == 9


def test_supernet_four_nodes():
    sn = build_default_supernet(4)
    assert len(sn.nodes) == 6
    assert sn.slot_count == 8
    assert longest_path_edges(sn) == 4


def test_supernet_one_node():
    sn = build_default_supernet(1, [SKIP])
    assert sn.sources(2) == (0, 1)
    assert sn.edges == ((0, 2), (1, 2))


def test_supernet_rejects_zero_nodes():
    with pytest.raises(InvalidSupernetError):
        build_default_supernet(0)
    with pytest.raises(InvalidSupernetError):
        CellSupernet(2, ())


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_sampled_cells_are_valid(b, seed):
    sn = CellSupernet(b)
    cell = sample_cell(sn, CellKind.NORMAL, np.random.default_rng(seed))
    cell.check(sn)
    for t in sn.intermediate:
        assert len(cell.incoming(t)) == 2
    # dependencies: producers of a node run before its consumers
    pos = {id(e): i for i, e in enumerate(cell.edges)}
    for e in cell.edges:
        for p in cell.incoming(e.src):
            assert pos[id(p)] < pos[id(e)]


def test_exec_order_tie_break():
    edges = [Edge(1, 3, SEP_3), Edge(0, 2, SKIP), Edge(2, 3, SKIP), Edge(1, 2, SEP_3)]
    order = default_exec_order(edges)
    assert [(e.src, e.dst) for e in order] == [(0, 2), (1, 2), (1, 3), (2, 3)]


def test_cell_check_catches_bad_order():
    cell = Cell(CellKind.NORMAL, (Edge(2, 3, SKIP), Edge(0, 2, SKIP), Edge(1, 2, SKIP), Edge(0, 3, SKIP)))
    with pytest.raises(InvalidArchitectureError, match="order"):
        cell.check(CellSupernet(2))


def _cells(seed=0):
    rng = np.random.default_rng(seed)
    sn = CellSupernet(4)
    return sample_cell(sn, CellKind.NORMAL, rng), sample_cell(sn, CellKind.REDUCTION, rng)


def test_stack_default_macro():
    n, r = _cells()
    arch = stack_architecture(n, r)
    assert len(arch.cells) == 20
    assert sum(c.kind is CellKind.REDUCTION for c in arch.cells) == 2
    shapes = propagate_shapes(arch)
    assert shapes[0] == TensorShape(32, 32, 33)
    assert shapes[7] == TensorShape(16, 16, 66)
    assert shapes[14] == TensorShape(8, 8, 132)
    assert sorted({s.channels for s in shapes.values()}) == [33, 66, 132]


def test_stack_degenerate_and_mismatch():
    n, r = _cells()
    arch = stack_architecture(n, r, MacroParams(blocks=1, cells_per_block=1))
    assert len(arch.cells) == 1
    assert output_shape(arch) == propagate_shapes(arch)[0]
    with pytest.raises(InvalidArchitectureError):
        stack_architecture(r, n)


def test_shape_underflow():
    n, r = _cells()
    with pytest.raises(ShapeUnderflowError):
        output_shape(stack_architecture(n, r, MacroParams(blocks=4, input_size=(4, 4))))


def test_patches_at_32x32():
    assert patches(TensorShape(32, 32, 33), 1) == 1024
    assert patches(TensorShape(32, 32, 66), 2) == 256
    assert patches(TensorShape(5, 5, 1), 2) == 9


def test_channel_doubling_law():
    n, r = _cells(1)
    for blocks in (2, 3, 4):
        arch = stack_architecture(n, r, MacroParams(blocks=blocks, input_size=(64, 64)))
        shapes = propagate_shapes(arch)
        per_block = []
        for i, k in enumerate(arch.kinds):
            if k is CellKind.NORMAL and (i == 0 or arch.kinds[i - 1] is CellKind.REDUCTION):
                per_block.append(shapes[i].channels)
        assert all(b == 2 * a for a, b in itertools.pairwise(per_block))
        assert per_block == [33 * 2**i for i in range(blocks)]


def test_architecture_json_round_trip():
    n, r = _cells(2)
    arch = stack_architecture(n, r)
    doc = arch.to_dict()
    assert set(doc) == {"nodes", "ops", "cells", "macro"}
    assert set(doc["cells"][0]) == {"kind", "edges"}
    assert Architecture.from_dict(doc) == arch
