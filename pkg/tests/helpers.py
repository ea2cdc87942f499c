"""Ground-truth helpers shared by the analyzer and acceptance tests."""

import numpy as np

from archstamp.analysis import OpClass
from archstamp.nas import CellKind, CellSupernet, OpKind, edge_operand, propagate_shapes, sample_cell, stack_architecture

CLASS = {OpKind.SEP_CONV: OpClass.SC, OpKind.DIL_SEP_CONV: OpClass.DS, OpKind.AVG_POOL: OpClass.POOL, OpKind.MAX_POOL: OpClass.POOL}
POOL = {OpKind.AVG_POOL: "avg", OpKind.MAX_POOL: "max"}


def random_arch(seed):
    rng = np.random.default_rng(seed)
    sn = CellSupernet(4)
    return stack_architecture(sample_cell(sn, CellKind.NORMAL, rng), sample_cell(sn, CellKind.REDUCTION, rng))


def expected_ops(arch):
    """Per cell: (class, kernel, channels, pool type) of every non-skip op in execution order."""
    shapes = propagate_shapes(arch)
    out = []
    for i, cell in enumerate(arch.cells):
        row = []
        for e in cell.edges:
            if e.op.kind is OpKind.SKIP:
                continue
            ch = edge_operand(cell, e, shapes[i])[0].channels if e.op.is_gemm else None
            kernel = e.op.kernel if e.op.is_gemm else None
            row.append((CLASS[e.op.kind], kernel, ch, POOL.get(e.op.kind)))
        out.append(row)
    return out


def recovered_ops(rec):
    return [[(o.cls, o.kernel, o.channels, o.pool_type) for o in rec.operations(i)] for i in range(len(rec.windows))]


def op_fidelity(arch, rec) -> tuple[int, int]:
    """(correct, total) over ground-truth ops; a window with the wrong op count scores zero."""
    want, got = expected_ops(arch), recovered_ops(rec)
    total = sum(len(w) for w in want)
    if len(want) != len(got):
        return 0, total
    ok = sum(sum(a == b for a, b in zip(w, g)) for w, g in zip(want, got) if len(w) == len(g))
    return ok, total
