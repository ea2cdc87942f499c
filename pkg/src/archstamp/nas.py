"""Cell-based NAS data model: operations, supernets, cells and stacked architectures.

Node numbering inside a cell is fixed throughout the package:
``0`` is input ``a`` (output of cell k-2), ``1`` is input ``b`` (output of
cell k-1) and intermediate node ``N_j`` (1-based) has id ``j + 1``.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    InvalidArchitectureError,
    InvalidShapeError,
    InvalidSupernetError,
    ShapeUnderflowError,
)

INPUT_A = 0
INPUT_B = 1


def node_id(j: int) -> int:
    """Id of intermediate node ``N_j`` (1-based)."""
    return j + 1


def node_name(nid: int) -> str:
    if nid == INPUT_A:
        return "a"
    if nid == INPUT_B:
        return "b"
    return f"N{nid - 1}"


class OpKind(enum.Enum):
    SKIP = "skip"
    SEP_CONV = "sep_conv"
    DIL_SEP_CONV = "dil_conv"
    AVG_POOL = "avg_pool"
    MAX_POOL = "max_pool"
    NORMAL_CONV = "conv"
    FULLY_CONNECTED = "fc"


_CONV_KINDS = (OpKind.SEP_CONV, OpKind.DIL_SEP_CONV, OpKind.NORMAL_CONV)
_POOL_KINDS = (OpKind.AVG_POOL, OpKind.MAX_POOL)


@dataclass(frozen=True, order=True)
class Operation:
    kind: OpKind
    kernel: int = 0
    dilation: int = 0

    def __post_init__(self):
        k = self.kind
        if k in _CONV_KINDS and self.kernel not in (1, 3, 5):
            raise ValueError(f"{k.value}: kernel must be 1, 3 or 5, got {self.kernel}")
        if k in _POOL_KINDS and self.kernel != 3:
            raise ValueError(f"{k.value}: pooling kernel must be 3")
        if k in (OpKind.SKIP, OpKind.FULLY_CONNECTED) and (self.kernel or self.dilation):
            raise ValueError(f"{k.value} takes no kernel/dilation")
        if k is OpKind.DIL_SEP_CONV:
            if self.dilation < 1:
                raise ValueError("dilated conv needs dilation >= 1")
        elif self.dilation:
            raise ValueError("dilation is only valid for dilated separable convs")

    @property
    def name(self) -> str:
        if self.kind in (OpKind.SKIP, OpKind.FULLY_CONNECTED):
            return self.kind.value
        base = f"{self.kind.value}_{self.kernel}x{self.kernel}"
        if self.kind is OpKind.DIL_SEP_CONV and self.dilation != 1:
            base += f"_d{self.dilation}"
        return base

    @property
    def is_gemm(self) -> bool:
        return self.kind in _CONV_KINDS or self.kind is OpKind.FULLY_CONNECTED

    @property
    def is_pool(self) -> bool:
        return self.kind in _POOL_KINDS

    @property
    def effective_kernel(self) -> int:
        """Spatial extent covered by the (possibly dilated) kernel."""
        return self.kernel + self.dilation * (self.kernel - 1)

    @classmethod
    def parse(cls, name: str) -> "Operation":
        if name in ("skip", "skip_connect", "identity"):
            return cls(OpKind.SKIP)
        if name == "fc":
            return cls(OpKind.FULLY_CONNECTED)
        m = re.fullmatch(r"(sep_conv|dil_conv|avg_pool|max_pool|conv)_(\d)x\2(?:_d(\d+))?", name)
        if not m:
            raise ValueError(f"unknown operation {name!r}")
        kind = OpKind(m.group(1))
        dil = int(m.group(3)) if m.group(3) else (1 if kind is OpKind.DIL_SEP_CONV else 0)
        return cls(kind, int(m.group(2)), dil)

    def __str__(self) -> str:
        return self.name


SKIP = Operation(OpKind.SKIP)
SEP_3 = Operation(OpKind.SEP_CONV, 3)
SEP_5 = Operation(OpKind.SEP_CONV, 5)
DIL_3 = Operation(OpKind.DIL_SEP_CONV, 3, 1)
DIL_5 = Operation(OpKind.DIL_SEP_CONV, 5, 1)
AVG_3 = Operation(OpKind.AVG_POOL, 3)
MAX_3 = Operation(OpKind.MAX_POOL, 3)
CONV_3 = Operation(OpKind.NORMAL_CONV, 3)
FC = Operation(OpKind.FULLY_CONNECTED)

DEFAULT_OPS: tuple[Operation, ...] = (SKIP, SEP_3, SEP_5, DIL_3, DIL_5, AVG_3, MAX_3)


@dataclass(frozen=True)
class CellSupernet:
    """Fully connected cell DAG; node ``N_j`` admits edges from a, b and N_1..N_{j-1}."""

    num_nodes: int
    candidate_ops: tuple[Operation, ...] = DEFAULT_OPS

    def __post_init__(self):
        if self.num_nodes < 1:
            raise InvalidSupernetError("supernet needs at least one intermediate node")
        if not self.candidate_ops:
            raise InvalidSupernetError("candidate operation set is empty")
        if len(set(self.candidate_ops)) != len(self.candidate_ops):
            raise InvalidSupernetError("duplicate candidate operations")

    @property
    def nodes(self) -> range:
        return range(self.num_nodes + 2)

    @property
    def intermediate(self) -> range:
        return range(2, self.num_nodes + 2)

    def sources(self, target: int) -> tuple[int, ...]:
        if target not in self.intermediate:
            raise InvalidSupernetError(f"{target} is not an intermediate node")
        return tuple(range(target))

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple((s, t) for t in self.intermediate for s in self.sources(t))

    @property
    def slot_count(self) -> int:
        """Incoming-edge slots of a sampled cell (two per node)."""
        return 2 * self.num_nodes

    def is_admissible(self, src: int, dst: int) -> bool:
        return dst in self.intermediate and 0 <= src < dst


def build_default_supernet(num_nodes: int, ops: Iterable[Operation] = DEFAULT_OPS) -> CellSupernet:
    return CellSupernet(int(num_nodes), tuple(ops))


def longest_path_edges(supernet: CellSupernet) -> int:
    """Edge count of the longest dependency chain (DP over the DAG)."""
    depth = {INPUT_A: 0, INPUT_B: 0}
    for t in supernet.intermediate:
        depth[t] = 1 + max(depth[s] for s in supernet.sources(t))
    return max(depth.values())


@dataclass(frozen=True, order=True)
class Edge:
    """One chosen edge-operation pair; ``dst is None`` marks a discarded (useless) result."""

    src: int
    dst: int | None
    op: Operation

    def as_list(self) -> list:
        return [self.src, self.dst, self.op.name]


class CellKind(enum.Enum):
    NORMAL = "normal"
    REDUCTION = "reduction"


def default_exec_order(edges: Iterable[Edge]) -> tuple[Edge, ...]:
    """Topological order with ties broken by (target, source)."""
    return tuple(sorted(edges, key=lambda e: (e.dst, e.src, e.op)))


@dataclass(frozen=True)
class Cell:
    """A sampled cell; ``edges`` is the execution order.

    ``duration_scale`` is a compute-speed tag applied by weight pruning and
    ``decoy`` marks cells injected by an attacker (bookkeeping only).
    """

    kind: CellKind
    edges: tuple[Edge, ...]
    duration_scale: float = 1.0
    decoy: bool = False

    @property
    def stride(self) -> int:
        return 2 if self.kind is CellKind.REDUCTION else 1

    @property
    def chosen_edges(self) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.dst is not None)

    def incoming(self, target: int) -> list[Edge]:
        return [e for e in self.edges if e.dst == target]

    def contains(self, edge: Edge) -> bool:
        return edge in self.chosen_edges

    def order_is_valid(self) -> bool:
        """Every edge runs after all edges producing its source node."""
        pending = {}
        for e in self.edges:
            pending[e.dst] = pending.get(e.dst, 0) + 1
        for e in self.edges:
            if e.src >= 2 and pending.get(e.src, 0) > 0:
                return False
            if e.dst is not None:
                pending[e.dst] -= 1
        return True

    def check(self, supernet: CellSupernet) -> None:
        """Raise ``InvalidArchitectureError`` unless this is a valid supernet sample."""
        for e in self.edges:
            if e.dst is None:
                continue
            if not supernet.is_admissible(e.src, e.dst):
                raise InvalidArchitectureError(f"edge {e.src}->{e.dst} not admissible")
            if e.op not in supernet.candidate_ops:
                raise InvalidArchitectureError(f"operation {e.op} not in candidate set")
        for t in supernet.intermediate:
            inc = self.incoming(t)
            if len(inc) != 2:
                raise InvalidArchitectureError(f"node {node_name(t)} has {len(inc)} inputs, expected 2")
            if inc[0].src == inc[1].src:
                raise InvalidArchitectureError(f"node {node_name(t)} sums the same input twice")
        if not self.order_is_valid():
            raise InvalidArchitectureError("execution order violates data dependencies")


def sample_cell(
    supernet: CellSupernet,
    kind: CellKind,
    rng: np.random.Generator,
    fixed: Sequence[Edge] = (),
) -> Cell:
    """Uniform sample: each node picks an unordered pair of distinct sources, ops i.i.d.

    ``fixed`` edges are kept verbatim and occupy one slot of their target node.
    """
    by_target: dict[int, list[Edge]] = {}
    for e in fixed:
        by_target.setdefault(e.dst, []).append(e)
    ops = supernet.candidate_ops
    edges: list[Edge] = []
    for t in supernet.intermediate:
        pinned = by_target.get(t, [])
        if len(pinned) > 2:
            raise InvalidArchitectureError(f"more than two fixed edges into {node_name(t)}")
        edges.extend(pinned)
        taken = {e.src for e in pinned}
        free_sources = [s for s in supernet.sources(t) if s not in taken]
        need = 2 - len(pinned)
        if need > len(free_sources):
            raise InvalidArchitectureError(f"node {node_name(t)} cannot be completed")
        if need:
            chosen = rng.choice(len(free_sources), size=need, replace=False)
            for idx in sorted(int(c) for c in chosen):
                edges.append(Edge(free_sources[idx], t, ops[int(rng.integers(len(ops)))]))
    return Cell(kind, default_exec_order(edges))


@dataclass(frozen=True)
class MacroParams:
    blocks: int = 3
    cells_per_block: int = 6
    initial_channels: int = 33
    input_size: tuple[int, int] = (32, 32)
    in_channels: int = 3
    preprocessing: int = 3
    num_classes: int = 10
    batch: int = 1

    def layout(self) -> list[CellKind]:
        kinds: list[CellKind] = []
        for b in range(self.blocks):
            if b:
                kinds.append(CellKind.REDUCTION)
            kinds.extend([CellKind.NORMAL] * self.cells_per_block)
        return kinds

    def to_dict(self) -> dict:
        return {
            "blocks": self.blocks,
            "cells_per_block": self.cells_per_block,
            "initial_channels": self.initial_channels,
            "input_size": list(self.input_size),
            "in_channels": self.in_channels,
            "preprocessing": self.preprocessing,
            "num_classes": self.num_classes,
            "batch": self.batch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MacroParams":
        d = dict(d)
        if "input_size" in d:
            d["input_size"] = tuple(d["input_size"])
        return cls(**d)


@dataclass(frozen=True)
class TensorShape:
    width: int
    height: int
    channels: int

    def __post_init__(self):
        if min(self.width, self.height, self.channels) < 1:
            raise InvalidShapeError(f"non-positive tensor shape {self}")

    @property
    def pixels(self) -> int:
        return self.width * self.height

    def reduced(self) -> "TensorShape":
        if self.width < 2 or self.height < 2:
            raise ShapeUnderflowError(f"cannot halve spatial size {self.width}x{self.height}")
        return TensorShape(-(-self.width // 2), -(-self.height // 2), 2 * self.channels)


@dataclass(frozen=True)
class Architecture:
    cells: tuple[Cell, ...]
    macro: MacroParams = field(default_factory=MacroParams)
    num_nodes: int = 4
    candidate_ops: tuple[Operation, ...] = DEFAULT_OPS
    speedup: float = 1.0

    @property
    def normal_cells(self) -> list[int]:
        return [i for i, c in enumerate(self.cells) if c.kind is CellKind.NORMAL]

    @property
    def kinds(self) -> list[CellKind]:
        return [c.kind for c in self.cells]

    def with_cells(self, cells: Iterable[Cell]) -> "Architecture":
        return replace(self, cells=tuple(cells))

    def to_dict(self) -> dict:
        doc = {
            "nodes": self.num_nodes,
            "ops": [o.name for o in self.candidate_ops],
            "cells": [],
            "macro": self.macro.to_dict(),
        }
        for c in self.cells:
            entry = {"kind": c.kind.value, "edges": [e.as_list() for e in c.edges]}
            if c.duration_scale != 1.0:
                entry["duration_scale"] = c.duration_scale
            if c.decoy:
                entry["decoy"] = True
            doc["cells"].append(entry)
        if self.speedup != 1.0:
            doc["speedup"] = self.speedup
        return doc

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        cells = []
        for c in d["cells"]:
            edges = tuple(Edge(int(s), None if t is None else int(t), Operation.parse(o)) for s, t, o in c["edges"])
            cells.append(Cell(CellKind(c["kind"]), edges, float(c.get("duration_scale", 1.0)), bool(c.get("decoy", False))))
        return cls(
            cells=tuple(cells),
            macro=MacroParams.from_dict(d.get("macro", {})),
            num_nodes=int(d["nodes"]),
            candidate_ops=tuple(Operation.parse(o) for o in d["ops"]),
            speedup=float(d.get("speedup", 1.0)),
        )


def stack_architecture(
    normal: Cell,
    reduction: Cell,
    macro: MacroParams = MacroParams(),
    supernet: CellSupernet | None = None,
) -> Architecture:
    """Repeat ``normal`` within blocks and join blocks with ``reduction``."""
    if normal.kind is not CellKind.NORMAL or reduction.kind is not CellKind.REDUCTION:
        raise InvalidArchitectureError("stack_architecture needs a normal and a reduction cell")
    if macro.blocks < 1 or macro.cells_per_block < 1:
        raise InvalidArchitectureError("macro structure needs at least one block and one cell")
    cells = [normal if k is CellKind.NORMAL else reduction for k in macro.layout()]
    sn = supernet or CellSupernet(_infer_nodes(normal))
    return Architecture(tuple(cells), macro, sn.num_nodes, sn.candidate_ops)


def _infer_nodes(cell: Cell) -> int:
    return max(e.dst for e in cell.chosen_edges) - 1


def propagate_shapes(arch: Architecture) -> dict[int, TensorShape]:
    """Input shape of every cell; reduction cells halve W,H (ceil) and double D."""
    w, h = arch.macro.input_size
    shape = TensorShape(w, h, arch.macro.initial_channels)
    shapes: dict[int, TensorShape] = {}
    for i, cell in enumerate(arch.cells):
        shapes[i] = shape
        if cell.kind is CellKind.REDUCTION:
            shape = shape.reduced()
    return shapes


def output_shape(arch: Architecture) -> TensorShape:
    shapes = propagate_shapes(arch)
    if not arch.cells:
        w, h = arch.macro.input_size
        return TensorShape(w, h, arch.macro.initial_channels)
    last = shapes[len(arch.cells) - 1]
    return last.reduced() if arch.cells[-1].kind is CellKind.REDUCTION else last


def edge_operand(cell: Cell, edge: Edge, cell_input: TensorShape) -> tuple[TensorShape, int]:
    """Tensor shape an edge operation consumes, plus its stride.

    Reduction cells work at doubled channels; edges leaving the cell inputs
    carry the stride-2 downsampling.
    """
    if cell.kind is CellKind.NORMAL:
        return cell_input, 1
    out = cell_input.reduced()
    if edge.src in (INPUT_A, INPUT_B):
        return TensorShape(cell_input.width, cell_input.height, out.channels), 2
    return out, 1


def patches(shape: TensorShape, stride: int) -> int:
    """Row count of the im2col matrix under NAS padding (spatial size preserved)."""
    return math.ceil(shape.width / stride) * math.ceil(shape.height / stride)
