"""Adversarial transforms on architectures and traces."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, replace

import numpy as np

from .machine import MachineProfile
from .nas import Architecture, Cell, CellKind, Edge, OpKind, Operation
from .tracesim import Trace, perturb_trace
from .watermark import MarkingKey

BINARIZE_SPEEDUP = 20.0


class AttackKind(enum.Enum):
    SHUFFLE = "shuffle"
    USELESS_OP = "useless-op"
    USELESS_CELL = "useless-cell"
    WEIGHT_PRUNE = "prune"
    BINARIZE = "binarize"
    STRUCTURED_PRUNE = "structured"
    NOISE = "noise"
    FINE_TUNE = "finetune"  # retraining leaves the architecture alone


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    rate: float = 0.0
    count: int = 0
    sigma: float = 0.0
    mode: str = "oracle"  # structured pruning: "oracle" or "uniform"
    seed: int | None = 0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("prune rate must lie in [0, 1]")
        if not 0.0 <= self.sigma <= 0.5:
            raise ValueError("noise level must lie in [0, 0.5]")
        if self.count < 0:
            raise ValueError("structured prune count must be non-negative")
        if self.mode not in ("oracle", "uniform"):
            raise ValueError("structured prune mode must be 'oracle' or 'uniform'")

    @classmethod
    def parse(cls, text: str, seed: int | None = 0, mode: str = "oracle") -> "AttackSpec":
        """``shuffle``, ``prune:0.9``, ``structured:2``, ``noise:0.3`` and so on."""
        name, _, arg = text.partition(":")
        try:
            kind = AttackKind(name)
        except ValueError:
            raise ValueError(f"unknown attack {name!r}") from None
        if kind is AttackKind.WEIGHT_PRUNE:
            return cls(kind, rate=float(arg or 0.5), seed=seed)
        if kind is AttackKind.STRUCTURED_PRUNE:
            return cls(kind, count=int(arg or 1), mode=mode, seed=seed)
        if kind is AttackKind.NOISE:
            return cls(kind, sigma=float(arg or 0.3), seed=seed)
        if arg:
            raise ValueError(f"attack {name!r} takes no argument")
        return cls(kind, seed=seed)

    @property
    def is_trace_level(self) -> bool:
        return self.kind is AttackKind.NOISE


# --- cell-level helpers --------------------------------------------------

def _producers(edges) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for i, e in enumerate(edges):
        if e.dst is not None:
            out.setdefault(e.dst, []).append(i)
    return out


def shuffle_cell(cell: Cell, rng: np.random.Generator) -> Cell:
    """Random topological order: an edge becomes ready once its source node is complete."""
    edges = list(cell.edges)
    prod = _producers(edges)
    remaining = {t: len(v) for t, v in prod.items()}
    done = [False] * len(edges)
    order: list[Edge] = []
    while len(order) < len(edges):
        ready = [i for i, e in enumerate(edges) if not done[i] and remaining.get(e.src, 0) == 0]
        i = ready[int(rng.integers(len(ready)))]
        done[i] = True
        order.append(edges[i])
        if edges[i].dst is not None:
            remaining[edges[i].dst] -= 1
    return replace(cell, edges=tuple(order))


def inject_useless_op(cell: Cell, rng: np.random.Generator, ops: tuple[Operation, ...]) -> Cell:
    """Add a dead-end edge whose result nobody consumes."""
    edges = list(cell.edges)
    nodes = sorted({0, 1} | {e.dst for e in edges if e.dst is not None})
    src = nodes[int(rng.integers(len(nodes)))]
    choices = [o for o in ops if o.kind is not OpKind.SKIP]
    op = choices[int(rng.integers(len(choices)))]
    after = max((i for i, e in enumerate(edges) if e.dst == src), default=-1)
    pos = int(rng.integers(after + 1, len(edges) + 1))
    edges.insert(pos, Edge(src, None, op))
    return replace(cell, edges=tuple(edges))


def _subsequence(ops: list[Operation], stamp: tuple[Operation, ...]) -> bool:
    """Ground-truth analogue of trace matching (skip is never observable)."""
    it = iter(ops)
    return all(s.kind is OpKind.SKIP or any(o == s for o in it) for s in stamp)


def structured_prune_cell(
    cell: Cell,
    count: int,
    rng: np.random.Generator,
    stamp_edges: list[Edge] | None = None,
    stamp_ops: tuple[Operation, ...] = (),
) -> Cell:
    """Remove ``count`` edges; with ``stamp_edges`` (oracle mode) the victims
    are stamp edges, preferring a choice that breaks the op subsequence."""
    edges = list(cell.edges)
    if count <= 0:
        return cell
    if stamp_edges is None:
        pool = [i for i, e in enumerate(edges) if e.dst is not None]
        victims = set(int(i) for i in rng.choice(pool, size=min(count, len(pool)), replace=False))
    else:
        present = [i for i, e in enumerate(edges) if e in stamp_edges]
        hard = [i for i in present if edges[i].op.kind is not OpKind.SKIP]
        soft = [i for i in present if edges[i].op.kind is OpKind.SKIP]
        if len(hard) >= count:
            combos = list(itertools.combinations(hard, count))
            rng.shuffle(combos)
            victims = set(combos[0])
            for combo in combos:
                kept = [e.op for i, e in enumerate(edges) if i not in combo]
                if not _subsequence(kept, stamp_ops):
                    victims = set(combo)
                    break
        else:
            victims = set(hard) | set(soft[: count - len(hard)])
    return replace(cell, edges=tuple(e for i, e in enumerate(edges) if i not in victims))


# --- entry points --------------------------------------------------------

def apply_attack(
    arch: Architecture,
    spec: AttackSpec,
    mk: MarkingKey | None = None,
    profile: MachineProfile | None = None,
) -> Architecture:
    """Architecture-level transform; noise is trace-level and leaves ``arch`` as is."""
    rng = np.random.default_rng(spec.seed)
    kind = spec.kind
    if kind in (AttackKind.NOISE, AttackKind.FINE_TUNE):
        return arch
    if kind is AttackKind.SHUFFLE:
        return arch.with_cells(shuffle_cell(c, rng) for c in arch.cells)
    if kind is AttackKind.USELESS_OP:
        return arch.with_cells(inject_useless_op(c, rng, arch.candidate_ops) for c in arch.cells)
    if kind is AttackKind.USELESS_CELL:
        normals = [c for c in arch.cells if c.kind is CellKind.NORMAL and not c.decoy]
        base = normals[0] if normals else arch.cells[0]
        ops = arch.candidate_ops
        decoy = Cell(
            CellKind.NORMAL,
            tuple(Edge(e.src, e.dst, ops[int(rng.integers(len(ops)))]) for e in base.edges),
            decoy=True,
        )
        cells = list(arch.cells)
        cells.insert(int(rng.integers(len(cells) + 1)), decoy)
        return arch.with_cells(cells)
    if kind is AttackKind.WEIGHT_PRUNE:
        slope = (profile or MachineProfile()).prune_slope
        scale = 1.0 - slope * spec.rate
        return arch.with_cells(replace(c, duration_scale=c.duration_scale * scale) for c in arch.cells)
    if kind is AttackKind.BINARIZE:
        return replace(arch, speedup=arch.speedup * BINARIZE_SPEEDUP)
    if kind is AttackKind.STRUCTURED_PRUNE:
        if spec.mode == "oracle" and mk is None:
            raise ValueError("oracle structured pruning needs the marking key")
        cells = []
        real = 0
        for c in arch.cells:
            if spec.mode == "oracle" and not c.decoy:
                stamp = mk.stamp_for(real, c.kind)
                cells.append(structured_prune_cell(c, spec.count, rng, stamp.edge_ops(), stamp.ops))
            else:
                cells.append(structured_prune_cell(c, spec.count, rng))
            real += not c.decoy
        return arch.with_cells(cells)
    raise ValueError(f"unsupported attack {kind}")


def apply_trace_attack(trace: Trace, spec: AttackSpec) -> Trace:
    if spec.kind is AttackKind.NOISE:
        return perturb_trace(trace, spec.sigma, spec.seed)
    return trace
