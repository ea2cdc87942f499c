"""Watermark embedding: pin the stamp edges, search the remaining slots."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArchitectureError, SearchInfeasibleError
from .io import dumps
from .nas import Architecture, CellSupernet, sample_cell
from .watermark import EdgePair, MarkingKey, SearchSpace, Stamp


@dataclass(frozen=True)
class RestrictedSpace:
    base: CellSupernet
    fixed: Stamp

    @property
    def free_edges(self) -> tuple[EdgePair, ...]:
        pinned = set(self.fixed.edges)
        return tuple(e for e in self.base.edges if e not in pinned)

    @property
    def free_slots(self) -> int:
        return self.base.slot_count - self.fixed.size


class Strategy(enum.Enum):
    UNIFORM_RANDOM = "random"
    GREEDY_MOCK = "greedy"


def pseudo_score(arch: Architecture) -> float:
    """Deterministic stand-in for validation accuracy, in [0, 1)."""
    digest = hashlib.sha256(dumps(arch.to_dict()).encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


@dataclass(frozen=True)
class SearchStrategy:
    strategy: Strategy = Strategy.UNIFORM_RANDOM
    candidates: int = 8  # completions scored by GreedyMock


def _complete(mk: MarkingKey, space: SearchSpace, rng: np.random.Generator) -> Architecture:
    layout = mk.macro.layout()
    per_type = {}
    cells = []
    for i, kind in enumerate(layout):
        stamp = mk.stamp_for(i, kind)
        key = kind if mk.cells is None else i
        if key not in per_type:
            sn = space.supernet(kind)
            try:
                per_type[key] = sample_cell(sn, kind, rng, stamp.edge_ops())
            except InvalidArchitectureError as exc:
                raise SearchInfeasibleError(str(exc)) from exc
        cells.append(per_type[key])
    return Architecture(tuple(cells), mk.macro, space.normal.num_nodes, space.normal.candidate_ops)


def mark(
    mk: MarkingKey,
    strategy: SearchStrategy = SearchStrategy(),
    seed: int | np.random.Generator | None = 0,
    space: SearchSpace | None = None,
) -> Architecture:
    """Search a complete architecture whose cells contain their stamps verbatim."""
    space = space or SearchSpace()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if strategy.strategy is Strategy.UNIFORM_RANDOM:
        arch = _complete(mk, space, rng)
    else:
        pool = [_complete(mk, space, rng) for _ in range(max(1, strategy.candidates))]
        arch = max(pool, key=pseudo_score)
    for cell, kind in zip(arch.cells, arch.kinds):
        cell.check(space.supernet(kind))
    return arch


def contains_stamp(arch: Architecture, mk: MarkingKey) -> bool:
    """True iff every (non-decoy) cell holds its stamp's edge-operation pairs."""
    cells = [c for c in arch.cells if not c.decoy]
    layout = mk.macro.layout()
    if mk.cells is not None and len(cells) != len(layout):
        return False
    for i, cell in enumerate(cells):
        stamp = mk.stamp_for(i, cell.kind)
        chosen = set(cell.chosen_edges)
        if not all(e in chosen for e in stamp.edge_ops()):
            return False
    return bool(cells)


def cell_contains(cell_edges, stamp: Stamp) -> bool:
    chosen = set(cell_edges)
    return all(e in chosen for e in stamp.edge_ops())
