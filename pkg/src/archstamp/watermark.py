"""Stamp path enumeration and marking/verification key generation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidStampSizeError
from .nas import (
    INPUT_A,
    INPUT_B,
    CellKind,
    CellSupernet,
    Edge,
    MacroParams,
    Operation,
    node_name,
)

EdgePair = tuple[int, int]


@dataclass(frozen=True)
class SearchSpace:
    """Per-cell-type supernets; the default uses the same DAG for both types."""

    normal: CellSupernet = field(default_factory=lambda: CellSupernet(4))
    reduction: CellSupernet = field(default_factory=lambda: CellSupernet(4))

    def supernet(self, kind: CellKind) -> CellSupernet:
        return self.normal if kind is CellKind.NORMAL else self.reduction


@dataclass(frozen=True)
class Stamp:
    edges: tuple[EdgePair, ...]
    ops: tuple[Operation, ...]

    def __post_init__(self):
        if len(self.edges) != len(self.ops):
            raise ValueError("stamp edges and ops differ in length")

    @property
    def size(self) -> int:
        return len(self.ops)

    def edge_ops(self) -> list[Edge]:
        return [Edge(s, t, o) for (s, t), o in zip(self.edges, self.ops)]

    def describe(self) -> str:
        return ", ".join(f"{node_name(s)}->{node_name(t)}:{o}" for (s, t), o in zip(self.edges, self.ops))


@dataclass(frozen=True)
class MarkingKey:
    """Per-type stamps (mk_n, mk_r); ``cells`` optionally overrides with one stamp per cell."""

    n_s: int
    normal: Stamp
    reduction: Stamp
    macro: MacroParams = field(default_factory=MacroParams)
    cells: tuple[Stamp, ...] | None = None

    def stamp_for(self, index: int, kind: CellKind) -> Stamp:
        if self.cells is not None:
            return self.cells[index]
        return self.normal if kind is CellKind.NORMAL else self.reduction

    def verification_key(self) -> "VerificationKey":
        return VerificationKey(
            self.n_s,
            self.normal.ops,
            self.reduction.ops,
            self.macro,
            None if self.cells is None else tuple(s.ops for s in self.cells),
        )


@dataclass(frozen=True)
class VerificationKey:
    n_s: int
    normal: tuple[Operation, ...]
    reduction: tuple[Operation, ...]
    macro: MacroParams = field(default_factory=MacroParams)
    cells: tuple[tuple[Operation, ...], ...] | None = None

    def expand(self) -> list[tuple[Operation, ...]]:
        """One expected op sequence per cell window, in trace order."""
        if self.cells is not None:
            return list(self.cells)
        return [self.normal if k is CellKind.NORMAL else self.reduction for k in self.macro.layout()]

    @property
    def size(self) -> int:
        return len(self.expand())


def get_path(supernet: CellSupernet, n_s: int) -> list[tuple[EdgePair, ...]]:
    """All consecutive paths with exactly ``n_s`` edges.

    Builds the full input-to-N_B paths by the P_i recurrence and cuts every
    length-``n_s`` window out of them.
    """
    B = supernet.num_nodes
    if not 1 <= n_s <= B:
        raise InvalidStampSizeError(f"stamp size {n_s} outside [1, {B}]")
    prefixes: dict[int, list[tuple[int, ...]]] = {}
    for j in range(1, B + 1):
        target = j + 1
        heads: list[tuple[int, ...]] = [(INPUT_A,), (INPUT_B,)]
        for i in range(1, j):
            heads.extend(prefixes[i])
        prefixes[j] = [p + (target,) for p in heads]
    found: set[tuple[EdgePair, ...]] = set()
    for p in prefixes[B]:
        edges = tuple(zip(p[:-1], p[1:]))
        for start in range(len(edges) - n_s + 1):
            found.add(edges[start : start + n_s])
    return sorted(found)


def _sample_stamp(supernet: CellSupernet, n_s: int, rng: np.random.Generator) -> Stamp:
    paths = get_path(supernet, n_s)
    if not paths:
        raise InvalidStampSizeError(f"no path of length {n_s}")
    path = paths[int(rng.integers(len(paths)))]
    ops = supernet.candidate_ops
    chosen = tuple(ops[int(i)] for i in rng.integers(len(ops), size=n_s))
    return Stamp(path, chosen)


def wmgen(
    n_s: int,
    space: SearchSpace | None = None,
    seed: int | np.random.Generator | None = 0,
    macro: MacroParams = MacroParams(),
    per_cell: bool = False,
) -> tuple[MarkingKey, VerificationKey]:
    """Sample a marking key and its verification key.

    Default: one stamp per cell type, replicated. ``per_cell=True`` draws a
    fresh path and op list for every cell of the macro layout.
    """
    space = space or SearchSpace()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    normal = _sample_stamp(space.normal, n_s, rng)
    reduction = _sample_stamp(space.reduction, n_s, rng)
    cells = None
    if per_cell:
        cells = tuple(_sample_stamp(space.supernet(k), n_s, rng) for k in macro.layout())
    mk = MarkingKey(n_s, normal, reduction, macro, cells)
    return mk, mk.verification_key()


def make_key(
    normal: tuple[Sequence[EdgePair], Sequence[Operation | str]],
    reduction: tuple[Sequence[EdgePair], Sequence[Operation | str]],
    macro: MacroParams = MacroParams(),
) -> MarkingKey:
    """Owner-crafted key from explicit (edges, ops) pairs."""

    def stamp(pair) -> Stamp:
        edges, ops = pair
        ops = tuple(o if isinstance(o, Operation) else Operation.parse(o) for o in ops)
        return Stamp(tuple((int(s), int(t)) for s, t in edges), ops)

    n, r = stamp(normal), stamp(reduction)
    if n.size != r.size:
        raise InvalidStampSizeError("normal and reduction stamps must share n_s")
    return MarkingKey(n.size, n, r, macro)


def validate_stamp(stamp: Stamp, supernet: CellSupernet, n_s: int) -> list[str]:
    problems = []
    if not 1 <= stamp.size <= supernet.num_nodes:
        problems.append(f"stamp size {stamp.size} outside [1, {supernet.num_nodes}]")
    if stamp.size != n_s:
        problems.append(f"stamp size {stamp.size} does not match n_s={n_s}")
    for i, (s, t) in enumerate(stamp.edges):
        if not supernet.is_admissible(s, t):
            problems.append(f"edge {i} ({s}->{t}) not in supernet")
        if i and stamp.edges[i - 1][1] != s:
            problems.append(f"path broken at index {i}")
    for i, op in enumerate(stamp.ops):
        if op not in supernet.candidate_ops:
            problems.append(f"unknown operation {op} at index {i}")
    return problems


def validate_key(mk: MarkingKey, space: SearchSpace | None = None) -> list[str]:
    """Report-style check; an empty list means the key is valid."""
    space = space or SearchSpace()
    report = [f"normal: {p}" for p in validate_stamp(mk.normal, space.normal, mk.n_s)]
    report += [f"reduction: {p}" for p in validate_stamp(mk.reduction, space.reduction, mk.n_s)]
    if mk.cells is not None:
        layout = mk.macro.layout()
        if len(mk.cells) != len(layout):
            report.append(f"per-cell stamps: {len(mk.cells)} given, layout has {len(layout)} cells")
        for i, (st, kind) in enumerate(zip(mk.cells, layout)):
            report += [f"cell {i}: {p}" for p in validate_stamp(st, space.supernet(kind), mk.n_s)]
    return report


# --- serialization -------------------------------------------------------

def _stamp_doc(stamp: Stamp, with_edges: bool) -> dict:
    doc = {"ops": [o.name for o in stamp.ops]}
    if with_edges:
        doc = {"edges": [list(e) for e in stamp.edges], **doc}
    return doc


def mk_to_dict(mk: MarkingKey) -> dict:
    doc = {
        "n_s": mk.n_s,
        "normal": _stamp_doc(mk.normal, True),
        "reduction": _stamp_doc(mk.reduction, True),
        "macro": mk.macro.to_dict(),
    }
    if mk.cells is not None:
        doc["cells"] = [_stamp_doc(s, True) for s in mk.cells]
    return doc


def vk_to_dict(vk: VerificationKey) -> dict:
    doc = {
        "n_s": vk.n_s,
        "normal": {"ops": [o.name for o in vk.normal]},
        "reduction": {"ops": [o.name for o in vk.reduction]},
        "macro": vk.macro.to_dict(),
    }
    if vk.cells is not None:
        doc["cells"] = [{"ops": [o.name for o in ops]} for ops in vk.cells]
    return doc


def _parse_stamp(doc: dict) -> Stamp:
    return Stamp(tuple((int(s), int(t)) for s, t in doc["edges"]), tuple(Operation.parse(o) for o in doc["ops"]))


def mk_from_dict(doc: dict) -> MarkingKey:
    cells = tuple(_parse_stamp(c) for c in doc["cells"]) if "cells" in doc else None
    return MarkingKey(
        int(doc["n_s"]),
        _parse_stamp(doc["normal"]),
        _parse_stamp(doc["reduction"]),
        MacroParams.from_dict(doc.get("macro", {})),
        cells,
    )


def vk_from_dict(doc: dict) -> VerificationKey:
    ops = lambda d: tuple(Operation.parse(o) for o in d["ops"])  # noqa: E731
    cells = tuple(ops(c) for c in doc["cells"]) if "cells" in doc else None
    return VerificationKey(
        int(doc["n_s"]),
        ops(doc["normal"]),
        ops(doc["reduction"]),
        MacroParams.from_dict(doc.get("macro", {})),
        cells,
    )


def save_keys(mk: MarkingKey, stem: str | Path) -> tuple[Path, Path]:
    """Write ``<stem>.mk.json`` and ``<stem>.vk.json``."""
    from .io import write_json_atomic

    stem = Path(stem)
    mk_path = stem.with_name(stem.name + ".mk.json")
    vk_path = stem.with_name(stem.name + ".vk.json")
    write_json_atomic(mk_path, mk_to_dict(mk))
    write_json_atomic(vk_path, vk_to_dict(mk.verification_key()))
    return mk_path, vk_path


def load_mk(path: str | Path) -> MarkingKey:
    return mk_from_dict(json.loads(Path(path).read_text()))


def load_vk(path: str | Path) -> VerificationKey:
    return vk_from_dict(json.loads(Path(path).read_text()))
