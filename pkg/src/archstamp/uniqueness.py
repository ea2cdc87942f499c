"""Stamp collision probabilities: closed-form bound, exact value, Monte Carlo."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Callable

import numpy as np
from scipy.stats import binomtest

from .nas import Architecture, CellKind, CellSupernet
from .search import contains_stamp
from .watermark import MarkingKey, SearchSpace, Stamp

CHUNK = 1 << 16  # trials per seeded substream


def analytic_bound(num_nodes: int, n_s: int, num_ops: int) -> Fraction:
    """C(2B, n_s) / |O|^n_s, unclamped (it exceeds 1 for tiny spaces)."""
    if not 1 <= n_s <= num_nodes:
        raise ValueError(f"n_s={n_s} outside [1, {num_nodes}]")
    return Fraction(comb(2 * num_nodes, n_s), num_ops**n_s)


def clamp_bound(bound: Fraction) -> tuple[Fraction, bool]:
    """(min(1, bound), looseness flag)."""
    return (Fraction(1), True) if bound > 1 else (bound, False)


def stamp_probability(stamp: Stamp, supernet: CellSupernet) -> Fraction:
    """Exact chance that a uniformly sampled cell holds every stamp edge-op pair.

    Node t has t admissible sources and keeps a uniform pair of them, so a
    given edge survives with probability 2/t; stamp edges hit distinct nodes.
    """
    targets = [t for _, t in stamp.edges]
    if len(set(targets)) != len(targets):
        raise ValueError("stamp edges must target distinct nodes")
    p = Fraction(1)
    k = len(supernet.candidate_ops)
    for s, t in stamp.edges:
        if not supernet.is_admissible(s, t):
            return Fraction(0)
        n_src = len(supernet.sources(t))
        p *= Fraction(min(2, n_src), n_src) * Fraction(1, k)
    for op in stamp.ops:
        if op not in supernet.candidate_ops:
            return Fraction(0)
    return p


def exact_collision(space: SearchSpace, mk: MarkingKey) -> dict[str, Fraction]:
    """Per-type and joint exact collision probabilities for a uniform search."""
    normal = stamp_probability(mk.normal, space.normal)
    reduction = stamp_probability(mk.reduction, space.reduction)
    return {"normal": normal, "reduction": reduction, "joint": normal * reduction}


@dataclass
class CollisionStats:
    analytic_bound: Fraction
    analytic_loose: bool
    exact: dict[str, Fraction]
    trials: int
    collisions: int
    per_cell: dict[str, int] = field(default_factory=dict)
    ci: tuple[float, float] = (0.0, 1.0)
    histogram: dict[str, list[list[int]]] = field(default_factory=dict)

    @property
    def rate(self) -> float:
        return self.collisions / self.trials

    def cell_ci(self, kind: str) -> tuple[float, float]:
        return wilson(self.per_cell[kind], self.trials)

    def to_dict(self) -> dict:
        return {
            "analytic_bound": float(self.analytic_bound),
            "analytic_bound_exact": str(self.analytic_bound),
            "analytic_clamped": float(min(self.analytic_bound, 1)),
            "analytic_loose": self.analytic_loose,
            "joint_analytic": float(self.analytic_bound**2),
            "exact": {k: float(v) for k, v in self.exact.items()},
            "trials": self.trials,
            "collisions": self.collisions,
            "rate": self.rate,
            "wilson95": list(self.ci),
            "per_cell": self.per_cell,
            "histogram": self.histogram,
        }


def wilson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = binomtest(k, n).proportion_ci(confidence_level=level, method="wilson")
    return (float(ci.low), float(ci.high))


def _sample_hits(supernet: CellSupernet, stamp: Stamp, n: int, rng: np.random.Generator, hist: np.ndarray) -> np.ndarray:
    """Vectorized uniform cell sampler; returns per-trial stamp containment."""
    k = len(supernet.candidate_ops)
    op_index = {o: i for i, o in enumerate(supernet.candidate_ops)}
    want = {t: (s, op_index.get(o, -1)) for (s, t), o in zip(stamp.edges, stamp.ops)}
    edge_row = {e: i for i, e in enumerate(supernet.edges)}
    hit = np.ones(n, dtype=bool)
    for t in supernet.intermediate:
        srcs = supernet.sources(t)
        pairs = np.array([(a, b) for a in srcs for b in srcs if a < b], dtype=np.int64)
        pick = pairs[rng.integers(len(pairs), size=n)]
        ops = rng.integers(k, size=(n, 2))
        for slot in (0, 1):
            rows = np.array([edge_row[(int(s), t)] for s in srcs])[pick[:, slot]]
            hist += np.bincount(rows * k + ops[:, slot], minlength=hist.size).reshape(hist.shape)
        if t in want:
            s, o = want[t]
            hit &= ((pick[:, 0] == s) & (ops[:, 0] == o)) | ((pick[:, 1] == s) & (ops[:, 1] == o))
    return hit


def monte_carlo(
    mk: MarkingKey,
    trials: int,
    seed: int = 0,
    space: SearchSpace | None = None,
    strategy: Callable[[np.random.Generator], Architecture] | None = None,
) -> CollisionStats:
    """Count architectures that contain the stamp of ``mk`` by chance.

    The default strategy draws one uniform normal and one uniform reduction
    cell per trial; a custom ``strategy`` builds whole architectures.
    Results depend only on (seed, trials): each chunk of ``CHUNK`` trials
    owns a spawned substream.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    space = space or SearchSpace()
    n_ops = len(space.normal.candidate_ops)
    bound = analytic_bound(space.normal.num_nodes, mk.n_s, n_ops)
    exact = exact_collision(space, mk)
    n_chunks = -(-trials // CHUNK)
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    hist = {
        "normal": np.zeros((len(space.normal.edges), len(space.normal.candidate_ops)), dtype=np.int64),
        "reduction": np.zeros((len(space.reduction.edges), len(space.reduction.candidate_ops)), dtype=np.int64),
    }
    per_cell = {"normal": 0, "reduction": 0}
    collisions = 0
    for i, ss in enumerate(streams):
        n = min(CHUNK, trials - i * CHUNK)
        rng = np.random.default_rng(ss)
        if strategy is None:
            hn = _sample_hits(space.normal, mk.normal, n, rng, hist["normal"])
            hr = _sample_hits(space.reduction, mk.reduction, n, rng, hist["reduction"])
            per_cell["normal"] += int(hn.sum())
            per_cell["reduction"] += int(hr.sum())
            collisions += int((hn & hr).sum())
        else:
            for _ in range(n):
                arch = strategy(rng)
                collisions += contains_stamp(arch, mk)
                for kind in ("normal", "reduction"):
                    cell = next((c for c in arch.cells if c.kind is CellKind(kind) and not c.decoy), None)
                    if cell is not None:
                        stamp = mk.normal if kind == "normal" else mk.reduction
                        chosen = set(cell.chosen_edges)
                        per_cell[kind] += all(e in chosen for e in stamp.edge_ops())
    return CollisionStats(
        bound,
        bound > 1,
        exact,
        trials,
        collisions,
        per_cell,
        wilson(collisions, trials),
        {k: v.tolist() for k, v in hist.items()},
    )
