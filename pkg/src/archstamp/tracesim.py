"""Side-channel event trace simulation for a stacked NAS architecture.

A trace is the time-ordered stream of itcopy/oncopy accesses made by the
blocked GEMM routine, plus one framework event per pooling call.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import TraceParseError
from .io import write_text_atomic
from .machine import GemmPlan, MachineProfile, op_to_gemms, plan_gemm
from .nas import (
    CONV_3,
    FC,
    Architecture,
    CellKind,
    OpKind,
    TensorShape,
    edge_operand,
    output_shape,
    propagate_shapes,
)

ITCOPY, ONCOPY, POOL_AVG, POOL_MAX = 0, 1, 2, 3
API_NAMES = ("itcopy", "oncopy", "pool_avg", "pool_max")
API_CODES = {name: i for i, name in enumerate(API_NAMES)}
NOISE_FLOOR = 0.1


@dataclass(frozen=True)
class TraceEvent:
    t: int
    source: str
    api: str


def source_of(api: int) -> str:
    return "blas" if api <= ONCOPY else "framework"


@dataclass(frozen=True, eq=False)
class Trace:
    """Column-oriented event store; ``t`` is non-decreasing int64 cycles."""

    t: np.ndarray
    api: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64)
        api = np.asarray(self.api, dtype=np.int8)
        if t.shape != api.shape:
            raise ValueError("timestamp and api columns differ in length")
        if t.size and np.any(np.diff(t) < 0):
            raise ValueError("trace timestamps must be non-decreasing")
        t.setflags(write=False)
        api.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "api", api)

    def __len__(self) -> int:
        return int(self.t.size)

    def __iter__(self) -> Iterator[TraceEvent]:
        for t, a in zip(self.t.tolist(), self.api.tolist()):
            yield TraceEvent(t, source_of(a), API_NAMES[a])

    @property
    def events(self) -> list[TraceEvent]:
        return list(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.api, other.api)
            and self.meta == other.meta
        )

    @property
    def duration(self) -> int:
        return int(self.t[-1] - self.t[0]) if self.t.size else 0

    @property
    def api_sequence(self) -> str:
        return "".join("IOAM"[a] for a in self.api.tolist())

    @classmethod
    def from_events(cls, events, meta: dict | None = None) -> "Trace":
        events = list(events)
        return cls(
            np.array([e.t for e in events], dtype=np.int64),
            np.array([API_CODES[e.api] for e in events], dtype=np.int8),
            dict(meta or {}),
        )


def api_pattern(plan: GemmPlan) -> np.ndarray:
    """One GEMM's access sequence: per loop-2 pass, I then O^iter4 then I^iter3."""
    one = [ITCOPY] + [ONCOPY] * plan.iter4 + [ITCOPY] * plan.iter3
    return np.array(one * plan.iter2, dtype=np.int8)


def quantize(t: np.ndarray, granularity: int) -> np.ndarray:
    return (np.floor(np.asarray(t, dtype=np.float64) / granularity) * granularity).astype(np.int64)


def emit_gemm(plan: GemmPlan, t0: float = 0.0, granularity: int = 2000) -> list[TraceEvent]:
    """Events of a single GEMM, spread evenly over its duration."""
    apis = api_pattern(plan)
    times = quantize(t0 + np.arange(apis.size) * (plan.duration / apis.size), granularity)
    return [TraceEvent(int(t), "blas", API_NAMES[a]) for t, a in zip(times, apis)]


@dataclass(frozen=True)
class GemmTruth:
    """Ground truth for one simulated GEMM (tests and reports)."""

    cell: int  # -1 prologue, len(cells) classifier
    edge: int
    op: str
    role: str
    plan: GemmPlan
    first_event: int


class _Timeline:
    def __init__(self):
        self.intervals: list[np.ndarray] = []
        self.apis: list[np.ndarray] = []
        self.pending = 0.0
        self.count = 0

    def gap(self, x: float) -> None:
        self.pending += x

    def gemm_run(self, plan: GemmPlan, count: int, sep: float) -> int:
        """Append ``count`` back-to-back copies of one GEMM; returns first event index."""
        apis = api_pattern(plan)
        n = apis.size
        step = plan.duration / n
        block = np.full(n, step)
        block[0] = step + sep
        ints = np.tile(block, count)
        ints[0] = self.pending
        self.intervals.append(ints)
        self.apis.append(np.tile(apis, count))
        first = self.count
        self.count += n * count
        self.pending = step
        return first

    def point(self, api: int) -> int:
        self.intervals.append(np.array([self.pending]))
        self.apis.append(np.array([api], dtype=np.int8))
        self.pending = 0.0
        self.count += 1
        return self.count - 1

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.intervals:
            return np.zeros(0), np.zeros(0, dtype=np.int8)
        return np.concatenate(self.intervals), np.concatenate(self.apis)


def _emit_calls(tl: _Timeline, calls, profile, speedup, scale, sub_gap, truth, cell, edge, opname):
    """Emit a GEMM call list, grouping identical consecutive calls into runs."""
    i = 0
    first_run = True
    while i < len(calls):
        j = i
        while j < len(calls) and calls[j] == calls[i]:
            j += 1
        c = calls[i]
        plan = plan_gemm(c.dims, profile, speedup, c.compute_factor, scale)
        if not first_run:
            tl.gap(sub_gap)
        first = tl.gemm_run(plan, j - i, sub_gap)
        if truth is not None:
            per = plan.event_count
            truth.extend(GemmTruth(cell, edge, opname, c.role.value, plan, first + r * per) for r in range(j - i))
        first_run = False
        i = j


def _build(arch: Architecture, profile: MachineProfile, truth: list | None):
    s = profile.speedup * arch.speedup
    base = profile.base_gap / s
    sub = profile.sub_gap / s
    pool_half = 0.5 * profile.pool_gap / s
    cell_gap = profile.cell_gap / s
    tl = _Timeline()
    macro = arch.macro
    w, h = macro.input_size

    # prologue: stem convolutions
    shape = TensorShape(w, h, macro.in_channels)
    for p in range(macro.preprocessing):
        if p:
            tl.gap(base)
        calls = op_to_gemms(CONV_3, shape, 1, macro.initial_channels, profile=profile)
        _emit_calls(tl, calls, profile, arch.speedup, 1.0, sub, truth, -1, p, CONV_3.name)
        shape = TensorShape(w, h, macro.initial_channels)

    shapes = propagate_shapes(arch)
    for ci, cell in enumerate(arch.cells):
        tl.gap(cell_gap)
        first_op = True
        suppress = False
        for ei, edge in enumerate(cell.edges):
            op = edge.op
            if op.kind is OpKind.SKIP:
                tl.gap(base)
                suppress = False
            elif op.is_pool:
                tl.gap(pool_half)
                tl.point(POOL_AVG if op.kind is OpKind.AVG_POOL else POOL_MAX)
                tl.gap(pool_half)
                suppress = True
            else:
                if not first_op and not suppress:
                    tl.gap(base)
                operand, stride = edge_operand(cell, edge, shapes[ci])
                calls = op_to_gemms(op, operand, stride, operand.channels, profile=profile)
                _emit_calls(tl, calls, profile, arch.speedup, cell.duration_scale, sub, truth, ci, ei, op.name)
                suppress = False
            first_op = False

    tl.gap(cell_gap)
    final = output_shape(arch)
    calls = op_to_gemms(FC, final, out_channels=macro.num_classes, batch=macro.batch)
    _emit_calls(tl, calls, profile, arch.speedup, 1.0, sub, truth, len(arch.cells), 0, FC.name)
    return tl.arrays()


def apply_interval_noise(intervals: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Multiplicative Gaussian noise (mean 1, sd sigma) truncated at ``NOISE_FLOOR``."""
    if sigma <= 0:
        return intervals
    factors = np.maximum(NOISE_FLOOR, rng.normal(1.0, sigma, size=intervals.size))
    return intervals * factors


def _meta(profile: MachineProfile, seed, sigma: float, arch: Architecture | None = None) -> dict:
    meta = {
        "profile": profile.fingerprint,
        "granularity": profile.granularity,
        "seed": seed,
        "noise": sigma,
    }
    if arch is not None and arch.speedup != 1.0:
        meta["speedup"] = arch.speedup
    return meta


def simulate(
    arch: Architecture,
    profile: MachineProfile | None = None,
    seed: int | None = 0,
    sigma: float = 0.0,
    truth: list | None = None,
) -> Trace:
    """Full inference trace of ``arch``; pass a list as ``truth`` to collect GEMM ground truth."""
    profile = profile or MachineProfile()
    if not 0.0 <= sigma <= 0.5:
        raise ValueError("noise level must lie in [0, 0.5]")
    intervals, apis = _build(arch, profile, truth)
    rng = np.random.default_rng(seed)
    intervals = apply_interval_noise(intervals, sigma, rng)
    t = quantize(np.cumsum(intervals), profile.granularity)
    return Trace(t, apis, _meta(profile, seed, sigma, arch))


def perturb_trace(trace: Trace, sigma: float, seed: int | None = 0) -> Trace:
    """Re-noise the inter-event intervals of an existing trace."""
    if len(trace) < 2 or sigma <= 0:
        return trace
    g = int(trace.meta.get("granularity", 2000))
    rng = np.random.default_rng(seed)
    ints = np.diff(trace.t).astype(np.float64)
    ints = apply_interval_noise(ints, sigma, rng)
    t = quantize(trace.t[0] + np.concatenate([[0.0], np.cumsum(ints)]), g)
    meta = dict(trace.meta)
    meta["noise"] = float(meta.get("noise", 0.0)) + sigma
    return Trace(t, trace.api, meta)


# --- trace files ---------------------------------------------------------

def export_trace(trace: Trace, path: str | Path) -> Path:
    """Line-oriented JSON: a meta header, then one event per line (written atomically)."""
    lines = [json.dumps({"meta": trace.meta}, sort_keys=True)]
    src = ("blas", "blas", "framework", "framework")
    for t, a in zip(trace.t.tolist(), trace.api.tolist()):
        lines.append(f'{{"t":{t},"src":"{src[a]}","api":"{API_NAMES[a]}"}}')
    return write_text_atomic(path, "\n".join(lines) + "\n")


def import_trace(path: str | Path) -> Trace:
    meta: dict = {}
    ts: list[int] = []
    apis: list[int] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict):
                raise TraceParseError("record is not an object", lineno)
            if "meta" in rec:
                if ts:
                    raise TraceParseError("meta header after events", lineno)
                meta = dict(rec["meta"])
                continue
            try:
                t = int(rec["t"])
                api = API_CODES[rec["api"]]
            except (KeyError, TypeError, ValueError):
                raise TraceParseError("event needs integer 't' and a known 'api'", lineno) from None
            if rec.get("src", source_of(api)) != source_of(api):
                raise TraceParseError(f"api {rec['api']} does not belong to source {rec.get('src')}", lineno)
            if ts and t < ts[-1]:
                raise TraceParseError("non-monotonic timestamp", lineno)
            ts.append(t)
            apis.append(api)
    return Trace(np.array(ts, dtype=np.int64), np.array(apis, dtype=np.int8), meta)


def cell_kinds(arch: Architecture) -> list[str]:
    return ["decoy" if c.decoy else c.kind.value for c in arch.cells]


__all__ = [
    "CellKind",
    "GemmTruth",
    "Trace",
    "TraceEvent",
    "emit_gemm",
    "export_trace",
    "import_trace",
    "perturb_trace",
    "simulate",
]
