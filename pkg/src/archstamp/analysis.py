"""Trace analysis: segment an event trace into cell windows, decompose GEMM
clusters, and recover operation classes, kernels and channel counts.

Gap thresholds scale with the trace itself: the largest interval is always
an inter-cell gap, and the median inter-cell gap divided by its nominal
length gives the time scale used for every finer threshold.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NotANASModelError
from .machine import DimRanges, GemmDims, MachineProfile, gemm_duration, invert_iterations, iteration_counts
from .machine import kernel_size_from_timing
from .nas import MacroParams
from .tracesim import ITCOPY, ONCOPY, POOL_AVG, Trace


class OpClass(enum.Enum):
    SC = "SC"
    DS = "DS"
    CONV_OR_FC = "NormalConvOrFC"
    POOL = "Pool"
    GAP_ONLY = "GapOnly"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class AnalyzerConfig:
    """Threshold knobs; absolute overrides are in trace cycles."""

    cell_gap_ratio: float = 30.0      # cell gap > max interval / ratio
    min_separation: float = 3.0       # min cell gap / max in-window interval
    op_gap_fraction: float = 0.05     # op boundary > fraction * base_gap * scale
    pool_gap_factor: float = 1.25     # gap-only pool detection (no framework events)
    merge_factor: float = 3.0         # loop-2 iterations merge below this * intra spacing
    noise_assumption: float | None = None  # None: estimate from the trace
    z: float = 3.0
    kernels: tuple[int, ...] = (3, 5)
    macro: MacroParams | None = None
    cell_threshold: float | None = None
    op_threshold: float | None = None


@dataclass(frozen=True)
class Cluster:
    """One decomposed GEMM: ``iter2`` loop-2 passes of I O^iter4 I^iter3."""

    start: int  # first event index (global)
    stop: int   # one past the last event
    iter2: int
    iter3: int
    iter4: int
    t_start: int
    t_end: int
    malformed: bool = False

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start

    @property
    def signature(self) -> tuple[int, int]:
        return (self.iter4, self.iter3)

    @property
    def event_count(self) -> int:
        return self.stop - self.start


@dataclass
class CellWindow:
    index: int
    start: int
    stop: int
    t_start: int
    t_end: int
    clusters: list[Cluster] = field(default_factory=list)
    gaps: list[int] = field(default_factory=list)
    framework: list[tuple[int, int]] = field(default_factory=list)  # (t, api code)


@dataclass(frozen=True)
class RecoveredDims:
    ranges: DimRanges
    m: int | None = None
    n: int | None = None
    k: int | None = None


@dataclass(frozen=True)
class RecoveredOp:
    cls: OpClass
    kernel: int | None = None
    channels: int | None = None
    pool_type: str | None = None  # "avg", "max" or None (unknown)
    dims: tuple[RecoveredDims, ...] = ()
    t_start: int = 0
    t_end: int = 0
    clusters: int = 0

    def label(self) -> str:
        if self.cls is OpClass.POOL:
            return f"Pool({self.pool_type or 'unknown'})"
        if self.cls in (OpClass.SC, OpClass.DS):
            k = f"{self.kernel}x{self.kernel}" if self.kernel else "?x?"
            return f"{self.cls.value}{k}@{self.channels}"
        return self.cls.value

    def to_dict(self) -> dict:
        doc = {"class": self.cls.value, "t_start": self.t_start, "t_end": self.t_end}
        if self.kernel is not None:
            doc["kernel"] = self.kernel
        if self.channels is not None:
            doc["channels"] = self.channels
        if self.cls is OpClass.POOL:
            doc["pool_type"] = self.pool_type or "unknown"
        if self.dims:
            doc["dims"] = [
                {"m": list(d.ranges.m), "n": list(d.ranges.n), "k": list(d.ranges.k),
                 "m_fixed": d.m, "n_fixed": d.n, "k_fixed": d.k}
                for d in self.dims
            ]
        return doc


@dataclass
class Segmentation:
    prologue: CellWindow
    windows: list[CellWindow]
    epilogue: CellWindow
    time_scale: float
    cell_threshold: float
    op_threshold: float
    has_framework: bool


@dataclass
class RecoveredArchitecture:
    windows: list[list[RecoveredOp]]
    prologue: list[RecoveredOp]
    epilogue: list[RecoveredOp]
    blocks: list[int]
    distinct: int
    time_scale: float

    def operations(self, i: int) -> list[RecoveredOp]:
        """Window ``i`` without GapOnly tokens."""
        return [o for o in self.windows[i] if o.cls is not OpClass.GAP_ONLY]

    def to_dict(self) -> dict:
        return {
            "verdict": "nas",
            "time_scale": self.time_scale,
            "macro": {"windows": len(self.windows), "blocks": self.blocks, "distinct": self.distinct},
            "prologue": [o.to_dict() for o in self.prologue],
            "windows": [[o.to_dict() for o in w] for w in self.windows],
            "epilogue": [o.to_dict() for o in self.epilogue],
        }


# --- segmentation --------------------------------------------------------

def segment(trace: Trace, profile: MachineProfile | None = None, cfg: AnalyzerConfig = AnalyzerConfig()) -> Segmentation:
    """Split a trace into prologue, cell windows and epilogue.

    Raises ``NotANASModelError`` when no clean window structure exists.
    """
    profile = profile or MachineProfile()
    n = len(trace)
    if n < 2:
        raise NotANASModelError("trace too short to contain cell windows")
    t = trace.t
    d = np.diff(t)
    g = float(trace.meta.get("granularity", profile.granularity))
    thr = cfg.cell_threshold if cfg.cell_threshold is not None else d.max() / cfg.cell_gap_ratio
    cuts = np.flatnonzero(d > thr)
    if cuts.size < 2:
        raise NotANASModelError("fewer than three gap-separated segments")
    inner = d[d <= thr]
    max_inner = max(float(inner.max()) if inner.size else 0.0, g)
    if float(d[cuts].min()) / max_inner < cfg.min_separation:
        raise NotANASModelError("no separation between cell gaps and in-window intervals")
    scale = float(np.median(d[cuts])) / profile.cell_gap
    op_thr = cfg.op_threshold if cfg.op_threshold is not None else cfg.op_gap_fraction * profile.base_gap * scale
    starts = np.concatenate([[0], cuts + 1])
    stops = np.concatenate([cuts + 1, [n]])
    has_fw = bool(np.any(trace.api > ONCOPY))
    segs = [
        _build_window(trace, i - 1, int(a), int(b), op_thr, g, cfg)
        for i, (a, b) in enumerate(zip(starts, stops))
    ]
    return Segmentation(segs[0], segs[1:-1], segs[-1], scale, float(thr), float(op_thr), has_fw)


def _build_window(trace: Trace, index: int, lo: int, hi: int, op_thr: float, g: float, cfg: AnalyzerConfig) -> CellWindow:
    t, a = trace.t, trace.api
    win = CellWindow(index, lo, hi, int(t[lo]), int(t[hi - 1]))
    fw = np.flatnonzero(a[lo:hi] > ONCOPY) + lo
    win.framework = [(int(t[i]), int(a[i])) for i in fw]
    win.clusters = decompose(t, a, lo, hi, op_thr, g, cfg.merge_factor)
    win.gaps = [c.t_start - p.t_end for p, c in zip(win.clusters, win.clusters[1:])]
    return win


def decompose(t: np.ndarray, a: np.ndarray, lo: int, hi: int, op_thr: float, g: float, merge_factor: float = 3.0) -> list[Cluster]:
    """Split the GEMM events of ``[lo, hi)`` into clusters by the I O^y I^z grammar."""
    idx = np.flatnonzero(a[lo:hi] <= ONCOPY) + lo
    if idx.size == 0:
        return []
    ab, tb = a[idx], t[idx]
    starts = np.flatnonzero((ab[:-1] == ITCOPY) & (ab[1:] == ONCOPY))
    clusters: list[Cluster] = []
    if starts.size == 0 or starts[0] > 0:
        end = int(starts[0]) if starts.size else idx.size
        clusters.append(Cluster(int(idx[0]), int(idx[end - 1]) + 1, 0, 0, 0, int(tb[0]), int(tb[end - 1]), True))
        if starts.size == 0:
            return clusters
    ends = np.append(starts[1:], idx.size)
    is_o = (ab == ONCOPY).astype(np.int64)
    ocum = np.concatenate([[0], np.cumsum(is_o)])
    y = ocum[ends] - ocum[starts]
    z = ends - starts - 1 - y
    db = np.diff(tb).astype(np.float64)
    # max spacing inside each iteration (every iteration has >= 2 events)
    inner = np.append(db, 0.0)
    inner[ends[:-1] - 1] = 0.0  # drop the hop into the next iteration
    intra = np.maximum.reduceat(inner, starts)
    intra = np.where(ends - starts > 1, intra, 0.0)
    fwcum = np.concatenate([[0], np.cumsum(a > ONCOPY)])
    gap = tb[starts[1:]] - tb[ends[:-1] - 1]
    fw_between = fwcum[idx[starts[1:]]] - fwcum[idx[ends[:-1] - 1]] > 0
    limit = merge_factor * np.maximum(np.maximum(intra[1:], intra[:-1]), g)
    merge = (
        (y[1:] == y[:-1])
        & (z[1:] == z[:-1])
        & (gap < limit)
        & (gap < op_thr)
        & ~fw_between
    )
    group_start = np.concatenate([[True], ~merge])
    heads = np.flatnonzero(group_start)
    tails = np.append(heads[1:], starts.size) - 1
    for h, tl in zip(heads.tolist(), tails.tolist()):
        s, e = int(starts[h]), int(ends[tl])
        clusters.append(
            Cluster(int(idx[s]), int(idx[e - 1]) + 1, tl - h + 1, int(z[h]), int(y[h]), int(tb[s]), int(tb[e - 1]))
        )
    return clusters


# --- classification ------------------------------------------------------

@dataclass(frozen=True)
class _Context:
    profile: MachineProfile
    scale: float
    op_thr: float
    g: float
    has_framework: bool
    m0: int | None
    c0: int | None
    cfg: AnalyzerConfig
    sigma: float = 0.3


def _snap_m(r: tuple[int, int], channels: int | None, ctx: _Context | None) -> int:
    lo, hi = r
    if ctx is not None and ctx.m0 and ctx.c0 and channels:
        cand = ctx.m0 * ctx.c0 * ctx.c0 / (channels * channels)
        if cand == int(cand) and lo < cand <= hi:
            return int(cand)
    p = 1
    best = None
    while p <= hi:
        if p > lo:
            best = p
        p *= 4
    if best is not None:
        return best
    side = math.isqrt(hi)
    return side * side if side * side > lo else hi


def recover_dims(cluster: Cluster, profile: MachineProfile | None = None, channels: int | None = None, ctx: _Context | None = None) -> RecoveredDims:
    """Dimension ranges of a cluster plus NAS-constrained point values.

    ``m`` snaps to a square spatial size inside its range; ``n`` equals
    the channel count when known and consistent with ``iter4``.
    """
    profile = profile or MachineProfile()
    ranges = invert_iterations(cluster.iter2, cluster.iter3, cluster.iter4, profile)
    m = _snap_m(ranges.m, channels, ctx)
    n = None
    if channels is not None and ranges.n[0] < channels <= ranges.n[1]:
        n = channels
    elif ranges.n[1] - ranges.n[0] == 1:
        n = ranges.n[1]
    k = None
    if channels is not None and ranges.k[0] < channels <= ranges.k[1]:
        k = channels
    return RecoveredDims(ranges, m, n, k)


def _runs(clusters: list[Cluster]) -> list[tuple[tuple[int, int], int]]:
    runs: list[tuple[tuple[int, int], int]] = []
    for c in clusters:
        if runs and runs[-1][0] == c.signature:
            runs[-1] = (c.signature, runs[-1][1] + 1)
        else:
            runs.append((c.signature, 1))
    return runs


def _kernel(cls: OpClass, dw: list[Cluster], pw: list[Cluster], channels: int, m: int, ctx: _Context) -> int | None:
    """Kernel size from the depthwise/pointwise span ratio (invariant to
    uniform slow-downs such as pruning).

    ``pw`` may hold every same-shape pointwise GEMM of the window; they all
    share dimensions, and pooling them tightens the reference.
    """
    p = ctx.profile
    passes = 2 if cls is OpClass.SC else 1
    s_dw = float(sum(c.duration for c in dw)) / passes
    s_pw = float(sum(c.duration for c in pw)) / len(pw)
    if s_pw <= 0 or s_dw <= 0:
        return None
    observed = s_dw / s_pw
    speed = 1.0 / (ctx.scale * p.speedup)
    factor = p.dilation_speedup if cls is OpClass.DS else 1.0
    n_pw_events = pw[0].event_count
    pw_dur = gemm_duration(GemmDims(m, channels, channels), p, speed)
    pw_span = pw_dur * (n_pw_events - 1) / n_pw_events
    preds = {}
    for r in ctx.cfg.kernels:
        dims = GemmDims(m, 1, r * r)
        i2, i3, i4 = iteration_counts(dims, p)
        n_ev = i2 * (1 + i3 + i4)
        preds[r] = channels * gemm_duration(dims, p, speed, factor) * (n_ev - 1) / n_ev / pw_span
    n_dw_int = sum(c.event_count - 1 for c in dw)
    n_pw_int = sum(c.event_count - 1 for c in pw)
    s_dw_all = s_dw * passes
    s_pw_all = s_pw * len(pw)
    quant = ctx.g**2 * (len(dw) / 6.0) / s_dw_all**2 + ctx.g**2 * (len(pw) / 6.0) / s_pw_all**2
    noise = ctx.sigma**2 * (1.0 / max(n_dw_int, 1) + 1.0 / max(n_pw_int, 1))
    unc = ctx.cfg.z * observed * math.sqrt(quant + noise)
    return kernel_size_from_timing(preds, observed, unc)


def _structure(clusters: list[Cluster]):
    """(class, channels, depthwise, pointwise) of a separable op, else ``None``."""
    if any(c.malformed for c in clusters):
        return None
    runs = _runs(clusters)
    sigs = [s for s, _ in runs]
    counts = [c for _, c in runs]
    if len(runs) == 4 and sigs[0] == sigs[2] != sigs[1] == sigs[3] and counts[1] == counts[3] == 1 and counts[0] == counts[2]:
        cls = OpClass.SC
    elif len(runs) == 2 and sigs[0] != sigs[1] and counts[1] == 1:
        cls = OpClass.DS
    else:
        return None
    dw = [c for c in clusters if c.signature == sigs[0]]
    pw = [c for c in clusters if c.signature == sigs[1]]
    return cls, counts[0], dw, pw


def _parse_gemm_op(clusters: list[Cluster], ctx: _Context, reference: dict | None = None) -> RecoveredOp:
    t0, t1 = clusters[0].t_start, clusters[-1].t_end
    if len(clusters) == 1 and not clusters[0].malformed:
        c = clusters[0]
        return RecoveredOp(OpClass.CONV_OR_FC, dims=(recover_dims(c, ctx.profile, None, ctx),), t_start=t0, t_end=t1, clusters=1)
    parsed = _structure(clusters)
    if parsed is None:
        return RecoveredOp(OpClass.UNKNOWN, t_start=t0, t_end=t1, clusters=len(clusters))
    cls, channels, dw, pw = parsed
    dw_dims = recover_dims(dw[0], ctx.profile, None, ctx)
    pw_dims = recover_dims(pw[0], ctx.profile, channels, ctx)
    m = _snap_m(dw_dims.ranges.m, channels, ctx)
    ref = (reference or {}).get((pw[0].signature, channels), pw)
    kernel = _kernel(cls, dw, ref, channels, m, ctx)
    dw_dims = RecoveredDims(dw_dims.ranges, m, 1, kernel * kernel if kernel else None)
    pw_dims = RecoveredDims(pw_dims.ranges, m, pw_dims.n, channels)
    return RecoveredOp(cls, kernel, channels, None, (dw_dims, pw_dims), t0, t1, len(clusters))


def classify_cluster_group(window: CellWindow, ctx: _Context | None = None) -> list[RecoveredOp]:
    """Recovered op tokens of one window in time order, GapOnly at every boundary."""
    ctx = ctx or _default_context()
    items: list[tuple[int, object]] = []  # (time, payload)
    groups: list[list[Cluster]] = []
    for c in window.clusters:
        fw_before = groups and any(groups[-1][-1].t_end <= ft <= c.t_start for ft, _ in window.framework)
        if groups and not fw_before and c.t_start - groups[-1][-1].t_end <= ctx.op_thr:
            groups[-1].append(c)
        else:
            groups.append([c])
    for grp in groups:
        items.append((grp[0].t_start, grp))
    for ft, api in window.framework:
        items.append((ft, api))
    items.sort(key=lambda it: it[0])
    reference: dict = {}
    for grp in groups:
        parsed = _structure(grp)
        if parsed is not None:
            reference.setdefault((parsed[3][0].signature, parsed[1]), []).extend(parsed[3])
    gap = RecoveredOp(OpClass.GAP_ONLY)
    out: list[RecoveredOp] = [gap]
    prev_end = None
    for tm, payload in items:
        if prev_end is not None and not ctx.has_framework and _gap_hides_pool(tm - prev_end, ctx):
            out.append(RecoveredOp(OpClass.POOL, t_start=prev_end, t_end=tm))
            out.append(gap)
        if isinstance(payload, list):
            op = _parse_gemm_op(payload, ctx, reference)
            prev_end = payload[-1].t_end
        else:
            op = RecoveredOp(OpClass.POOL, pool_type="avg" if payload == POOL_AVG else "max", t_start=tm, t_end=tm)
            prev_end = tm
        out.append(op)
        out.append(gap)
    return out


def _gap_hides_pool(gap: float, ctx: _Context) -> bool:
    """Skips add whole base gaps; a pool leaves a half-gap remainder."""
    u = gap / (ctx.profile.base_gap * ctx.scale)
    return u >= ctx.cfg.pool_gap_factor and round(2 * u) % 2 == 1


def _default_context() -> _Context:
    p = MachineProfile()
    return _Context(p, 1.0, AnalyzerConfig().op_gap_fraction * p.base_gap, float(p.granularity), True, None, None, AnalyzerConfig())


def macro_runs(signatures: list) -> tuple[list[int], int]:
    """Block sizes and distinct-window count from per-window signatures."""
    runs: list[int] = []
    prev = object()
    for s in signatures:
        if runs and s == prev:
            runs[-1] += 1
        else:
            runs.append(1)
        prev = s
    if any(r > 1 for r in runs):
        return [r for r in runs if r > 1], sum(1 for r in runs if r == 1)
    return runs, 0


def window_signature(ops: list[RecoveredOp]) -> tuple:
    return tuple((o.cls.value, o.channels, o.pool_type) for o in ops if o.cls is not OpClass.GAP_ONLY)


def analyze(trace: Trace, profile: MachineProfile | None = None, cfg: AnalyzerConfig = AnalyzerConfig()) -> RecoveredArchitecture:
    """Segment and classify a whole trace."""
    profile = profile or MachineProfile()
    seg = segment(trace, profile, cfg)
    g = float(trace.meta.get("granularity", profile.granularity))
    m0 = c0 = None
    if cfg.macro is not None:
        m0 = cfg.macro.input_size[0] * cfg.macro.input_size[1]
        c0 = cfg.macro.initial_channels
    sigma = cfg.noise_assumption
    if sigma is None:
        sigma = estimate_noise(trace, seg, g)
    ctx = _Context(profile, seg.time_scale, seg.op_threshold, g, seg.has_framework, m0, c0, cfg, sigma)
    if m0 is None:
        # spatial anchor: the stem convolutions run at the input resolution
        pro = seg.prologue.clusters
        if pro and not pro[0].malformed:
            r = invert_iterations(pro[0].iter2, pro[0].iter3, pro[0].iter4, profile)
            m0 = _snap_m(r.m, None, None)
        c0 = _min_channels(seg) or None
        ctx = _Context(profile, seg.time_scale, seg.op_threshold, g, seg.has_framework, m0, c0, cfg, sigma)
    windows = [classify_cluster_group(w, ctx) for w in seg.windows]
    prologue = classify_cluster_group(seg.prologue, ctx)
    epilogue = classify_cluster_group(seg.epilogue, ctx)
    sigs = [window_signature(w) for w in windows]
    blocks, distinct = macro_runs(sigs)
    return RecoveredArchitecture(windows, prologue, epilogue, blocks, distinct, seg.time_scale)


def estimate_noise(trace: Trace, seg: Segmentation, g: float, limit: int = 4000) -> float:
    """Relative spread of event spacing inside GEMM clusters.

    Events of one GEMM are nominally evenly spaced, so their interval
    scatter measures the timing noise; clusters whose spacing is near the
    sampling granularity are left out.
    """
    rel = []
    seen = 0
    for w in seg.windows:
        for c in w.clusters:
            if c.event_count < 3 or c.malformed or c.duration < 10 * g * (c.event_count - 1):
                continue
            d = np.diff(trace.t[c.start : c.stop]).astype(np.float64)
            rel.append(d / d.mean() - 1.0)
            seen += 1
            if seen >= limit:
                break
    if not rel:
        return 0.3
    r = np.concatenate(rel)
    return float(np.std(r))


def _min_channels(seg: Segmentation) -> int:
    """Smallest depthwise run length over all windows (first-block channel count)."""
    best = None
    for w in seg.windows:
        runs = _runs(w.clusters)
        for i in range(len(runs) - 1):
            if runs[i][1] > 1 and runs[i + 1][1] == 1:
                best = runs[i][1] if best is None else min(best, runs[i][1])
    return best or 0
