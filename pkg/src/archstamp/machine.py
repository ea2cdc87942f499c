"""Leakage model of a blocked GEMM engine.

Maps NAS operations to GEMM calls, GEMM dimensions to loop iteration
counts and durations, and iteration counts back to dimension ranges.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import InvalidShapeError
from .io import fingerprint
from .nas import OpKind, Operation, TensorShape, patches


@dataclass(frozen=True)
class MachineProfile:
    """Blocking constants plus the timing coefficients of the simulated host.

    All times are CPU cycles. The gap hierarchy (intra-GEMM spacing <<
    ``sub_gap`` << ``base_gap`` << ``cell_gap_factor * base_gap``) is what
    keeps the trace segmentable under 30% interval noise.
    """

    block_p: int = 320
    block_q: int = 320
    block_r: int = 104512
    unroll: int = 4
    granularity: int = 2000
    kernel_cost: float = 10.0       # cycles per multiply-accumulate
    copy_cost: float = 100.0        # cycles per itcopy/oncopy call
    sub_gap: float = 6_001_013.0    # between GEMMs of one operation
    base_gap: float = 1.0e9         # between operations
    pool_gap_factor: float = 1.5
    cell_gap_factor: float = 1000.0
    speedup: float = 1.0
    dilation_speedup: float = 0.84
    prune_slope: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"profile field {f.name} must be positive")

    @property
    def cell_gap(self) -> float:
        return self.cell_gap_factor * self.base_gap

    @property
    def pool_gap(self) -> float:
        return self.pool_gap_factor * self.base_gap

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MachineProfile":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown profile fields: {sorted(unknown)}")
        return cls(**d)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())


def load_profile(path: str | Path) -> MachineProfile:
    """Read a profile from JSON, or TOML when the suffix says so."""
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        doc = tomllib.loads(path.read_text())
    else:
        doc = json.loads(path.read_text())
    return MachineProfile.from_dict(doc.get("profile", doc))


@dataclass(frozen=True, order=True)
class GemmDims:
    m: int
    n: int
    k: int

    def __post_init__(self):
        if min(self.m, self.n, self.k) < 1:
            raise ValueError(f"GEMM dimensions must be >= 1: {self}")

    @property
    def macs(self) -> int:
        return self.m * self.n * self.k


class GemmRole(enum.Enum):
    DEPTHWISE = "depthwise"
    POINTWISE = "pointwise"
    NORMAL = "normal"
    FC = "fc"


@dataclass(frozen=True)
class GemmCall:
    role: GemmRole
    dims: GemmDims
    compute_factor: float = 1.0  # <1 for dilated kernels (padding zeros)


@dataclass(frozen=True)
class GemmPlan:
    dims: GemmDims
    iter2: int
    iter3: int
    iter4: int
    duration: float

    @property
    def itcopy_count(self) -> int:
        return self.iter2 * (1 + self.iter3)

    @property
    def oncopy_count(self) -> int:
        return self.iter2 * self.iter4

    @property
    def event_count(self) -> int:
        return self.itcopy_count + self.oncopy_count

    @property
    def signature(self) -> tuple[int, int]:
        return (self.iter4, self.iter3)


def iteration_counts(dims: GemmDims, profile: MachineProfile) -> tuple[int, int, int]:
    """(iter2, iter3, iter4) from the loop bounds; loop 1 always runs once."""
    iter2 = math.ceil(dims.k / profile.block_q)
    iter3 = max(0, math.ceil((dims.m - profile.block_p) / profile.block_p))
    iter4 = math.ceil(min(dims.n, profile.block_r) / (3 * profile.unroll))
    return iter2, iter3, iter4


def gemm_duration(
    dims: GemmDims,
    profile: MachineProfile,
    speedup: float = 1.0,
    compute_factor: float = 1.0,
    scale: float = 1.0,
) -> float:
    iter2, iter3, iter4 = iteration_counts(dims, profile)
    calls = iter2 * (1 + iter3 + iter4)
    s = profile.speedup * speedup
    compute = profile.kernel_cost * dims.macs * compute_factor / s
    return (compute + profile.copy_cost * calls) * scale


def plan_gemm(
    dims: GemmDims,
    profile: MachineProfile,
    speedup: float = 1.0,
    compute_factor: float = 1.0,
    scale: float = 1.0,
) -> GemmPlan:
    iter2, iter3, iter4 = iteration_counts(dims, profile)
    return GemmPlan(dims, iter2, iter3, iter4, gemm_duration(dims, profile, speedup, compute_factor, scale))


def op_to_gemms(
    op: Operation,
    shape: TensorShape,
    stride: int = 1,
    out_channels: int | None = None,
    batch: int = 1,
    profile: MachineProfile | None = None,
) -> list[GemmCall]:
    """GEMM calls an operation issues, in execution order.

    Separable convs run their depthwise+pointwise pair twice; the dilated
    variant runs it once with a compute discount on the depthwise step.
    Pooling and skip issue no GEMM at all.
    """
    if stride not in (1, 2):
        raise InvalidShapeError(f"stride must be 1 or 2, got {stride}")
    kind = op.kind
    if kind in (OpKind.SKIP, OpKind.AVG_POOL, OpKind.MAX_POOL):
        return []
    d_in = shape.channels
    d_out = out_channels or d_in
    if kind is OpKind.FULLY_CONNECTED:
        return [GemmCall(GemmRole.FC, GemmDims(m=d_out, n=batch, k=d_in))]
    if op.kernel > min(shape.width, shape.height):
        raise InvalidShapeError(f"{op} kernel exceeds {shape.width}x{shape.height} input")
    # NAS padding P = R'-1 keeps the patch count at the (strided) spatial size.
    m = patches(shape, stride)
    if kind is OpKind.NORMAL_CONV:
        return [GemmCall(GemmRole.NORMAL, GemmDims(m=m, n=d_out, k=op.kernel**2 * d_in))]
    factor = 1.0
    if kind is OpKind.DIL_SEP_CONV:
        factor = (profile or MachineProfile()).dilation_speedup
    one_pass = [GemmCall(GemmRole.DEPTHWISE, GemmDims(m=m, n=1, k=op.kernel**2), factor)] * d_in
    one_pass.append(GemmCall(GemmRole.POINTWISE, GemmDims(m=m, n=d_out, k=d_in)))
    return one_pass * 2 if kind is OpKind.SEP_CONV else one_pass


@dataclass(frozen=True)
class DimRanges:
    """Half-open intervals (lo, hi] for each GEMM dimension."""

    m: tuple[int, int]
    n: tuple[int, int]
    k: tuple[int, int]
    k_informative: bool

    def contains(self, dims: GemmDims) -> bool:
        return all(lo < v <= hi for (lo, hi), v in ((self.m, dims.m), (self.n, dims.n), (self.k, dims.k)))


def invert_iterations(iter2: int, iter3: int, iter4: int, profile: MachineProfile) -> DimRanges:
    P, Q, step = profile.block_p, profile.block_q, 3 * profile.unroll
    return DimRanges(
        m=(iter3 * P, (iter3 + 1) * P),
        n=(max(0, (iter4 - 1) * step), iter4 * step),
        k=(max(0, (iter2 - 1) * Q), iter2 * Q),
        k_informative=iter2 > 1,
    )


def kernel_size_from_timing(durations: dict[int, float], observed: float, uncertainty: float = 0.0) -> int | None:
    """Nearest-duration kernel size; ``None`` when ``observed`` sits within
    ``uncertainty`` of the midpoint between the two closest candidates."""
    if not durations:
        return None
    ranked = sorted(durations.items(), key=lambda kv: abs(kv[1] - observed))
    best = ranked[0]
    if len(ranked) == 1:
        return best[0]
    runner = ranked[1]
    mid = 0.5 * (best[1] + runner[1])
    if abs(observed - mid) <= uncertainty or abs(best[1] - observed) == abs(runner[1] - observed):
        return None
    return best[0]
