"""Ownership verification: find each cell's stamp ops, in order, in the trace."""

from __future__ import annotations

from dataclasses import dataclass, field

from .analysis import AnalyzerConfig, OpClass, RecoveredArchitecture, RecoveredOp, analyze
from .errors import NotANASModelError
from .machine import MachineProfile
from .nas import OpKind, Operation
from .tracesim import Trace
from .watermark import VerificationKey

SKIP_RULES = ("gap", "strict")


@dataclass(frozen=True)
class VerifyConfig:
    """``skip_match_rule``: ``gap`` lets a stamp skip match any later GapOnly
    token without consuming it; ``strict`` consumes one token per skip."""

    n_s: int | None = None
    delta: float = 0.01
    skip_match_rule: str = "gap"
    analyzer: AnalyzerConfig = AnalyzerConfig()

    def __post_init__(self):
        if self.skip_match_rule not in SKIP_RULES:
            raise ValueError(f"skip_match_rule must be one of {SKIP_RULES}")


@dataclass
class VerifyReport:
    verdict: int
    verified_windows: int
    expected: int
    windows: int = 0
    reason: str = ""
    matches: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "verified_windows": self.verified_windows,
            "expected": self.expected,
            "windows": self.windows,
            "reason": self.reason,
            "matches": self.matches,
        }


_CLASS_OF = {
    OpKind.SEP_CONV: OpClass.SC,
    OpKind.DIL_SEP_CONV: OpClass.DS,
    OpKind.AVG_POOL: OpClass.POOL,
    OpKind.MAX_POOL: OpClass.POOL,
    OpKind.NORMAL_CONV: OpClass.CONV_OR_FC,
    OpKind.FULLY_CONNECTED: OpClass.CONV_OR_FC,
}


def match(op: RecoveredOp, stamp: Operation) -> bool:
    """Class equality, kernel equality when resolved, pool type when known."""
    if stamp.kind is OpKind.SKIP:
        return op.cls is OpClass.GAP_ONLY
    if _CLASS_OF[stamp.kind] is not op.cls:
        return False
    if op.cls is OpClass.POOL:
        want = "avg" if stamp.kind is OpKind.AVG_POOL else "max"
        return op.pool_type is None or op.pool_type == want
    if op.cls in (OpClass.SC, OpClass.DS) and op.kernel is not None:
        return op.kernel == stamp.kernel
    return True


def match_window(ops: list[RecoveredOp], stamp: tuple[Operation, ...], rule: str = "gap") -> list[int] | None:
    """Greedy subsequence match; returns matched token positions or ``None``."""
    pos = 0
    hits: list[int] = []
    for s in stamp:
        while pos < len(ops) and not match(ops[pos], s):
            pos += 1
        if pos == len(ops):
            return None
        hits.append(pos)
        if not (s.kind is OpKind.SKIP and rule == "gap"):
            pos += 1
    return hits


def verify_recovered(vk: VerificationKey, rec: RecoveredArchitecture, cfg: VerifyConfig = VerifyConfig()) -> VerifyReport:
    expected = vk.expand()
    idx = 0
    matches = []
    for w, ops in enumerate(rec.windows):
        if idx == len(expected):
            break
        hits = match_window(ops, expected[idx], cfg.skip_match_rule)
        if hits is not None:
            matches.append({"window": w, "key_index": idx, "positions": hits})
            idx += 1
    return VerifyReport(int(idx == len(expected)), idx, len(expected), len(rec.windows), "", matches)


def verify(
    vk: VerificationKey,
    trace: Trace,
    profile: MachineProfile | None = None,
    cfg: VerifyConfig = VerifyConfig(),
) -> VerifyReport:
    if cfg.n_s is not None and cfg.n_s != vk.n_s:
        raise ValueError(f"config n_s={cfg.n_s} does not match key n_s={vk.n_s}")
    try:
        rec = analyze(trace, profile, cfg.analyzer)
    except NotANASModelError as exc:
        return VerifyReport(0, 0, vk.size, 0, f"not-a-NAS-model: {exc}")
    return verify_recovered(vk, rec, cfg)
