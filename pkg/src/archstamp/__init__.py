"""Path-based watermarking of cell-based NAS architectures, verified from a
simulated GEMM cache side-channel trace."""

from .analysis import AnalyzerConfig, OpClass, RecoveredArchitecture, RecoveredOp, analyze, segment
from .attacks import AttackKind, AttackSpec, apply_attack, apply_trace_attack
from .machine import GemmDims, MachineProfile, invert_iterations, op_to_gemms, plan_gemm
from .nas import Architecture, Cell, CellKind, CellSupernet, Edge, MacroParams, Operation, stack_architecture
from .search import SearchStrategy, Strategy, contains_stamp, mark
from .tracesim import Trace, TraceEvent, emit_gemm, export_trace, import_trace, simulate
from .uniqueness import analytic_bound, exact_collision, monte_carlo
from .verify import VerifyConfig, VerifyReport, match, verify
from .watermark import MarkingKey, SearchSpace, Stamp, VerificationKey, get_path, make_key, wmgen

__version__ = "0.1.0"
