"""archstamp command line: genkey, mark, trace, attack, analyze, verify, collide, report."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from . import __version__
from .analysis import AnalyzerConfig, OpClass, analyze, segment
from .attacks import AttackSpec, apply_attack, apply_trace_attack
from .errors import ArchstampError, NotANASModelError
from .io import dumps, file_sha256, write_json_atomic, write_text_atomic
from .machine import MachineProfile, load_profile
from .nas import Architecture, MacroParams
from .search import SearchStrategy, Strategy, mark
from .tracesim import export_trace, import_trace, simulate
from .uniqueness import monte_carlo
from .verify import VerifyConfig, verify
from .watermark import load_mk, load_vk, save_keys, wmgen

EXIT_OK, EXIT_NOT_VERIFIED, EXIT_NOT_NAS = 0, 1, 2
EXIT_USAGE, EXIT_DATA = 64, 65


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def _profile(args) -> MachineProfile:
    path = args.profile or os.environ.get("ARCHSTAMP_PROFILE")
    return load_profile(path) if path else MachineProfile()


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _emit(doc: dict, path) -> list[Path]:
    if path:
        return [write_json_atomic(path, doc)]
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return []


# --- subcommands ---------------------------------------------------------

def cmd_genkey(args, ctx):
    macro = MacroParams.from_dict(_read_json(args.macro)) if args.macro else MacroParams()
    mk, _ = wmgen(args.ns, seed=args.seed, macro=macro, per_cell=args.per_cell)
    if not args.out:
        raise UsageError("genkey needs --out")
    return EXIT_OK, list(save_keys(mk, args.out))


def cmd_mark(args, ctx):
    mk = load_mk(args.key)
    arch = mark(mk, SearchStrategy(Strategy(args.strategy), args.candidates), args.seed)
    out = write_json_atomic(args.out, arch.to_dict()) if args.out else None
    if out is None:
        _emit(arch.to_dict(), None)
    return EXIT_OK, [out] if out else []


def cmd_trace(args, ctx):
    arch = Architecture.from_dict(_read_json(args.arch))
    trace = simulate(arch, ctx["profile"], args.seed, args.noise)
    if not args.out:
        raise UsageError("trace needs --out")
    return EXIT_OK, [export_trace(trace, args.out)]


def cmd_attack(args, ctx):
    spec = AttackSpec.parse(args.kind, seed=args.seed, mode=args.mode)
    if not args.out:
        raise UsageError("attack needs --out")
    if spec.is_trace_level:
        if not args.trace:
            raise UsageError("noise attacks act on a trace: pass --trace")
        return EXIT_OK, [export_trace(apply_trace_attack(import_trace(args.trace), spec), args.out)]
    if not args.arch:
        raise UsageError("architecture attacks need --arch")
    arch = Architecture.from_dict(_read_json(args.arch))
    mk = load_mk(args.key) if args.key else None
    attacked = apply_attack(arch, spec, mk, ctx["profile"])
    return EXIT_OK, [write_json_atomic(args.out, attacked.to_dict())]


def cmd_analyze(args, ctx):
    trace = import_trace(args.trace)
    try:
        rec = analyze(trace, ctx["profile"], AnalyzerConfig())
    except NotANASModelError as exc:
        return EXIT_NOT_NAS, _emit({"verdict": "not-a-NAS-model", "reason": str(exc)}, args.report or args.out)
    return EXIT_OK, _emit(rec.to_dict(), args.report or args.out)


def cmd_verify(args, ctx):
    vk = load_vk(args.vk)
    trace = import_trace(args.trace)
    report = verify(vk, trace, ctx["profile"], VerifyConfig(skip_match_rule=args.skip_rule))
    written = _emit(report.to_dict(), args.report or args.out)
    if report.reason.startswith("not-a-NAS"):
        return EXIT_NOT_NAS, written
    return (EXIT_OK if report.verdict else EXIT_NOT_VERIFIED), written


def cmd_collide(args, ctx):
    mk = load_mk(args.key)
    stats = monte_carlo(mk, args.trials, args.seed)
    return EXIT_OK, _emit(stats.to_dict(), args.report or args.out)


def _csv(rows: list[dict], fields: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def report_tables(trace, profile: MachineProfile) -> dict[str, list[dict]]:
    """Cluster timeline, per-op GEMM timing and inter-op latency tables."""
    seg = segment(trace, profile)
    rec = analyze(trace, profile)
    base = profile.base_gap * seg.time_scale
    clusters, timing, latency = [], [], []
    for wi, (win, ops) in enumerate(zip(seg.windows, rec.windows)):
        real = [o for o in ops if o.cls is not OpClass.GAP_ONLY]
        for ci, c in enumerate(win.clusters):
            owner = next((o for o in real if o.t_start <= c.t_start <= o.t_end and o.cls is not OpClass.POOL), None)
            clusters.append({
                "window": wi, "cluster": ci, "start": c.t_start, "duration": c.duration,
                "iter2": c.iter2, "iter3": c.iter3, "iter4": c.iter4,
                "class": owner.cls.value if owner else "Unknown",
            })
        gemm_ops = [o for o in real if o.cls is not OpClass.POOL]
        for oi, o in enumerate(real):
            if o.cls is OpClass.POOL:
                continue
            timing.append({
                "window": wi, "op": oi, "class": o.cls.value, "kernel": o.kernel or "",
                "channels": o.channels or "", "duration": o.t_end - o.t_start,
            })
        for k, (a, b) in enumerate(zip(gemm_ops, gemm_ops[1:])):
            pooled = any(a.t_end <= ft <= b.t_start for ft, _ in win.framework)
            gap = b.t_start - a.t_end
            latency.append({
                "window": wi, "boundary": k, "latency": gap, "base_units": round(gap / base, 3),
                "kind": "pool" if pooled else "op",
            })
    return {"clusters": clusters, "gemm_timing": timing, "latency": latency}


def cmd_report(args, ctx):
    trace = import_trace(args.trace)
    try:
        tables = report_tables(trace, ctx["profile"])
    except NotANASModelError as exc:
        return EXIT_NOT_NAS, _emit({"verdict": "not-a-NAS-model", "reason": str(exc)}, None)
    if not args.out:
        raise UsageError("report needs --out (file prefix)")
    fields = {
        "clusters": ["window", "cluster", "start", "duration", "iter2", "iter3", "iter4", "class"],
        "gemm_timing": ["window", "op", "class", "kernel", "channels", "duration"],
        "latency": ["window", "boundary", "latency", "base_units", "kind"],
    }
    written = []
    for name, rows in tables.items():
        if args.format == "csv":
            written.append(write_text_atomic(f"{args.out}.{name}.csv", _csv(rows, fields[name])))
        else:
            written.append(write_json_atomic(f"{args.out}.{name}.json", rows))
    return EXIT_OK, written


# --- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--profile", help="machine profile (JSON/TOML); default $ARCHSTAMP_PROFILE")
    common.add_argument("--out")
    common.add_argument("--report")
    common.add_argument("--manifest", help="write the run manifest here instead of stderr")

    p = _Parser(prog="archstamp", description=__doc__)
    p.add_argument("--version", action="version", version=f"archstamp {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("genkey", parents=[common], help="sample marking and verification keys")
    s.add_argument("--ns", type=int, default=4)
    s.add_argument("--per-cell", action="store_true")
    s.add_argument("--macro", help="JSON file with macro parameters")
    s.set_defaults(func=cmd_genkey)

    s = sub.add_parser("mark", parents=[common], help="search a watermarked architecture")
    s.add_argument("--key", required=True)
    s.add_argument("--strategy", choices=[x.value for x in Strategy], default="random")
    s.add_argument("--candidates", type=int, default=8)
    s.set_defaults(func=cmd_mark)

    s = sub.add_parser("trace", parents=[common], help="simulate the side-channel trace")
    s.add_argument("--arch", required=True)
    s.add_argument("--noise", type=float, default=0.0)
    s.set_defaults(func=cmd_trace)

    s = sub.add_parser("attack", parents=[common], help="apply an adversarial transform")
    s.add_argument("--kind", required=True)
    s.add_argument("--arch")
    s.add_argument("--trace")
    s.add_argument("--key", help="marking key (oracle structured pruning)")
    s.add_argument("--mode", choices=["oracle", "uniform"], default="oracle")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("analyze", parents=[common], help="recover the architecture from a trace")
    s.add_argument("--trace", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("verify", parents=[common], help="check a trace against a verification key")
    s.add_argument("--vk", required=True)
    s.add_argument("--trace", required=True)
    s.add_argument("--skip-rule", choices=["gap", "strict"], default="gap")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("collide", parents=[common], help="Monte Carlo stamp collision study")
    s.add_argument("--key", required=True)
    s.add_argument("--trials", type=int, default=100)
    s.set_defaults(func=cmd_collide)

    s = sub.add_parser("report", parents=[common], help="emit plot data tables")
    s.add_argument("--trace", required=True)
    s.add_argument("--format", choices=["csv", "json"], default="csv")
    s.set_defaults(func=cmd_report)
    return p


def _manifest(args, profile: MachineProfile, inputs: list[str], outputs: list[Path], code: int) -> dict:
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "manifest")}
    return {
        "tool": "archstamp",
        "version": __version__,
        "subcommand": args.command,
        "flags": flags,
        "seed": args.seed,
        "profile": profile.fingerprint,
        "inputs": {p: file_sha256(p) for p in inputs if p and Path(p).is_file()},
        "outputs": {str(p): file_sha256(p) for p in outputs},
        "exit": code,
    }


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        profile = _profile(args)
        code, outputs = args.func(args, {"profile": profile})
    except UsageError as exc:
        sys.stderr.write(f"archstamp {args.command}: {exc}\n")
        return EXIT_USAGE
    except (ArchstampError, OSError, ValueError, KeyError, TypeError) as exc:
        sys.stderr.write(f"archstamp {args.command}: error: {exc}\n")
        return EXIT_DATA
    inputs = [getattr(args, k, None) for k in ("key", "arch", "trace", "vk", "macro", "profile")]
    doc = _manifest(args, profile, inputs, outputs, code)
    if args.manifest:
        write_text_atomic(args.manifest, dumps(doc) + "\n")
    else:
        sys.stderr.write(dumps(doc) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
