import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from archstamp.errors import TraceParseError
from archstamp.machine import GemmDims, GemmPlan, MachineProfile, plan_gemm
from archstamp.nas import CellKind, CellSupernet, sample_cell, stack_architecture
from archstamp.tracesim import (
    Trace, TraceEvent, emit_gemm, export_trace, import_trace, perturb_trace, simulate,
)

P = MachineProfile()


def random_arch(seed):
    rng = np.random.default_rng(seed)
    sn = CellSupernet(4)
    return stack_architecture(sample_cell(sn, CellKind.NORMAL, rng), sample_cell(sn, CellKind.REDUCTION, rng))


def seq(events):
    return "".join("I" if e.api == "itcopy" else "O" for e in events)


def test_emit_gemm_patterns():
    plan = plan_gemm(GemmDims(1024, 100, 100), P)
    assert (plan.iter2, plan.iter3, plan.iter4) == (1, 3, 9)
    ev = emit_gemm(plan)
    assert seq(ev) == "I" + "O" * 9 + "III"
    assert len(ev) == 13
    assert seq(emit_gemm(GemmPlan(GemmDims(1, 1, 1), 2, 0, 1, 8000.0))) == "IOIO"


def test_emit_gemm_timestamps():
    ev = emit_gemm(GemmPlan(GemmDims(1, 1, 1), 1, 1, 2, 40_000.0), t0=1_000_000)
    ts = [e.t for e in ev]
    assert ts == sorted(ts)
    assert all(t % 2000 == 0 for t in ts)
    assert ts[0] == 1_000_000 and ts[-1] < 1_040_000


@given(st.builds(GemmDims, st.integers(1, 4000), st.integers(1, 600), st.integers(1, 3000)))
@settings(max_examples=150, deadline=None)
def test_event_counts_closed_form(d):
    plan = plan_gemm(d, P)
    ev = emit_gemm(plan)
    assert sum(e.api == "itcopy" for e in ev) == plan.iter2 * (1 + plan.iter3)
    assert sum(e.api == "oncopy" for e in ev) == plan.iter2 * plan.iter4


def test_simulate_is_deterministic():
    arch = random_arch(1)
    assert simulate(arch, P, 7, 0.2) == simulate(arch, P, 7, 0.2)
    assert simulate(arch, P, 7, 0.2) != simulate(arch, P, 8, 0.2)


def test_noise_keeps_event_types():
    arch = random_arch(2)
    clean, noisy = simulate(arch, P, 1, 0.0), simulate(arch, P, 1, 0.3)
    assert clean.api_sequence == noisy.api_sequence
    assert not np.array_equal(clean.t, noisy.t)
    assert np.all(np.diff(noisy.t) >= 0)


def test_noise_range():
    with pytest.raises(ValueError):
        simulate(random_arch(0), P, 0, 0.6)


def test_figure_cell_gemm_layout(figure_arch):
    truth = []
    simulate(figure_arch, P, 0, 0.0, truth=truth)
    first = [g for g in truth if g.cell == 0]
    by_edge = {}
    for g in first:
        by_edge.setdefault(g.edge, []).append(g)
    assert sorted(by_edge) == [0, 2, 4, 6]  # ops 1, 3, 5, 7
    for e in (0, 2, 6):
        roles = [g.role for g in by_edge[e]]
        assert roles.count("pointwise") == 2 and roles.count("depthwise") == 66
    assert [g.role for g in by_edge[4]].count("pointwise") == 1
    prologue = [g for g in truth if g.cell == -1]
    assert len(prologue) == 3 and {g.role for g in prologue} == {"normal"}
    assert truth[-1].role == "fc"


def test_pool_gaps():
    for seed in range(5):
        tr = simulate(random_arch(seed), P, seed, 0.0)
        fw = np.flatnonzero(tr.api > 1)
        fw = fw[(fw > 0) & (fw < len(tr) - 1)]
        span = tr.t[fw + 1] - tr.t[fw - 1]
        assert np.all(span >= 1.4 * P.base_gap)


def test_binarized_duration_ratio():
    from dataclasses import replace

    arch = random_arch(4)
    fast = simulate(replace(arch, speedup=20.0), P, 0)
    slow = simulate(arch, P, 0)
    assert fast.duration / slow.duration == pytest.approx(1 / 20, rel=0.1)


def test_prune_keeps_pattern():
    from dataclasses import replace

    arch = random_arch(5)
    base = simulate(arch, P, 0)
    pruned = simulate(arch.with_cells(replace(c, duration_scale=0.55) for c in arch.cells), P, 0)
    assert base.api_sequence == pruned.api_sequence


def test_round_trip(tmp_path):
    tr = simulate(random_arch(3), P, 3, 0.1)
    path = export_trace(tr, tmp_path / "t.jsonl")
    assert import_trace(path) == tr
    first = json.loads(path.read_text().splitlines()[1])
    assert set(first) == {"t", "src", "api"}


def test_import_errors(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"meta": {}}\n{"t": 10, "src": "blas", "api": "itcopy"}\n{"t": 4, "src": "blas", "api": "oncopy"}\n')
    with pytest.raises(TraceParseError, match="non-monotonic") as err:
        import_trace(p)
    assert err.value.line == 3
    p.write_text('{"t": 1, "src": "blas", "api": "itcopy"}\nnot json\n')
    with pytest.raises(TraceParseError) as err:
        import_trace(p)
    assert err.value.line == 2
    p.write_text('{"t": 1, "src": "blas", "api": "pool_avg"}\n')
    with pytest.raises(TraceParseError):
        import_trace(p)


def test_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    tr = import_trace(p)
    assert len(tr) == 0 and tr.meta == {}


def test_from_events_and_perturb():
    tr = Trace.from_events([TraceEvent(0, "blas", "itcopy"), TraceEvent(4000, "framework", "pool_max")], {"granularity": 2000})
    assert [e.api for e in tr] == ["itcopy", "pool_max"]
    noisy = perturb_trace(tr, 0.3, 1)
    assert noisy.api_sequence == tr.api_sequence and noisy.meta["noise"] == 0.3
