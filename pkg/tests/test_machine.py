import json

import pytest
from hypothesis import given, settings, strategies as st

from archstamp.errors import InvalidShapeError
from archstamp.machine import (
    GemmDims, GemmRole, MachineProfile, gemm_duration, invert_iterations, iteration_counts,
    kernel_size_from_timing, load_profile, op_to_gemms, plan_gemm,
)
from archstamp.nas import AVG_3, CONV_3, DIL_3, FC, MAX_3, SEP_3, SEP_5, SKIP, TensorShape

P = MachineProfile()
SHAPE = TensorShape(32, 32, 33)


def sc_duration(op, shape=SHAPE):
    return sum(gemm_duration(c.dims, P, compute_factor=c.compute_factor) for c in op_to_gemms(op, shape, profile=P))


def test_defaults():
    assert (P.block_p, P.block_q, P.unroll, P.granularity, P.pool_gap_factor) == (320, 320, 4, 2000, 1.5)


def test_profile_files(tmp_path):
    (tmp_path / "p.json").write_text(json.dumps({"speedup": 20.0}))
    assert load_profile(tmp_path / "p.json").speedup == 20.0
    (tmp_path / "p.toml").write_text("[profile]\nbase_gap = 5e8\n")
    assert load_profile(tmp_path / "p.toml").base_gap == 5e8
    with pytest.raises(ValueError):
        MachineProfile.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        MachineProfile(block_p=0)


def test_sep_conv_mapping():
    calls = op_to_gemms(SEP_3, SHAPE)
    assert len(calls) == 2 * 34
    dw = [c for c in calls if c.role is GemmRole.DEPTHWISE]
    pw = [c for c in calls if c.role is GemmRole.POINTWISE]
    assert len(dw) == 66 and len(pw) == 2
    assert dw[0].dims == GemmDims(1024, 1, 9)
    assert pw[0].dims == GemmDims(1024, 33, 33)
    assert [c.role for c in calls[:34]] == [GemmRole.DEPTHWISE] * 33 + [GemmRole.POINTWISE]


def test_no_gemm_ops():
    for op in (SKIP, AVG_3, MAX_3):
        assert op_to_gemms(op, SHAPE) == []


def test_dilated_single_pass_is_cheaper():
    calls = op_to_gemms(DIL_3, SHAPE, profile=P)
    assert len(calls) == 34
    assert calls[0].dims == GemmDims(1024, 1, 9)
    assert calls[0].compute_factor == pytest.approx(0.84)
    assert sc_duration(DIL_3) < sc_duration(SEP_3)


def test_normal_conv_and_fc():
    (c,) = op_to_gemms(CONV_3, TensorShape(32, 32, 3), out_channels=33)
    assert c.dims == GemmDims(1024, 33, 27)
    (f,) = op_to_gemms(FC, TensorShape(8, 8, 132), out_channels=10, batch=1)
    assert f.dims == GemmDims(10, 1, 132)


def test_stride_two_and_bad_shapes():
    assert op_to_gemms(SEP_3, TensorShape(32, 32, 66), 2)[0].dims.m == 256
    with pytest.raises(InvalidShapeError):
        op_to_gemms(SEP_5, TensorShape(4, 4, 8))
    with pytest.raises(InvalidShapeError):
        op_to_gemms(SEP_3, SHAPE, 3)


def test_invert_examples():
    r = invert_iterations(1, 3, 9, P)
    assert r.m == (960, 1280) and r.n == (96, 108) and not r.k_informative
    r = invert_iterations(1, 0, 1, P)
    assert (r.m, r.n, r.k) == ((0, 320), (0, 12), (0, 320))


def test_iteration_counts_at_32x32():
    assert iteration_counts(GemmDims(1024, 33, 33), P) == (1, 3, 3)
    assert iteration_counts(GemmDims(1024, 1, 9), P) == (1, 3, 1)


dims = st.builds(GemmDims, st.integers(1, 5000), st.integers(1, 2000), st.integers(1, 5000))


@given(dims)
@settings(max_examples=500, deadline=None)
def test_invert_contains_dims(d):
    plan = plan_gemm(d, P)
    assert invert_iterations(plan.iter2, plan.iter3, plan.iter4, P).contains(d)


@given(dims, st.sampled_from(["m", "n", "k"]))
@settings(max_examples=200, deadline=None)
def test_duration_monotone(d, axis):
    bigger = GemmDims(**{**d.__dict__, axis: getattr(d, axis) + 1})
    assert gemm_duration(bigger, P) > gemm_duration(d, P)


@pytest.mark.parametrize("shape", [TensorShape(32, 32, 33), TensorShape(16, 16, 66), TensorShape(8, 8, 132)])
def test_padding_and_depthwise_count_laws(shape):
    for op in (SEP_3, SEP_5, DIL_3):
        calls = op_to_gemms(op, shape, profile=P)
        assert {c.dims.m for c in calls} == {shape.pixels}
        first_pass = calls[: shape.channels + 1]
        assert sum(c.role is GemmRole.DEPTHWISE for c in first_pass) == shape.channels


def test_kernel_from_timing():
    durs = {3: sc_duration(SEP_3), 5: sc_duration(SEP_5)}
    assert durs[5] > durs[3]
    assert kernel_size_from_timing(durs, durs[5]) == 5
    assert kernel_size_from_timing(durs, durs[3]) == 3
    assert kernel_size_from_timing(durs, (durs[3] + durs[5]) / 2) is None
    assert kernel_size_from_timing(durs, durs[5], uncertainty=durs[5] - durs[3]) is None
