from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from archstamp.errors import InvalidStampSizeError
from archstamp.nas import AVG_3, SEP_3, SKIP, CellSupernet, Operation, OpKind
from archstamp.watermark import (
    SearchSpace, Stamp, get_path, load_mk, load_vk, make_key, mk_to_dict, save_keys, validate_key, vk_to_dict, wmgen,
)


def dfs_paths(sn: CellSupernet, length: int) -> set:
    """Independent oracle: every edge sequence of ``length`` consecutive edges."""
    out = set()

    def walk(path):
        if len(path) == length:
            out.add(tuple(path))
            return
        node = path[-1][1]
        for t in sn.intermediate:
            if sn.is_admissible(node, t):
                walk(path + [(node, t)])

    for e in sn.edges:
        walk([e])
    return out


def test_full_length_paths():
    assert get_path(CellSupernet(4), 4) == [
        ((0, 2), (2, 3), (3, 4), (4, 5)),
        ((1, 2), (2, 3), (3, 4), (4, 5)),
    ]


def test_single_node_paths():
    assert get_path(CellSupernet(1), 1) == [((0, 2),), ((1, 2),)]


def test_single_edge_paths_cover_every_edge():
    # fully connected DAG: 2+3+4+5 admissible edges, of which 2B=8 are kept per sample
    sn = CellSupernet(4)
    paths = get_path(sn, 1)
    assert {p[0] for p in paths} == set(sn.edges)
    assert len(paths) == 14
    assert sn.slot_count == 8


@pytest.mark.parametrize("b", [1, 2, 3, 4, 5])
def test_paths_match_dfs_oracle(b):
    sn = CellSupernet(b)
    for n_s in range(1, b + 1):
        assert set(get_path(sn, n_s)) == dfs_paths(sn, n_s)


def test_bad_stamp_size():
    with pytest.raises(InvalidStampSizeError):
        get_path(CellSupernet(4), 0)
    with pytest.raises(InvalidStampSizeError):
        get_path(CellSupernet(4), 5)


@given(st.integers(1, 4), st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_wmgen_keys_are_valid_and_deterministic(n_s, seed):
    mk, vk = wmgen(n_s, seed=seed)
    assert validate_key(mk) == []
    assert wmgen(n_s, seed=seed) == (mk, vk)
    assert vk.normal == mk.normal.ops and vk.reduction == mk.reduction.ops
    assert mk.verification_key() == vk
    for stamp in (mk.normal, mk.reduction):
        assert all(a[1] == b[0] for a, b in zip(stamp.edges, stamp.edges[1:]))


def test_forced_single_op():
    space = SearchSpace(CellSupernet(4, (SEP_3,)), CellSupernet(4, (SEP_3,)))
    mk, vk = wmgen(1, space, seed=5)
    assert vk.normal == (SEP_3,) and vk.reduction == (SEP_3,)


def test_path_choice_is_uniform():
    paths = get_path(CellSupernet(4), 2)
    counts = Counter(wmgen(2, seed=s)[0].normal.edges for s in range(10_000))
    observed = [counts[p] for p in paths]
    assert sum(observed) == 10_000
    assert chisquare(observed).pvalue > 1e-3


def test_per_cell_keys():
    mk, vk = wmgen(3, seed=2, per_cell=True)
    assert len(mk.cells) == 20 and len(vk.expand()) == 20
    assert validate_key(mk) == []


def test_validate_reports_problems():
    good = Stamp(((0, 2), (2, 3)), (AVG_3, SEP_3))
    broken = Stamp(((0, 2), (1, 3)), (AVG_3, SEP_3))
    alien = Stamp(((0, 2), (2, 3)), (AVG_3, Operation(OpKind.NORMAL_CONV, 3)))
    from archstamp.watermark import MarkingKey

    assert validate_key(MarkingKey(2, good, good)) == []
    assert any("path broken at index 1" in p for p in validate_key(MarkingKey(2, broken, good)))
    assert any("unknown operation" in p for p in validate_key(MarkingKey(2, good, alien)))


def test_key_files(tmp_path):
    mk = make_key(([(0, 2), (2, 3)], ["avg_pool_3x3", "sep_conv_5x5"]), ([(1, 2), (2, 3)], ["skip", "skip"]))
    mk_path, vk_path = save_keys(mk, tmp_path / "k")
    assert mk_path.name == "k.mk.json" and vk_path.name == "k.vk.json"
    assert load_mk(mk_path) == mk
    assert load_vk(vk_path) == mk.verification_key()
    assert "edges" not in vk_to_dict(mk.verification_key())["normal"]
    assert mk_to_dict(mk)["normal"]["edges"] == [[0, 2], [2, 3]]
    assert load_vk(vk_path).reduction == (SKIP, SKIP)
