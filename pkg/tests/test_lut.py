import ast
import inspect
import math
import textwrap

import numpy as np
import pytest

from oracles import log_pe_exact
from spikerpe import lut as lut_mod
from spikerpe.attention import log_pe_bias
from spikerpe.errors import ConfigError, LUTBuildError
from spikerpe.lut import (
    Log2LUT,
    build_log2_lut,
    check_lut,
    lut_from_bytes,
    lut_log_pe_bias,
    lut_to_bytes,
    read_lut,
    search_exact_lut,
    write_lut,
)
from spikerpe.verify import RECORDED_LUT


def test_storage_formula():
    lut = build_log2_lut(8, 16, 8)
    assert lut.storage_bits == 384
    assert lut.storage_bytes == 48


def test_single_segment_error_against_scan():
    lut = build_log2_lut(8, 1, 8)
    assert len(lut.a) == 1
    scan = max(abs(lut.log2(z) - math.log2(z)) for z in range(1, 256))
    assert lut.max_error() == pytest.approx(scan, abs=1e-15)
    assert 0 < scan < 0.1


@pytest.mark.parametrize("p", [8, 12, 16])
def test_error_non_increasing_in_k(p):
    errs = [build_log2_lut(8, k, p).max_error() for k in (1, 2, 4, 8, 16)]
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:])), errs


def test_parent_pair_is_valid_on_both_halves():
    coarse = build_log2_lut(8, 4, 9)
    fine = Log2LUT(8, 8, 9, tuple(a for a in coarse.a for _ in (0, 1)), tuple(b for b in coarse.b for _ in (0, 1)))
    assert all(fine.log2_fixed(z) == coarse.log2_fixed(z) for z in range(1, 256))


def test_exact_at_powers_of_two():
    lut = build_log2_lut(9, 4, 10)
    for e in range(9):
        assert lut.log2_fixed(1 << e) == (e << lut.out_frac_bits) + lut.b[0]


def test_coarse_lut_mismatches_at_168():
    lut = build_log2_lut(8, 1, 4)
    exact = np.asarray(log_pe_bias(168))
    approx = np.asarray(lut_log_pe_bias(168, lut))
    assert (exact != approx).sum() >= 1


def test_l2_is_all_zero():
    np.testing.assert_array_equal(np.asarray(lut_log_pe_bias(2, build_log2_lut(4, 1, 4))), np.zeros((2, 2)))


def test_recorded_config_is_exact_up_to_512():
    lut = build_log2_lut(RECORDED_LUT["N"], RECORDED_LUT["K"], RECORDED_LUT["P"])
    res = check_lut(lut, 512)
    assert res.passed and res.first_mismatch is None
    assert res.to_dict()["storage_bits"] == lut.k_segments * (lut.n_bits + 2 * lut.p_bits)


def test_recorded_config_spot_check_against_rational_oracle():
    lut = build_log2_lut(RECORDED_LUT["N"], RECORDED_LUT["K"], RECORDED_LUT["P"])
    for length in (3, 17, 129, 168, 257, 511, 512):
        row = np.asarray(lut_log_pe_bias(length, lut))[0]
        assert [int(v) for v in row] == [log_pe_exact(length, d) for d in range(length)]


def test_search_finds_recorded_minimum():
    lut, res = search_exact_lut(64, k_max=4, p_max=12)
    assert lut is not None and res.passed
    assert lut.storage_bits <= build_log2_lut(7, 1, 12).storage_bits


def test_check_reports_first_mismatch():
    res = check_lut(build_log2_lut(8, 1, 4), 200)
    assert not res.passed
    length, d, exact, approx = res.first_mismatch
    assert exact == log_pe_exact(length, d) and approx != exact


def test_file_round_trip(tmp_path):
    lut = build_log2_lut(9, 8, 11)
    path = tmp_path / "t.lut"
    write_lut(lut, path)
    raw = path.read_bytes()
    assert raw[:6] == bytes([9, 0, 8, 0, 11, 0])
    assert len(raw) == 6 + math.ceil(2 * 8 * 11 / 8)
    assert read_lut(path) == lut


def test_sign_magnitude_packing():
    lut = Log2LUT(4, 1, 4, (-3,), (5,))
    # -3 -> 1011, 5 -> 0101, packed MSB first
    assert lut_to_bytes(lut)[6:] == bytes([0b10110101])
    assert lut_from_bytes(lut_to_bytes(lut)) == lut


@pytest.mark.parametrize("n,k,p", [(17, 1, 8), (8, 3, 8), (8, 1, 3), (3, 8, 8)])
def test_build_rejects_bad_config(n, k, p):
    with pytest.raises(ConfigError):
        build_log2_lut(n, k, p)


def test_sign_magnitude_overflow():
    # 4-bit sign-magnitude holds -7..7
    with pytest.raises(LUTBuildError):
        lut_mod._sign_magnitude(8, 4)


def test_length_out_of_range():
    lut = build_log2_lut(6, 1, 8)
    with pytest.raises(ConfigError):
        lut_log_pe_bias(66, lut)
    with pytest.raises(ConfigError):
        lut_log_pe_bias(1, lut)
    with pytest.raises(ConfigError):
        lut.log2_fixed(0)


def test_evaluation_path_is_integer_only():
    """No float literals, float() calls or true division in the evaluation code."""
    for fn in (Log2LUT.log2_fixed, lut_log_pe_bias):
        tree = ast.parse(textwrap.dedent(inspect.getsource(fn)))
        for node in ast.walk(tree):
            assert not (isinstance(node, ast.Constant) and isinstance(node.value, float)), fn.__name__
            assert not (isinstance(node, ast.BinOp) and isinstance(node.op, ast.Div)), fn.__name__
            if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
                assert node.func.id not in {"float", "log2"}, fn.__name__
    lut = build_log2_lut(9, 1, 10)
    assert all(type(v) is int for v in lut.a + lut.b)
    assert type(lut.log2_fixed(200)) is int
