import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import fp8_table, nearest_code
from sepdla.minifloat import (
    FP4, FP8_SHIFTED, FP8_STANDARD, FP16, FloatFormat, decode, decode_table, encode,
    encode_array, format_from_name, fp8_mul, quantize, range_report,
)

TABLE15 = fp8_table(15)
TABLE7 = fp8_table(7)


def test_encode_zero():
    assert encode(0.0) == 0b0_0000_000


def test_encode_one_shifted():
    assert encode(1.0, FP8_SHIFTED) == 0b0_1111_000


def test_encode_max_and_saturation():
    assert encode(1.875) == 0b0_1111_111
    assert encode(2.0) == 0b0_1111_111
    assert encode(-1e9) == 0b1_1111_111


def test_decode_examples():
    assert decode(0b0_0000_000) == 0.0
    assert decode(0b1_1111_000) == -1.0
    assert decode(0b0_1000_000) == 2.0 ** -7


def test_fp8_mul_examples():
    assert fp8_mul(encode(1.5), encode(2.0 ** -3)) == 0.1875
    for c in range(256):
        assert fp8_mul(0, c) == 0.0
    assert fp8_mul(encode(-1.0), encode(1.0)) == -1.0


def test_range_report():
    lo7, hi7 = range_report(FP8_STANDARD)
    lo15, hi15 = range_report(FP8_SHIFTED)
    assert hi7 == 480.0
    assert hi15 == 1.875
    assert hi7 / hi15 == 2 ** 8
    assert lo7 / lo15 == 2 ** 8


def test_decode_matches_formula_all_codes():
    for c in range(256):
        assert decode(c, FP8_SHIFTED) == TABLE15[c]
        assert decode(c, FP8_STANDARD) == TABLE7[c]


def test_round_trip_all_codes():
    for c in range(256):
        v = decode(c)
        assert decode(encode(v)) == v


def test_monotone_positive_codes():
    vals = [decode(c) for c in range(128)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_bias_shift_identity():
    for c in range(256):
        if (c >> 3) & 0xF:
            assert decode(c, FP8_SHIFTED) == decode(c, FP8_STANDARD) * 2.0 ** -8


def test_flush_to_zero_keeps_sign():
    tiny = 2.0 ** -15
    assert encode(tiny) == 0
    assert encode(-tiny) == 0x80
    # E == 0 decodes to zero whatever the mantissa bits are
    assert all(decode(m) == 0.0 for m in range(8))


def test_ties_to_even():
    # 1.0 and 1.125 are neighbours; the midpoint goes to the even mantissa (1.0)
    assert decode(encode(1.0625)) == 1.0
    # 1.125 and 1.25: midpoint 1.1875 goes to 1.25 (mantissa 010)
    assert decode(encode(1.1875)) == 1.25


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=-4.0, max_value=4.0, allow_nan=False))
def test_encode_matches_exhaustive_search(x):
    assert encode(x) == nearest_code(x, 15)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
def test_quantize_never_exceeds_max(x):
    assert abs(float(quantize(x))) <= FP8_SHIFTED.max_value


def test_encode_rejects_non_finite():
    with pytest.raises(ValueError):
        encode(float("inf"))


def test_fp8_mul_exhaustive_against_double():
    table = decode_table()
    for a in range(256):
        for b in range(0, 256, 7):
            assert fp8_mul(a, b) == table[a] * table[b]


def test_generic_formats():
    # every exponent is numeric, so the top binade is usable (IEEE half stops at 65504)
    assert FP16.max_value == 131008.0
    assert FP4.total_bits == 4
    assert FloatFormat.standard(4, 3) == FP8_STANDARD
    assert format_from_name("fp32") is None
    with pytest.raises(ValueError):
        format_from_name("int8")
    x = np.linspace(-1, 1, 101)
    errs = [np.max(np.abs(x - quantize(x, f))) for f in (FP4, FP8_SHIFTED, FP16)]
    assert errs[0] >= errs[1] >= errs[2]


def test_subnormal_flag():
    fmt = FloatFormat(4, 3, 15, subnormals=True)
    step = math.ldexp(1, 1 - 15 - 3)
    assert decode(1, fmt) == step
    assert decode(encode(3 * step, fmt), fmt) == 3 * step
    assert fp8_mul(1, encode(1.0, fmt), fmt) == step


def test_encode_array_dtype():
    codes = encode_array([0.5, -0.25], FP8_SHIFTED)
    assert codes.dtype == np.uint8
    assert encode_array([1.0], FP16).dtype == np.uint16
