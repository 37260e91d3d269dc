import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snnhw.fixedpoint import (
    Q1_7,
    Q1_15,
    Q12_15,
    FormatMismatchError,
    QFormat,
    QValue,
    dequantize,
    dequantize_array,
    narrow_saturating,
    quantize,
    quantize_array,
    sat_add,
    sat_mul,
    sat_mul_raw,
    sat_sub,
    widen,
)

finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e6, max_value=1e6)
raw16 = st.integers(Q1_15.min_raw, Q1_15.max_raw)


def q(raw, fmt=Q1_15):
    return QValue(raw, fmt)


def test_format_widths():
    assert Q1_15.width == 16 and (Q1_15.min_raw, Q1_15.max_raw) == (-32768, 32767)
    assert Q12_15.width == 28 and Q12_15.min_raw == -(2**27)
    assert Q1_7.width == 8
    with pytest.raises(ValueError):
        QFormat(40, 40)
    with pytest.raises(ValueError):
        QFormat(0, 0)


def test_qvalue_rejects_out_of_range_raw():
    with pytest.raises(ValueError):
        QValue(32768, Q1_15)
    with pytest.raises(TypeError):
        QValue(0.5, Q1_15)


@pytest.mark.parametrize(
    "x, fmt, raw",
    [
        (0.0, Q1_15, 0),
        (0.5, Q1_15, 16384),
        (2.0, Q1_15, 32767),
        (-2.0, Q1_15, -32768),
        (0.9921875, Q1_7, 127),
        (-1.0, Q1_7, -128),
    ],
)
def test_quantize_examples(x, fmt, raw):
    assert quantize(x, fmt).raw == raw


def test_quantize_rounds_ties_away_from_zero():
    half_lsb = 2.0**-16
    assert quantize(half_lsb).raw == 1
    assert quantize(-half_lsb).raw == -1
    assert quantize(3 * half_lsb).raw == 2
    assert quantize(-3 * half_lsb).raw == -2
    assert quantize(half_lsb * 0.999).raw == 0


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_quantize_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        quantize(bad)


def test_dequantize_examples():
    assert dequantize(q(16384)) == 0.5
    assert dequantize(q(-32768)) == -1.0


@given(raw16)
def test_grid_round_trip(raw):
    v = dequantize(q(raw))
    assert quantize(v).raw == raw


@given(finite)
def test_quantize_error_bound(x):
    clamped = min(max(x, Q1_15.min_value), Q1_15.max_value)
    assert abs(dequantize(quantize(x)) - clamped) <= 2.0**-16


@given(finite)
def test_quantize_idempotent(x):
    once = quantize(x)
    assert quantize(dequantize(once)) == once


def test_sat_add_examples():
    assert sat_add(quantize(0.25), quantize(0.25)) == quantize(0.5)
    assert sat_add(quantize(0.9), quantize(0.9)).raw == 32767
    x = quantize(-0.3)
    assert sat_add(x, QValue.zero()) == x


@given(raw16, raw16)
def test_sat_add_commutes(a, b):
    assert sat_add(q(a), q(b)) == sat_add(q(b), q(a))


@given(raw16, raw16, raw16)
def test_sat_add_monotone(a, b, c):
    lo, hi = sorted((a, b))
    assert sat_add(q(lo), q(c)).raw <= sat_add(q(hi), q(c)).raw


def test_sat_mul_examples():
    assert sat_mul(quantize(0.5), quantize(0.5)) == quantize(0.25)
    assert sat_mul(quantize(0.7), QValue.zero()).raw == 0
    assert sat_mul(quantize(-1.0), quantize(-1.0)).raw == 32767


def test_sat_mul_rounding_ties_away():
    # 1 * 16384 = 2**14, exactly half an LSB after the 15-bit shift
    assert sat_mul(q(1), q(16384)).raw == 1
    assert sat_mul(q(-1), q(16384)).raw == -1
    assert sat_mul(q(1), q(16383)).raw == 0


@given(st.integers(0, Q1_15.max_raw))
def test_sat_mul_by_max_never_grows(x):
    assert sat_mul(q(x), q(Q1_15.max_raw)).raw <= x


def test_format_mismatch_errors():
    with pytest.raises(FormatMismatchError):
        sat_add(q(1), q(1, Q1_7))
    with pytest.raises(FormatMismatchError):
        sat_mul(q(1), q(1, Q12_15))


def test_widen_examples():
    assert widen(q(16384), Q12_15) == QValue(16384, Q12_15)
    assert widen(q(-32768), Q12_15).raw == -32768
    with pytest.raises(FormatMismatchError):
        widen(QValue(5, Q12_15), Q1_15)
    with pytest.raises(FormatMismatchError):
        widen(q(5), QFormat(12, 7))


@given(raw16)
def test_widen_preserves_value(raw):
    assert dequantize(widen(q(raw))) == dequantize(q(raw))


def test_narrow_examples():
    assert narrow_saturating(quantize(3.75, Q12_15)).raw == 32767
    assert narrow_saturating(quantize(-7.0, Q12_15)).raw == -32768
    assert dequantize(narrow_saturating(quantize(0.25, Q12_15))) == 0.25
    with pytest.raises(FormatMismatchError):
        narrow_saturating(QValue(3, QFormat(3, 7)), Q1_15)


@pytest.mark.parametrize("fmt", [QFormat(0, 3), QFormat(1, 3), QFormat(2, 5), Q1_7, QFormat(0, 9)])
def test_ops_stay_in_range_exhaustive(fmt):
    raws = range(fmt.min_raw, fmt.max_raw + 1)
    for a, b in itertools.product(raws, raws):
        for op in (sat_add, sat_sub, sat_mul):
            r = op(QValue(a, fmt), QValue(b, fmt)).raw
            assert fmt.min_raw <= r <= fmt.max_raw


@settings(max_examples=300)
@given(st.integers(1, 30), st.integers(0, 30), st.data())
def test_ops_stay_in_range_random_formats(int_bits, frac_bits, data):
    fmt = QFormat(min(int_bits, 63 - frac_bits), frac_bits)
    a = data.draw(st.integers(fmt.min_raw, fmt.max_raw))
    b = data.draw(st.integers(fmt.min_raw, fmt.max_raw))
    for op in (sat_add, sat_sub, sat_mul):
        assert fmt.min_raw <= op(QValue(a, fmt), QValue(b, fmt)).raw <= fmt.max_raw


def test_array_helpers_match_scalar():
    rng = np.random.default_rng(3)
    xs = np.concatenate([rng.uniform(-1.5, 1.5, 2000), np.arange(-8, 9) * 2.0**-16])
    raw, sat = quantize_array(xs)
    assert raw.tolist() == [quantize(float(x)).raw for x in xs]
    assert sat == int(np.sum((xs >= 1.0) | (xs < -1.0)))
    assert np.array_equal(dequantize_array(raw), [dequantize(q(int(r))) for r in raw])
    a = rng.integers(-32768, 32768, 2000)
    b = rng.integers(-32768, 32768, 2000)
    assert sat_mul_raw(a, b).tolist() == [sat_mul(q(int(x)), q(int(y))).raw for x, y in zip(a, b)]
