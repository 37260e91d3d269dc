"""Signed fixed-point numbers with saturating arithmetic.

A format is ``1 + int_bits + frac_bits`` bits wide. Every operation clamps into
the target format's range; nothing ever wraps. Rounding is to nearest with
ties away from zero, both when converting reals and when dropping product bits.

Scalar operations work on :class:`QValue` and use Python integers, so they are
exact for any width up to 64. The ``*_raw`` array helpers operate on int64
numpy arrays of raw values and are what the hardware kernels use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class FormatMismatchError(ValueError):
    """Operands or conversion targets have incompatible formats."""


@dataclass(frozen=True)
class QFormat:
    int_bits: int
    frac_bits: int

    def __post_init__(self):
        if self.int_bits < 0 or self.frac_bits < 0:
            raise ValueError("bit counts must be non-negative")
        if not 2 <= self.width <= 64:
            raise ValueError(f"format width {self.width} outside [2, 64]")

    @property
    def width(self) -> int:
        return 1 + self.int_bits + self.frac_bits

    @property
    def min_raw(self) -> int:
        return -(1 << (self.width - 1))

    @property
    def max_raw(self) -> int:
        return (1 << (self.width - 1)) - 1

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def min_value(self) -> float:
        return self.min_raw / self.scale

    @property
    def max_value(self) -> float:
        return self.max_raw / self.scale

    @property
    def lsb(self) -> float:
        return 1.0 / self.scale

    def clamp_raw(self, raw: int) -> int:
        return min(max(raw, self.min_raw), self.max_raw)

    def __str__(self):
        return f"Q{self.int_bits}.{self.frac_bits}[{self.width}b]"


#: Network format: weights, biases, beta, threshold, membrane potential.
Q1_15 = QFormat(0, 15)
#: 28-bit adder-tree accumulator, same fraction as Q1_15.
Q12_15 = QFormat(12, 15)
#: 8-bit variant; only exercised as a parameterization.
Q1_7 = QFormat(0, 7)


@dataclass(frozen=True)
class QValue:
    raw: int
    fmt: QFormat = Q1_15

    def __post_init__(self):
        if not isinstance(self.raw, (int, np.integer)):
            raise TypeError(f"raw must be an integer, got {type(self.raw).__name__}")
        raw = int(self.raw)
        if not self.fmt.min_raw <= raw <= self.fmt.max_raw:
            raise ValueError(f"raw {raw} outside {self.fmt} range")
        object.__setattr__(self, "raw", raw)

    def __float__(self):
        return dequantize(self)

    @classmethod
    def zero(cls, fmt: QFormat = Q1_15) -> "QValue":
        return cls(0, fmt)


def _round_half_away(x: Fraction) -> int:
    n = math.floor(abs(x) + Fraction(1, 2))
    return n if x >= 0 else -n


def _rshift_round(v: int, shift: int) -> int:
    """``v / 2**shift`` rounded to nearest, ties away from zero."""
    if shift == 0:
        return v
    half = 1 << (shift - 1)
    if v >= 0:
        return (v + half) >> shift
    return -((-v + half) >> shift)


def quantize(x: float, fmt: QFormat = Q1_15) -> QValue:
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    raw = _round_half_away(Fraction(x) * fmt.scale)
    return QValue(fmt.clamp_raw(raw), fmt)


def dequantize(q: QValue) -> float:
    if abs(q.raw) < 2**53:
        return math.ldexp(float(q.raw), -q.fmt.frac_bits)
    # beyond float64's integer range; nearest double
    return float(Fraction(q.raw, q.fmt.scale))


def _same_fmt(a: QValue, b: QValue):
    if a.fmt != b.fmt:
        raise FormatMismatchError(f"format mismatch: {a.fmt} vs {b.fmt}")


def sat_add(a: QValue, b: QValue) -> QValue:
    _same_fmt(a, b)
    return QValue(a.fmt.clamp_raw(a.raw + b.raw), a.fmt)


def sat_sub(a: QValue, b: QValue) -> QValue:
    _same_fmt(a, b)
    return QValue(a.fmt.clamp_raw(a.raw - b.raw), a.fmt)


def sat_mul(a: QValue, b: QValue) -> QValue:
    _same_fmt(a, b)
    raw = _rshift_round(a.raw * b.raw, a.fmt.frac_bits)
    return QValue(a.fmt.clamp_raw(raw), a.fmt)


def widen(q: QValue, acc_fmt: QFormat = Q12_15) -> QValue:
    if acc_fmt.frac_bits != q.fmt.frac_bits:
        raise FormatMismatchError(f"cannot widen {q.fmt} to {acc_fmt}: fraction bits differ")
    if acc_fmt.width < q.fmt.width:
        raise FormatMismatchError(f"cannot widen {q.fmt} to narrower {acc_fmt}")
    return QValue(q.raw, acc_fmt)


def narrow_saturating(acc: QValue, fmt: QFormat = Q1_15) -> QValue:
    if acc.fmt.frac_bits != fmt.frac_bits:
        raise FormatMismatchError(f"cannot narrow {acc.fmt} to {fmt}: fraction bits differ")
    return QValue(fmt.clamp_raw(acc.raw), fmt)


# -- array helpers (int64 raw values) ---------------------------------------


def quantize_array(x, fmt: QFormat = Q1_15):
    """Vectorized :func:`quantize`; returns ``(raw int64 array, n_saturated)``.

    Valid for formats up to 53 bits wide, where float64 scaling is exact.
    """
    if fmt.width > 53:
        raise ValueError("quantize_array supports formats up to 53 bits")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    scaled = np.ldexp(x, fmt.frac_bits)
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    saturated = int(np.count_nonzero((rounded > fmt.max_raw) | (rounded < fmt.min_raw)))
    raw = np.clip(rounded, fmt.min_raw, fmt.max_raw).astype(np.int64)
    return raw, saturated


def dequantize_array(raw, fmt: QFormat = Q1_15):
    return np.ldexp(np.asarray(raw, dtype=np.float64), -fmt.frac_bits)


def saturate_raw(raw, fmt: QFormat):
    return np.clip(raw, fmt.min_raw, fmt.max_raw)


def rshift_round_raw(v, shift: int):
    v = np.asarray(v, dtype=np.int64)
    if shift == 0:
        return v
    half = np.int64(1 << (shift - 1))
    mag = (np.abs(v) + half) >> shift
    return np.where(v >= 0, mag, -mag)


def sat_mul_raw(a, b, fmt: QFormat = Q1_15):
    # products must fit int64, so formats up to 32 bits
    prod = np.asarray(a, dtype=np.int64) * np.asarray(b, dtype=np.int64)
    return saturate_raw(rshift_round_raw(prod, fmt.frac_bits), fmt)
