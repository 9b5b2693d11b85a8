"""Shifted-bias minifloat formats.

A code is ``S | E | M`` from MSB to LSB. Every exponent value is numeric
(no inf/NaN), ``E == 0`` is zero (flush-to-zero unless ``subnormals`` is
set), and normal codes decode to ``(-1)^S * 1.M * 2^(E - bias)``.

The default 8-bit format has 4 exponent bits, 3 mantissa bits and bias 15,
which moves the representable range down by ``2^8`` compared with the
standard bias of 7.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FloatFormat:
    exponent_bits: int = 4
    mantissa_bits: int = 3
    bias: int = 15
    subnormals: bool = False

    def __post_init__(self):
        if self.exponent_bits < 1 or self.mantissa_bits < 0:
            raise ValueError("need at least one exponent bit")
        if self.total_bits > 16:
            raise ValueError("formats wider than 16 bits are not supported")

    @property
    def total_bits(self) -> int:
        return 1 + self.exponent_bits + self.mantissa_bits

    @property
    def num_codes(self) -> int:
        return 1 << self.total_bits

    @property
    def max_exponent(self) -> int:
        return (1 << self.exponent_bits) - 1

    @property
    def sign_mask(self) -> int:
        return 1 << (self.exponent_bits + self.mantissa_bits)

    @property
    def code_dtype(self):
        return np.uint8 if self.total_bits <= 8 else np.uint16

    @property
    def max_value(self) -> float:
        frac = 2.0 - 2.0 ** -self.mantissa_bits
        return math.ldexp(frac, self.max_exponent - self.bias)

    @property
    def min_normal(self) -> float:
        return math.ldexp(1.0, 1 - self.bias)

    @property
    def max_code(self) -> int:
        """Largest positive magnitude code."""
        return self.sign_mask - 1

    @classmethod
    def standard(cls, exponent_bits: int, mantissa_bits: int) -> "FloatFormat":
        return cls(exponent_bits, mantissa_bits, (1 << (exponent_bits - 1)) - 1)


FP8_SHIFTED = FloatFormat(4, 3, 15)
FP8_STANDARD = FloatFormat(4, 3, 7)
FP16 = FloatFormat(5, 10, 15)
FP4 = FloatFormat(2, 1, 1)

# CLI names; fp32 means "no quantization" and maps to None
FORMATS = {
    "fp8b15": FP8_SHIFTED,
    "fp8b7": FP8_STANDARD,
    "fp16": FP16,
    "fp4": FP4,
    "fp32": None,
}


def split_code(code: int, fmt: FloatFormat = FP8_SHIFTED) -> tuple[int, int, int]:
    """Return the (sign, exponent, mantissa) fields of ``code``."""
    m = fmt.mantissa_bits
    sign = (code >> (fmt.exponent_bits + m)) & 1
    exp = (code >> m) & fmt.max_exponent
    man = code & ((1 << m) - 1)
    return sign, exp, man


def decode(code: int, fmt: FloatFormat = FP8_SHIFTED) -> float:
    sign, exp, man = split_code(int(code), fmt)
    m = fmt.mantissa_bits
    if exp == 0:
        if fmt.subnormals and man:
            mag = math.ldexp(man, 1 - fmt.bias - m)
        else:
            mag = 0.0
    else:
        mag = math.ldexp((1 << m) | man, exp - fmt.bias - m)
    return -mag if sign else mag


def encode(x: float, fmt: FloatFormat = FP8_SHIFTED) -> int:
    """Round ``x`` to the nearest code (ties to even).

    Magnitudes beyond the format maximum saturate; magnitudes below the
    smallest normal flush to a signed zero.
    """
    return int(encode_array(np.asarray(x, dtype=np.float64), fmt))


def decode_table(fmt: FloatFormat = FP8_SHIFTED) -> np.ndarray:
    """Decoded value of every code, indexed by code."""
    return _decode_table(fmt)


_TABLES: dict[FloatFormat, np.ndarray] = {}


def _decode_table(fmt):
    table = _TABLES.get(fmt)
    if table is None:
        table = np.array([decode(c, fmt) for c in range(fmt.num_codes)])
        table.setflags(write=False)
        _TABLES[fmt] = table
    return table


def decode_array(codes, fmt: FloatFormat = FP8_SHIFTED) -> np.ndarray:
    return _decode_table(fmt)[np.asarray(codes, dtype=np.int64)]


def encode_array(x, fmt: FloatFormat = FP8_SHIFTED) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("encode expects finite values")
    m = fmt.mantissa_bits
    sign = np.signbit(x)
    mag = np.abs(x)

    frac, e2 = np.frexp(mag)  # mag = frac * 2**e2, frac in [0.5, 1)
    exp = e2 - 1 + fmt.bias
    # integer significand including the hidden bit, rounded half to even
    sig = np.rint(np.ldexp(frac, m + 1))
    carry = sig >= (1 << (m + 1))
    sig = np.where(carry, 1 << m, sig)
    exp = np.where(carry, exp + 1, exp)

    man = sig.astype(np.int64) - (1 << m)
    code = (exp.astype(np.int64) << m) | man

    tiny = mag < fmt.min_normal
    if fmt.subnormals:
        # below the normal range the grid is uniform with step 2^(1-bias-m)
        sub = np.rint(np.ldexp(mag, fmt.bias - 1 + m)).astype(np.int64)
        code = np.where(tiny, sub, code)  # sub == 2^m rolls into E=1, M=0
    else:
        code = np.where(tiny, 0, code)
    code = np.where(mag == 0, 0, code)
    code = np.where((exp > fmt.max_exponent) | (mag > fmt.max_value), fmt.max_code, code)
    code = np.where(sign, code | fmt.sign_mask, code)
    return code.astype(fmt.code_dtype)


def quantize(x, fmt: FloatFormat | None = FP8_SHIFTED):
    """Round-trip values through ``fmt``; ``None`` means full precision."""
    if fmt is None:
        return np.asarray(x, dtype=np.float64)
    return decode_array(encode_array(x, fmt), fmt)


def fp8_mul(a: int, b: int, fmt: FloatFormat = FP8_SHIFTED) -> float:
    """Exact product of two codes, built the way the hardware multiplier is.

    Sign is an XOR, exponents add, and the mantissas (hidden bit included)
    go through a small integer multiplier. The result is exact in binary64.
    """
    sa, ea, ma = split_code(a, fmt)
    sb, eb, mb = split_code(b, fmt)
    sign = sa ^ sb
    m = fmt.mantissa_bits
    if fmt.subnormals:
        # subnormals have no hidden bit and a fixed exponent of 1
        sig_a, ea = (ma, 1) if ea == 0 else ((1 << m) | ma, ea)
        sig_b, eb = (mb, 1) if eb == 0 else ((1 << m) | mb, eb)
    else:
        if ea == 0 or eb == 0:
            return -0.0 if sign else 0.0
        sig_a, sig_b = (1 << m) | ma, (1 << m) | mb
    product = math.ldexp(sig_a * sig_b, ea + eb - 2 * fmt.bias - 2 * m)
    return -product if sign else product


def range_report(fmt: FloatFormat = FP8_SHIFTED) -> tuple[float, float]:
    """(smallest positive normal, largest magnitude)."""
    return fmt.min_normal, fmt.max_value


def format_from_name(name: str) -> FloatFormat | None:
    try:
        return FORMATS[name]
    except KeyError:
        raise ValueError(f"unknown format {name!r}; choose from {sorted(FORMATS)}") from None


def format_name(fmt: FloatFormat | None) -> str:
    for name, f in FORMATS.items():
        if f == fmt:
            return name
    return f"e{fmt.exponent_bits}m{fmt.mantissa_bits}b{fmt.bias}"
