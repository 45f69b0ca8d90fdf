"""Fixed-point Q-format arithmetic for the accelerator datapath.

Datapath samples are 16-bit two's-complement words read at a
power-of-two scale (Q16.10 by default: sign, 5 integer bits, 10
fractional bits). Products land in a 48-bit accumulator at twice the
fractional scale and are summed exactly; rounding and saturation
happen only when an accumulator is folded back into a 16-bit word.

Scalar operations work on :class:`FixedWord` / :class:`WideAcc`
values. The ``*_array`` helpers apply the same arithmetic to numpy
arrays of raw counts and are what the layer engine uses. Both paths
share the rounding core so they cannot drift apart.

Everything here is a pure function of its arguments; values are
immutable and safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ACC_BITS = 48
ACC_MIN = -(1 << (ACC_BITS - 1))
ACC_MAX = (1 << (ACC_BITS - 1)) - 1


class AccumulatorOverflow(OverflowError):
    """An accumulation left the 48-bit envelope; the layer is out of contract."""


@dataclass(frozen=True)
class QFormat:
    """Signed fixed-point format, ``total_bits`` wide with ``frac_bits`` fractional.

    The representable raw range is [-2^(total_bits-1), 2^(total_bits-1)-1]
    and a word's real value is ``raw * 2**-frac_bits``.
    """

    total_bits: int = 16
    frac_bits: int = 10

    def __post_init__(self):
        if not (1 <= self.frac_bits < self.total_bits <= 16):
            raise ValueError(
                f"unsupported format Q{self.total_bits}.{self.frac_bits}: "
                "need 1 <= frac_bits < total_bits <= 16"
            )

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits


Q16_10 = QFormat(16, 10)


@dataclass(frozen=True)
class FixedWord:
    """One datapath word: a raw two's-complement count plus its format."""

    raw: int
    fmt: QFormat = Q16_10

    def __post_init__(self):
        if not (self.fmt.raw_min <= self.raw <= self.fmt.raw_max):
            raise ValueError(f"raw {self.raw} outside {self.fmt.total_bits}-bit range")

    @property
    def value(self) -> float:
        return self.raw * self.fmt.lsb


@dataclass(frozen=True)
class WideAcc:
    """48-bit accumulator holding an exact sum of word products.

    The raw count sits at scale ``2**(-2*frac_bits)``, so a product of
    two words adds into it without any shift.
    """

    raw: int = 0
    fmt: QFormat = Q16_10

    def __post_init__(self):
        if not (ACC_MIN <= self.raw <= ACC_MAX):
            raise AccumulatorOverflow(f"accumulator raw {self.raw} exceeds {ACC_BITS} bits")

    @property
    def value(self) -> float:
        return self.raw * 2.0 ** (-2 * self.fmt.frac_bits)


def rshift_round_half_even(value, shift: int):
    """Arithmetic right shift with round-half-to-even tie breaking.

    Works on Python ints and on numpy integer arrays; the engine and the
    scalar ops both round through here.
    """
    if shift < 0:
        raise ValueError("shift must be non-negative")
    if shift == 0:
        return value
    half = 1 << (shift - 1)
    q = value >> shift
    r = value & ((1 << shift) - 1)  # non-negative remainder of floor division
    bump = (r > half) | ((r == half) & ((q & 1) == 1))
    return q + bump


def saturate(raw, fmt: QFormat):
    """Clamp a raw count (int or array) into the format's range."""
    if isinstance(raw, np.ndarray):
        return np.clip(raw, fmt.raw_min, fmt.raw_max)
    return min(max(raw, fmt.raw_min), fmt.raw_max)


def quantize(x: float, fmt: QFormat = Q16_10) -> FixedWord:
    """Round a real value half-to-even onto the format's grid, saturating.

    Raises ValueError for non-finite inputs.
    """
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    raw = round(x * fmt.scale)  # Python round() is half-to-even
    return FixedWord(saturate(raw, fmt), fmt)


def dequantize(w: FixedWord) -> float:
    """Exact real value of a word (raw * 2**-frac_bits)."""
    return w.raw * w.fmt.lsb


def mac(acc: WideAcc, a: FixedWord, b: FixedWord) -> WideAcc:
    """Multiply-accumulate: acc + a*b with exact integer arithmetic.

    No intermediate rounding or saturation; overflow past 48 bits is a
    contract violation and raises AccumulatorOverflow.
    """
    if a.fmt != b.fmt:
        raise ValueError("mac operands must share one format")
    return WideAcc(acc.raw + a.raw * b.raw, a.fmt)


def requantize(acc: WideAcc, fmt: QFormat | None = None) -> FixedWord:
    """Fold an accumulator back to a word: shift by frac_bits with
    round-half-to-even, then saturate."""
    fmt = fmt or acc.fmt
    raw = rshift_round_half_even(acc.raw, fmt.frac_bits)
    return FixedWord(saturate(raw, fmt), fmt)


def dot_error_bound(x, w, fmt: QFormat = Q16_10) -> float:
    """Worst-case |fixed-point dot - real dot| for round-to-nearest operands.

    For each term, quantization perturbs both factors by at most half an
    LSB, so the product error is bounded by
    ``2**(-f-1) * (|x_i| + |w_i|) + 2**(-2f-2)``; the accumulator adds the
    exact products, so the bound is the plain sum over terms. Only valid
    when neither operand saturates during quantization.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.shape != w.shape or x.ndim != 1:
        raise ValueError(f"vector length mismatch: {x.shape} vs {w.shape}")
    f = fmt.frac_bits
    half_lsb = 2.0 ** (-f - 1)
    cross = 2.0 ** (-2 * f - 2)
    return float(np.sum(half_lsb * (np.abs(x) + np.abs(w)) + cross))


# ---------------------------------------------------------------------------
# Array forms used by the layer engine. Raw counts travel as int16; all
# accumulation happens in int64, which has ample headroom above the
# 48-bit contract limit that check_acc_headroom enforces.


def quantize_array(x: np.ndarray, fmt: QFormat = Q16_10) -> np.ndarray:
    """Vector quantize: round-half-to-even then saturate, returning int16."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    raw = np.rint(x * fmt.scale)  # np.rint rounds half to even
    return np.clip(raw, fmt.raw_min, fmt.raw_max).astype(np.int16)


def dequantize_array(raw: np.ndarray, fmt: QFormat = Q16_10) -> np.ndarray:
    return raw.astype(np.float64) * fmt.lsb


def requantize_array(acc: np.ndarray, fmt: QFormat = Q16_10) -> np.ndarray:
    """Vector form of requantize on int64 accumulator raws."""
    check_acc_headroom(acc)
    raw = rshift_round_half_even(acc.astype(np.int64), fmt.frac_bits)
    return np.clip(raw, fmt.raw_min, fmt.raw_max).astype(np.int16)


def check_acc_headroom(acc: np.ndarray):
    """Abort if any accumulator raw exceeds the 48-bit contract range."""
    if acc.size and (acc.max(initial=0) > ACC_MAX or acc.min(initial=0) < ACC_MIN):
        raise AccumulatorOverflow("accumulator exceeded 48-bit contract range")
