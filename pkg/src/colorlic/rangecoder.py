"""Byte-oriented range coder with 32-bit state and 16-bit probabilities.

Carry propagation follows the LZMA scheme (a cached output byte plus a
count of pending 0xFF bytes), so ``low`` never needs more than 33 bits.
The scheme's first output byte is always zero and is not stored.
Every table is an integer CDF ``cdf[0] = 0 < ... < cdf[-1] = 2**16``
whose last symbol is reserved as an escape: a value outside
``[0, len(cdf) - 2)`` is sent as the escape symbol followed by 32 raw bits
holding its zigzag code.
"""

from __future__ import annotations

from bisect import bisect_right
from typing import Sequence

import numpy as np

from .errors import FormatError, UsageError

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


def zigzag(v: int) -> int:
    return 2 * v if v >= 0 else -2 * v - 1


def unzigzag(u: int) -> int:
    return u >> 1 if u % 2 == 0 else -((u + 1) >> 1)


class RangeEncoder:
    def __init__(self) -> None:
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self) -> None:
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low << 8) & _MASK32

    def encode(self, start: int, size: int) -> None:
        r = self.range >> PRECISION
        self.low += start * r
        self.range = size * r
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_raw16(self, value: int) -> None:
        self.encode(value, 1)

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        if self.out[0] != 0:
            raise AssertionError("range coder lead byte must be zero")
        return bytes(self.out[1:])


class RangeDecoder:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self.pos >= len(self.data):
            raise FormatError("range-coded stream is truncated")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode_freq(self) -> int:
        self._r = self.range >> PRECISION
        value = self.code // self._r
        if value >= TOTAL:
            raise FormatError("range-coded stream is corrupt")
        return value

    def update(self, start: int, size: int) -> None:
        self.code -= start * self._r
        self.range = size * self._r
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
            self.range <<= 8

    def decode_raw16(self) -> int:
        value = self.decode_freq()
        self.update(value, 1)
        return value

    @property
    def exhausted(self) -> bool:
        return self.pos == len(self.data)


def encode_symbol(enc: RangeEncoder, symbol: int, cdf: Sequence[int]) -> None:
    n_alpha = len(cdf) - 2
    if 0 <= symbol < n_alpha:
        enc.encode(cdf[symbol], cdf[symbol + 1] - cdf[symbol])
        return
    enc.encode(cdf[n_alpha], cdf[n_alpha + 1] - cdf[n_alpha])
    u = zigzag(int(symbol))
    if u >= 1 << 32:
        raise UsageError(f"symbol {symbol} too large for the escape code")
    enc.encode_raw16(u >> 16)
    enc.encode_raw16(u & 0xFFFF)


def decode_symbol(dec: RangeDecoder, cdf: Sequence[int]) -> int:
    value = dec.decode_freq()
    s = bisect_right(cdf, value) - 1
    if s >= len(cdf) - 1:
        raise FormatError("decoded value outside the table")
    dec.update(cdf[s], cdf[s + 1] - cdf[s])
    if s < len(cdf) - 2:
        return s
    u = (dec.decode_raw16() << 16) | dec.decode_raw16()
    return unzigzag(u)


def check_cdf(cdf: Sequence[int]) -> None:
    c = np.asarray(cdf)
    if c.ndim != 1 or len(c) < 2 or c[0] != 0 or c[-1] != TOTAL or np.any(np.diff(c) <= 0):
        raise UsageError("invalid integer CDF table")


def _as_tables(cdfs):
    if _is_single_table(cdfs):
        return True, [int(c) for c in cdfs]
    return False, [[int(c) for c in t] for t in cdfs]


def range_encode(symbols: Sequence[int], cdfs, indexes: Sequence[int] | None = None) -> bytes:
    """Encode ``symbols``; symbol ``i`` uses ``cdfs[indexes[i]]`` (or ``cdfs`` itself if it is one table)."""
    single, cdfs = _as_tables(cdfs)
    enc = RangeEncoder()
    for i, s in enumerate(symbols):
        cdf = cdfs if single else cdfs[indexes[i] if indexes is not None else i]
        encode_symbol(enc, int(s), cdf)
    return enc.finish()


def range_decode(data: bytes, cdfs, count: int, indexes: Sequence[int] | None = None) -> list[int]:
    single, cdfs = _as_tables(cdfs)
    dec = RangeDecoder(data)
    out = []
    for i in range(count):
        cdf = cdfs if single else cdfs[indexes[i] if indexes is not None else i]
        out.append(decode_symbol(dec, cdf))
    if not dec.exhausted:
        raise FormatError("trailing bytes after the last symbol")
    return out


def _is_single_table(cdfs) -> bool:
    first = cdfs[0]
    return np.isscalar(first) or isinstance(first, (int, np.integer))


def pmf_to_quantized_cdf(pmf: np.ndarray, precision: int = PRECISION) -> np.ndarray:
    """Integer CDF with total ``2**precision`` and every frequency at least 1."""
    pmf = np.asarray(pmf, dtype=np.float64)
    total = 1 << precision
    if len(pmf) > total:
        raise UsageError("alphabet larger than the probability resolution")
    freq = np.maximum(1, np.round(pmf / max(pmf.sum(), 1e-300) * total)).astype(np.int64)
    diff = total - int(freq.sum())
    if diff > 0:
        freq[int(np.argmax(freq))] += diff
    while diff < 0:
        # take back from the largest bins, never going below 1
        order = np.argsort(-freq, kind="stable")
        for k in order:
            if diff == 0:
                break
            take = min(-diff, int(freq[k]) - 1)
            if take > 0:
                freq[k] -= take
                diff += take
    cdf = np.zeros(len(freq) + 1, dtype=np.int64)
    np.cumsum(freq, out=cdf[1:])
    return cdf
