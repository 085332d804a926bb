"""32-bit range coder (carry-propagating, LZMA style) with a static
two-sided geometric model.

Streams are canonical: the flush picks the value with the most trailing zero
bytes, those bytes are dropped, and the decoder reads zeros past the end.
The implicit leading zero byte of the LZMA scheme is never stored.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

from .bitstream import CodecError

TOP = 1 << 24
MASK32 = 0xFFFFFFFF
TOT_BITS = 16
TOTAL = 1 << TOT_BITS


class RangeCoderError(CodecError):
    pass


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > MASK32:
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
        self.low = (self.low << 8) & MASK32

    def encode(self, cum: int, freq: int):
        r = self.range >> TOT_BITS
        self.low += r * cum
        self.range = r * freq
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bit(self, bit: int):
        self.encode(bit << (TOT_BITS - 1), 1 << (TOT_BITS - 1))

    def finish(self) -> bytes:
        # pick the point of [low, low + range) with the most trailing zero bits
        hi = self.low + self.range - 1
        for shift in range(32, -1, -1):
            v = -(-self.low >> shift) << shift
            if v <= hi:
                break
        self.low = v
        for _ in range(5):
            self._shift_low()
        if self.out[0] != 0:
            raise AssertionError("range coder lost its leading byte")
        return bytes(self.out[1:]).rstrip(b"\x00")


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._byte()

    def _byte(self) -> int:
        p = self.pos
        self.pos += 1
        return self.data[p] if p < len(self.data) else 0

    def decode_freq(self) -> int:
        self._r = self.range >> TOT_BITS
        v = self.code // self._r
        if v >= TOTAL:
            raise RangeCoderError("range decoder state out of bounds")
        return v

    def consume(self, cum: int, freq: int):
        self.code -= self._r * cum
        self.range = self._r * freq
        while self.range < TOP:
            self.code = ((self.code << 8) | self._byte()) & MASK32
            self.range <<= 8

    def decode_bit(self) -> int:
        bit = self.decode_freq() >> (TOT_BITS - 1)
        self.consume(bit << (TOT_BITS - 1), 1 << (TOT_BITS - 1))
        return bit


# ---------------------------------------------------------------------------
# two-sided geometric model: P(k) proportional to theta^|k|

THETA_SCALE = 1 << 16
MAX_CORE = 1024
ALPHABET_BOUND = 1 << 15


def estimate_theta(indices) -> float:
    """Maximum-likelihood theta from the mean absolute index."""
    a = float(np.mean(np.abs(indices))) if np.size(indices) else 0.0
    if a <= 0:
        return 0.0
    return (math.sqrt(1.0 + a * a) - 1.0) / a


def quantize_theta(theta: float) -> int:
    return int(min(max(round(theta * THETA_SCALE), 0), THETA_SCALE - 1))


def tsg_pmf(theta: float, k):
    k = np.abs(np.asarray(k))
    return (1 - theta) / (1 + theta) * theta ** k


def tsg_entropy_bits(theta: float) -> float:
    """Entropy of the two-sided geometric law, in bits."""
    if theta <= 0:
        return 0.0
    c = (1 - theta) / (1 + theta)
    e_abs = 2 * theta / (1 - theta * theta)
    return -(math.log2(c) + e_abs * math.log2(theta))


@dataclass(frozen=True)
class TsgModel:
    theta_q: int
    core: int
    cum: tuple[int, ...]    # cumulative frequencies, len = n_symbols + 1

    @classmethod
    def from_quantized(cls, theta_q: int) -> "TsgModel":
        if not 0 <= theta_q < THETA_SCALE:
            raise RangeCoderError(f"theta field {theta_q} out of range")
        theta = theta_q / THETA_SCALE
        if theta == 0.0:
            core = 1
        else:
            # smallest core whose two-sided tail mass drops below 2^-20
            core = int(math.ceil(math.log(2.0 ** -20 * (1 + theta) / 2) / math.log(theta)))
            core = min(max(core, 1), MAX_CORE)
        n = 2 * core + 2
        budget = TOTAL - n
        c = (1 - theta) / (1 + theta)
        freqs = [0] * n
        p = c
        for k in range(core + 1):      # python floats: identical on every IEEE platform
            f = 1 + int(p * budget)
            freqs[core + k] = f
            if k:
                freqs[core - k] = f
            p *= theta
        tail = 2.0 * c * theta ** (core + 1) / (1 - theta) if theta > 0 else 0.0
        freqs[n - 1] = 1 + int(tail * budget)
        freqs[core] += TOTAL - sum(freqs)
        if freqs[core] < 1:
            raise AssertionError("frequency table overflow")
        cum = [0]
        for f in freqs:
            cum.append(cum[-1] + f)
        return cls(theta_q, core, tuple(cum))

    @property
    def escape(self) -> int:
        return 2 * self.core + 1

    def bits_for(self, k: int) -> float:
        s = k + self.core if abs(k) <= self.core else self.escape
        return TOT_BITS - math.log2(self.cum[s + 1] - self.cum[s])


def _encode_direct(enc: RangeEncoder, v: int, nbits: int):
    for i in range(nbits - 1, -1, -1):
        enc.encode_bit((v >> i) & 1)


def _decode_direct(dec: RangeDecoder, nbits: int) -> int:
    v = 0
    for _ in range(nbits):
        v = (v << 1) | dec.decode_bit()
    return v


def tsg_encode(indices, model: TsgModel) -> bytes:
    enc = RangeEncoder()
    cum = model.cum
    core = model.core
    esc = model.escape
    for k in np.asarray(indices, dtype=np.int64).reshape(-1).tolist():
        if abs(k) > ALPHABET_BOUND:
            raise RangeCoderError(f"index {k} exceeds the alphabet bound {ALPHABET_BOUND}")
        if -core <= k <= core:
            s = k + core
            enc.encode(cum[s], cum[s + 1] - cum[s])
        else:
            enc.encode(cum[esc], cum[esc + 1] - cum[esc])
            u = abs(k) - core - 1 + 1          # exp-golomb of |k| - core - 1
            nb = u.bit_length()
            _encode_direct(enc, 0, nb - 1)
            _encode_direct(enc, u, nb)
            enc.encode_bit(1 if k < 0 else 0)
    return enc.finish()


def tsg_decode(data: bytes, count: int, model: TsgModel) -> np.ndarray:
    dec = RangeDecoder(data)
    cum = model.cum
    core = model.core
    esc = model.escape
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        v = dec.decode_freq()
        s = bisect.bisect_right(cum, v) - 1
        dec.consume(cum[s], cum[s + 1] - cum[s])
        if s != esc:
            out[i] = s - core
            continue
        zeros = 0
        while dec.decode_bit() == 0:
            zeros += 1
            if zeros > 16:
                raise RangeCoderError("escape code too long")
        u = (1 << zeros) | _decode_direct(dec, zeros)
        mag = u - 1 + core + 1
        if mag > ALPHABET_BOUND:
            raise RangeCoderError("escaped index exceeds the alphabet bound")
        out[i] = -mag if dec.decode_bit() else mag
    # reads past the end see the zeros the encoder stripped; callers that
    # need integrity re-encode and compare (see latent_decode_quantized)
    return out
