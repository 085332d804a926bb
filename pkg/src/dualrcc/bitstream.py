"""Bit-exact container: bit reader/writer, universal integer codes, section
framing and the fixed stream header.

Layout of a stream::

    header            raw bytes, fixed length for a given T (see StreamHeader)
    section*          u8 tag | u32 LE payload bit count | payload | zero pad

Section order is fixed: tags, [tagmap], latent, [rcc], [terminal], [debug trailer].
Bits are packed MSB-first within bytes; multi-byte header fields are
little-endian.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

MAGIC = b"DRC1"
VERSION = 1

SEC_TAGS = 0x01
SEC_LATENT = 0x02
SEC_RCC = 0x03
SEC_TERMINAL = 0x04
SEC_TAGMAP = 0x05
SEC_DEBUG = 0x7F
SECTION_NAMES = {SEC_TAGS: "tags", SEC_TAGMAP: "tagmap", SEC_LATENT: "latent", SEC_RCC: "rcc",
                 SEC_TERMINAL: "terminal", SEC_DEBUG: "debug"}
SECTION_OVERHEAD_BITS = 40

FLAG_DEBUG_TRAILER = 0x01
FLAG_TAGMAP = 0x02
FLAG_UNTILED = 0x04
FLAG_MATCHED_VARIANCE = 0x08
KNOWN_FLAGS = FLAG_DEBUG_TRAILER | FLAG_TAGMAP | FLAG_UNTILED | FLAG_MATCHED_VARIANCE


class CodecError(Exception):
    """Base class for every malformed-input or unencodable condition."""


class BitstreamError(CodecError):
    def __init__(self, msg: str, offset_bits: int | None = None):
        self.offset_bits = offset_bits
        if offset_bits is not None:
            msg = f"{msg} (at bit {offset_bits})"
        super().__init__(msg)


class TruncatedStream(BitstreamError):
    pass


class BitWriter:
    """Append-only MSB-first bit buffer."""

    def __init__(self):
        self._buf = bytearray()
        self._acc = 0
        self._nacc = 0

    def write(self, value: int, nbits: int):
        if nbits == 0:
            return
        if nbits < 0 or value < 0 or value >> nbits:
            raise ValueError(f"value {value} does not fit in {nbits} bits")
        self._acc = (self._acc << nbits) | value
        self._nacc += nbits
        if self._nacc >= 8:
            nbytes = self._nacc // 8
            rem = self._nacc - 8 * nbytes
            self._buf += (self._acc >> rem).to_bytes(nbytes, "big")
            self._acc &= (1 << rem) - 1
            self._nacc = rem

    def write_bit(self, bit: int):
        self.write(bit & 1, 1)

    def write_bytes(self, data: bytes):
        if self._nacc == 0:
            self._buf += data
        else:
            for b in data:
                self.write(b, 8)

    def write_bits_from(self, other: "BitWriter"):
        data, nbits = other.getvalue()
        full = nbits // 8
        self.write_bytes(data[:full])
        rem = nbits - 8 * full
        if rem:
            self.write(data[full] >> (8 - rem), rem)

    def align(self):
        if self._nacc:
            self.write(0, 8 - self._nacc)

    @property
    def bit_length(self) -> int:
        return 8 * len(self._buf) + self._nacc

    def getvalue(self) -> tuple[bytes, int]:
        """(bytes zero-padded to a byte boundary, exact bit count)."""
        out = bytes(self._buf)
        if self._nacc:
            out += bytes([(self._acc << (8 - self._nacc)) & 0xFF])
        return out, self.bit_length

    def tobytes(self) -> bytes:
        return self.getvalue()[0]


class BitReader:
    """MSB-first reader over `data`, limited to `nbits` (default: all)."""

    def __init__(self, data: bytes, nbits: int | None = None, start: int = 0, origin: int = 0):
        self.data = bytes(data)
        self.pos = start
        self.end = 8 * len(self.data) if nbits is None else start + nbits
        if self.end > 8 * len(self.data):
            raise TruncatedStream("declared length exceeds available data", origin + 8 * len(self.data))
        self.origin = origin  # absolute bit offset of data[0], for diagnostics

    @property
    def remaining(self) -> int:
        return self.end - self.pos

    @property
    def offset(self) -> int:
        return self.origin + self.pos

    def read(self, nbits: int) -> int:
        if nbits == 0:
            return 0
        if nbits > self.remaining:
            raise TruncatedStream(f"need {nbits} bits, {self.remaining} left", self.offset)
        first = self.pos >> 3
        last = (self.pos + nbits - 1) >> 3
        chunk = int.from_bytes(self.data[first:last + 1], "big")
        shift = 8 * (last + 1) - (self.pos + nbits)
        self.pos += nbits
        return (chunk >> shift) & ((1 << nbits) - 1)

    def read_bit(self) -> int:
        return self.read(1)

    def read_bytes(self, n: int) -> bytes:
        if self.pos & 7 == 0 and 8 * n <= self.remaining:
            out = self.data[self.pos >> 3:(self.pos >> 3) + n]
            self.pos += 8 * n
            return out
        return bytes(self.read(8) for _ in range(n))

    def align(self, strict: bool = True):
        pad = (-self.pos) & 7
        if pad:
            at = self.offset
            if self.read(pad) and strict:
                raise BitstreamError("non-zero padding bits", at)

    def expect_end(self):
        if self.remaining:
            raise BitstreamError(f"{self.remaining} unconsumed bits", self.offset)


# ---------------------------------------------------------------------------
# universal integer codes


def write_unary(w: BitWriter, q: int):
    """q ones then a zero."""
    while q >= 32:
        w.write(0xFFFFFFFF, 32)
        q -= 32
    w.write(((1 << q) - 1) << 1, q + 1)


def read_unary(r: BitReader, limit: int = 1 << 16) -> int:
    q = 0
    while r.read(1):
        q += 1
        if q > limit:
            raise BitstreamError("unary run too long", r.offset)
    return q


def write_truncated_binary(w: BitWriter, v: int, m: int):
    """Value in [0, m) with floor/ceil(log2 m) bits."""
    if m <= 1:
        return
    k = m.bit_length() - 1
    u = (1 << (k + 1)) - m
    if v < u:
        w.write(v, k)
    else:
        w.write(v + u, k + 1)


def read_truncated_binary(r: BitReader, m: int) -> int:
    if m <= 1:
        return 0
    k = m.bit_length() - 1
    u = (1 << (k + 1)) - m
    v = r.read(k)
    if v < u:
        return v
    return ((v << 1) | r.read(1)) - u


def write_exp_golomb(w: BitWriter, v: int, k: int = 0):
    """Order-k Exp-Golomb code of v >= 0."""
    if v < 0:
        raise ValueError("exp-golomb needs v >= 0")
    v += 1 << k
    nb = v.bit_length()
    w.write(0, nb - 1 - k)
    w.write(v, nb)


def read_exp_golomb(r: BitReader, k: int = 0, max_bits: int = 96) -> int:
    zeros = 0
    while r.read(1) == 0:
        zeros += 1
        if zeros > max_bits:
            raise BitstreamError("exp-golomb prefix too long", r.offset)
    nb = zeros + k
    v = (1 << nb) | r.read(nb)
    return v - (1 << k)


def zigzag(v: int) -> int:
    return 2 * v if v >= 0 else -2 * v - 1


def unzigzag(u: int) -> int:
    return u >> 1 if u & 1 == 0 else -((u + 1) >> 1)


# ---------------------------------------------------------------------------
# sections


def write_section(tag: int, payload: BitWriter | tuple[bytes, int], writer: BitWriter) -> int:
    """Frame `payload` as a section; returns the total bits appended."""
    if not 0 <= tag <= 0xFF:
        raise ValueError("section tag is one byte")
    if isinstance(payload, BitWriter):
        data, nbits = payload.getvalue()
    else:
        data, nbits = payload
    if nbits >= 1 << 32:
        raise ValueError("section payload too long")
    if writer.bit_length % 8:
        raise ValueError("sections start on a byte boundary")
    start = writer.bit_length
    writer.write_bytes(struct.pack("<BI", tag, nbits))
    full = nbits // 8
    writer.write_bytes(data[:full])
    rem = nbits - 8 * full
    if rem:
        writer.write(data[full] >> (8 - rem), rem)
    writer.align()
    return writer.bit_length - start


@dataclass
class Section:
    tag: int
    nbits: int
    offset_bits: int  # absolute offset of the section's tag byte
    reader: BitReader

    @property
    def framed_bits(self) -> int:
        return SECTION_OVERHEAD_BITS + 8 * ((self.nbits + 7) // 8)

    @property
    def name(self) -> str:
        return SECTION_NAMES.get(self.tag, f"0x{self.tag:02x}")


def read_section(reader: BitReader) -> Section:
    """Parse one framed section starting at a byte boundary."""
    if reader.pos % 8:
        raise BitstreamError("section not byte aligned", reader.offset)
    at = reader.offset
    if reader.remaining < SECTION_OVERHEAD_BITS:
        raise TruncatedStream("truncated section frame", at)
    tag, nbits = struct.unpack("<BI", reader.read_bytes(5))
    if tag not in SECTION_NAMES:
        raise BitstreamError(f"unknown section tag 0x{tag:02x}", at)
    nbytes = (nbits + 7) // 8
    if 8 * nbytes > reader.remaining:
        raise TruncatedStream(f"section {SECTION_NAMES[tag]} declares {nbits} bits", at)
    start = reader.pos
    body = reader.data[start >> 3:(start >> 3) + nbytes]
    reader.pos += 8 * nbytes
    pad = 8 * nbytes - nbits
    if pad and body[-1] & ((1 << pad) - 1):
        raise BitstreamError("non-zero section padding", reader.origin + start + nbits)
    return Section(tag, nbits, at, BitReader(body, nbits, origin=reader.origin + start))


def read_sections(data: bytes, start_bits: int) -> list[Section]:
    r = BitReader(data, start=start_bits)
    out = []
    while r.remaining:
        out.append(read_section(r))
    return out


# ---------------------------------------------------------------------------
# header

_HEAD = struct.Struct("<4sBHHH")            # magic, version, schedule id, T, T_E
_BODY = struct.Struct("<BQHHHHQQHHHHBB")    # tau, seed, tile, overlap, cap, sigma,
                                            # vocab hash, model hash, h, w,
                                            # kl target, skip thr, layout bits, flags
TAU_SCALE = 255
SIGMA_SCALE = 4096
KL_TARGET_SCALE = 256
SKIP_SCALE = 4096
MAX_T = 4096


def header_bytes(T: int) -> int:
    return _HEAD.size + (T + 7) // 8 + _BODY.size


@dataclass
class StreamHeader:
    """Everything the decoder needs besides the shared model and vocabulary.

    Real-valued knobs are stored in fixed point; `quantized()` snaps a
    header to exactly representable values so that encoder and decoder
    agree on them.
    """

    schedule_id: int
    T: int
    T_E: int
    skip: list[bool] = field(default_factory=list)
    tau: float = 1.0
    seed: int = 0
    tile_size: int = 16
    overlap: int = 8
    tag_cap: int = 255
    sigma_fraction: float = 0.3
    vocab_hash: int = 0
    model_hash: int = 0
    shape: tuple[int, int] = (8, 8)
    kl_target_bits: float = 12.0
    skip_threshold_bits: float = 0.05
    layout_bits: int = 0
    flags: int = 0
    version: int = VERSION

    def __post_init__(self):
        if not self.skip:
            self.skip = [False] * self.T

    def quantized(self) -> "StreamHeader":
        h = StreamHeader(**{f: getattr(self, f) for f in self.__dataclass_fields__})
        h.tau = round(self.tau * TAU_SCALE) / TAU_SCALE
        h.sigma_fraction = round(self.sigma_fraction * SIGMA_SCALE) / SIGMA_SCALE
        h.kl_target_bits = round(self.kl_target_bits * KL_TARGET_SCALE) / KL_TARGET_SCALE
        h.skip_threshold_bits = round(self.skip_threshold_bits * SKIP_SCALE) / SKIP_SCALE
        h.skip = list(self.skip)
        return h

    def pack(self) -> bytes:
        if len(self.skip) != self.T:
            raise ValueError("skip bitmap must have T entries")
        if not 0 <= self.T_E <= self.T <= MAX_T:
            raise ValueError("need 0 <= T_E <= T <= %d" % MAX_T)
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau outside [0, 1]")
        bitmap = BitWriter()
        for s in self.skip:
            bitmap.write_bit(int(bool(s)))
        bitmap.align()
        return (_HEAD.pack(MAGIC, self.version, self.schedule_id, self.T, self.T_E)
                + bitmap.tobytes()
                + _BODY.pack(round(self.tau * TAU_SCALE), self.seed, self.tile_size, self.overlap,
                             self.tag_cap, round(self.sigma_fraction * SIGMA_SCALE),
                             self.vocab_hash, self.model_hash, self.shape[0], self.shape[1],
                             round(self.kl_target_bits * KL_TARGET_SCALE),
                             round(self.skip_threshold_bits * SKIP_SCALE),
                             self.layout_bits, self.flags))

    @property
    def nbytes(self) -> int:
        return header_bytes(self.T)

    @classmethod
    def unpack(cls, data: bytes) -> "StreamHeader":
        if len(data) < _HEAD.size:
            raise TruncatedStream("stream shorter than header", 8 * len(data))
        magic, version, sched, T, T_E = _HEAD.unpack_from(data, 0)
        if magic != MAGIC:
            raise BitstreamError(f"bad magic {magic!r}", 0)
        if version != VERSION:
            raise BitstreamError(f"unsupported version {version}", 32)
        if T < 1 or T > MAX_T:
            raise BitstreamError(f"T={T} out of range", 56)
        if T_E > T:
            raise BitstreamError(f"T_E={T_E} exceeds T={T}", 72)
        nmap = (T + 7) // 8
        if len(data) < header_bytes(T):
            raise TruncatedStream("stream shorter than header", 8 * len(data))
        r = BitReader(data[_HEAD.size:_HEAD.size + nmap], origin=8 * _HEAD.size)
        skip = [bool(r.read(1)) for _ in range(T)]
        r.align()
        (tau, seed, tile, overlap, cap, sigma, vocab_hash, model_hash, h, w, klt, skt,
         layout_bits, flags) = _BODY.unpack_from(data, _HEAD.size + nmap)
        body_at = 8 * (_HEAD.size + nmap)
        if tau > TAU_SCALE:
            raise BitstreamError("tau field out of range", body_at)
        if layout_bits > 16:
            raise BitstreamError("layout field out of range", body_at)
        if flags & ~KNOWN_FLAGS:
            raise BitstreamError("unknown header flags", body_at)
        if sigma == 0 or klt == 0:
            raise BitstreamError("zero tile sigma or kl target", body_at)
        return cls(schedule_id=sched, T=T, T_E=T_E, skip=skip, tau=tau / TAU_SCALE, seed=seed,
                   tile_size=tile, overlap=overlap, tag_cap=cap, sigma_fraction=sigma / SIGMA_SCALE,
                   vocab_hash=vocab_hash, model_hash=model_hash, shape=(h, w),
                   kl_target_bits=klt / KL_TARGET_SCALE, skip_threshold_bits=skt / SKIP_SCALE,
                   layout_bits=layout_bits, flags=flags, version=version)


def ceil_log2(n: int) -> int:
    return 0 if n <= 1 else math.ceil(math.log2(n)) if n & (n - 1) else n.bit_length() - 1
