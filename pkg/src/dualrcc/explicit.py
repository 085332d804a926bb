"""Explicit semantics: fixed-length tag codes and the quantized latent hint."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bitstream import BitReader, BitstreamError, BitWriter, ceil_log2
from .rangecoder import RangeCoderError, TsgModel, estimate_theta, quantize_theta, tsg_decode, tsg_encode

K_MAX = 255


@dataclass(frozen=True)
class TagVocabulary:
    entries: tuple[str, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        if len(entries) < 2:
            raise ValueError("a vocabulary needs at least two entries")
        if len(set(entries)) != len(entries):
            raise ValueError("vocabulary entries must be unique")
        if any("\n" in e or not e for e in entries):
            raise ValueError("entries must be non-empty single lines")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "_index", {e: i for i, e in enumerate(entries)})

    @property
    def N(self) -> int:
        return len(self.entries)

    @property
    def code_bits(self) -> int:
        return ceil_log2(self.N)

    @property
    def id(self) -> int:
        h = hashlib.blake2b("\n".join(self.entries).encode(), digest_size=8, person=b"dualrcc-vocab")
        return int.from_bytes(h.digest(), "little")

    def index(self, entry: str) -> int:
        try:
            return self._index[entry]
        except KeyError:
            raise ValueError(f"tag {entry!r} not in vocabulary") from None

    @classmethod
    def load(cls, path) -> "TagVocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line.strip() for line in lines if line.strip()))

    def save(self, path):
        Path(path).write_text("\n".join(self.entries) + "\n", encoding="utf-8")

    @classmethod
    def synthetic(cls, n: int, prefix: str = "tag") -> "TagVocabulary":
        return cls(tuple(f"{prefix}{i:05d}" for i in range(n)))


@dataclass(frozen=True)
class TagPrompt:
    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    @property
    def K(self) -> int:
        return len(self.indices)

    @property
    def has_duplicates(self) -> bool:
        return len(set(self.indices)) != len(self.indices)


def tag_bits(K: int, N: int) -> int:
    return 8 + K * ceil_log2(N)


def tag_encode(prompt: TagPrompt, vocab: TagVocabulary, writer: BitWriter) -> int:
    """8-bit count then one ceil(log2 N)-bit code per tag."""
    if prompt.K > K_MAX:
        raise ValueError(f"{prompt.K} tags exceed the {K_MAX}-tag limit")
    nb = vocab.code_bits
    start = writer.bit_length
    writer.write(prompt.K, 8)
    for i in prompt.indices:
        if not 0 <= i < vocab.N:
            raise ValueError(f"tag index {i} outside [0, {vocab.N})")
        writer.write(i, nb)
    return writer.bit_length - start


def tag_decode(reader: BitReader, vocab: TagVocabulary) -> TagPrompt:
    K = reader.read(8)
    nb = vocab.code_bits
    out = []
    for _ in range(K):
        at = reader.offset
        i = reader.read(nb)
        if i >= vocab.N:
            raise BitstreamError(f"tag index {i} >= vocabulary size {vocab.N}", at)
        out.append(i)
    return TagPrompt(tuple(out))


# per-tag tile membership, sent only when some tag carries a region


def tagmap_encode(membership: list[list[bool]], writer: BitWriter) -> int:
    start = writer.bit_length
    for row in membership:
        for b in row:
            writer.write_bit(int(b))
    return writer.bit_length - start


def tagmap_decode(reader: BitReader, K: int, n_tiles: int) -> list[list[bool]]:
    return [[bool(reader.read(1)) for _ in range(n_tiles)] for _ in range(K)]


# ---------------------------------------------------------------------------
# quantized latent


@dataclass(frozen=True)
class QuantizedLatent:
    values: np.ndarray   # int64 grid
    step: float

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def dequantize(self) -> np.ndarray:
        return self.values.astype(np.float64) * self.step


LATENT_FIELDS = struct.Struct("<HHfH")


def quantize(y, step: float) -> QuantizedLatent:
    if not step > 0:
        raise ValueError("quantization step must be positive")
    step = float(np.float32(step))
    y = np.asarray(y, dtype=np.float64)
    return QuantizedLatent(np.rint(y / step).astype(np.int64), step)


def latent_encode(y, step: float, writer: BitWriter) -> tuple[QuantizedLatent, int]:
    """Round y/step to nearest (ties to even) and range-code the indices.

    Section layout: rows u16, cols u16, step float32, theta u16 (16-bit
    fixed point), then range-coder bytes.
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.ndim != 2 or max(y.shape) > 0xFFFF:
        raise ValueError("latent must be a 2-D grid of at most 65535 per side")
    ql = quantize(y, step)
    if np.any(np.abs(ql.values) > 1 << 15):
        raise RangeCoderError("latent index exceeds the alphabet bound 2^15")
    theta_q = quantize_theta(estimate_theta(ql.values))
    payload = tsg_encode(ql.values, TsgModel.from_quantized(theta_q))
    start = writer.bit_length
    writer.write_bytes(LATENT_FIELDS.pack(y.shape[0], y.shape[1], ql.step, theta_q))
    writer.write_bytes(payload)
    return ql, writer.bit_length - start


def write_absent_latent(writer: BitWriter) -> int:
    start = writer.bit_length
    writer.write_bytes(LATENT_FIELDS.pack(0, 0, 0.0, 0))
    return writer.bit_length - start


def latent_decode_quantized(reader: BitReader) -> QuantizedLatent | None:
    """Inverse of latent_encode; None for an absent hint."""
    at = reader.offset
    if reader.remaining < 8 * LATENT_FIELDS.size or reader.pos % 8:
        raise BitstreamError("truncated latent section", at)
    h, w, step, theta_q = LATENT_FIELDS.unpack(reader.read_bytes(LATENT_FIELDS.size))
    rest = reader.read_bytes(reader.remaining // 8)
    reader.expect_end()
    if h == 0 and w == 0:
        if step != 0.0 or theta_q or rest:
            raise BitstreamError("absent latent carries data", at)
        return None
    if h == 0 or w == 0 or not (step > 0 and np.isfinite(step)):
        raise BitstreamError("malformed latent fields", at)
    model = TsgModel.from_quantized(theta_q)
    values = tsg_decode(rest, h * w, model)
    if tsg_encode(values, model) != rest:
        raise BitstreamError("latent payload is not canonical", at)
    return QuantizedLatent(values.reshape(h, w), float(step))


def latent_decode(reader: BitReader) -> np.ndarray | None:
    ql = latent_decode_quantized(reader)
    return None if ql is None else ql.dequantize()


def block_average(z: np.ndarray, block: int) -> np.ndarray:
    """Mean over block x block cells; edge blocks average what they hold."""
    z = np.asarray(z, dtype=np.float64)
    H, W = z.shape
    hb, wb = -(-H // block), -(-W // block)
    out = np.zeros((hb, wb))
    for i in range(hb):
        for j in range(wb):
            out[i, j] = z[i * block:(i + 1) * block, j * block:(j + 1) * block].mean()
    return out
