"""Reverse-channel coding with the Poisson functional representation.

The encoder walks a Poisson process of arrivals t_1 < t_2 < ... attached to
candidates z_n ~ p (both drawn from shared counter streams) and keeps the
candidate minimising t_n * p(z_n)/q(z_n).  Only the winning index is sent;
the decoder regenerates z_n from p alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .bitstream import (BitReader, BitWriter, CodecError, read_truncated_binary, read_unary,
                        write_truncated_binary, write_unary)
from .gaussian import (LN2, DiagonalGaussian, _as_key, arrival_stream, derive_stream, kl_bits,
                       kl_elementwise_bits, simulate)

# |ndtri(u)| for the most extreme uniform the sampler can emit (u = 2^-54);
# every candidate lies inside mean +/- Z_MAX * std.
Z_MAX = -float(_kernels.ndtri(2.0 ** -54)) + 1e-9

DEFAULT_MARGIN_BITS = 2.0   # truncating rule: w_min = 2^-(kl + margin)
EXACT_BUDGET_BITS = 12.0    # use the exact bound while 1/w_min <= 2^(kl + this)
CAP_EXTRA_BITS = 16.0
HARD_CAP = 1 << 27

STREAM_PURPOSE_RCC = 1


class PfrCapExceeded(CodecError):
    """The candidate budget ran out before the stopping rule fired."""

    def __init__(self, kl: float, cap: int):
        self.kl = kl
        self.cap = cap
        super().__init__(f"PFR gave up after {cap} candidates (chunk KL {kl:.2f} bits); re-chunk finer")


@dataclass(frozen=True)
class PfrResult:
    index: int
    candidates_examined: int
    score: float            # final s*
    sample: np.ndarray      # the selected candidate, identical to pfr_decode(index, ...)
    log_w_min: float
    exact: bool             # w_min was a true lower bound on p/q over the candidate support

    def __post_init__(self):
        assert 1 <= self.index <= self.candidates_examined


def exact_log_w_min(q: DiagonalGaussian, p: DiagonalGaussian) -> float:
    """ln of the infimum of p(z)/q(z) over the box holding every candidate."""
    lo = p.mean - Z_MAX * p.std
    hi = p.mean + Z_MAX * p.std
    a = 0.5 / q.variance - 0.5 / p.variance

    def lr(z):
        # ln p - ln q
        return (0.5 * np.log(q.variance / p.variance) - (z - p.mean) ** 2 / (2 * p.variance)
                + (z - q.mean) ** 2 / (2 * q.variance))

    best = np.minimum(lr(lo), lr(hi))
    # interior stationary point when the quadratic opens upward
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = (q.mean / q.variance - p.mean / p.variance) / (1 / q.variance - 1 / p.variance)
    inside = (a > 0) & (zs > lo) & (zs < hi)
    if np.any(inside):
        best = np.where(inside, np.minimum(best, lr(np.where(inside, zs, lo))), best)
    return float(min(np.sum(best), 0.0))


def default_log_w_min(q: DiagonalGaussian, p: DiagonalGaussian, kl: float | None = None) -> tuple[float, bool]:
    """(ln w_min, exact) under the default termination policy."""
    if kl is None:
        kl = kl_bits(q, p)
    lw = exact_log_w_min(q, p)
    if -lw / LN2 <= kl + EXACT_BUDGET_BITS:
        return lw, True
    return -(kl + DEFAULT_MARGIN_BITS) * LN2, False


def default_cap(kl: float) -> int:
    return int(min(2.0 ** min(kl + CAP_EXTRA_BITS, 62.0), HARD_CAP))


def pfr_encode(q: DiagonalGaussian, p: DiagonalGaussian, w_min: float | None, sampler_key,
               stream_id: int, max_candidates: int | None = None) -> PfrResult:
    """Select a candidate index whose decoded sample follows q.

    w_min=None applies the default policy: the exact bound when the search it
    implies is affordable, otherwise 2^-(KL + DEFAULT_MARGIN_BITS).
    """
    if q.dim != p.dim:
        raise ValueError(f"dimension mismatch: {q.dim} vs {p.dim}")
    kl = kl_bits(q, p)
    if w_min is None:
        log_w, exact = default_log_w_min(q, p, kl)
    else:
        if not (0.0 < w_min <= 1.0) or math.isnan(w_min):
            raise ValueError("w_min must lie in (0, 1]")
        log_w = math.log(w_min)
        exact = log_w <= exact_log_w_min(q, p) + 1e-12
    cap = default_cap(kl) if max_candidates is None else int(max_candidates)
    key = _as_key(sampler_key)
    best = np.empty(q.dim)
    n_star, examined, log_s, finished = _kernels.pfr_search(
        q.mean, q.variance, p.mean, p.variance, log_w, key, np.uint64(stream_id),
        np.uint64(arrival_stream(stream_id)), cap, best)
    if not finished:
        raise PfrCapExceeded(kl, cap)
    return PfrResult(int(n_star), int(examined), math.exp(log_s), best, log_w, exact)


def pfr_decode(index: int, p: DiagonalGaussian, sampler_key, stream_id: int) -> np.ndarray:
    if index < 1:
        raise ValueError("PFR index must be >= 1")
    return simulate(index, p, sampler_key, stream_id)


# ---------------------------------------------------------------------------
# chunking


@dataclass(frozen=True)
class RccChunk:
    dim_range: tuple[int, int]
    q: DiagonalGaussian
    p: DiagonalGaussian
    kl_bits: float
    stream_id: int
    over_budget: bool = False

    @property
    def size(self) -> int:
        return self.dim_range[1] - self.dim_range[0]


def chunk_stream_id(seed: int, step: int, ordinal: int, tile: int = 0) -> int:
    return derive_stream(seed, STREAM_PURPOSE_RCC, step, tile, ordinal)


def _make_chunks(q, p, bounds, per_dim, target, seed, step, tile):
    out = []
    for i, (a, b) in enumerate(bounds):
        sl = slice(a, b)
        kl = float(np.sum(per_dim[sl]))
        out.append(RccChunk((a, b), q.restrict(sl), p.restrict(sl), kl,
                            chunk_stream_id(seed, step, i, tile), over_budget=kl > target))
    return out


def chunk(q: DiagonalGaussian, p: DiagonalGaussian, kl_target_bits: float = 12.0,
          seed: int = 0, step: int = 0, tile: int = 0) -> list[RccChunk]:
    """Greedy left-to-right grouping with per-chunk KL <= kl_target_bits.

    A dimension that alone exceeds the target becomes its own chunk with
    over_budget set.
    """
    if not kl_target_bits > 0:
        raise ValueError("kl_target_bits must be positive")
    per = kl_elementwise_bits(q, p)
    bounds = []
    start, acc = 0, 0.0
    for d, k in enumerate(per):
        if d > start and acc + k > kl_target_bits + 1e-12:
            bounds.append((start, d))
            start, acc = d, 0.0
        acc += k
    bounds.append((start, q.dim))
    return _make_chunks(q, p, bounds, per, kl_target_bits, seed, step, tile)


def even_bounds(dim: int, m: int) -> list[tuple[int, int]]:
    """Split range(dim) into m contiguous parts, sizes differing by at most one."""
    base, extra = divmod(dim, m)
    out, a = [], 0
    for i in range(m):
        b = a + base + (1 if i < extra else 0)
        out.append((a, b))
        a = b
    return out


def even_chunk_count(per_dim_kl: np.ndarray, kl_target_bits: float) -> int:
    """Smallest m whose equal-width split keeps every chunk under the target."""
    dim = len(per_dim_kl)
    csum = np.concatenate([[0.0], np.cumsum(per_dim_kl)])
    m = max(1, min(dim, math.ceil(csum[-1] / kl_target_bits - 1e-9)))
    while m < dim:
        edges = np.array([b for _, b in even_bounds(dim, m)])
        starts = np.concatenate([[0], edges[:-1]])
        if np.all(csum[edges] - csum[starts] <= kl_target_bits + 1e-12):
            break
        m += 1
    return m


def chunk_even(q: DiagonalGaussian, p: DiagonalGaussian, kl_target_bits: float = 12.0,
               seed: int = 0, step: int = 0, tile: int = 0, m: int | None = None) -> list[RccChunk]:
    """Equal-width chunking; the layout is a single integer m the decoder can read."""
    per = kl_elementwise_bits(q, p)
    if m is None:
        m = even_chunk_count(per, kl_target_bits)
    return _make_chunks(q, p, even_bounds(q.dim, m), per, kl_target_bits, seed, step, tile)


def check_partition(chunks: list[RccChunk], dim: int):
    pos = 0
    for c in chunks:
        if c.dim_range[0] != pos or c.dim_range[1] <= pos:
            raise AssertionError(f"chunk {c.dim_range} breaks the partition at {pos}")
        pos = c.dim_range[1]
    if pos != dim:
        raise AssertionError(f"chunks cover {pos} of {dim} dimensions")


# ---------------------------------------------------------------------------
# index code
#
# n is split into its octave v = floor(log2 n) and v mantissa bits.  The
# octave is Golomb coded with a modulus tied to the KL hint, since PFR
# indices concentrate around log2 n ~ KL.

GOLOMB_SLOPE = 0.69


def index_modulus(kl_bits_hint: float) -> int:
    h = max(float(kl_bits_hint), 0.0)
    return max(1, int(round(GOLOMB_SLOPE * (h + 1.0))))


def encode_index(n: int, kl_bits_hint: float, writer: BitWriter) -> int:
    n = int(n)
    if n < 1:
        raise ValueError("index must be >= 1")
    start = writer.bit_length
    v = n.bit_length() - 1
    m = index_modulus(kl_bits_hint)
    write_unary(writer, v // m)
    write_truncated_binary(writer, v % m, m)
    writer.write(n - (1 << v), v)
    return writer.bit_length - start


def decode_index(reader: BitReader, kl_bits_hint: float) -> int:
    m = index_modulus(kl_bits_hint)
    v = m * read_unary(reader, limit=64) + read_truncated_binary(reader, m)
    if v > 63:
        raise CodecError(f"PFR index octave {v} out of range")
    return (1 << v) | reader.read(v)


def index_code_length(n: int, kl_bits_hint: float) -> int:
    v = int(n).bit_length() - 1
    m = index_modulus(kl_bits_hint)
    k = m.bit_length() - 1
    r = v % m
    tb = 0 if m == 1 else (k if r < (1 << (k + 1)) - m else k + 1)
    return v // m + 1 + tb + v
