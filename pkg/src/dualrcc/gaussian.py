"""Diagonal Gaussian algebra and the shared-randomness sampler.

KL divergences are reported in bits everywhere; densities are handled in
log space.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels

LN2 = math.log(2.0)
MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class DiagonalGaussian:
    """N(mean, diag(variance)) over flat real vectors."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.ascontiguousarray(self.mean, dtype=np.float64).reshape(-1)
        var = np.ascontiguousarray(self.variance, dtype=np.float64).reshape(-1)
        if var.size == 1 and mean.size > 1:
            var = np.full_like(mean, var[0])
        if mean.size < 1 or mean.shape != var.shape:
            raise ValueError(f"mean/variance shape mismatch: {mean.shape} vs {var.shape}")
        if not np.all(var > 0) or not np.all(np.isfinite(var)):
            raise ValueError("variance must be finite and strictly positive")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def restrict(self, sl) -> "DiagonalGaussian":
        return DiagonalGaussian(self.mean[sl], self.variance[sl])

    def log_density(self, z) -> float:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        _check_dim(z.size, self.dim)
        r = z - self.mean
        return float(-0.5 * np.sum(np.log(2 * np.pi * self.variance) + r * r / self.variance))


def _check_dim(a: int, b: int):
    if a != b:
        raise ValueError(f"dimension mismatch: {a} vs {b}")


def kl_elementwise_nats(q: DiagonalGaussian, p: DiagonalGaussian) -> np.ndarray:
    _check_dim(q.dim, p.dim)
    d = q.mean - p.mean
    return 0.5 * (np.log(p.variance / q.variance) + (q.variance + d * d) / p.variance - 1.0)


def kl_elementwise_bits(q: DiagonalGaussian, p: DiagonalGaussian) -> np.ndarray:
    return kl_elementwise_nats(q, p) / LN2


def kl_bits(q: DiagonalGaussian, p: DiagonalGaussian) -> float:
    """D_KL(q || p) in bits."""
    kl = float(np.sum(kl_elementwise_nats(q, p))) / LN2
    # rounding can push the q == p case a hair below zero
    return max(kl, 0.0) if kl > -1e-12 else kl


def log_density_ratio(z, q: DiagonalGaussian, p: DiagonalGaussian) -> float:
    """ln q(z) - ln p(z)."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    _check_dim(z.size, q.dim)
    _check_dim(z.size, p.dim)
    a = z - p.mean
    b = z - q.mean
    terms = 0.5 * np.log(p.variance / q.variance) + a * a / (2 * p.variance) - b * b / (2 * q.variance)
    return float(np.sum(terms))


def log_ratio_std_nats(q: DiagonalGaussian, p: DiagonalGaussian) -> float:
    """Standard deviation of ln q(Z)/p(Z) for Z ~ q (closed form)."""
    _check_dim(q.dim, p.dim)
    # per dim: ln q/p = c + b*e + a*e^2 with e ~ N(0,1)
    a = 0.5 * (q.variance / p.variance - 1.0)
    b = (q.mean - p.mean) * np.sqrt(q.variance) / p.variance
    return float(np.sqrt(np.sum(2 * a * a + b * b)))


# ---------------------------------------------------------------------------
# shared randomness


def derive_key(seed: int | bytes) -> np.ndarray:
    """256-bit sampler key from an integer seed or raw bytes."""
    if isinstance(seed, int):
        seed = struct.pack("<Q", seed & MASK64)
    digest = hashlib.blake2b(seed, digest_size=32, person=b"dualrcc-key").digest()
    return np.frombuffer(digest, dtype="<u8").astype(np.uint64)


def derive_stream(seed: int, *parts: int) -> int:
    """64-bit keyed hash of integer parts; used for per-chunk stream ids."""
    key = struct.pack("<Q", seed & MASK64)
    data = b"".join(struct.pack("<Q", int(p) & MASK64) for p in parts)
    h = hashlib.blake2b(data, digest_size=8, key=key, person=b"dualrcc-strm")
    return int.from_bytes(h.digest(), "little")


ARRIVAL_SALT = 0xA5A5_5A5A_C3C3_3C3C


def arrival_stream(stream_id: int) -> int:
    """Sub-stream carrying the exponential inter-arrival times of PFR."""
    return derive_stream(ARRIVAL_SALT, stream_id)


@dataclass(frozen=True)
class DeterministicSampler:
    """Counter-based generator: (key, stream_id, counter) -> uniform in (0, 1).

    Values are a pure function of the triple; there is no hidden state, so
    any position of any stream can be read directly.
    """

    key: np.ndarray
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self):
        key = np.asarray(self.key, dtype=np.uint64).reshape(-1)
        if key.size != 4:
            raise ValueError("sampler key must be 4 x 64 bits")
        object.__setattr__(self, "key", key)
        if not (0 <= self.stream_id <= MASK64 and 0 <= self.counter <= MASK64):
            raise ValueError("stream_id and counter are unsigned 64-bit")

    @classmethod
    def from_seed(cls, seed, stream_id: int = 0) -> "DeterministicSampler":
        return cls(derive_key(seed), stream_id)

    def uniforms(self, count: int) -> np.ndarray:
        out = np.empty(count)
        _kernels.uniforms(self.key, np.uint64(self.stream_id), np.uint64(self.counter), count, out)
        return out

    def normals(self, count: int) -> np.ndarray:
        out = np.empty(count)
        _kernels.ndtri_array(self.uniforms(count), out)
        return out

    def advanced(self, count: int) -> "DeterministicSampler":
        return DeterministicSampler(self.key, self.stream_id, (self.counter + count) & MASK64)


def _as_key(sampler_key) -> np.ndarray:
    if isinstance(sampler_key, DeterministicSampler):
        return sampler_key.key
    key = np.asarray(sampler_key, dtype=np.uint64).reshape(-1)
    if key.size != 4:
        raise ValueError("sampler key must be 4 x 64 bits")
    return key


def simulate(n: int, p: DiagonalGaussian, sampler_key, stream_id: int) -> np.ndarray:
    """The n-th (1-based) pseudorandom sample of p on stream `stream_id`.

    Dimension d of candidate n reads counter (n-1)*dim + d, so every
    candidate is addressable without generating its predecessors.
    """
    n = int(n)
    if n < 1 or n > MASK64:
        raise ValueError(f"candidate index must be in [1, 2^64), got {n}")
    out = np.empty(p.dim)
    _kernels.gaussian_sample(_as_key(sampler_key), np.uint64(stream_id & MASK64), np.uint64(n),
                             p.mean, p.std, out)
    return out


def simulate_batch(n_first: int, count: int, p: DiagonalGaussian, sampler_key, stream_id: int) -> np.ndarray:
    """Rows are simulate(n_first + i, p, ...) for i in range(count)."""
    if n_first < 1:
        raise ValueError("candidate index must be >= 1")
    out = np.empty((count, p.dim))
    _kernels.gaussian_batch(_as_key(sampler_key), np.uint64(stream_id & MASK64), np.uint64(n_first),
                            count, p.mean, p.std, out)
    return out


def sample(p: DiagonalGaussian, sampler_key, stream_id: int) -> np.ndarray:
    """A single draw from p; shorthand for simulate(1, ...)."""
    return simulate(1, p, sampler_key, stream_id)
