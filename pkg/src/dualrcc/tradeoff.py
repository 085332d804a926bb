"""Distortion-perception knob: fixed linear decoder, a perceptual stand-in
encoder, the MSE-optimal plug-in encoder and the tau blend."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAX_CONDITION = 1e10


def fit_mse_encoder(D) -> np.ndarray:
    """Least-squares encoder argmin_E ||x - D E x||^2, i.e. (D^T D)^-1 D^T.

    Solved through the SVD so that conditioning up to ~1e8 stays accurate.
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] < D.shape[1]:
        raise ValueError("decoder must be a tall (pixels x latent) matrix")
    U, s, Vt = np.linalg.svd(D, full_matrices=False)
    if s[-1] <= 0 or s[0] / s[-1] > MAX_CONDITION:
        raise ValueError(f"decoder is rank deficient (condition number {s[0] / max(s[-1], 1e-300):.3g})")
    return (Vt.T / s) @ U.T


def perceptual_encoder(D, scale: float = 1.0) -> np.ndarray:
    """diag(w) D^T with w_j = scale / ||d_j||^2: a column-normalised adjoint.

    Equals the pseudo-inverse only when the columns of D are orthogonal.
    """
    D = np.asarray(D, dtype=np.float64)
    w = scale / np.sum(D * D, axis=0)
    return w[:, None] * D.T


@dataclass(frozen=True)
class LinearAutoencoder:
    decoder: np.ndarray
    encoder_perceptual: np.ndarray
    encoder_mse: np.ndarray

    def __post_init__(self):
        P, L = self.decoder.shape
        if self.encoder_perceptual.shape != (L, P) or self.encoder_mse.shape != (L, P):
            raise ValueError("encoder shapes must be (latent x pixels)")
        for a in (self.decoder, self.encoder_perceptual, self.encoder_mse):
            a.setflags(write=False)

    @classmethod
    def from_decoder(cls, D, perceptual_scale: float = 1.0) -> "LinearAutoencoder":
        D = np.array(D, dtype=np.float64)
        return cls(D, perceptual_encoder(D, perceptual_scale), fit_mse_encoder(D))

    @property
    def pixels(self) -> int:
        return self.decoder.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.decoder.shape[1]

    def encode(self, x) -> np.ndarray:
        return self.encoder_perceptual @ np.asarray(x, dtype=np.float64).reshape(-1)

    def encode_mse(self, x) -> np.ndarray:
        return self.encoder_mse @ np.asarray(x, dtype=np.float64).reshape(-1)

    def decode(self, z) -> np.ndarray:
        return self.decoder @ np.asarray(z, dtype=np.float64).reshape(-1)

    def pinv_residual(self) -> float:
        D = self.decoder
        return float(np.linalg.norm(D @ self.encoder_mse @ D - D) / np.linalg.norm(D))


def blend(z, z_tilde, tau: float) -> np.ndarray:
    """tau * z + (1 - tau) * z_tilde, exact at both endpoints."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    z = np.asarray(z, dtype=np.float64)
    z_tilde = np.asarray(z_tilde, dtype=np.float64)
    if z.shape != z_tilde.shape:
        raise ValueError("latent shapes differ")
    if tau == 1.0:
        return z.copy()
    if tau == 0.0:
        return z_tilde.copy()
    return tau * z + (1.0 - tau) * z_tilde


def mse(a, b) -> float:
    d = np.asarray(a, dtype=np.float64).reshape(-1) - np.asarray(b, dtype=np.float64).reshape(-1)
    return float(np.mean(d * d))


def distortion_curve(x_batch, taus, cfg, model, conds=None) -> list[tuple[float, float, float]]:
    """(tau, mean MSE of D(z_hat) vs x, mean rate bits) per tau at fixed seeds."""
    from .pipeline import decode, encode
    from dataclasses import replace

    if any(not 0.0 <= t <= 1.0 for t in taus):
        raise ValueError("tau values must lie in [0, 1]")
    rows = []
    for tau in taus:
        errs, bits = [], []
        for i, x in enumerate(x_batch):
            c = None if conds is None else conds[i]
            run = replace(cfg, tau=float(tau), seed=(cfg.seed + i) & ((1 << 64) - 1))
            bs, rep = encode(x, c, run, model)
            xr, _ = decode(bs, model)
            errs.append(mse(x, xr))
            bits.append(rep.rate_bits)
        rows.append((float(tau), float(np.mean(errs)), float(np.mean(bits))))
    return rows


# decoder matrix file: u64 rows, u64 cols (little endian), then row-major float64

_DIMS = struct.Struct("<QQ")


def save_decoder_matrix(path, D):
    D = np.ascontiguousarray(D, dtype="<f8")
    Path(path).write_bytes(_DIMS.pack(*D.shape) + D.tobytes())


def load_decoder_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _DIMS.size:
        raise ValueError(f"{path}: shorter than the 16-byte header")
    rows, cols = _DIMS.unpack_from(data)
    if rows * cols * 8 + _DIMS.size != len(data) or rows == 0 or cols == 0:
        raise ValueError(f"{path}: header says {rows}x{cols} but file holds {len(data) - 16} payload bytes")
    return np.frombuffer(data, dtype="<f8", offset=_DIMS.size).reshape(rows, cols).astype(np.float64)
