"""The shared model: everything encoder and decoder must agree on besides
the stream itself (autoencoder, prior, vocabulary)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .diffusion import MixtureDenoiser, MixtureModel
from .explicit import TagVocabulary
from .tradeoff import LinearAutoencoder


@dataclass(frozen=True)
class CodecModel:
    autoencoder: LinearAutoencoder
    mixture: MixtureModel
    vocab: TagVocabulary
    denoiser: MixtureDenoiser = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.autoencoder.latent_dim != self.mixture.dim:
            raise ValueError("autoencoder latent size differs from the prior's")
        object.__setattr__(self, "denoiser", MixtureDenoiser(self.mixture))

    @property
    def latent_shape(self) -> tuple[int, int]:
        return self.mixture.shape

    @property
    def cells(self) -> int:
        return self.mixture.dim

    def content_hash(self) -> int:
        """64-bit id over decoder, prior and vocabulary (not the encoders,
        which the decoder never uses)."""
        h = hashlib.blake2b(digest_size=8, person=b"dualrcc-model")
        h.update(np.ascontiguousarray(self.autoencoder.decoder).tobytes())
        h.update(np.array(self.autoencoder.decoder.shape, dtype="<i8").tobytes())
        h.update(self.mixture.content_hash().to_bytes(8, "little"))
        h.update(self.vocab.id.to_bytes(8, "little"))
        return int.from_bytes(h.digest(), "little")
