"""Synthetic models and data for tests and benches.

Latents come from a Gaussian mixture on a small grid; pixels are a linear
decoding of the latent plus white noise.  Tag i (i < K) names component i;
the remaining vocabulary entries are inert.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import Condition, MixtureModel
from .explicit import TagVocabulary
from .model import CodecModel
from .tradeoff import LinearAutoencoder


@dataclass(frozen=True)
class ToySpec:
    latent_shape: tuple[int, int] = (4, 4)
    pixels: int = 64
    components: int = 4
    mean_scale: float = 1.0
    component_variance: float = 0.25
    coherence: float = 0.35     # non-orthogonality of decoder columns
    pixel_noise: float = 0.05
    vocab_size: int = 100
    seed: int = 0


def make_decoder(pixels: int, latent: int, coherence: float, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal columns mixed with a smooth shared component, then
    unevenly scaled; the column-normalised adjoint is then a biased encoder."""
    Q, _ = np.linalg.qr(rng.standard_normal((pixels, latent)))
    mix = np.eye(latent) + coherence * rng.standard_normal((latent, latent)) / np.sqrt(latent)
    scales = np.exp(0.3 * rng.standard_normal(latent))
    return np.sqrt(pixels / latent) * (Q @ mix) * scales


def make_toy_model(spec: ToySpec = ToySpec()) -> CodecModel:
    rng = np.random.default_rng(spec.seed)
    H, W = spec.latent_shape
    L = H * W
    means = spec.mean_scale * rng.standard_normal((spec.components, L))
    weights = np.full(spec.components, 1.0 / spec.components)
    weights[-1] = 1.0 - weights[:-1].sum()
    mix = MixtureModel(means, weights, spec.component_variance, (H, W),
                       tuple((k,) for k in range(spec.components)))
    ae = LinearAutoencoder.from_decoder(make_decoder(spec.pixels, L, spec.coherence, rng))
    return CodecModel(ae, mix, TagVocabulary.synthetic(max(spec.vocab_size, spec.components, 2)))


@dataclass
class ToyBatch:
    x: np.ndarray            # (n, pixels)
    z: np.ndarray            # (n, latent) true latents
    components: np.ndarray   # (n,)

    def __len__(self):
        return self.x.shape[0]

    def conditions(self, informative: bool = True) -> list[Condition]:
        if informative:
            return [Condition(tags=(int(k),)) for k in self.components]
        return [Condition() for _ in self.components]


def sample_batch(model: CodecModel, n: int, seed: int = 0, pixel_noise: float = 0.05) -> ToyBatch:
    rng = np.random.default_rng(seed)
    z, k = model.mixture.sample(rng, n)
    x = z @ model.autoencoder.decoder.T + pixel_noise * rng.standard_normal((n, model.autoencoder.pixels))
    return ToyBatch(x, z, k)
