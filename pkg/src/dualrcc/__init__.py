"""Dual-branch diffusion codec: explicit tags and latent hint plus
reverse-channel-coded diffusion states."""

from .bitstream import BitReader, BitstreamError, BitWriter, CodecError, StreamHeader
from .diffusion import Condition, MixtureDenoiser, MixtureModel, NoiseSchedule, make_schedule
from .explicit import TagPrompt, TagVocabulary, tag_decode, tag_encode
from .gaussian import DiagonalGaussian, kl_bits
from .model import CodecModel
from .pipeline import (ChainMismatch, DecodeReport, EncodeReport, PipelineConfig, UnencodableError, decode,
                       encode, rate_sweep)
from .rcc import PfrCapExceeded, PfrResult, chunk, pfr_decode, pfr_encode
from .toy import ToySpec, make_toy_model, sample_batch
from .tradeoff import LinearAutoencoder, blend, distortion_curve

__version__ = "0.1.0"
