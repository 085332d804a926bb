"""Run configuration and file formats.

Config grammar (one entry per line)::

    # comment
    key = value

Keys are PipelineConfig field names (``T_E``, ``tau``, ``schedule`` ...),
``model.<ToySpec field>`` for the synthetic model, and the paths ``vocab``,
``tags`` and ``decoder_matrix``.  Values are parsed as int, then float,
then ``true``/``false``, else kept as strings.  Tuples use commas
(``model.latent_shape = 8,8``).

Grid files: binary PGM (P5, maxval up to 65535, scaled to [0, 1]) or a raw
grid of little-endian float64 preceded by two u64 dimensions.

Tag files: one vocabulary entry per line, optionally followed by a region
``row col height width`` in latent cells.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import Condition
from .explicit import TagVocabulary
from .model import CodecModel
from .pipeline import PipelineConfig
from .toy import ToySpec, make_toy_model
from .tradeoff import LinearAutoencoder, load_decoder_matrix, save_decoder_matrix


class ConfigError(Exception):
    pass


def parse_value(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if "," in t:
        return tuple(parse_value(p) for p in t.split(",") if p.strip())
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{origin}:{n}: expected key = value")
        out[key.strip()] = parse_value(val)
    return out


def load_config_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {p}: {e.strerror}") from e
    return parse_config_text(text, str(p))


PATH_KEYS = ("vocab", "tags", "decoder_matrix")


@dataclass
class RunConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    model: ToySpec = field(default_factory=ToySpec)
    vocab: str | None = None
    tags: str | None = None
    decoder_matrix: str | None = None

    @classmethod
    def resolve(cls, file_entries: dict, overrides: dict) -> "RunConfig":
        """File entries first, then non-None overrides (command-line flags)."""
        merged = dict(file_entries)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        pipe_fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
        toy_fields = {f.name: f for f in dataclasses.fields(ToySpec)}
        pipe, toy, paths = {}, {}, {}
        for k, v in merged.items():
            if k in PATH_KEYS:
                paths[k] = str(v)
            elif k.startswith("model."):
                name = k[6:]
                if name not in toy_fields:
                    raise ConfigError(f"unknown model key {k!r}")
                toy[name] = _coerce(k, v, toy_fields[name].default)
            elif k in pipe_fields:
                pipe[k] = _coerce(k, v, pipe_fields[k].default)
            else:
                raise ConfigError(f"unknown config key {k!r}")
        try:
            pc = PipelineConfig(**pipe)
            pc.validate()
            spec = ToySpec(**toy)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        return cls(pc, spec, **paths)

    def echo(self) -> str:
        rows = {f"{k}": v for k, v in dataclasses.asdict(self.pipeline).items()}
        rows.update({f"model.{k}": v for k, v in dataclasses.asdict(self.model).items()})
        for k in PATH_KEYS:
            if getattr(self, k) is not None:
                rows[k] = getattr(self, k)
        return "".join(f"config.{k}={_fmt(v)}\n" for k, v in rows.items())

    def build_model(self) -> CodecModel:
        m = make_toy_model(self.model)
        vocab = m.vocab
        ae = m.autoencoder
        if self.vocab is not None:
            vocab = load_vocab(self.vocab)
        if self.decoder_matrix is not None:
            D = _read(self.decoder_matrix, load_decoder_matrix)
            if D.shape[1] != m.mixture.dim:
                raise ConfigError(f"{self.decoder_matrix}: {D.shape[1]} latent columns, model has {m.mixture.dim}")
            try:
                ae = LinearAutoencoder.from_decoder(D)
            except ValueError as e:
                raise ConfigError(f"{self.decoder_matrix}: {e}") from e
        try:
            return CodecModel(ae, m.mixture, vocab)
        except ValueError as e:
            raise ConfigError(str(e)) from e


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(key, v, default):
    try:
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ValueError
            return v
        if isinstance(default, int):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ValueError
            return v
        if isinstance(default, float):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValueError
            return float(v)
        if isinstance(default, tuple):
            v = v if isinstance(v, tuple) else (v,)
            return tuple(int(x) for x in v)
        if isinstance(default, str):
            return str(v)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {v!r} for {key}") from None
    return v


def _read(path, loader):
    try:
        return loader(path)
    except FileNotFoundError as e:
        raise ConfigError(f"file not found: {path}") from e
    except ValueError as e:
        raise ConfigError(str(e)) from e


def load_vocab(path) -> TagVocabulary:
    try:
        return TagVocabulary.load(path)
    except FileNotFoundError as e:
        raise ConfigError(f"vocabulary file not found: {path}") from e
    except (OSError, ValueError) as e:
        raise ConfigError(f"vocabulary file {path}: {e}") from e


def load_tags(path, vocab: TagVocabulary) -> Condition:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as e:
        raise ConfigError(f"tags file not found: {path}") from e
    tags, regions = [], []
    for n, line in enumerate(lines, 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            tags.append(vocab.index(parts[0]))
        except ValueError as e:
            raise ConfigError(f"{path}:{n}: {e}") from e
        if len(parts) == 1:
            regions.append(None)
        elif len(parts) == 5:
            try:
                r = tuple(int(p) for p in parts[1:])
            except ValueError:
                raise ConfigError(f"{path}:{n}: region must be four integers") from None
            if r[2] < 1 or r[3] < 1 or r[0] < 0 or r[1] < 0:
                raise ConfigError(f"{path}:{n}: empty or negative region")
            regions.append(r)
        else:
            raise ConfigError(f"{path}:{n}: expected 'tag' or 'tag row col height width'")
    if len(tags) > 255:
        raise ConfigError(f"{path}: {len(tags)} tags exceed the 255-tag limit")
    has_regions = any(r is not None for r in regions)
    return Condition(tags=tuple(tags), tag_regions=tuple(regions) if has_regions else None)


# ---------------------------------------------------------------------------
# grids


def read_pgm(data: bytes) -> np.ndarray:
    """Binary P5 graymap -> float grid in [0, 1]."""
    tokens, pos = [], 2
    if data[:2] != b"P5":
        raise ValueError("not a binary PGM (P5)")
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(int(data[start:pos]))
    pos += 1
    w, h, maxval = tokens
    if not (0 < maxval < 65536 and w > 0 and h > 0):
        raise ValueError("bad PGM header values")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    if len(data) - pos < need:
        raise ValueError("truncated PGM raster")
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.float64) / maxval


def write_pgm(grid, maxval: int = 255) -> bytes:
    g = np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0)
    h, w = g.shape
    dtype = ">u2" if maxval > 255 else "u1"
    body = np.rint(g * maxval).astype(dtype).tobytes()
    return f"P5\n{w} {h}\n{maxval}\n".encode() + body


def read_grid(path) -> np.ndarray:
    p = Path(path)
    data = p.read_bytes()
    if data[:2] == b"P5":
        return read_pgm(data)
    return load_decoder_matrix(p)


def write_grid(path, grid):
    p = Path(path)
    if p.suffix.lower() == ".pgm":
        p.write_bytes(write_pgm(grid))
    else:
        save_decoder_matrix(p, np.atleast_2d(grid))
