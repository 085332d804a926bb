"""End-to-end dual-branch codec.

Chain layout for T steps and T_E coded states:

    z_T, ..., z_{T-T_E+1}    RCC coded (z_T against N(0, I), the rest
                             against the conditional reverse kernel)
    z_{T-T_E}, ..., z_1      sampled freely from the reverse kernel
    z_hat = E[z_0 | z_1]     (or, when T_E = T, z_bar itself to 2^-40)

Encoder and decoder run the same chain code; the encoder additionally
knows z_bar and therefore q.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bitstream as bsm
from .bitstream import (BitReader, BitstreamError, BitWriter, CodecError, StreamHeader,
                        read_exp_golomb, unzigzag, write_exp_golomb, zigzag)
from .diffusion import (DEFAULT_SCHEDULE, SCHEDULE_IDS, Condition, NoiseSchedule, forward_marginal,
                        make_schedule, posterior, posterior_coefficients, reverse_mean, x0_from_eps)
from .explicit import (TagPrompt, block_average, latent_decode_quantized, latent_encode, tag_decode,
                       tag_encode, tagmap_decode, tagmap_encode, write_absent_latent)
from .gaussian import LN2, DiagonalGaussian, derive_key, derive_stream, kl_bits, kl_elementwise_bits, sample
from .model import CodecModel
from .rcc import (PfrCapExceeded, chunk_stream_id, decode_index, encode_index, even_bounds,
                  even_chunk_count, pfr_decode, pfr_encode)
from .tiling import make_grid, masks_for, owner_map, partition_condition, predict_tiled, tag_membership
from .tradeoff import blend, mse

HINT_BLOCK = 4
TERMINAL_LOG2_STEP = -40
TERMINAL_STEP = 2.0 ** TERMINAL_LOG2_STEP
PURPOSE_SKIP = 2
PURPOSE_FREE = 3
MAX_CELLS = 1 << 16


class UnencodableError(CodecError):
    pass


class ChainMismatch(CodecError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    schedule: str = DEFAULT_SCHEDULE
    T: int = 64
    T_E: int = 16
    kl_target_bits: float = 12.0
    skip_threshold_bits: float = 0.05
    tau: float = 1.0
    seed: int = 0
    tile_size: int = 16
    overlap: int = 8
    sigma_fraction: float = 0.3
    tag_cap: int = 255
    latent_step: float = 0.5      # 0 disables the latent hint
    tiled: bool = True
    kernel_variance: str = "matched"   # or "posterior" (sigma^2 = beta_tilde)
    debug_trailer: bool = True
    threads: int = 1

    @property
    def T_D(self) -> int:
        return self.T - self.T_E

    def validate(self):
        if self.schedule not in SCHEDULE_IDS:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if not 1 <= self.T <= bsm.MAX_T:
            raise ValueError(f"T must be in [1, {bsm.MAX_T}]")
        if not 0 <= self.T_E <= self.T:
            raise ValueError("need 0 <= T_E <= T")
        if not 0 < self.kl_target_bits < 256:
            raise ValueError("kl_target_bits must be in (0, 256)")
        if not 0 <= self.skip_threshold_bits < 16:
            raise ValueError("skip_threshold_bits must be in [0, 16)")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed is an unsigned 64-bit integer")
        if not (1 <= self.tile_size <= 0xFFFF and 0 <= self.overlap < self.tile_size):
            raise ValueError("need 0 <= overlap < tile_size")
        if not 0 < self.sigma_fraction < 16:
            raise ValueError("sigma_fraction must be in (0, 16)")
        if not 0 <= self.tag_cap <= 255:
            raise ValueError("tag_cap must be in [0, 255]")
        if not self.latent_step >= 0:
            raise ValueError("latent_step must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.kernel_variance not in ("matched", "posterior"):
            raise ValueError("kernel_variance is 'matched' or 'posterior'")


@dataclass
class EncodeReport:
    total_bits: int
    header_bits: int
    explicit_bits: int           # tag, tag-map and latent payloads
    implicit_bits: list          # RCC payload bits per coded state (T down)
    terminal_bits: int
    framing_bits: int            # section tag/length fields and padding
    trailer_bits: int            # non-normative debug section, framing included
    steps_skipped: list          # coded states whose step was skipped
    kl_per_step: list            # KL(q || p) in bits per coded state
    coded_states: list
    chunks_per_step: list
    candidates: int
    section_bits: dict
    chunk_kl: list = field(default_factory=list)   # per coded state: KL bits of each chunk
    debug_hash: str = ""
    z_hat: np.ndarray | None = field(default=None, repr=False)
    z_bar: np.ndarray | None = field(default=None, repr=False)
    chain: dict = field(default_factory=dict, repr=False)

    @property
    def rate_bits(self) -> int:
        """Stream size without the debug trailer."""
        return self.total_bits - self.trailer_bits

    @property
    def implicit_total(self) -> int:
        return int(sum(self.implicit_bits))

    def to_kv(self, cells: int | None = None) -> str:
        rows = {
            "total_bits": self.total_bits, "rate_bits": self.rate_bits, "header_bits": self.header_bits,
            "explicit_bits": self.explicit_bits, "implicit_bits": self.implicit_total,
            "terminal_bits": self.terminal_bits, "framing_bits": self.framing_bits,
            "trailer_bits": self.trailer_bits, "candidates": self.candidates,
            "coded_states": _join(self.coded_states), "implicit_bits_per_step": _join(self.implicit_bits),
            "kl_per_step": _join(f"{k:.6f}" for k in self.kl_per_step),
            "kl_total": f"{sum(self.kl_per_step):.6f}",
            "steps_skipped": _join(self.steps_skipped), "chunks_per_step": _join(self.chunks_per_step),
        }
        if cells:
            rows["bpp"] = f"{self.rate_bits / cells:.6f}"
        for k, v in self.section_bits.items():
            rows[f"section.{k}.bits"] = v
        rows["debug_hash"] = self.debug_hash
        return "".join(f"{k}={v}\n" for k, v in rows.items())


@dataclass
class DecodeReport:
    header: StreamHeader
    tags: TagPrompt
    latent_present: bool
    section_bits: dict
    z_hat: np.ndarray = field(repr=False)
    debug_hash: str = ""

    def to_kv(self) -> str:
        h = self.header
        rows = {"T": h.T, "T_E": h.T_E, "seed": h.seed, "tags": _join(self.tags.indices),
                "latent_present": int(self.latent_present), "debug_hash": self.debug_hash}
        for k, v in self.section_bits.items():
            rows[f"section.{k}.bits"] = v
        return "".join(f"{k}={v}\n" for k, v in rows.items())


def _join(xs) -> str:
    return ",".join(str(x) for x in xs)


def parse_kv(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, sep, v = line.partition("=")
        if not sep:
            raise ValueError(f"not a key=value line: {line!r}")
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# shared chain machinery


class _Chain:
    """Prior side of the chain; identical on both ends of the channel."""

    def __init__(self, model: CodecModel, sched: NoiseSchedule, header: StreamHeader, cond: Condition,
                 membership, threads: int):
        self.model = model
        self.sched = sched
        self.den = model.denoiser
        self.shape = model.latent_shape
        self.tiled = not header.flags & bsm.FLAG_UNTILED
        self.matched = bool(header.flags & bsm.FLAG_MATCHED_VARIANCE)
        self.threads = threads
        self.key = derive_key(header.seed)
        self.seed = header.seed
        D = model.cells
        if self.tiled:
            self.grid = make_grid(self.shape, header.tile_size, header.overlap)
            self.masks = masks_for(self.grid, header.sigma_fraction)
            self.conds = partition_condition(cond, self.grid, header.tag_cap, membership)
            owner = owner_map(self.grid).reshape(-1)
            self.cells = [np.nonzero(owner == i)[0] for i in range(len(self.grid.tiles))]
        else:
            self.grid = None
            self.cond = cond
            self.cells = [np.arange(D)]
        self.tile_ids = list(range(len(self.cells)))
        self._second_moment = None

    def predict(self, z, t: int):
        """(eps_hat, Var[x0 | z_t]) at state t."""
        if self.tiled:
            eps, var = predict_tiled(self.den, z, t, self.conds, self.grid, self.masks, self.sched, self.threads)
        elif hasattr(self.den, "predict"):
            eps, var = self.den.predict(z, t, self.cond, self.sched)
        else:
            eps, var = self.den.predict_noise(z, t, self.cond, self.sched), None
        if var is None:
            var = np.ones(z.size)
        return eps, var

    def second_moment(self) -> np.ndarray:
        """E[x0^2] per cell under the conditioned prior."""
        if self._second_moment is None:
            if not hasattr(self.den, "prior_stats"):
                self._second_moment = np.ones(self.model.cells)
            elif self.tiled:
                parts_m, parts_v = [], []
                for c in self.conds:
                    m, v = self.den.prior_stats(c)
                    parts_m.append(m)
                    parts_v.append(v + m * m)
                self._second_moment = _merge(parts_v, self.grid, self.masks)
            else:
                m, v = self.den.prior_stats(self.cond)
                self._second_moment = v + m * m
        return self._second_moment

    def prior(self, z_next, t: int):
        """(p_theta(z_t | z_{t+1}), expected per-cell KL in bits) for 1 <= t < T,
        or the N(0, I) prior for t = T (z_next ignored)."""
        T = self.sched.T
        D = self.model.cells
        if t == T:
            ab = self.sched.alpha_bar(T)
            m2 = self.second_moment()
            hint = 0.5 * (-math.log(1.0 - ab) + (1.0 - ab) + ab * m2 - 1.0) / LN2
            return DiagonalGaussian(np.zeros(D), np.ones(D)), np.maximum(hint, 0.0)
        eps, var = self.predict(z_next, t + 1)
        c0, _, v = posterior_coefficients(t, self.sched)
        spread = c0 * c0 * var
        if self.matched:
            # p absorbs the denoiser's uncertainty about x0: the expected KL
            # becomes 0.5 ln(1 + spread / v) instead of spread / (2 v)
            p = DiagonalGaussian(reverse_mean(eps, z_next, t, self.sched), v + spread)
            return p, 0.5 * np.log1p(spread / v) / LN2
        p = DiagonalGaussian(reverse_mean(eps, z_next, t, self.sched), np.full(D, v))
        return p, spread / (2.0 * v) / LN2

    def x0_hat(self, z1):
        eps, var = self.predict(z1, 1)
        return x0_from_eps(z1, eps, 1, self.sched), var

    def stream(self, purpose: int, t: int) -> int:
        return derive_stream(self.seed, purpose, t)


def _merge(parts, grid, masks):
    from .tiling import merge
    return merge(parts, grid, masks).reshape(-1)


def _chain_hash(header_bytes: bytes, body: bytes, z_coded, z_hat) -> bytes:
    h = hashlib.blake2b(digest_size=16, person=b"dualrcc-trail")
    h.update(header_bytes)
    h.update(body)
    if z_coded is not None:
        h.update(np.ascontiguousarray(z_coded, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(z_hat, dtype="<f8").tobytes())
    return h.digest()


def _terminal_orders(var) -> list[int]:
    sd = np.sqrt(np.maximum(var, 1e-300))
    return [int(min(max(math.floor(math.log2(s)) - TERMINAL_LOG2_STEP, 0), 62)) for s in sd]


def _hint_condition(cond: Condition, latent_hint, step: float) -> Condition:
    return Condition(tags=cond.tags, latent_hint=latent_hint, hint_block=HINT_BLOCK,
                     hint_noise_var=step * step / 12.0 if latent_hint is not None else 0.0,
                     tag_regions=cond.tag_regions)


# ---------------------------------------------------------------------------
# encode


def encode(x, cond: Condition | None, cfg: PipelineConfig, model: CodecModel, keep_chain: bool = False):
    """Compress pixel vector x; returns (stream bytes, EncodeReport)."""
    cfg.validate()
    cond = cond or Condition()
    cond.check_tags(model.vocab.N)
    if cond.tags is not None and len(cond.tags) > 255:
        raise ValueError("at most 255 tags")
    ae = model.autoencoder
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != ae.pixels:
        raise ValueError(f"input has {x.size} values, the model expects {ae.pixels}")
    H, W = model.latent_shape
    sched = make_schedule(cfg.schedule, cfg.T)
    T, T_E = cfg.T, cfg.T_E

    z_bar = blend(ae.encode(x), ae.encode_mse(x), cfg.tau)

    # explicit branch
    prompt = TagPrompt(cond.tags or ())
    tags_w = BitWriter()
    tag_encode(prompt, model.vocab, tags_w)
    lat_w = BitWriter()
    if cfg.latent_step > 0:
        ql, _ = latent_encode(block_average(z_bar.reshape(H, W), HINT_BLOCK), cfg.latent_step, lat_w)
        hint = ql.dequantize()
        step = ql.step
    else:
        write_absent_latent(lat_w)
        hint, step = None, 0.0
    pcond = _hint_condition(cond, hint, step)

    flags = ((bsm.FLAG_DEBUG_TRAILER if cfg.debug_trailer else 0) | (0 if cfg.tiled else bsm.FLAG_UNTILED)
             | (bsm.FLAG_MATCHED_VARIANCE if cfg.kernel_variance == "matched" else 0))
    membership = None
    tagmap_w = None
    if cfg.tiled and cond.tag_regions is not None and any(r is not None for r in cond.tag_regions):
        grid = make_grid((H, W), cfg.tile_size, cfg.overlap)
        membership = tag_membership(cond, grid)
        tagmap_w = BitWriter()
        tagmap_encode(membership, tagmap_w)
        flags |= bsm.FLAG_TAGMAP

    header = StreamHeader(
        schedule_id=SCHEDULE_IDS[cfg.schedule], T=T, T_E=T_E, tau=cfg.tau, seed=cfg.seed,
        tile_size=cfg.tile_size, overlap=cfg.overlap, tag_cap=cfg.tag_cap, sigma_fraction=cfg.sigma_fraction,
        vocab_hash=model.vocab.id, model_hash=model.content_hash(), shape=(H, W),
        kl_target_bits=cfg.kl_target_bits, skip_threshold_bits=cfg.skip_threshold_bits, flags=flags,
    ).quantized()
    # the decoder sees the fixed-point tile geometry, so the encoder must too
    chain = _Chain(model, sched, header, pcond, membership, cfg.threads)

    # implicit branch
    z = None
    records = []            # per coded state: None (skipped) or list of (m, [(index, hint)])
    kls, skipped, coded, nchunks, chunk_kls = [], [], [], [], []
    candidates = 0
    log = {}
    for t in range(T, T - T_E, -1):
        p, hint_cells = chain.prior(z, t)
        q = forward_marginal(z_bar, T, sched) if t == T else posterior(z_bar, z, t, sched)
        kl = kl_bits(q, p)
        kls.append(kl)
        coded.append(t)
        if kl < cfg.skip_threshold_bits:
            header.skip[t - 1] = True
            skipped.append(t)
            records.append(None)
            chunk_kls.append([])
            nchunks.append(0)
            z = sample(p, chain.key, chain.stream(PURPOSE_SKIP, t))
        else:
            z_new = np.empty(model.cells)
            tiles, ckl = [], []
            for tile, cells in zip(chain.tile_ids, chain.cells):
                qs, ps = DiagonalGaussian(q.mean[cells], q.variance[cells]), DiagonalGaussian(p.mean[cells], p.variance[cells])
                m, picks, n_cand = _encode_tile(qs, ps, hint_cells[cells], cfg.kl_target_bits, chain, t, tile, z_new, cells)
                per = kl_elementwise_bits(qs, ps)
                ckl += [float(per[a:b].sum()) for a, b in even_bounds(cells.size, m)]
                candidates += n_cand
                tiles.append((m, picks))
            records.append(tiles)
            chunk_kls.append(ckl)
            nchunks.append(sum(m for m, _ in tiles))
            z = z_new
        if keep_chain:
            log[t] = z.copy()
    z_coded = None if z is None else z.copy()

    # terminal step or free denoising
    term_w = None
    if T_E == T:
        x0h, var = chain.x0_hat(z)
        term_w = BitWriter()
        orders = _terminal_orders(var)
        z_hat = np.empty_like(x0h)
        for d in range(x0h.size):
            k = int(np.rint((z_bar[d] - x0h[d]) / TERMINAL_STEP))
            write_exp_golomb(term_w, zigzag(k), orders[d])
            z_hat[d] = x0h[d] + k * TERMINAL_STEP
    else:
        z_hat = _free_chain(chain, z, T - T_E)

    # container
    layout_bits = max([(m - 1).bit_length() for r in records if r for m, _ in r] + [0])
    header.layout_bits = layout_bits
    rcc_w = None
    implicit = []
    if T_E > 0:
        rcc_w = BitWriter()
        for rec in records:
            start = rcc_w.bit_length
            if rec is not None:
                for m, picks in rec:
                    rcc_w.write(m - 1, layout_bits)
                    for idx, h in picks:
                        encode_index(idx, h, rcc_w)
            implicit.append(rcc_w.bit_length - start)

    out = BitWriter()
    hb = header.pack()
    out.write_bytes(hb)
    sec_bits = {"header": 8 * len(hb)}
    framing = 0

    def put(tag, w):
        nonlocal framing
        nbits = w.bit_length
        n = bsm.write_section(tag, w, out)
        framing += n - nbits
        name = bsm.SECTION_NAMES[tag]
        sec_bits[name] = sec_bits.get(name, 0) + n
        return nbits

    explicit = put(bsm.SEC_TAGS, tags_w)
    if tagmap_w is not None:
        explicit += put(bsm.SEC_TAGMAP, tagmap_w)
    explicit += put(bsm.SEC_LATENT, lat_w)
    if rcc_w is not None:
        put(bsm.SEC_RCC, rcc_w)
    terminal = put(bsm.SEC_TERMINAL, term_w) if term_w is not None else 0
    body = out.tobytes()[len(hb):]
    digest = _chain_hash(hb, body, z_coded, z_hat)
    trailer = 0
    if cfg.debug_trailer:
        tw = BitWriter()
        tw.write_bytes(digest)
        before = out.bit_length
        put(bsm.SEC_DEBUG, tw)
        trailer = out.bit_length - before
        framing -= trailer - 8 * len(digest)
    data, nbits = out.getvalue()
    assert nbits == 8 * len(data)
    report = EncodeReport(
        total_bits=nbits, header_bits=8 * len(hb), explicit_bits=explicit, implicit_bits=implicit,
        terminal_bits=terminal, framing_bits=framing, trailer_bits=trailer, steps_skipped=skipped,
        kl_per_step=kls, coded_states=coded, chunks_per_step=nchunks, candidates=candidates,
        section_bits=sec_bits, chunk_kl=chunk_kls, debug_hash=digest.hex(), z_hat=z_hat, z_bar=z_bar, chain=log)
    assert report.total_bits == (report.header_bits + report.explicit_bits + report.implicit_total
                                 + report.terminal_bits + report.framing_bits + report.trailer_bits)
    return data, report


def _encode_tile(q, p, hint_cells, target, chain, t, tile, z_new, cells):
    per = kl_elementwise_bits(q, p)
    for attempt, tgt in enumerate((target, target / 2.0)):
        m = even_chunk_count(per, tgt)
        picks, n_cand = [], 0
        try:
            for i, (a, b) in enumerate(even_bounds(q.dim, m)):
                sl = slice(a, b)
                res = pfr_encode(q.restrict(sl), p.restrict(sl), None, chain.key,
                                 chunk_stream_id(chain.seed, t, i, tile))
                picks.append((res.index, float(np.sum(hint_cells[sl]))))
                n_cand += res.candidates_examined
                z_new[cells[sl]] = res.sample
        except PfrCapExceeded as e:
            if attempt == 1:
                raise UnencodableError(f"state {t}, tile {tile}: {e}") from e
            continue
        return m, picks, n_cand
    raise AssertionError("unreachable")


def _free_chain(chain: _Chain, z, start: int):
    """Sample z_start .. z_1 from the reverse kernel, then return E[z_0 | z_1]."""
    for t in range(start, 0, -1):
        p, _ = chain.prior(z, t)
        z = sample(p, chain.key, chain.stream(PURPOSE_FREE, t))
    return chain.x0_hat(z)[0]


# ---------------------------------------------------------------------------
# decode


def decode(data: bytes, model: CodecModel, threads: int = 1):
    """Returns (pixel reconstruction, DecodeReport); raises CodecError on any
    malformed or mismatched stream."""
    try:
        return _decode(bytes(data), model, threads)
    except CodecError:
        raise
    except (ValueError, IndexError, OverflowError, KeyError) as e:
        raise BitstreamError(f"malformed stream: {e}") from e


def parse_stream(data: bytes):
    """(header, sections) with structural validation only."""
    header = StreamHeader.unpack(data)
    hn = header.nbytes
    sections = bsm.read_sections(data, 8 * hn)
    order = [s.tag for s in sections]
    want = [bsm.SEC_TAGS]
    if header.flags & bsm.FLAG_TAGMAP:
        want.append(bsm.SEC_TAGMAP)
    want.append(bsm.SEC_LATENT)
    if header.T_E > 0:
        want.append(bsm.SEC_RCC)
    if header.T_E == header.T:
        want.append(bsm.SEC_TERMINAL)
    if header.flags & bsm.FLAG_DEBUG_TRAILER:
        want.append(bsm.SEC_DEBUG)
    if order != want:
        at = next((s.offset_bits for s, w in zip(sections, want) if s.tag != w), 8 * len(data))
        names = [bsm.SECTION_NAMES.get(w, hex(w)) for w in want]
        raise BitstreamError(f"section order {[s.name for s in sections]} != expected {names}", at)
    for t in range(1, header.T + 1):
        if header.skip[t - 1] and not header.T - header.T_E < t:
            raise BitstreamError(f"skip flag set on uncoded state {t}", 8 * 11 + t - 1)
    return header, sections


def _decode(data: bytes, model: CodecModel, threads: int):
    header, sections = parse_stream(data)
    if header.model_hash != model.content_hash():
        raise BitstreamError("stream was made with a different model")
    if header.vocab_hash != model.vocab.id:
        raise BitstreamError("vocabulary hash mismatch")
    if tuple(header.shape) != model.latent_shape:
        raise BitstreamError(f"latent shape {header.shape} does not match the model {model.latent_shape}")
    if header.tile_size < 1 or header.overlap >= header.tile_size:
        raise BitstreamError("invalid tile geometry")
    sched = make_schedule(header.schedule_id, header.T)
    H, W = model.latent_shape
    secs = {s.tag: s for s in sections}
    sec_bits = {"header": 8 * header.nbytes}
    for s in sections:
        sec_bits[s.name] = s.framed_bits

    r = secs[bsm.SEC_TAGS].reader
    prompt = tag_decode(r, model.vocab)
    r.expect_end()
    membership = None
    if bsm.SEC_TAGMAP in secs:
        n_tiles = len(make_grid((H, W), header.tile_size, header.overlap).tiles)
        r = secs[bsm.SEC_TAGMAP].reader
        membership = tagmap_decode(r, prompt.K, n_tiles)
        r.expect_end()
    ql = latent_decode_quantized(secs[bsm.SEC_LATENT].reader)
    if ql is not None:
        want = (-(-H // HINT_BLOCK), -(-W // HINT_BLOCK))
        if ql.shape != want:
            raise BitstreamError(f"latent hint shape {ql.shape} != {want}")
    hint = None if ql is None else ql.dequantize()
    pcond = _hint_condition(Condition(tags=prompt.indices), hint, 0.0 if ql is None else ql.step)
    chain = _Chain(model, sched, header, pcond, membership, threads)

    T, T_E = header.T, header.T_E
    z = None
    rr = secs[bsm.SEC_RCC].reader if T_E > 0 else None
    for t in range(T, T - T_E, -1):
        p, hint_cells = chain.prior(z, t)
        if header.skip[t - 1]:
            z = sample(p, chain.key, chain.stream(PURPOSE_SKIP, t))
            continue
        z_new = np.empty(model.cells)
        for tile, cells in zip(chain.tile_ids, chain.cells):
            at = rr.offset
            m = rr.read(header.layout_bits) + 1
            if m > cells.size:
                raise BitstreamError(f"layout of {m} chunks for {cells.size} cells", at)
            pm, pv = p.mean[cells], p.variance[cells]
            for i, (a, b) in enumerate(even_bounds(cells.size, m)):
                idx = decode_index(rr, float(np.sum(hint_cells[cells[a:b]])))
                z_new[cells[a:b]] = pfr_decode(idx, DiagonalGaussian(pm[a:b], pv[a:b]), chain.key,
                                               chunk_stream_id(chain.seed, t, i, tile))
        z = z_new
    if rr is not None:
        rr.expect_end()
    z_coded = None if z is None else z.copy()

    if T_E == T:
        x0h, var = chain.x0_hat(z)
        tr = secs[bsm.SEC_TERMINAL].reader
        orders = _terminal_orders(var)
        z_hat = np.empty_like(x0h)
        for d in range(x0h.size):
            k = unzigzag(read_exp_golomb(tr, orders[d], max_bits=70))
            z_hat[d] = x0h[d] + k * TERMINAL_STEP
        tr.expect_end()
    else:
        z_hat = _free_chain(chain, z, T - T_E)

    hb = data[:header.nbytes]
    body_end = secs[bsm.SEC_DEBUG].offset_bits // 8 if bsm.SEC_DEBUG in secs else len(data)
    digest = _chain_hash(hb, data[header.nbytes:body_end], z_coded, z_hat)
    if bsm.SEC_DEBUG in secs:
        tr = secs[bsm.SEC_DEBUG].reader
        stored = tr.read_bytes(16) if tr.remaining == 128 else None
        if stored != digest:
            raise ChainMismatch("debug trailer does not match the decoded chain")
    x_hat = model.autoencoder.decode(z_hat)
    return x_hat, DecodeReport(header, prompt, ql is not None, sec_bits, z_hat, digest.hex())


# ---------------------------------------------------------------------------
# sweeps


def rate_sweep(x_batch, cond_batch, te_values, cfg: PipelineConfig, model: CodecModel, verify_decode: bool = True):
    """Per T_E: mean rate bits, mean MSE and their standard errors."""
    from dataclasses import replace

    if any(not 0 <= te <= cfg.T for te in te_values):
        raise ValueError("T_E values must lie in [0, T]")
    rows = []
    for te in te_values:
        bits, errs = [], []
        for i, x in enumerate(x_batch):
            run = replace(cfg, T_E=int(te), seed=(cfg.seed + i) & ((1 << 64) - 1))
            c = None if cond_batch is None else cond_batch[i]
            data, rep = encode(x, c, run, model)
            if verify_decode:
                xr, _ = decode(data, model)
            else:
                xr = model.autoencoder.decode(rep.z_hat)
            bits.append(rep.rate_bits)
            errs.append(mse(x, xr))
        n = len(bits)
        rows.append(dict(T_E=int(te), bits=float(np.mean(bits)), bits_se=float(np.std(bits, ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
                         mse=float(np.mean(errs)), mse_se=float(np.std(errs, ddof=1) / math.sqrt(n)) if n > 1 else 0.0))
    for a, b in zip(rows, rows[1:]):
        b["bits_increasing"] = b["bits"] > a["bits"]
        b["mse_nonincreasing"] = b["mse"] <= a["mse"] + max(a["mse_se"], b["mse_se"])
    return rows


def config_dict(cfg: PipelineConfig) -> dict:
    return asdict(cfg)
