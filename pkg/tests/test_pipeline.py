import hashlib
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from dualrcc import bitstream as bsm
from dualrcc.bitstream import BitstreamError, CodecError
from dualrcc.diffusion import Condition
from dualrcc.pipeline import (ChainMismatch, PipelineConfig, decode, encode, parse_kv, parse_stream, rate_sweep)
from dualrcc.toy import ToySpec, make_toy_model, sample_batch
from dualrcc.tradeoff import mse

from helpers import offline_kls, pfr_bound_bits

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def batch(toy):
    return sample_batch(toy, 8, seed=3)


@pytest.fixture(scope="module")
def big():
    return make_toy_model(ToySpec(latent_shape=(8, 8), pixels=256, seed=1))


class TestBoundaries:
    def test_explicit_only(self, toy, batch):
        data, rep = encode(batch.x[0], batch.conditions()[0], PipelineConfig(T_E=0), toy)
        _, secs = parse_stream(data)
        assert [s.tag for s in secs] == [bsm.SEC_TAGS, bsm.SEC_LATENT, bsm.SEC_DEBUG]
        assert rep.implicit_total == 0 and rep.coded_states == []
        x_hat, drep = decode(data, toy)
        assert drep.debug_hash == rep.debug_hash
        assert np.array_equal(drep.z_hat, rep.z_hat)

    def test_accounting(self, toy, batch):
        for te in (0, 5, 16, 64):
            data, rep = encode(batch.x[1], batch.conditions()[1], PipelineConfig(T_E=te), toy)
            assert rep.total_bits == 8 * len(data)
            assert rep.total_bits == (rep.header_bits + rep.explicit_bits + rep.implicit_total + rep.terminal_bits
                                      + rep.framing_bits + rep.trailer_bits)
            assert sum(rep.section_bits.values()) == rep.total_bits
            kv = parse_kv(rep.to_kv(toy.cells))
            assert int(kv["total_bits"]) == rep.total_bits

    def test_no_trailer(self, toy, batch):
        data, rep = encode(batch.x[0], None, PipelineConfig(T_E=4, debug_trailer=False), toy)
        assert rep.trailer_bits == 0 and rep.rate_bits == rep.total_bits
        decode(data, toy)


class TestDeterminism:
    def test_repeatable(self, toy, batch):
        cfg = PipelineConfig(T_E=12, seed=9)
        a, _ = encode(batch.x[2], batch.conditions()[2], cfg, toy)
        b, _ = encode(batch.x[2], batch.conditions()[2], cfg, toy)
        assert a == b
        xa, _ = decode(a, toy)
        xb, _ = decode(a, toy)
        assert xa.tobytes() == xb.tobytes()

    def test_threads_invariant(self, big):
        x = sample_batch(big, 1, seed=4).x[0]
        cfg = PipelineConfig(T_E=10, tile_size=4, overlap=2)
        a, _ = encode(x, Condition(tags=(0,)), cfg, big)
        b, _ = encode(x, Condition(tags=(0,)), replace(cfg, threads=4), big)
        assert a == b
        assert decode(a, big, threads=1)[0].tobytes() == decode(a, big, threads=3)[0].tobytes()

    def test_seed_changes_stream(self, toy, batch):
        a, _ = encode(batch.x[0], None, PipelineConfig(T_E=12, seed=1), toy)
        b, _ = encode(batch.x[0], None, PipelineConfig(T_E=12, seed=2), toy)
        assert a != b


class TestTiles:
    def test_single_tile_tiled_equals_untiled(self, toy, batch):
        for te in (0, 8, 64):
            cfg = PipelineConfig(T_E=te, skip_threshold_bits=0.0)
            a, ra = encode(batch.x[3], batch.conditions()[3], cfg, toy)
            b, rb = encode(batch.x[3], batch.conditions()[3], replace(cfg, tiled=False), toy)
            xa, _ = decode(a, toy)
            xb, _ = decode(b, toy)
            assert xa.tobytes() == xb.tobytes()
            assert a[bsm.header_bytes(64):] != b"" and ra.z_hat.tobytes() == rb.z_hat.tobytes()

    def test_regional_tags_roundtrip(self, big):
        x = sample_batch(big, 1, seed=6).x[0]
        cond = Condition(tags=(0, 2), tag_regions=((0, 0, 4, 8), None))
        data, rep = encode(x, cond, PipelineConfig(T_E=12, tile_size=4, overlap=2), big)
        header, secs = parse_stream(data)
        assert header.flags & bsm.FLAG_TAGMAP and any(s.tag == bsm.SEC_TAGMAP for s in secs)
        _, drep = decode(data, big)
        assert drep.debug_hash == rep.debug_hash


class TestChain:
    def test_lossless_limit(self, toy, batch):
        for i in range(3):
            x = batch.x[i]
            data, rep = encode(x, batch.conditions()[i], PipelineConfig(T_E=64, skip_threshold_bits=0.0, seed=i), toy)
            x_hat, drep = decode(data, toy)
            assert drep.z_hat.tobytes() == rep.z_hat.tobytes()
            floor = mse(x, toy.autoencoder.decode(rep.z_bar))
            assert abs(mse(x, x_hat) - floor) < 1e-9

    def test_kl_recomputed_offline(self, big):
        x = sample_batch(big, 1, seed=8).x[0]
        cond = Condition(tags=(1,))
        data, rep = encode(x, cond, PipelineConfig(T_E=20, tile_size=4, overlap=2), big, keep_chain=True)
        assert np.allclose(offline_kls(data, rep, big, cond), rep.kl_per_step, rtol=0, atol=1e-9)

    def test_chunk_kl_sums(self, toy, batch):
        _, rep = encode(batch.x[0], batch.conditions()[0], PipelineConfig(T_E=32), toy)
        for k, c in zip(rep.kl_per_step, rep.chunk_kl):
            if c:
                assert sum(c) == pytest.approx(k, rel=1e-9, abs=1e-12)

    def test_implicit_bits_within_bounds(self, toy):
        b = sample_batch(toy, 1000, seed=21)
        conds = b.conditions()
        lo = hi = got = 0.0
        for i in range(1000):
            _, rep = encode(b.x[i], conds[i], PipelineConfig(T_E=16, skip_threshold_bits=0.0, seed=i), toy)
            kls = [k for c in rep.chunk_kl for k in c]
            lo += sum(kls)
            hi += sum(pfr_bound_bits(k) for k in kls)
            got += rep.implicit_total
        assert lo <= got <= hi

    def test_posterior_variance_mode(self, toy, batch):
        cfg = PipelineConfig(T_E=6, kernel_variance="posterior")
        data, rep = encode(batch.x[0], batch.conditions()[0], cfg, toy)
        assert not parse_stream(data)[0].flags & bsm.FLAG_MATCHED_VARIANCE
        assert decode(data, toy)[1].debug_hash == rep.debug_hash


class TestErrors:
    def test_model_mismatch(self, toy, batch):
        data, _ = encode(batch.x[0], None, PipelineConfig(T_E=2), toy)
        other = make_toy_model(ToySpec(seed=5))
        with pytest.raises(BitstreamError):
            decode(data, other)

    def test_trailer_tamper(self, toy, batch):
        data, _ = encode(batch.x[0], None, PipelineConfig(T_E=4), toy)
        bad = bytearray(data)
        bad[-1] ^= 0x10
        with pytest.raises(ChainMismatch):
            decode(bytes(bad), toy)

    def test_truncated(self, toy, batch):
        data, _ = encode(batch.x[0], None, PipelineConfig(T_E=4), toy)
        for n in (0, 5, 40, len(data) - 1):
            with pytest.raises(CodecError):
                decode(data[:n], toy)

    def test_bad_input_size(self, toy):
        with pytest.raises(ValueError):
            encode(np.zeros(5), None, PipelineConfig(), toy)

    def test_bad_config(self, toy, batch):
        for bad in (dict(T_E=65), dict(tau=1.5), dict(overlap=16), dict(schedule="x")):
            with pytest.raises(ValueError):
                encode(batch.x[0], None, PipelineConfig(**bad), toy)

    def test_bit_flips(self, toy, batch):
        data, rep = encode(batch.x[0], batch.conditions()[0], PipelineConfig(T_E=8), toy)
        r = np.random.default_rng(0)
        for _ in range(60):
            bad = bytearray(data)
            pos = int(r.integers(8 * len(data)))
            bad[pos // 8] ^= 0x80 >> (pos % 8)
            try:
                _, drep = decode(bytes(bad), toy)
            except CodecError:
                continue
            assert drep.debug_hash != rep.debug_hash


def test_rate_sweep_single_row(toy, batch):
    rows = rate_sweep(batch.x[:2], batch.conditions()[:2], [0], PipelineConfig(), toy)
    assert len(rows) == 1 and rows[0]["T_E"] == 0


GOLDEN_CFG = PipelineConfig(T_E=24, seed=31337, tau=0.5)


def _golden_input(toy):
    b = sample_batch(toy, 1, seed=99)
    return b.x[0], Condition(tags=(int(b.components[0]), 7))


def test_golden_stream(toy):
    x, cond = _golden_input(toy)
    data, _ = encode(x, cond, GOLDEN_CFG, toy)
    path = GOLDEN / "toy_te24.drc"
    assert data == path.read_bytes()
    x_hat, _ = decode(data, toy)
    digest = hashlib.sha256(x_hat.astype("<f8").tobytes()).hexdigest()
    assert digest == (GOLDEN / "toy_te24.sha256").read_text().split()[0]
