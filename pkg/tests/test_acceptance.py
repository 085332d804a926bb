"""Desk-scale acceptance criteria, one test per criterion.

Each test records a single ``PASS``/``FAIL`` line (printed in the terminal
summary) and then asserts the criterion at its stated tolerance, including
the stated runtime budget.  Run alone with ``pytest -m acceptance -s``.
"""

import math
import signal
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from dualrcc import bench
from dualrcc.bitstream import BitReader, BitWriter, CodecError
from dualrcc.diffusion import Condition
from dualrcc.explicit import TagPrompt, TagVocabulary, tag_bits, tag_decode, tag_encode
from dualrcc.gaussian import DiagonalGaussian, derive_key, derive_stream
from dualrcc.pipeline import PipelineConfig, decode, encode
from dualrcc.rcc import index_code_length, pfr_decode, pfr_encode
from dualrcc.tiling import make_grid, masks_for, merge, weight_sum
from dualrcc.toy import ToySpec, make_toy_model, sample_batch
from dualrcc.tradeoff import mse

from conftest import ACCEPTANCE_LINES
from helpers import offline_kls, pfr_bound_bits

pytestmark = pytest.mark.acceptance


def record(name: str, ok: bool, detail: str, elapsed: float, budget: float):
    ok = bool(ok) and elapsed < budget
    line = f"{'PASS' if ok else 'FAIL'}  {name:<22} {detail}  [{elapsed:.1f}s of {budget:.0f}s]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def model():
    return make_toy_model(ToySpec())


def test_pfr_exactness():
    t0 = time.perf_counter()
    q, p = DiagonalGaussian(np.array([1.0]), np.array([0.25])), DiagonalGaussian(np.zeros(1), np.ones(1))
    key = derive_key(101)
    n = 100_000
    samples = np.empty(n)
    mismatches = 0
    for i in range(n):
        sid = derive_stream(101, i)
        res = pfr_encode(q, p, None, key, sid)
        dec = pfr_decode(res.index, p, key, sid)
        mismatches += dec.tobytes() != res.sample.tobytes()
        samples[i] = dec[0]
    ks = stats.kstest(samples, stats.norm(loc=1.0, scale=0.5).cdf)
    record("pfr-exactness", ks.pvalue > 1e-3 and mismatches == 0,
           f"KS p={ks.pvalue:.3f} (alpha 0.001), decode mismatches={mismatches}/{n}", time.perf_counter() - t0, 120)


def test_pfr_codelength_bound():
    t0 = time.perf_counter()
    rows = bench.pfr_bound(kls=(1, 2, 4, 8, 16), trials=10_000, seed=202)
    detail = ", ".join(f"KL{r['kl_bits']}: {r['mean_bits']:.2f}<={r['bound']:.2f}" for r in rows)
    ok = all(r["mean_bits"] <= pfr_bound_bits(r["kl_bits"]) for r in rows)
    record("pfr-codelength", ok, detail, time.perf_counter() - t0, 600)


def test_kl_accounting(model):
    t0 = time.perf_counter()
    big = make_toy_model(ToySpec(latent_shape=(8, 8), pixels=256))
    rng = np.random.default_rng(303)
    worst, bits_ok = 0.0, True
    for i in range(100):
        m = big if i % 2 else model
        tile = int(rng.choice([4, 6, 8, 16]))
        cfg = PipelineConfig(T_E=int(rng.integers(0, 65)), tau=float(rng.choice([0.0, 0.5, 1.0])), seed=i,
                             tile_size=tile, overlap=int(rng.integers(0, tile)),
                             latent_step=float(rng.choice([0.0, 0.25, 0.5])),
                             skip_threshold_bits=float(rng.choice([0.0, 0.05, 0.5])),
                             kl_target_bits=float(rng.choice([6.0, 12.0])))
        b = sample_batch(m, 1, seed=1000 + i)
        k = int(rng.integers(0, 4))
        tags = tuple(int(t) for t in rng.integers(0, m.vocab.N, k))
        regions = None
        if k and rng.random() < 0.3:
            H, W = m.latent_shape
            regions = tuple((int(rng.integers(0, H)), int(rng.integers(0, W)), 2, 2) for _ in tags)
        cond = Condition(tags=tags, tag_regions=regions)
        data, rep = encode(b.x[0], cond, cfg, m, keep_chain=True)
        bits_ok &= rep.total_bits == 8 * len(data)
        off = offline_kls(data, rep, m, cond)
        if off:
            worst = max(worst, float(np.max(np.abs(np.asarray(off) - np.asarray(rep.kl_per_step)))))
    record("kl-accounting", worst <= 1e-9 and bits_ok,
           f"max |KL - offline| = {worst:.2e} bits, total_bits == file bits: {bits_ok}", time.perf_counter() - t0,
           300)


def test_lossless_chain(model):
    t0 = time.perf_counter()
    b = sample_batch(model, 100, seed=404)
    conds = b.conditions()
    chain_ok, worst = True, 0.0
    for i in range(100):
        data, rep = encode(b.x[i], conds[i], PipelineConfig(T_E=64, T=64, skip_threshold_bits=0.0, seed=i), model)
        x_hat, drep = decode(data, model)
        chain_ok &= drep.z_hat.tobytes() == rep.z_hat.tobytes() and drep.debug_hash == rep.debug_hash
        floor = mse(b.x[i], model.autoencoder.decode(rep.z_bar))
        worst = max(worst, abs(mse(b.x[i], x_hat) - floor))
    record("lossless-chain", chain_ok and worst <= 1e-9,
           f"dim={model.cells}, chain bit-match={chain_ok}, max |MSE - floor| = {worst:.2e}",
           time.perf_counter() - t0, 300)


def test_conditioning_benefit(model):
    t0 = time.perf_counter()
    n = 500
    cfg = PipelineConfig(T_E=32, latent_step=0.0)
    b = sample_batch(model, n, seed=505)
    on, off = [], []
    for i, (x, ct, cn) in enumerate(zip(b.x, b.conditions(True), b.conditions(False))):
        run = replace(cfg, seed=i)
        on.append(encode(x, ct, run, model)[1].implicit_total)
        off.append(encode(x, cn, run, model)[1].implicit_total)
    on, off = np.array(on, float), np.array(off, float)
    red = 1 - on.mean() / off.mean()
    p = stats.ttest_rel(on, off, alternative="less").pvalue
    record("conditioning", model.mixture.K == 4 and red >= 0.05 and p < 0.01,
           f"{on.mean():.2f} vs {off.mean():.2f} bits ({100 * red:.1f}% lower), paired one-sided p={p:.1e}",
           time.perf_counter() - t0, 600)


def test_rate_monotonicity():
    t0 = time.perf_counter()
    rows = bench.rate_sweep_suite(samples=500, te_values=(0, 8, 16, 32, 64))
    bits_up = all(b["bits"] > a["bits"] for a, b in zip(rows, rows[1:]))
    mse_ok = all(b["mse"] <= a["mse"] + max(a["mse_se"], b["mse_se"]) for a, b in zip(rows, rows[1:]))
    detail = " ".join(f"T_E{r['T_E']}:{r['bits']:.0f}b/{r['mse']:.4f}" for r in rows)
    record("rate-monotonicity", bits_up and mse_ok, detail, time.perf_counter() - t0, 900)


def test_tradeoff_monotonicity():
    t0 = time.perf_counter()
    rows = bench.tradeoff(samples=200, te_values=(48, 64), taus=(0.0, 1.0))
    ok, parts = True, []
    for te in (48, 64):
        r0, r1 = [r for r in rows if r["T_E"] == te]
        gap = abs(r0["bits"] - r1["bits"]) / max(r0["bits"], r1["bits"])
        ok &= r0["mse"] < r1["mse"] and gap < 0.10
        parts.append(f"T_E{te}: mse {r0['mse']:.4f}<{r1['mse']:.4f}, bits gap {100 * gap:.1f}%")
    record("tradeoff", ok, "; ".join(parts), time.perf_counter() - t0, 900)


def test_tag_codec():
    t0 = time.perf_counter()
    rng = np.random.default_rng(808)
    vocabs = {N: TagVocabulary.synthetic(N) for N in (2, 100, 4096, 4449)}
    length_ok = True
    for N, v in vocabs.items():
        for K in range(256):
            w = BitWriter()
            n = tag_encode(TagPrompt(tuple(rng.integers(0, N, K))), v, w)
            length_ok &= n == w.bit_length == 8 + K * math.ceil(math.log2(N)) == tag_bits(K, N)
    trip_ok = True
    for i in range(10_000):
        v = vocabs[(2, 100, 4096, 4449)[i % 4]]
        prompt = TagPrompt(tuple(rng.integers(0, v.N, int(rng.integers(0, 256)))))
        w = BitWriter()
        n = tag_encode(prompt, v, w)
        trip_ok &= tag_decode(BitReader(w.tobytes(), n), v) == prompt
    record("tag-codec", length_ok and trip_ok, f"length formula={length_ok}, 1e4 round-trips={trip_ok}",
           time.perf_counter() - t0, 60)


def test_tiling(model):
    t0 = time.perf_counter()
    rng = np.random.default_rng(909)
    norm_ok, worst = True, 0.0
    for _ in range(300):
        H, W = (int(v) for v in rng.integers(1, 70, 2))
        tile = int(rng.integers(1, 33))
        grid = make_grid((H, W), tile, int(rng.integers(0, tile)))
        masks = masks_for(grid, float(rng.uniform(0.1, 1.0)))
        norm_ok &= bool(np.all(merge([np.ones(t[2:]) for t in grid.tiles], grid, masks) == 1.0))
        norm_ok &= bool(np.all(weight_sum(grid, masks) > 0))
        c = float(rng.normal(scale=100))
        out = merge([np.full(t[2:], c) for t in grid.tiles], grid, masks)
        worst = max(worst, float(np.max(np.abs(out - c))))
    b = sample_batch(model, 5, seed=910)
    same = True
    for i in range(5):
        x, c = b.x[i], b.conditions()[i]
        d1, _ = encode(x, c, PipelineConfig(T_E=16, seed=i, tile_size=16, tiled=True), model)
        d2, _ = encode(x, c, PipelineConfig(T_E=16, seed=i, tile_size=16, tiled=False), model)
        x1, r1 = decode(d1, model)
        x2, r2 = decode(d2, model)
        same &= x1.tobytes() == x2.tobytes() and r1.z_hat.tobytes() == r2.z_hat.tobytes()
    record("tiling", norm_ok and worst <= 1e-12 and same,
           f"normalisation exact={norm_ok}, constant-field max err={worst:.1e}, single-tile bit-identical={same}",
           time.perf_counter() - t0, 120)


class _Hang(Exception):
    pass


def _alarm(signum, frame):
    raise _Hang()


def test_bitflip_robustness(model):
    t0 = time.perf_counter()
    big = make_toy_model(ToySpec(latent_shape=(8, 8), pixels=256))
    streams = []
    for m, cond, cfg in ((model, Condition(tags=(1,)), PipelineConfig(T_E=12)),
                         (model, Condition(), PipelineConfig(T_E=64, skip_threshold_bits=0.0)),
                         (big, Condition(tags=(0, 2), tag_regions=((0, 0, 3, 3), None)),
                          PipelineConfig(T_E=20, tile_size=4, overlap=2))):
        data, rep = encode(sample_batch(m, 1, seed=11).x[0], cond, cfg, m)
        streams.append((m, data, rep.debug_hash))
    rng = np.random.default_rng(1010)
    errors = changed = crashes = hangs = 0
    old = signal.signal(signal.SIGALRM, _alarm)
    try:
        for i in range(1000):
            m, data, h = streams[i % len(streams)]
            bad = bytearray(data)
            pos = int(rng.integers(8 * len(data)))
            bad[pos // 8] ^= 0x80 >> (pos % 8)
            signal.alarm(10)
            try:
                _, drep = decode(bytes(bad), m)
                if drep.debug_hash != h:
                    changed += 1
                else:
                    crashes += 1    # silently accepted a corrupted stream
            except CodecError:
                errors += 1
            except _Hang:
                hangs += 1
            except Exception:
                crashes += 1
            finally:
                signal.alarm(0)
    finally:
        signal.signal(signal.SIGALRM, old)
    record("bitflip-robustness", crashes == 0 and hangs == 0,
           f"1000 flips: {errors} clean errors, {changed} changed hash, {crashes} crashes, {hangs} hangs",
           time.perf_counter() - t0, 600)
