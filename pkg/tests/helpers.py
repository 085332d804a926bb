"""Offline recomputation of the coded chain from a finished stream.

Rebuilds every (q, p) pair from the encoder's kept chain states using the
tiling and denoiser functions directly, without the pipeline's chain class.
"""

import math

import numpy as np

from dualrcc import bitstream as bsm
from dualrcc.diffusion import Condition, forward_marginal, make_schedule, posterior, posterior_coefficients, reverse_mean
from dualrcc.explicit import latent_decode_quantized
from dualrcc.gaussian import DiagonalGaussian, kl_bits
from dualrcc.pipeline import HINT_BLOCK, parse_stream
from dualrcc.tiling import make_grid, masks_for, partition_condition, predict_tiled, tag_membership


def offline_kls(data: bytes, rep, model, cond: Condition):
    header, sections = parse_stream(data)
    secs = {s.tag: s for s in sections}
    sched = make_schedule(header.schedule_id, header.T)
    ql = latent_decode_quantized(secs[bsm.SEC_LATENT].reader)
    hint = None if ql is None else ql.dequantize()
    pc = Condition(tags=cond.tags, latent_hint=hint, hint_block=HINT_BLOCK,
                   hint_noise_var=0.0 if ql is None else ql.step ** 2 / 12.0, tag_regions=cond.tag_regions)
    grid = make_grid(model.latent_shape, header.tile_size, header.overlap)
    masks = masks_for(grid, header.sigma_fraction)
    membership = tag_membership(cond, grid) if header.flags & bsm.FLAG_TAGMAP else None
    conds = partition_condition(pc, grid, header.tag_cap, membership)
    out = []
    T = header.T
    for t in rep.coded_states:
        if t == T:
            q = forward_marginal(rep.z_bar, T, sched)
            p = DiagonalGaussian(np.zeros(model.cells), np.ones(model.cells))
        else:
            zn = rep.chain[t + 1]
            eps, var = predict_tiled(model.denoiser, zn, t + 1, conds, grid, masks, sched)
            c0, _, v = posterior_coefficients(t, sched)
            p = DiagonalGaussian(reverse_mean(eps, zn, t, sched), v + c0 * c0 * var)
            q = posterior(rep.z_bar, zn, t, sched)
        out.append(kl_bits(q, p))
    return out


def pfr_bound_bits(kl: float) -> float:
    return kl + math.log2(kl + 1) + 5
