"""Desk-scale benchmark suites.

Every suite returns a list of dict rows (one table) and is deterministic
given its arguments.  ``format_table`` renders rows tab-separated.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .gaussian import DiagonalGaussian, derive_key, derive_stream
from .pipeline import PipelineConfig, decode, encode, rate_sweep
from .rcc import index_code_length, pfr_encode
from .toy import ToySpec, make_toy_model, sample_batch
from .tradeoff import mse

_MASK64 = (1 << 64) - 1
SUITES = ("pfr-bound", "conditioning", "rate-sweep", "tradeoff", "rate-allocation")


def pfr_pair(kl_bits: float, rho: float = 0.5):
    """A 1-d (q, p) pair with KL(q || p) = kl_bits: p = N(0,1), q = N(mu, s^2).

    s^2 = 2^(-2 rho kl) shrinks q, and mu fills the remaining KL.
    """
    kl = kl_bits * math.log(2.0)
    v = 2.0 ** (-2.0 * rho * kl_bits)
    mu2 = 2.0 * kl - v + 1.0 + math.log(v)
    return DiagonalGaussian(np.array([math.sqrt(max(mu2, 0.0))]), np.array([v])), \
        DiagonalGaussian(np.zeros(1), np.ones(1))


def pfr_bound(kls=(1, 2, 4, 8, 16), trials: int = 1000, seed: int = 0):
    rows = []
    key = derive_key(seed)
    for kl in kls:
        q, p = pfr_pair(kl)
        bits = np.empty(trials)
        for i in range(trials):
            res = pfr_encode(q, p, None, key, derive_stream(seed, 7, kl, i))
            bits[i] = index_code_length(res.index, kl)
        bound = kl + math.log2(kl + 1) + 5
        rows.append(dict(kl_bits=kl, trials=trials, mean_bits=float(bits.mean()),
                         se=float(bits.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0,
                         ci95=float(1.96 * bits.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0,
                         bound=bound, ok=bool(bits.mean() <= bound)))
    return rows


def _toy(spec: ToySpec | None):
    return make_toy_model(spec or ToySpec())


def conditioning(samples: int = 100, cfg: PipelineConfig | None = None, spec: ToySpec | None = None,
                 data_seed: int = 1):
    """Implicit bits with the true-component tag vs without tags."""
    cfg = cfg or PipelineConfig(T_E=32, latent_step=0.0)
    model = _toy(spec)
    batch = sample_batch(model, samples, seed=data_seed)
    rows = []
    for label, conds in (("tags", batch.conditions(True)), ("none", batch.conditions(False))):
        bits = [encode(x, c, replace(cfg, seed=(cfg.seed + i) & _MASK64), model)[1].implicit_total
                for i, (x, c) in enumerate(zip(batch.x, conds))]
        rows.append(dict(condition=label, samples=samples, implicit_bits=float(np.mean(bits)),
                         se=float(np.std(bits, ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0))
    return rows


def rate_sweep_suite(samples: int = 50, te_values=(0, 8, 16, 32, 64), cfg: PipelineConfig | None = None,
                     spec: ToySpec | None = None, data_seed: int = 2):
    cfg = cfg or PipelineConfig()
    model = _toy(spec)
    batch = sample_batch(model, samples, seed=data_seed)
    rows = rate_sweep(batch.x, batch.conditions(True), te_values, cfg, model)
    for r in rows:
        r["bpp"] = r["bits"] / model.cells
    return rows


def tradeoff(samples: int = 50, te_values=(48, 64), taus=(0.0, 0.25, 0.5, 0.75, 1.0), cfg: PipelineConfig | None = None,
             spec: ToySpec | None = None, data_seed: int = 3):
    """MSE and rate vs tau at fixed T_E; the same seeds for every tau."""
    cfg = cfg or PipelineConfig()
    model = _toy(spec)
    batch = sample_batch(model, samples, seed=data_seed)
    conds = batch.conditions(True)
    rows = []
    for te in te_values:
        for tau in taus:
            bits, errs = [], []
            for i, x in enumerate(batch.x):
                data, rep = encode(x, conds[i], replace(cfg, T_E=int(te), tau=float(tau), seed=(cfg.seed + i) & _MASK64), model)
                xr, _ = decode(data, model)
                bits.append(rep.rate_bits)
                errs.append(mse(x, xr))
            rows.append(dict(T_E=int(te), tau=float(tau), samples=samples, bits=float(np.mean(bits)),
                             mse=float(np.mean(errs)),
                             mse_se=float(np.std(errs, ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0))
    return rows


def rate_allocation(samples: int = 20, steps=(0.0, 1.0, 0.5, 0.25, 0.125), te_values=(8, 16, 24, 32, 40, 48, 56),
                    budget_bits: float | None = None, cfg: PipelineConfig | None = None,
                    spec: ToySpec | None = None, data_seed: int = 4):
    """Explicit vs implicit split at a roughly fixed total rate.

    For each latent quantizer step (0 = no latent hint) the T_E whose mean
    rate is closest to the budget is reported.  The default budget is the
    rate of (step 0.5, T_E 32).  Uses an 8x8 latent so the 4x4 block hint
    has several cells.
    """
    cfg = cfg or PipelineConfig()
    spec = spec or ToySpec(latent_shape=(8, 8), pixels=256)
    model = _toy(spec)
    batch = sample_batch(model, samples, seed=data_seed)
    conds = batch.conditions(True)

    def point(step, te):
        ex, im, tot, errs = [], [], [], []
        for i, x in enumerate(batch.x):
            run = replace(cfg, latent_step=float(step), T_E=int(te), seed=(cfg.seed + i) & _MASK64)
            _, rep = encode(x, conds[i], run, model)
            ex.append(rep.explicit_bits)
            im.append(rep.implicit_total + rep.terminal_bits)
            tot.append(rep.rate_bits)
            errs.append(mse(x, model.autoencoder.decode(rep.z_hat)))
        return dict(latent_step=float(step), T_E=int(te), explicit_bits=float(np.mean(ex)),
                    implicit_bits=float(np.mean(im)), bits=float(np.mean(tot)),
                    bpp=float(np.mean(tot)) / model.cells, mse=float(np.mean(errs)))

    if budget_bits is None:
        budget_bits = point(0.5, 32)["bits"]
    rows = []
    for step in steps:
        grid = [point(step, te) for te in te_values]
        best = min(grid, key=lambda r: abs(r["bits"] - budget_bits))
        best["budget_bits"] = float(budget_bits)
        best["explicit_share"] = best["explicit_bits"] / best["bits"]
        rows.append(best)
    return rows


def run_suite(name: str, samples: int | None = None, cfg: PipelineConfig | None = None, spec: ToySpec | None = None):
    kw = {}
    if samples is not None:
        kw["trials" if name == "pfr-bound" else "samples"] = samples
    if name == "pfr-bound":
        return pfr_bound(seed=cfg.seed if cfg else 0, **kw)
    table = {"conditioning": conditioning, "rate-sweep": rate_sweep_suite, "tradeoff": tradeoff,
             "rate-allocation": rate_allocation}
    if name not in table:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    if cfg is not None:
        kw["cfg"] = cfg
    if spec is not None:
        kw["spec"] = spec
    return table[name](**kw)


def format_table(rows) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [c for c in r if c not in cols]

    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v) if v is not None else ""

    lines = ["\t".join(cols)]
    lines += ["\t".join(cell(r.get(c)) for c in cols) for r in rows]
    return "\n".join(lines) + "\n"


def plot_table(rows, x: str, y: str, path, group: str | None = None):
    """Optional matplotlib plot of one column against another."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    groups = {}
    for r in rows:
        groups.setdefault(r.get(group) if group else None, []).append(r)
    for g, rs in groups.items():
        ax.plot([r[x] for r in rs], [r[y] for r in rs], marker="o", label=None if g is None else f"{group}={g}")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    if group:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


PLOT_AXES = {"pfr-bound": ("kl_bits", "mean_bits", None), "conditioning": ("condition", "implicit_bits", None),
             "rate-sweep": ("bpp", "mse", None), "tradeoff": ("tau", "mse", "T_E"),
             "rate-allocation": ("bpp", "mse", "latent_step")}

