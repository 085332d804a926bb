"""DDPM schedules, posteriors and reverse kernels, plus an analytic denoiser.

Timesteps are 1-based: the schedule holds beta_1..beta_T and alpha_bar(0) = 1.
The reverse kernel uses sigma_t^2 = beta_tilde_t, so q and p_theta share a
variance and their KL is a pure mean-shift term.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .gaussian import DiagonalGaussian

# ---------------------------------------------------------------------------
# schedules

SCHEDULE_IDS = {"linear": 0, "linear-scaled": 1, "cosine": 2}
SCHEDULE_NAMES = {v: k for k, v in SCHEDULE_IDS.items()}
DEFAULT_SCHEDULE = "cosine"


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        if b.size < 1:
            raise ValueError("schedule needs at least one step")
        if not np.all((b > 0) & (b < 1)):
            raise ValueError("betas must lie in (0, 1)")
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)
        ab = np.concatenate([[1.0], np.cumprod(1.0 - b)])
        ab.setflags(write=False)
        object.__setattr__(self, "_ab", ab)

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        """alpha_bar_1 .. alpha_bar_T."""
        return self._ab[1:]

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return 1.0 - float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """alpha_bar_t for 0 <= t <= T."""
        return float(self._ab[t])

    def beta_tilde(self, t: int) -> float:
        """Posterior variance of x_{t-1} given x_t, x_0."""
        return (1.0 - self._ab[t - 1]) / (1.0 - self._ab[t]) * float(self.betas[t - 1])

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(np.array([self.beta_tilde(t) for t in range(1, self.T + 1)]))

    @property
    def schedule_id(self) -> int:
        if self.name not in SCHEDULE_IDS:
            raise ValueError(f"schedule {self.name!r} has no registry id")
        return SCHEDULE_IDS[self.name]

    def check_t(self, t: int, lo: int = 1, hi: int | None = None):
        hi = self.T if hi is None else hi
        if not lo <= t <= hi:
            raise ValueError(f"timestep {t} outside [{lo}, {hi}]")


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    return NoiseSchedule(np.linspace(beta_start, beta_end, T), "linear")


def linear_scaled_schedule(T: int) -> NoiseSchedule:
    """Linear betas rescaled by 1000/T so short chains still reach noise."""
    s = 1000.0 / T
    return NoiseSchedule(np.linspace(1e-4 * s, min(0.02 * s, 0.999), T), "linear-scaled")


def cosine_schedule(T: int, s: float = 0.008) -> NoiseSchedule:
    f = np.cos((np.arange(T + 1) / T + s) / (1 + s) * np.pi / 2) ** 2
    ab = f / f[0]
    betas = np.clip(1 - ab[1:] / ab[:-1], 1e-8, 0.999)
    return NoiseSchedule(np.maximum.accumulate(betas), "cosine")


_BUILDERS = {"linear": linear_schedule, "linear-scaled": linear_scaled_schedule, "cosine": cosine_schedule}


def make_schedule(name: str | int, T: int) -> NoiseSchedule:
    if isinstance(name, int):
        if name not in SCHEDULE_NAMES:
            raise ValueError(f"unknown schedule id {name}")
        name = SCHEDULE_NAMES[name]
    if name not in _BUILDERS:
        raise ValueError(f"unknown schedule {name!r}")
    if not 1 <= T <= 4096:
        raise ValueError("T must be in [1, 4096]")
    return _BUILDERS[name](T)


# ---------------------------------------------------------------------------
# closed forms


def forward_marginal(x0, t: int, sched: NoiseSchedule) -> DiagonalGaussian:
    """q(x_t | x_0) = N(sqrt(ab_t) x_0, (1 - ab_t) I)."""
    sched.check_t(t)
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    ab = sched.alpha_bar(t)
    return DiagonalGaussian(math.sqrt(ab) * x0, np.full(x0.size, 1.0 - ab))


def posterior_coefficients(t: int, sched: NoiseSchedule) -> tuple[float, float, float]:
    """(c0, c1, var) with q(x_t | x_{t+1}, x_0) = N(c0 x_0 + c1 x_{t+1}, var)."""
    ab_t, ab_n = sched.alpha_bar(t), sched.alpha_bar(t + 1)
    b = sched.beta(t + 1)
    c0 = math.sqrt(ab_t) * b / (1.0 - ab_n)
    c1 = math.sqrt(1.0 - b) * (1.0 - ab_t) / (1.0 - ab_n)
    return c0, c1, sched.beta_tilde(t + 1)


def posterior(x0, x_next, t: int, sched: NoiseSchedule) -> DiagonalGaussian:
    """q(x_t | x_{t+1}, x_0) for 1 <= t < T."""
    sched.check_t(t, 1, sched.T - 1)
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    x_next = np.asarray(x_next, dtype=np.float64).reshape(-1)
    if x0.shape != x_next.shape:
        raise ValueError("x0 and x_next differ in dimension")
    c0, c1, var = posterior_coefficients(t, sched)
    return DiagonalGaussian(c0 * x0 + c1 * x_next, np.full(x0.size, var))


def reverse_mean(eps, x_next, t: int, sched: NoiseSchedule) -> np.ndarray:
    b = sched.beta(t + 1)
    return (x_next - b / math.sqrt(1.0 - sched.alpha_bar(t + 1)) * eps) / math.sqrt(1.0 - b)


def x0_from_eps(x_t, eps, t: int, sched: NoiseSchedule) -> np.ndarray:
    ab = sched.alpha_bar(t)
    return (x_t - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)


# ---------------------------------------------------------------------------
# conditioning and denoisers

Rect = tuple[int, int, int, int]  # (row, col, height, width)


@dataclass(frozen=True)
class Condition:
    """Explicit side information visible to the reverse kernel.

    `latent_hint` is the dequantized block-average grid; `hint_origin` is its
    offset in block units when it has been cropped to a tile.  `region`
    restricts the denoiser to a window of the full latent grid.
    """

    tags: tuple[int, ...] | None = None
    latent_hint: np.ndarray | None = None
    hint_block: int = 4
    hint_origin: tuple[int, int] = (0, 0)
    hint_noise_var: float = 0.0
    region: Rect | None = None
    tag_regions: tuple[Rect | None, ...] | None = None

    def __post_init__(self):
        if self.tags is not None:
            object.__setattr__(self, "tags", tuple(int(t) for t in self.tags))
            if self.tag_regions is not None and len(self.tag_regions) != len(self.tags):
                raise ValueError("one region (or None) per tag")
        if self.latent_hint is not None:
            h = np.array(self.latent_hint, dtype=np.float64)
            if h.ndim != 2:
                raise ValueError("latent hint must be a 2-D block grid")
            h.setflags(write=False)
            object.__setattr__(self, "latent_hint", h)

    def check_tags(self, n_vocab: int):
        for t in self.tags or ():
            if not 0 <= t < n_vocab:
                raise ValueError(f"tag index {t} outside [0, {n_vocab})")


class Denoiser(Protocol):
    def predict_noise(self, x_t: np.ndarray, t: int, cond: Condition, sched: NoiseSchedule) -> np.ndarray:
        ...


class ZeroDenoiser:
    def predict_noise(self, x_t, t, cond, sched):
        return np.zeros_like(np.asarray(x_t, dtype=np.float64))


def reverse_kernel(den: Denoiser, x_next, t: int, cond: Condition, sched: NoiseSchedule) -> DiagonalGaussian:
    """p_theta(x_t | x_{t+1}, cond) for 1 <= t < T."""
    sched.check_t(t, 1, sched.T - 1)
    x_next = np.asarray(x_next, dtype=np.float64).reshape(-1)
    eps = np.asarray(den.predict_noise(x_next, t + 1, cond, sched), dtype=np.float64).reshape(-1)
    if eps.shape != x_next.shape:
        raise ValueError("denoiser changed the dimension")
    return DiagonalGaussian(reverse_mean(eps, x_next, t, sched), np.full(x_next.size, sched.beta_tilde(t + 1)))


@dataclass(frozen=True)
class MixtureModel:
    """Isotropic Gaussian mixture over a latent grid: sum_k w_k N(mu_k, s^2 I).

    `tag_components[i]` lists the components tag i points at.
    """

    component_means: np.ndarray
    component_weights: np.ndarray
    observation_variance: float
    shape: tuple[int, int]
    tag_components: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        mu = np.array(self.component_means, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[None, :]
        w = np.array(self.component_weights, dtype=np.float64).reshape(-1)
        if mu.shape[0] < 1 or w.size != mu.shape[0]:
            raise ValueError("one weight per component, at least one component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        if not self.observation_variance > 0:
            raise ValueError("observation variance must be positive")
        h, wd = self.shape
        if mu.shape[1] != h * wd:
            raise ValueError(f"means have {mu.shape[1]} cells, shape {self.shape} needs {h * wd}")
        for comps in self.tag_components:
            if any(not 0 <= c < mu.shape[0] for c in comps):
                raise ValueError("tag maps to a missing component")
        mu.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "component_means", mu)
        object.__setattr__(self, "component_weights", w)
        object.__setattr__(self, "shape", (int(h), int(wd)))
        object.__setattr__(self, "tag_components", tuple(tuple(int(c) for c in t) for t in self.tag_components))

    @property
    def K(self) -> int:
        return self.component_means.shape[0]

    @property
    def dim(self) -> int:
        return self.component_means.shape[1]

    def content_hash(self) -> int:
        h = hashlib.blake2b(digest_size=8, person=b"dualrcc-mix")
        h.update(np.ascontiguousarray(self.component_means).tobytes())
        h.update(np.ascontiguousarray(self.component_weights).tobytes())
        h.update(np.float64(self.observation_variance).tobytes())
        h.update(np.array(self.shape, dtype="<i8").tobytes())
        h.update(repr(self.tag_components).encode())
        return int.from_bytes(h.digest(), "little")

    def log_prior(self, cond: Condition | None) -> np.ndarray:
        """Component log-weights after tag conditioning (renormalised)."""
        w = self.component_weights
        if cond is not None and cond.tags:
            sel = set()
            for t in cond.tags:
                if t < len(self.tag_components):
                    sel.update(self.tag_components[t])
            if sel:
                mask = np.zeros(self.K, dtype=bool)
                mask[list(sel)] = True
                if w[mask].sum() > 0:
                    w = np.where(mask, w, 0.0)
        with np.errstate(divide="ignore"):
            return np.log(w / w.sum())

    def sample(self, rng: np.random.Generator, n: int = 1, component=None):
        """(samples (n, dim), component labels)."""
        k = rng.choice(self.K, size=n, p=self.component_weights) if component is None else np.full(n, component)
        x = self.component_means[k] + math.sqrt(self.observation_variance) * rng.standard_normal((n, self.dim))
        return x, k


@dataclass
class _RegionPlan:
    idx: np.ndarray          # flat indices of region cells in the full grid
    assign: np.ndarray | None  # (n_region, J) block membership of region cells
    block_size: np.ndarray | None
    out_sum: np.ndarray | None  # (K, J) sum of component means over out-of-region cells
    n_out: np.ndarray | None
    hint_flat: np.ndarray | None


class MixtureDenoiser:
    """Exact posterior-mean denoiser for a MixtureModel.

    Tags reweight components; a latent hint adds Gaussian observations of
    block averages (quantization error modelled as noise of variance
    `hint_noise_var`).  Calls are pure: the plan cache only memoises
    geometry.
    """

    def __init__(self, model: MixtureModel):
        self.model = model
        self._plans: dict = {}

    def _plan(self, cond: Condition) -> _RegionPlan:
        m = self.model
        H, W = m.shape
        region = cond.region or (0, 0, H, W)
        hint = cond.latent_hint
        hkey = None if hint is None else (hint.shape, cond.hint_block, cond.hint_origin)
        key = (region, hkey)
        plan = self._plans.get(key)
        if plan is None:
            r0, c0, h, w = region
            if not (0 <= r0 and 0 <= c0 and h > 0 and w > 0 and r0 + h <= H and c0 + w <= W):
                raise ValueError(f"region {region} outside the {H}x{W} grid")
            rows, cols = np.meshgrid(np.arange(r0, r0 + h), np.arange(c0, c0 + w), indexing="ij")
            idx = (rows * W + cols).reshape(-1)
            plan = _RegionPlan(idx, None, None, None, None, None)
            if hint is not None:
                b = cond.hint_block
                br0, bc0 = cond.hint_origin
                hb, wb = hint.shape
                J = hb * wb
                allr, allc = np.divmod(np.arange(H * W), W)
                blk_r = allr // b - br0
                blk_c = allc // b - bc0
                valid = (blk_r >= 0) & (blk_r < hb) & (blk_c >= 0) & (blk_c < wb)
                if not np.all(valid[idx]):
                    raise ValueError("latent hint does not cover the region")
                blk = np.where(valid, blk_r * wb + blk_c, -1)
                inreg = np.zeros(H * W, dtype=bool)
                inreg[idx] = True
                assign = np.zeros((idx.size, J))
                assign[np.arange(idx.size), blk[idx]] = 1.0
                out = valid & ~inreg
                out_assign = np.zeros((H * W, J))
                out_assign[np.nonzero(out)[0], blk[out]] = 1.0
                plan.assign = assign
                plan.block_size = np.bincount(blk[valid], minlength=J).astype(np.float64)
                plan.out_sum = m.component_means @ out_assign
                plan.n_out = out_assign.sum(axis=0)
            self._plans[key] = plan
        return plan

    def posterior_stats(self, x_t, t: int, cond: Condition | None, sched: NoiseSchedule):
        """(E[x0 | x_t, cond], Var[x0 | x_t, cond] per cell, responsibilities).

        t = 0 is not allowed; pass t > T semantics via `prior_stats` instead.
        """
        cond = cond or Condition()
        m = self.model
        plan = self._plan(cond)
        x = np.asarray(x_t, dtype=np.float64).reshape(-1)
        if x.size != plan.idx.size:
            raise ValueError(f"x_t has {x.size} cells, region needs {plan.idx.size}")
        ab = sched.alpha_bar(t)
        s2 = m.observation_variance
        mu = m.component_means[:, plan.idx]
        lam = ab / (1.0 - ab)
        v1 = 1.0 / (1.0 / s2 + lam)
        m1 = v1 * (mu / s2 + math.sqrt(ab) / (1.0 - ab) * x)
        r = x - math.sqrt(ab) * mu
        ll = -0.5 * np.sum(r * r, axis=1) / (ab * s2 + 1.0 - ab)
        v = np.full(x.size, v1)
        if cond.latent_hint is not None:
            y = cond.latent_hint.reshape(-1)
            bs = plan.block_size
            used = bs > 0
            n_in = bs - plan.n_out
            my = (m1 @ plan.assign + plan.out_sum) / np.where(used, bs, 1.0)
            vy = (n_in * v1 + plan.n_out * s2) / np.where(used, bs * bs, 1.0) + cond.hint_noise_var
            vy = np.where(used, vy, 1.0)
            resid = np.where(used, y - my, 0.0)
            ll = ll - 0.5 * np.sum(resid * resid / vy, axis=1)
            gain = (v1 / np.where(used, bs, 1.0)) / vy      # per block
            m1 = m1 + (resid * gain) @ plan.assign.T
            v = v1 - (gain * v1 / np.where(used, bs, 1.0)) @ plan.assign.T
        logits = ll + m.log_prior(cond)
        logits -= logits.max()
        resp = np.exp(logits)
        resp /= resp.sum()
        mean = resp @ m1
        second = resp @ (m1 * m1)
        var = np.maximum(v + second - mean * mean, 0.0)
        return mean, var, resp

    def prior_stats(self, cond: Condition | None):
        """Mean and per-cell variance of x0 under the (tag-reweighted) prior."""
        cond = cond or Condition()
        plan = self._plan(cond)
        w = np.exp(self.model.log_prior(cond))
        mu = self.model.component_means[:, plan.idx]
        mean = w @ mu
        return mean, self.model.observation_variance + w @ (mu * mu) - mean * mean

    def predict(self, x_t, t: int, cond: Condition | None, sched: NoiseSchedule):
        """(eps_hat, Var[x0 | x_t, cond])."""
        x = np.asarray(x_t, dtype=np.float64).reshape(-1)
        mean, var, _ = self.posterior_stats(x, t, cond, sched)
        ab = sched.alpha_bar(t)
        return (x - math.sqrt(ab) * mean) / math.sqrt(1.0 - ab), var

    def predict_noise(self, x_t, t: int, cond: Condition | None, sched: NoiseSchedule):
        return self.predict(x_t, t, cond, sched)[0]


def mixture_predict_noise(m: MixtureModel, x_t, t: int, cond: Condition | None, sched: NoiseSchedule) -> np.ndarray:
    return MixtureDenoiser(m).predict_noise(x_t, t, cond, sched)


def responsibilities(m: MixtureModel, x_t, t: int, cond: Condition | None, sched: NoiseSchedule) -> np.ndarray:
    return MixtureDenoiser(m).posterior_stats(x_t, t, cond, sched)[2]
