"""Overlapping tiles over the latent grid with Gaussian overlap-add merging."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .diffusion import Condition, Rect

MASK_FLOOR = 1e-4


@dataclass(frozen=True)
class TileGrid:
    full_shape: tuple[int, int]
    tile_size: int
    overlap: int
    tiles: tuple[Rect, ...]   # (row, col, height, width), row-major order

    def __len__(self):
        return len(self.tiles)

    def slices(self, i: int) -> tuple[slice, slice]:
        r, c, h, w = self.tiles[i]
        return slice(r, r + h), slice(c, c + w)

    def coverage(self) -> np.ndarray:
        cov = np.zeros(self.full_shape, dtype=np.int64)
        for i in range(len(self.tiles)):
            cov[self.slices(i)] += 1
        return cov


def _axis_origins(n: int, tile: int, overlap: int) -> list[int]:
    if n <= tile:
        return [0]
    stride = tile - overlap
    out = [0]
    while out[-1] + tile < n:
        out.append(min(out[-1] + stride, n - tile))   # last tile shifted inward
    return out


def make_grid(full_shape, tile_size: int, overlap: int) -> TileGrid:
    H, W = (int(v) for v in full_shape)
    if H < 1 or W < 1:
        raise ValueError("grid must be non-empty")
    if not 0 <= overlap < tile_size:
        raise ValueError("need 0 <= overlap < tile_size")
    tiles = []
    for r in _axis_origins(H, tile_size, overlap):
        for c in _axis_origins(W, tile_size, overlap):
            tiles.append((r, c, min(tile_size, H), min(tile_size, W)))
    return TileGrid((H, W), tile_size, overlap, tuple(tiles))


def gaussian_mask(extent, sigma_fraction: float = 0.3) -> np.ndarray:
    """Separable Gaussian centred at ((h-1)/2, (w-1)/2), floored at 1e-4.

    The centre sits between cells for even extents, so the mask is exactly
    symmetric under both flips.
    """
    if not sigma_fraction > 0:
        raise ValueError("sigma_fraction must be positive")
    h, w = extent

    def axis(n):
        i = np.arange(n) - (n - 1) / 2.0
        return np.exp(-(i * i) / (2.0 * (sigma_fraction * n) ** 2))

    return np.maximum(np.outer(axis(h), axis(w)), MASK_FLOOR)


def masks_for(grid: TileGrid, sigma_fraction: float) -> list[np.ndarray]:
    return [gaussian_mask(t[2:], sigma_fraction) for t in grid.tiles]


def weight_sum(grid: TileGrid, masks) -> np.ndarray:
    den = np.zeros(grid.full_shape)
    for i, m in enumerate(masks):
        den[grid.slices(i)] += m
    return den


def merge(tile_outputs, grid: TileGrid, masks) -> np.ndarray:
    """sum_i w_i v_i / sum_i w_i per cell; cells under one tile are copied."""
    if len(tile_outputs) != len(grid.tiles) or len(masks) != len(grid.tiles):
        raise ValueError("need one output and one mask per tile")
    num = np.zeros(grid.full_shape)
    den = np.zeros(grid.full_shape)
    cov = np.zeros(grid.full_shape, dtype=np.int64)
    single = np.zeros(grid.full_shape)
    for i, (v, m) in enumerate(zip(tile_outputs, masks)):
        if v is None:
            raise ValueError(f"missing output for tile {i}")
        v = np.asarray(v, dtype=np.float64).reshape(grid.tiles[i][2:])
        sl = grid.slices(i)
        num[sl] += m * v
        den[sl] += m
        cov[sl] += 1
        single[sl] = v
    out = num / den
    one = cov == 1
    out[one] = single[one]
    return out


def owner_map(grid: TileGrid) -> np.ndarray:
    """Cell -> ordinal of the tile whose centre is nearest (ties: lowest)."""
    H, W = grid.full_shape
    rr, cc = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    best = np.full((H, W), np.inf)
    owner = np.zeros((H, W), dtype=np.int64)
    for i, (r, c, h, w) in enumerate(grid.tiles):
        d = (rr - (r + (h - 1) / 2.0)) ** 2 + (cc - (c + (w - 1) / 2.0)) ** 2
        inside = (rr >= r) & (rr < r + h) & (cc >= c) & (cc < c + w)
        better = inside & (d < best)
        best[better] = d[better]
        owner[better] = i
    return owner


def _intersects(a: Rect, b: Rect) -> bool:
    return a[0] < b[0] + b[2] and b[0] < a[0] + a[2] and a[1] < b[1] + b[3] and b[1] < a[1] + a[3]


def tag_membership(cond: Condition, grid: TileGrid) -> list[list[bool]]:
    """Per tag, which tiles it reaches (tags without a region reach all)."""
    tags = cond.tags or ()
    regions = cond.tag_regions or (None,) * len(tags)
    return [[reg is None or _intersects(reg, t) for t in grid.tiles] for reg in regions]


def partition_condition(cond: Condition, grid: TileGrid, per_tile_tag_cap: int,
                        membership: list[list[bool]] | None = None) -> list[Condition]:
    """One condition per tile: regional tags (capped, input order kept) and the
    latent hint cropped to the blocks the tile touches."""
    if per_tile_tag_cap < 0:
        raise ValueError("tag cap must be >= 0")
    tags = cond.tags or ()
    if membership is None:
        membership = tag_membership(cond, grid)
    out = []
    for i, rect in enumerate(grid.tiles):
        mine = tuple(t for t, mem in zip(tags, membership) if mem[i])[:per_tile_tag_cap]
        kw = dict(tags=mine if cond.tags is not None else None, region=rect, tag_regions=None)
        if cond.latent_hint is not None:
            b = cond.hint_block
            r, c, h, w = rect
            br0, bc0 = r // b - cond.hint_origin[0], c // b - cond.hint_origin[1]
            br1, bc1 = -(-(r + h) // b) - cond.hint_origin[0], -(-(c + w) // b) - cond.hint_origin[1]
            kw["latent_hint"] = cond.latent_hint[br0:br1, bc0:bc1]
            kw["hint_origin"] = (br0 + cond.hint_origin[0], bc0 + cond.hint_origin[1])
        out.append(replace(cond, **kw))
    return out


def predict_tiled(den, x_full: np.ndarray, t: int, conds, grid: TileGrid, masks, sched, threads: int = 1):
    """Merged (eps_hat, Var[x0]) over tiles; Var is None if the denoiser has none."""
    x = np.asarray(x_full, dtype=np.float64).reshape(grid.full_shape)
    has_var = hasattr(den, "predict")

    def run(i):
        xt = x[grid.slices(i)].reshape(-1)
        if has_var:
            return den.predict(xt, t, conds[i], sched)
        return den.predict_noise(xt, t, conds[i], sched), None

    idx = range(len(grid.tiles))
    if threads > 1 and len(grid.tiles) > 1:
        with ThreadPoolExecutor(threads) as ex:
            res = list(ex.map(run, idx))
    else:
        res = [run(i) for i in idx]
    eps = merge([r[0] for r in res], grid, masks).reshape(-1)
    var = merge([r[1] for r in res], grid, masks).reshape(-1) if has_var else None
    return eps, var
