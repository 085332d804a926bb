import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualrcc.diffusion import Condition
from dualrcc.tiling import (MASK_FLOOR, gaussian_mask, make_grid, masks_for, merge, owner_map, partition_condition,
                            tag_membership, weight_sum)

from oracles import merge_oracle


class TestGrid:
    def test_single_tile(self):
        for ov in (0, 10, 63):
            assert make_grid((64, 64), 64, ov).tiles == ((0, 0, 64, 64),)

    def test_two_by_one(self):
        g = make_grid((96, 64), 64, 32)
        assert [t[:2] for t in g.tiles] == [(0, 0), (32, 0)]

    @given(st.integers(1, 80), st.integers(1, 80), st.integers(1, 40), st.data())
    def test_coverage(self, H, W, tile, data):
        ov = data.draw(st.integers(0, tile - 1))
        g = make_grid((H, W), tile, ov)
        assert g.coverage().min() >= 1
        for r, c, h, w in g.tiles:
            assert r + h <= H and c + w <= W

    def test_bad_overlap(self):
        with pytest.raises(ValueError):
            make_grid((10, 10), 4, 4)


class TestMask:
    @pytest.mark.parametrize("ext", [(1, 1), (4, 4), (5, 7), (16, 16), (9, 2)])
    def test_properties(self, ext):
        m = gaussian_mask(ext, 0.3)
        assert m.min() >= MASK_FLOOR
        assert np.array_equal(m, m[::-1, :]) and np.array_equal(m, m[:, ::-1])
        c = ((ext[0] - 1) // 2, (ext[1] - 1) // 2)
        assert m[c] == m.max()

    def test_floor(self):
        assert gaussian_mask((64, 64), 0.05).min() == MASK_FLOOR


class TestMerge:
    @given(st.integers(4, 40), st.integers(4, 40), st.integers(2, 16), st.data())
    def test_constant_field(self, H, W, tile, data):
        ov = data.draw(st.integers(0, tile - 1))
        c = data.draw(st.floats(-1e3, 1e3))
        g = make_grid((H, W), tile, ov)
        masks = masks_for(g, 0.3)
        out = merge([np.full(t[2:], c) for t in g.tiles], g, masks)
        assert np.max(np.abs(out - c)) <= 1e-12 * max(1.0, abs(c))

    def test_weights_normalise(self):
        g = make_grid((30, 22), 8, 3)
        masks = masks_for(g, 0.3)
        den = weight_sum(g, masks)
        w = [m / den[g.slices(i)] for i, m in enumerate(masks)]
        tot = np.zeros(g.full_shape)
        for i, wi in enumerate(w):
            tot[g.slices(i)] += wi
        assert np.max(np.abs(tot - 1)) < 1e-15 * 4

    def test_single_tile_identity(self, rng):
        g = make_grid((6, 6), 8, 2)
        v = rng.normal(size=(6, 6))
        assert merge([v], g, masks_for(g, 0.3)).tobytes() == v.tobytes()

    def test_two_tiles_against_oracle(self, rng):
        g = make_grid((12, 8), 8, 4)
        assert len(g) == 2
        masks = masks_for(g, 0.3)
        vals = [rng.normal(size=t[2:]) for t in g.tiles]
        assert np.allclose(merge(vals, g, masks), merge_oracle(vals, g.tiles, masks, g.full_shape), atol=1e-14)

    def test_random_against_oracle(self, rng):
        g = make_grid((19, 23), 7, 3)
        masks = masks_for(g, 0.25)
        vals = [rng.normal(size=t[2:]) for t in g.tiles]
        assert np.allclose(merge(vals, g, masks), merge_oracle(vals, g.tiles, masks, g.full_shape), atol=1e-13)

    def test_owner_map_inside_owner(self):
        g = make_grid((20, 20), 8, 4)
        own = owner_map(g)
        for (i, j), o in np.ndenumerate(own):
            r, c, h, w = g.tiles[o]
            assert r <= i < r + h and c <= j < c + w


class TestPartition:
    def test_one_tile_identity(self):
        g = make_grid((8, 8), 16, 4)
        out = partition_condition(Condition(tags=(3, 1, 2)), g, 2)
        assert out[0].tags == (3, 1)

    def test_cap_zero(self):
        g = make_grid((16, 16), 8, 4)
        assert all(c.tags == () for c in partition_condition(Condition(tags=(1, 2)), g, 0))

    def test_disjoint_regions(self):
        g = make_grid((8, 16), 8, 0)
        cond = Condition(tags=(5, 9), tag_regions=((0, 0, 8, 8), (0, 8, 8, 8)))
        out = partition_condition(cond, g, 255)
        assert [c.tags for c in out] == [(5,), (9,)]
        assert tag_membership(cond, g) == [[True, False], [False, True]]

    def test_hint_cropped(self):
        g = make_grid((16, 16), 8, 4)
        hint = np.arange(16.0).reshape(4, 4)
        out = partition_condition(Condition(latent_hint=hint), g, 255)
        r, c, h, w = g.tiles[1]
        assert out[1].hint_origin == (r // 4, c // 4)
        assert np.array_equal(out[1].latent_hint, hint[r // 4:-(-(r + h) // 4), c // 4:-(-(c + w) // 4)])
