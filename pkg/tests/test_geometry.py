import numpy as np
import pytest

from conftest import t64
from token_transformer import geometry as G
from token_transformer.config import PRESETS, preset
from token_transformer.errors import ConfigError, ContractError
from token_transformer.geometry import TokenGrid
from token_transformer.model import build, forward, sub
from token_transformer.tensor import Tensor, no_grad


def stem_params(rng, c, p):
    return {"proj.weight": t64(rng.standard_normal((c, 3, p, p)) * 0.1), "proj.bias": t64(np.zeros(c)),
            "norm.gain": t64(np.ones(c)), "norm.bias": t64(np.zeros(c))}


class TestPatchEmbed:
    def test_tt_t_stem_pools_56_to_49(self, rng):
        grid = G.patch_embed(Tensor(rng.random((1, 3, 224, 224))), stem_params(rng, 64, 4), 224, 4, 49)
        assert (grid.side, grid.dim, grid.tokens.shape) == (49, 64, (1, 2401, 64))

    def test_nano_stem(self, rng):
        grid = G.patch_embed(Tensor(rng.random((2, 3, 32, 32))), stem_params(rng, 16, 4), 32, 4, 8)
        assert grid.tokens.shape == (2, 64, 16)

    def test_constant_image_gives_identical_tokens(self, rng):
        grid = G.patch_embed(t64(np.full((1, 3, 32, 32), 0.3)), stem_params(rng, 16, 4), 32, 4, 8)
        tok = grid.tokens.numpy()[0]
        np.testing.assert_allclose(tok, np.broadcast_to(tok[0], tok.shape), atol=1e-12)

    def test_too_small_input(self, rng):
        with pytest.raises(ConfigError):
            G.patch_embed(Tensor(rng.random((1, 3, 16, 16))), stem_params(rng, 16, 4), 16, 4, 8)

    def test_wrong_size(self, rng):
        with pytest.raises(ContractError):
            G.patch_embed(Tensor(rng.random((1, 3, 30, 30))), stem_params(rng, 16, 4), 32, 4, 8)


class TestWindows:
    def test_table_geometry(self):
        grid = TokenGrid(Tensor(np.zeros((1, 49 * 49, 2))), 49)
        w = G.window_partition(grid, 7)
        assert w.shape == (49, 49, 2)

    def test_single_window(self, rng):
        x = rng.standard_normal((2, 16, 3))
        w = G.window_partition(TokenGrid(t64(x), 4), 4)
        np.testing.assert_array_equal(w.numpy(), x)

    @pytest.mark.parametrize("side,win", [(4, 2), (6, 3), (8, 4), (9, 3)])
    def test_partition_bijection(self, rng, side, win):
        x = rng.standard_normal((3, side * side, 5))
        w = G.window_partition(TokenGrid(t64(x), side), win)
        back = G.window_reverse(w, 3, side, win).tokens.numpy()
        np.testing.assert_array_equal(back, x)
        # every token lands exactly once
        assert sorted(w.numpy().reshape(-1).tolist()) == sorted(x.reshape(-1).tolist())

    def test_row_major_layout(self):
        x = np.arange(16.0).reshape(1, 16, 1)
        w = G.window_partition(TokenGrid(t64(x), 4), 2).numpy()[:, :, 0]
        np.testing.assert_array_equal(w, [[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]])

    def test_indivisible_grid(self):
        with pytest.raises(ConfigError):
            G.window_partition(TokenGrid(Tensor(np.zeros((1, 25, 1))), 5), 2)


class TestClsInit:
    def test_shape_and_broadcast(self, rng):
        cls = G.init_cls_tokens(t64(rng.standard_normal((1, 64))), 2, 49)
        assert cls.shape == (2, 49, 64)
        np.testing.assert_array_equal(cls.numpy()[1, 30], cls.numpy()[0, 0])

    def test_gradient_reaches_cls_parameter(self, rng):
        param = t64(rng.standard_normal((1, 4)), True)
        cls = G.init_cls_tokens(param, 2, 9)
        (cls * t64(rng.standard_normal((2, 9, 4)))).sum().backward()
        assert np.abs(param.grad).sum() > 0


class TestDownsample:
    @pytest.mark.parametrize("name", ["tt-t", "tt-s", "tt-b"])
    def test_chain_matches_stage_grids(self, name, rng):
        cfg = PRESETS[name]
        for prev, nxt in zip(cfg.stages, cfg.stages[1:]):
            params = {"conv.weight": Tensor(rng.standard_normal((4, 2, 3, 3))), "conv.bias": Tensor(np.zeros(4)),
                      "norm.gain": Tensor(np.ones(4)), "norm.bias": Tensor(np.zeros(4))}
            g = G.downsample(TokenGrid(Tensor(rng.standard_normal((1, prev.grid ** 2, 2))), prev.grid), params,
                             nxt.grid)
            assert g.side == nxt.grid and g.dim == 4

    def test_conv_extents(self):
        assert [G.downsample_conv_side(s) for s in (49, 25, 16)] == [25, 13, 8]

    def test_built_tt_t_stage_chain(self):
        trace = []
        model = build(preset("tt-t"))
        with no_grad():
            forward(model, np.zeros((1, 3, 224, 224), dtype=np.float32), trace=trace)
        chain = [(s["grid"], s["window"], s["num_windows"]) for s in trace]
        assert chain == [(49, 7, 49), (25, 5, 25), (16, 4, 16), (9, 3, 9)]
        assert [s["cls_shape"] for s in trace] == [(1, 49, 64), (1, 25, 128), (1, 16, 256), (1, 9, 512)]


class TestShift:
    def test_zero_offset(self, rng):
        grid = TokenGrid(t64(rng.standard_normal((1, 36, 2))), 6)
        assert G.cyclic_shift(grid, 0) is grid
        assert (G.build_shift_mask(6, 3, 0) == 0).all()

    def test_shift_unshift_identity(self, rng):
        x = rng.standard_normal((2, 36, 3))
        back = G.cyclic_unshift(G.cyclic_shift(TokenGrid(t64(x), 6), 1), 1).tokens.numpy()
        np.testing.assert_array_equal(back, x)

    def test_torus_roll_direction(self):
        x = np.arange(9.0).reshape(1, 9, 1)
        out = G.cyclic_shift(TokenGrid(t64(x), 3), 1).tokens.numpy().reshape(3, 3)
        np.testing.assert_array_equal(out, np.roll(np.arange(9.0).reshape(3, 3), (-1, -1), (0, 1)))

    def test_mask_structure(self):
        mask = G.build_shift_mask(6, 3, 1)
        assert mask.shape == (4, 9, 9)
        assert (mask[0] == 0).all()            # top-left window lies inside one region
        assert (mask[3] < 0).any()             # bottom-right window mixes four regions
        np.testing.assert_array_equal(mask, mask.transpose(0, 2, 1))

    def test_offset_range(self):
        with pytest.raises(ContractError):
            G.build_shift_mask(6, 3, 3)


def test_sub_strips_prefix():
    assert sub({"a.b.c": 1, "a.d": 2, "x.b": 3}, "a") == {"b.c": 1, "d": 2}
