import numpy as np
import pytest

from conftest import t64
from token_transformer.errors import ContractError
from token_transformer.fim import fim_fuse
from token_transformer.gradcheck import run_suite


def test_tt_t_stage_boundary_shapes(rng):
    old, new = t64(rng.standard_normal((2, 49, 64))), t64(rng.standard_normal((2, 25, 128)))
    out = fim_fuse(old, new, t64(rng.standard_normal((192, 128)) * 0.05))
    assert out.shape == (2, 25, 128)


def test_selecting_projection_returns_new_cls(rng):
    new = rng.standard_normal((1, 4, 3))
    proj = np.vstack([np.zeros((2, 3)), np.eye(3)])
    out = fim_fuse(t64(np.full((1, 9, 2), 7.0)), t64(new), t64(proj))
    np.testing.assert_array_equal(out.numpy(), new)


def test_max_pool_contribution():
    old = t64(np.array([[1.0, 5.0, 3.0, 2.0]]).reshape(1, 4, 1))   # 2x2 grid of one channel
    proj = t64(np.array([[1.0], [0.0]]))                             # keep only the pooled old value
    out = fim_fuse(old, t64(np.zeros((1, 1, 1))), proj)
    assert out.item() == 5.0


def test_zeroed_old_block_is_linear_in_new(rng):
    proj = rng.standard_normal((5, 3))
    proj[:2] = 0
    new = rng.standard_normal((2, 4, 3))
    a = fim_fuse(t64(rng.standard_normal((2, 9, 2))), t64(new), t64(proj)).numpy()
    b = fim_fuse(t64(rng.standard_normal((2, 9, 2))), t64(new), t64(proj)).numpy()
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a, new @ proj[2:], atol=1e-14)


def test_permutation_within_pool_region(rng):
    # 3x3 -> 2x2 adaptive regions are rows/cols {0,1},{1,2}; cell (0,0) lies only in region (0,0)
    old = rng.standard_normal((1, 9, 2))
    proj = t64(rng.standard_normal((4, 2)))
    new = t64(rng.standard_normal((1, 4, 2)))
    base = fim_fuse(t64(old), new, proj).numpy()
    grid = old.reshape(3, 3, 2)
    grid[0, 0], grid[0, 1] = grid[0, 1].copy(), grid[0, 0].copy()   # swap inside shared regions
    grid[1, 0], grid[1, 1] = grid[1, 1].copy(), grid[1, 0].copy()
    swapped = fim_fuse(t64(grid.reshape(1, 9, 2)), new, proj).numpy()
    np.testing.assert_allclose(swapped[0, 0], base[0, 0], atol=1e-14)


def test_gradient_reaches_old_cls(rng):
    old = t64(rng.standard_normal((1, 9, 2)), True)
    out = fim_fuse(old, t64(rng.standard_normal((1, 4, 3))), t64(rng.standard_normal((5, 3))))
    (out * t64(rng.standard_normal(out.shape))).sum().backward()
    assert np.count_nonzero(old.grad) > 0


@pytest.mark.parametrize("old_t,new_t", [(8, 4), (9, 5)])
def test_non_square_counts(rng, old_t, new_t):
    with pytest.raises(ContractError):
        fim_fuse(t64(np.zeros((1, old_t, 2))), t64(np.zeros((1, new_t, 3))), t64(np.zeros((5, 3))))


def test_projection_shape_checked():
    with pytest.raises(ContractError):
        fim_fuse(t64(np.zeros((1, 9, 2))), t64(np.zeros((1, 4, 3))), t64(np.zeros((4, 3))))


def test_fim_gradients():
    for result in run_suite(["fim"]):
        assert result.max_rel_error < 1e-5, result
