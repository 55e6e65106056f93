import numpy as np
import pytest

from conftest import t64
from token_transformer import functional as F
from token_transformer.errors import DimensionError
from token_transformer.tensor import Tensor


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(F.softmax(t64([0.0, 0.0, 0.0])).numpy(), [1 / 3] * 3)

    def test_large_magnitudes(self):
        np.testing.assert_array_equal(F.softmax(t64([1000.0, 1000.0])).numpy(), [0.5, 0.5])

    def test_formula_oracle(self, rng):
        x = rng.standard_normal(5)
        out = F.softmax(t64(x)).numpy()
        assert abs(out.sum() - 1) < 1e-6
        np.testing.assert_allclose(out, np.exp(x) / np.exp(x).sum(), rtol=1e-12)

    def test_nonnegative_rows_sum_to_one(self, rng):
        out = F.softmax(Tensor(rng.standard_normal((4, 7)) * 30), axis=0).numpy()
        assert (out >= 0).all()
        np.testing.assert_allclose(out.sum(axis=0), 1, atol=1e-6)

    def test_cross_entropy_matches_log_softmax(self, rng):
        logits = rng.standard_normal((4, 3))
        labels = np.array([0, 2, 1, 1])
        lsm = F.log_softmax(t64(logits)).numpy()
        expected = -lsm[np.arange(4), labels].mean()
        assert F.cross_entropy(t64(logits), labels).item() == pytest.approx(expected, rel=1e-12)


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        out = F.layernorm(t64(np.full((1, 4), 3.0)), t64(np.ones(4)), t64(np.zeros(4)))
        np.testing.assert_allclose(out.numpy(), 0, atol=1e-12)

    def test_unit_moments(self):
        out = F.layernorm(t64([[1.0, 2.0, 3.0]]), t64(np.ones(3)), t64(np.zeros(3))).numpy()
        assert abs(out.mean()) < 1e-6
        assert abs(out.var() - 1) < 1e-4  # eps=1e-5 on a variance of 2/3

    def test_formula_oracle(self, rng):
        x, g, b = rng.standard_normal((3, 6)), rng.standard_normal(6), rng.standard_normal(6)
        mu = x.mean(-1, keepdims=True)
        var = ((x - mu) ** 2).mean(-1, keepdims=True)
        expected = (x - mu) / np.sqrt(var + 1e-5) * g + b
        np.testing.assert_allclose(F.layernorm(t64(x), t64(g), t64(b)).numpy(), expected, atol=1e-6)


class TestElementwise:
    def test_gelu_zero(self):
        assert F.gelu(t64([0.0])).item() == 0.0

    def test_dropout_identity_at_zero(self, rng):
        x = rng.standard_normal((3, 3))
        np.testing.assert_array_equal(F.dropout(t64(x), 0.0, True, rng).numpy(), x)
        np.testing.assert_array_equal(F.dropout(t64(x), 0.5, False, rng).numpy(), x)

    def test_dropout_deterministic_under_seed(self, rng):
        x = t64(rng.standard_normal((8, 8)))
        a = F.dropout(x, 0.5, True, np.random.default_rng(7)).numpy()
        b = F.dropout(x, 0.5, True, np.random.default_rng(7)).numpy()
        np.testing.assert_array_equal(a, b)


class TestConv:
    def test_identity_1x1(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        w = np.eye(3).reshape(3, 3, 1, 1)
        np.testing.assert_array_equal(F.conv2d(t64(x), t64(w)).numpy(), x)

    def test_1x1_equals_per_position_linear(self, rng):
        x, w, b = rng.standard_normal((2, 5, 3, 3)), rng.standard_normal((4, 5, 1, 1)), rng.standard_normal(4)
        conv = F.conv2d(t64(x), t64(w), t64(b)).numpy()
        rows = x.transpose(0, 2, 3, 1).reshape(-1, 5)            # one row per position
        lin = (rows @ w[:, :, 0, 0].T + b).reshape(2, 3, 3, 4).transpose(0, 3, 1, 2)
        np.testing.assert_array_equal(conv, lin)

    def test_direct_loop_oracle(self, rng):
        x, w = rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3))
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((1, 3, 3, 3))
        for o in range(3):
            for i in range(3):
                for j in range(3):
                    ref[0, o, i, j] = (xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum()
        np.testing.assert_allclose(F.conv2d(t64(x), t64(w), stride=2, padding=1).numpy(), ref, atol=1e-12)

    def test_extent_49_to_25(self):
        out = F.conv2d(Tensor(np.zeros((1, 1, 49, 49))), Tensor(np.zeros((1, 1, 3, 3))), stride=2, padding=1)
        assert out.shape[2:] == (25, 25)

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            F.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


class TestPooling:
    def test_maxpool_2x2(self):
        assert F.maxpool2d(t64([[[[1.0, 2.0], [3.0, 4.0]]]]), 2, 2).numpy().item() == 4.0

    def test_maxpool_extent_and_padding_excluded(self):
        x = -np.ones((1, 1, 7, 7))
        out = F.maxpool2d(t64(x), 3, 2, 1).numpy()
        assert out.shape[2:] == (4, 4)
        np.testing.assert_array_equal(out, -1.0)  # zero padding would have produced 0

    def test_adaptive_max_region_scan_oracle(self, rng):
        x = rng.standard_normal((1, 2, 7, 7))
        # plant each region's maximum at its bottom-right corner
        regions = F.adaptive_regions(7, 5)
        for (r0, r1) in regions:
            for (c0, c1) in regions:
                x[:, :, r1 - 1, c1 - 1] = 10.0 + r0 + 0.1 * c0
        ref = np.empty((1, 2, 5, 5))
        for i, (r0, r1) in enumerate(regions):
            for j, (c0, c1) in enumerate(regions):
                ref[:, :, i, j] = x[:, :, r0:r1, c0:c1].max(axis=(2, 3))
        np.testing.assert_array_equal(F.adaptive_pool(t64(x), 5, 5, "max").numpy(), ref)

    def test_adaptive_avg_region_scan_oracle(self, rng):
        x = rng.standard_normal((2, 1, 56, 56))
        regions = F.adaptive_regions(56, 49)
        ref = np.array([[x[:, 0, r0:r1, c0:c1].mean(axis=(1, 2)) for (c0, c1) in regions] for (r0, r1) in regions])
        np.testing.assert_allclose(F.adaptive_pool(t64(x), 49, 49, "avg").numpy()[:, 0], ref.transpose(2, 0, 1),
                                   atol=1e-12)

    def test_adaptive_identity_when_same_size(self, rng):
        x = rng.standard_normal((1, 3, 4, 4))
        np.testing.assert_allclose(F.adaptive_pool(t64(x), 4, 4, "avg").numpy(), x, atol=1e-15)
