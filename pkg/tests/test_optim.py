import math

import numpy as np
import pytest

from token_transformer.optim import AdamW, CosineSchedule, decays
from token_transformer.tensor import Tensor


def _param(value, name="w"):
    p = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
    return name, p


def _quadratic_grad(p):
    p.zero_grad()
    ((p * p) * 0.5).sum().backward()     # grad = p


def test_single_step_closed_form():
    lr, wd, b1, b2, eps = 0.1, 0.01, 0.9, 0.999, 1e-8
    name, p = _param([[3.0]])
    opt = AdamW([(name, p)], lr=lr, weight_decay=wd, betas=(b1, b2), eps=eps)
    _quadratic_grad(p)
    opt.step()
    g = 3.0
    m_hat = (1 - b1) * g / (1 - b1)
    v_hat = (1 - b2) * g * g / (1 - b2)
    expected = 3.0 * (1 - lr * wd) - lr * m_hat / (math.sqrt(v_hat) + eps)
    assert p.data[0, 0] == pytest.approx(expected, abs=1e-7)


def test_two_steps_match_reference_loop():
    lr, wd, b1, b2, eps = 0.05, 0.1, 0.9, 0.999, 1e-8
    x = np.array([[1.5, -2.0], [0.3, 4.0]])
    name, p = _param(x.copy())
    opt = AdamW([(name, p)], lr=lr, weight_decay=wd)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t in (1, 2):
        g = x.copy()
        _quadratic_grad(p)
        opt.step()
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x * (1 - lr * wd) - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    np.testing.assert_allclose(p.data, x, atol=1e-12)


def test_zero_lr_leaves_params_unchanged():
    name, p = _param([[1.0, 2.0]])
    opt = AdamW([(name, p)], lr=0.0, weight_decay=0.5)
    _quadratic_grad(p)
    opt.step()
    assert p.data.tolist() == [[1.0, 2.0]]


def test_no_decay_for_vectors_and_special_tables():
    assert decays("stages.0.blocks.0.attn.wq", (4, 4))
    assert not decays("stages.0.blocks.0.attn.bo", (4,))
    assert not decays("stages.0.cls_token", (1, 4))
    assert not decays("stages.0.blocks.0.attn.rel_bias", (9, 2))
    assert not decays("stages.0.blocks.0.attn.cls_bias", (3, 2))


def test_decay_only_touches_matrices():
    # zero gradient: the Adam term vanishes, leaving decay alone
    w, b = _param([[2.0]], "fc.weight"), _param([2.0], "fc.bias")
    opt = AdamW([w, b], lr=0.1, weight_decay=0.5)
    for _, p in (w, b):
        p.grad = np.zeros_like(p.data)
    opt.step()
    assert w[1].data[0, 0] == pytest.approx(2.0 * (1 - 0.05))
    assert b[1].data[0] == 2.0


def test_params_without_grad_are_skipped():
    name, p = _param([1.0])
    opt = AdamW([(name, p)], lr=1.0)
    opt.step()
    assert p.data.tolist() == [1.0] and opt.state.step == 1


def test_schedule_warmup_then_cosine():
    s = CosineSchedule.with_warmup_fraction(1.0, 100, 0.1)
    assert s.warmup_steps == 10
    assert s(0) == pytest.approx(0.1) and s(9) == pytest.approx(1.0)
    assert s(10) == pytest.approx(1.0)
    assert s(55) == pytest.approx(0.5)
    assert s(100) == pytest.approx(0.0, abs=1e-12)
    lrs = [s(i) for i in range(10, 101)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_schedule_min_lr():
    assert CosineSchedule(1.0, 10, 0, min_lr=0.1)(10) == pytest.approx(0.1)
