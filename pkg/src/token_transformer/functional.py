"""Neural-network kernels with hand-written backward rules."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError
from .tensor import Tensor, add, make_result, matmul

_GELU_C = math.sqrt(2.0 / math.pi)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight (+ bias)`` with ``weight`` laid out as [in, out]."""
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), backward, "softmax", flops=5 * y.size)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return make_result(y, (x,), backward, "log_softmax", flops=5 * y.size)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits`` [b, K]."""
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    b = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(b), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(b), labels] -= 1.0
        return (p * (g / b),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy", flops=5 * logits.size)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-channel gain and bias."""
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise DimensionError(f"layernorm: gain {gain.shape}/bias {bias.shape} vs last dim {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead) if gain.requires_grad else None
        dbias = g.sum(axis=lead) if bias.requires_grad else None
        dx = None
        if x.requires_grad:
            gx = g * gain.data
            dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return make_result(y, (x, gain, bias), backward, "layernorm", flops=5 * y.size)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return make_result(y, (x,), backward, "gelu", flops=8 * y.size)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. Identity when ``p == 0`` or not training."""
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability {p} outside [0, 1)")
    if rng is None:
        raise ContractError("dropout in training mode needs an explicit generator")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def backward(g):
        return (g * mask,)

    return make_result(x.data * mask, (x,), backward, "dropout", flops=x.size)


def add_constant(x: Tensor, c: np.ndarray) -> Tensor:
    """Add a non-differentiable array (e.g. an attention mask)."""

    def backward(g):
        return (g,)

    return make_result(x.data + c, (x,), backward, "add_constant", flops=x.size)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _pad_hw(a: np.ndarray, padding: int, value=0.0) -> np.ndarray:
    if padding == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation via im2col.

    x: [b, cin, h, w]; weight: [cout, cin, kh, kw]; returns [b, cout, oh, ow].
    """
    b, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise DimensionError(f"conv2d: input has {cin} channels, weight expects {cin_w}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)

    xp = _pad_hw(x.data, padding)
    # [b, cin, oh, ow, kh, kw] -> [b, oh, ow, cin, kh, kw]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * oh * ow, cin * kh * kw)
    wmat = np.ascontiguousarray(weight.data.reshape(cout, -1).T)
    out = cols @ wmat
    if bias is not None:
        out = out + bias.data
    y = np.ascontiguousarray(out.reshape(b, oh, ow, cout).transpose(0, 3, 1, 2))

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(b * oh * ow, cout)
        dw = (cols.T @ gm).T.reshape(weight.shape) if weight.requires_grad else None
        db = gm.sum(axis=0) if bias is not None and bias.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (gm @ wmat.T).reshape(b, oh, ow, cin, kh, kw)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        return (dx, dw, db) if bias is not None else (dx, dw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    flops = 2 * y.size * cin * kh * kw + (y.size if bias is not None else 0)
    return make_result(y, parents, backward, "conv2d", flops=flops)


def maxpool2d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Max pooling; padded cells never win (they hold -inf)."""
    b, c, h, w = x.shape
    oh = conv_output_size(h, kernel, stride, padding)
    ow = conv_output_size(w, kernel, stride, padding)
    if oh < 1 or ow < 1:
        raise DimensionError(f"maxpool2d: output extent {oh}x{ow} < 1")
    xp = _pad_hw(x.data, padding, value=-np.inf)
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(b, c, oh, ow, kernel * kernel)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        di, dj = np.divmod(arg, kernel)
        rows = np.arange(oh)[:, None] * stride + di
        cols = np.arange(ow)[None, :] * stride + dj
        bi, ci = np.meshgrid(np.arange(b), np.arange(c), indexing="ij")
        np.add.at(dxp, (bi[:, :, None, None], ci[:, :, None, None], rows, cols), g)
        return (dxp[:, :, padding:padding + h, padding:padding + w],)

    return make_result(np.ascontiguousarray(y), (x,), backward, "maxpool2d", flops=y.size * kernel * kernel)


def adaptive_regions(size: int, out: int) -> list:
    """Start/end of each adaptive pooling region (floor/ceil partition)."""
    return [((i * size) // out, -((-(i + 1) * size) // out)) for i in range(out)]


def adaptive_pool_flops(planes: int, h: int, w: int, out_h: int, out_w: int, mode: str) -> int:
    """One op per region element visited, plus a divide per output for averages."""
    rows = sum(e - s for s, e in adaptive_regions(h, out_h))
    cols = sum(e - s for s, e in adaptive_regions(w, out_w))
    return planes * (rows * cols + (out_h * out_w if mode == "avg" else 0))


def _avg_matrix(size: int, out: int, dtype) -> np.ndarray:
    m = np.zeros((out, size), dtype=dtype)
    for i, (s, e) in enumerate(adaptive_regions(size, out)):
        m[i, s:e] = 1.0 / (e - s)
    return m


def adaptive_pool(x: Tensor, out_h: int, out_w: int, mode: str = "avg") -> Tensor:
    """Pool [b, c, h, w] to exactly [b, c, out_h, out_w].

    Regions follow the floor/ceil partition, so they may overlap when
    shrinking by a non-integer factor and repeat cells when growing.
    """
    b, c, h, w = x.shape
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"adaptive_pool: output extent {out_h}x{out_w} < 1")
    if mode == "avg":
        ph = _avg_matrix(h, out_h, x.dtype)
        pw = _avg_matrix(w, out_w, x.dtype)
        y = ph @ x.data @ pw.T

        def backward(g):
            return (ph.T @ g @ pw,)

        return make_result(y, (x,), backward, "adaptive_avg_pool", flops=adaptive_pool_flops(b * c, h, w, out_h, out_w, "avg"))
    if mode != "max":
        raise ContractError(f"adaptive_pool mode must be 'max' or 'avg', got {mode!r}")

    rows = adaptive_regions(h, out_h)
    cols = adaptive_regions(w, out_w)
    y = np.empty((b, c, out_h, out_w), dtype=x.dtype)
    src = np.empty((out_h, out_w, b, c, 2), dtype=np.intp)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            block = x.data[:, :, r0:r1, c0:c1].reshape(b, c, -1)
            k = block.argmax(axis=-1)
            y[:, :, i, j] = np.take_along_axis(block, k[..., None], axis=-1)[..., 0]
            src[i, j, :, :, 0] = r0 + k // (c1 - c0)
            src[i, j, :, :, 1] = c0 + k % (c1 - c0)

    def backward(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        bi, ci = np.meshgrid(np.arange(b), np.arange(c), indexing="ij")
        for i in range(out_h):
            for j in range(out_w):
                np.add.at(dx, (bi, ci, src[i, j, :, :, 0], src[i, j, :, :, 1]), g[:, :, i, j])
        return (dx,)

    return make_result(y, (x,), backward, "adaptive_max_pool", flops=adaptive_pool_flops(b * c, h, w, out_h, out_w, "max"))
