"""Window attention over ``[cls, z]`` and global CLS cross-attention.

Both paths read the same projection set ``wq, wk, wv, wo (+bo)``; the
relative-position table and the three CLS bias scalars only enter window
attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import functional as F
from .errors import ContractError
from .geometry import (
    TokenGrid,
    WindowSet,
    build_shift_mask,
    cyclic_shift,
    cyclic_unshift,
    window_partition,
    window_reverse,
)
from .pnm import write_pgm
from .tensor import Tensor, concat, getitem, matmul, mean, reshape, split, transpose


@dataclass
class ForwardContext:
    """Per-forward knobs: dropout, RNG and attention diagnostics."""

    training: bool = False
    rng: np.random.Generator | None = None
    attn_drop: float = 0.0
    proj_drop: float = 0.0
    diagnostics: bool = False
    maps: "AttnMaps | None" = None
    stage: int = 0
    block: int = 0
    capture_at: tuple | None = None   # (stage, block) to record; None records every block


@dataclass
class AttnMaps:
    """CLS-attention weights of the last executed block (first batch element).

    ``weights`` is [heads, T, grid*grid]: for each head and CLS query, the
    weight placed on every embedded token, indexed by its row-major grid
    position. Rows sum to 1.
    """

    weights: np.ndarray
    grid_side: int
    window: int
    mode: str
    stage: int
    block: int
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# bias tables
# ---------------------------------------------------------------------------

def relative_position_index(window: int) -> np.ndarray:
    """[M, M] index into a ((2w-1)^2)-row bias table for row-major window tokens."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (window - 1)
    return rel[0] * (2 * window - 1) + rel[1]


def cls_position_index(window: int) -> np.ndarray:
    """[M+1, M+1] index; CLS row/column point past the relative table.

    Slot ``base`` is cls->tok, ``base+1`` tok->cls, ``base+2`` cls->cls.
    """
    base = (2 * window - 1) ** 2
    m = window * window
    idx = np.empty((m + 1, m + 1), dtype=np.int64)
    idx[1:, 1:] = relative_position_index(window)
    idx[0, 1:] = base
    idx[1:, 0] = base + 1
    idx[0, 0] = base + 2
    return idx


def window_bias(p: dict, window: int, with_cls: bool) -> Tensor:
    """Gather the additive bias [H, L, L] for one window (L = M or M+1)."""
    if with_cls:
        table = concat([p["rel_bias"], p["cls_bias"]], axis=0)
        idx = cls_position_index(window)
    else:
        table = p["rel_bias"]
        idx = relative_position_index(window)
    return transpose(getitem(table, idx), (2, 0, 1))


# ---------------------------------------------------------------------------
# core attention
# ---------------------------------------------------------------------------

def _split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., L, C] -> [..., H, L, d]."""
    *lead, l, c = x.shape
    x = reshape(x, (*lead, l, heads, c // heads))
    nd = x.ndim
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    """[..., H, L, d] -> [..., L, H*d]."""
    *lead, h, l, d = x.shape
    nd = x.ndim
    axes = list(range(nd - 3)) + [nd - 2, nd - 3, nd - 1]
    return reshape(transpose(x, axes), (*lead, l, h * d))


def _output_projection(x: Tensor, p: dict, ctx: ForwardContext | None) -> Tensor:
    out = F.linear(x, p["wo"], p["bo"])
    if ctx is not None:
        out = F.dropout(out, ctx.proj_drop, ctx.training, ctx.rng)
    return out


def self_attention(x: Tensor, p: dict, heads: int, bias: Tensor | None = None,
                   mask: np.ndarray | None = None, ctx: ForwardContext | None = None):
    """Multi-head self-attention over the second-to-last axis of ``x`` [N, L, C].

    ``mask`` is [T, L, L] and repeats over ``N = b*T``. Returns (output, weights).
    """
    n, l, c = x.shape
    if c % heads:
        raise ContractError(f"dim {c} not divisible by {heads} heads")
    d = c // heads
    q = _split_heads(matmul(x, p["wq"]), heads)
    k = _split_heads(matmul(x, p["wk"]), heads)
    v = _split_heads(matmul(x, p["wv"]), heads)
    logits = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(d))
    if bias is not None:
        logits = logits + bias
    if mask is not None:
        t = mask.shape[0]
        logits = reshape(logits, (n // t, t, heads, l, l))
        logits = F.add_constant(logits, mask[None, :, None].astype(logits.dtype))
        logits = reshape(logits, (n, heads, l, l))
    attn = F.softmax(logits, axis=-1)
    if ctx is not None:
        attn = F.dropout(attn, ctx.attn_drop, ctx.training, ctx.rng)
    out = _merge_heads(matmul(attn, v))
    return _output_projection(out, p, ctx), attn


def w_msa_with_cls(ws: WindowSet, p: dict, norm: dict, heads: int, eps: float = 1e-5,
                   ctx: ForwardContext | None = None) -> WindowSet:
    """Pre-norm residual window attention over ``[cls, z]`` in every window."""
    b, t, c = ws.cls_tokens.shape
    m = ws.tokens_per_window
    if ws.win_tokens.shape != (b * t, m, c):
        raise ContractError(f"window tokens {ws.win_tokens.shape} != ({b * t}, {m}, {c}); sequence must be M+1 with CLS")
    seq = concat([reshape(ws.cls_tokens, (b * t, 1, c)), ws.win_tokens], axis=1)
    h = F.layernorm(seq, norm["gain"], norm["bias"], eps)
    out, _ = self_attention(h, p, heads, window_bias(p, ws.window, with_cls=True), ctx=ctx)
    seq = seq + out
    cls, tok = split(seq, [1, m], axis=1)
    return ws.replace(win_tokens=tok, cls_tokens=reshape(cls, (b, t, c)))


def shifted_window_attention(ws: WindowSet, p: dict, norm: dict, heads: int, offset: int,
                             eps: float = 1e-5, ctx: ForwardContext | None = None) -> WindowSet:
    """Pre-norm residual SW-MSA over embedded tokens (CLS tokens untouched)."""
    b = ws.batch
    h = F.layernorm(ws.win_tokens, norm["gain"], norm["bias"], eps)
    grid = window_reverse(h, b, ws.grid_side, ws.window)
    grid = cyclic_shift(grid, offset)
    windows = window_partition(grid, ws.window)
    mask = build_shift_mask(ws.grid_side, ws.window, offset) if offset else None
    out, _ = self_attention(windows, p, heads, window_bias(p, ws.window, with_cls=False), mask, ctx)
    grid = cyclic_unshift(window_reverse(out, b, ws.grid_side, ws.window), offset)
    return ws.replace(win_tokens=ws.win_tokens + window_partition(grid, ws.window))


def cls_attention(ws: WindowSet, p: dict, norm: dict, heads: int, mode: str = "global",
                  eps: float = 1e-5, ctx: ForwardContext | None = None) -> WindowSet:
    """Cross-attention: the T CLS tokens query the embedded tokens of all windows.

    ``global`` uses one softmax over all T*M keys; ``per-window`` runs a
    softmax inside each window and averages the T per-window outputs.
    No positional bias. Residual on the CLS tokens only.
    """
    b, t, c = ws.cls_tokens.shape
    if t == 0:
        raise ContractError("cls_attention needs at least one window")
    m = ws.tokens_per_window
    d = c // heads
    scale = 1.0 / math.sqrt(d)
    hq = F.layernorm(ws.cls_tokens, norm["gain"], norm["bias"], eps)
    hkv = F.layernorm(reshape(ws.win_tokens, (b, t * m, c)), norm["gain"], norm["bias"], eps)
    q = _split_heads(matmul(hq, p["wq"]), heads)    # [b, H, T, d]
    k = _split_heads(matmul(hkv, p["wk"]), heads)   # [b, H, T*M, d]
    v = _split_heads(matmul(hkv, p["wv"]), heads)

    if mode == "global":
        attn = F.softmax(matmul(q, transpose(k, (0, 1, 3, 2))) * scale, axis=-1)  # [b, H, T, T*M]
        if ctx is not None:
            attn = F.dropout(attn, ctx.attn_drop, ctx.training, ctx.rng)
        out = matmul(attn, v)
    elif mode == "per-window":
        kw = reshape(k, (b, heads, t, m, d))
        vw = reshape(v, (b, heads, t, m, d))
        qw = reshape(q, (b, heads, 1, t, d))
        attn = F.softmax(matmul(qw, transpose(kw, (0, 1, 2, 4, 3))) * scale, axis=-1)  # [b, H, Twin, Tq, M]
        if ctx is not None:
            attn = F.dropout(attn, ctx.attn_drop, ctx.training, ctx.rng)
        out = mean(matmul(attn, vw), axis=2)
    else:
        raise ContractError(f"unknown cls attention mode {mode!r}")

    if ctx is not None and ctx.diagnostics and ctx.capture_at in (None, (ctx.stage, ctx.block)):
        ctx.maps = _capture_maps(attn.data, mode, ws, ctx)
    out = _output_projection(_merge_heads(out), p, ctx)
    return ws.replace(cls_tokens=ws.cls_tokens + out)


def _key_to_grid_index(grid_side: int, window: int) -> np.ndarray:
    """Grid position of key ``t*M + m`` (window t, in-window token m)."""
    n = grid_side // window
    t, m = np.divmod(np.arange(n * n * window * window), window * window)
    ti, tj = np.divmod(t, n)
    mi, mj = np.divmod(m, window)
    return (ti * window + mi) * grid_side + (tj * window + mj)


def _capture_maps(attn: np.ndarray, mode: str, ws: WindowSet, ctx: ForwardContext) -> AttnMaps:
    t, m = ws.num_windows, ws.tokens_per_window
    if mode == "global":
        flat = attn[0]                                   # [H, T, T*M]
    else:
        a = attn[0]                                      # [H, Twin, Tq, M]
        flat = a.transpose(0, 2, 1, 3).reshape(a.shape[0], t, t * m) / t
    weights = np.zeros_like(flat, dtype=np.float64)
    weights[:, :, _key_to_grid_index(ws.grid_side, ws.window)] = flat
    return AttnMaps(weights, ws.grid_side, ws.window, mode, ctx.stage, ctx.block)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def export_attention(maps: AttnMaps | None, out_dir) -> list:
    """Write ``attention.csv`` (head,qi,ki,weight) plus one 8-bit PGM per head.

    The PGM shows the query-averaged weight on each grid cell, scaled so the
    largest cell is 255. Returns the written paths.
    """
    if maps is None:
        raise ContractError("no attention maps recorded; run forward with diagnostics enabled and CLS attention on")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    heads, nq, nk = maps.weights.shape
    csv_path = out / "attention.csv"
    with open(csv_path, "w") as fh:
        fh.write("head,qi,ki,weight\n")
        for h in range(heads):
            for qi in range(nq):
                row = maps.weights[h, qi]
                fh.writelines(f"{h},{qi},{ki},{row[ki]:.9e}\n" for ki in range(nk))
    paths = [csv_path]
    side = maps.grid_side
    for h in range(heads):
        img = maps.weights[h].mean(axis=0).reshape(side, side)
        peak = img.max()
        pix = np.zeros_like(img) if peak <= 0 else np.rint(img / peak * 255.0)
        path = out / f"head{h}.pgm"
        write_pgm(path, pix.astype(np.uint8))
        paths.append(path)
    return paths


def read_attention_csv(path) -> np.ndarray:
    """Load an exported CSV back into a [heads, T, grid*grid] array."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    h, q, k = (int(data[:, i].max()) + 1 for i in range(3))
    out = np.zeros((h, q, k))
    out[data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2].astype(int)] = data[:, 3]
    return out

