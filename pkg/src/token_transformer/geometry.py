"""Token grids, window partitioning, downsampling and cyclic shifts.

Layout conventions (fixed, other modules rely on them):

* a grid of side ``s`` is stored as tokens ``[b, s*s, C]`` in row-major order;
* windows are numbered row-major across the grid, and tokens row-major
  inside each window;
* window tensors are ``[b*T, M, C]`` with the batch index varying slowest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .errors import ConfigError, ContractError
from .tensor import Tensor, expand, reshape, roll, transpose

MASK_VALUE = -1e9


@dataclass
class TokenGrid:
    tokens: Tensor  # [b, side*side, C]
    side: int

    @property
    def batch(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[2]


@dataclass
class WindowSet:
    win_tokens: Tensor  # [b*T, M, C]
    cls_tokens: Tensor  # [b, T, C]
    grid_side: int
    window: int

    @property
    def batch(self) -> int:
        return self.cls_tokens.shape[0]

    @property
    def windows_per_side(self) -> int:
        return self.grid_side // self.window

    @property
    def num_windows(self) -> int:
        return self.windows_per_side ** 2

    @property
    def tokens_per_window(self) -> int:
        return self.window ** 2

    @property
    def dim(self) -> int:
        return self.win_tokens.shape[2]

    def replace(self, win_tokens=None, cls_tokens=None) -> "WindowSet":
        return WindowSet(
            self.win_tokens if win_tokens is None else win_tokens,
            self.cls_tokens if cls_tokens is None else cls_tokens,
            self.grid_side,
            self.window,
        )


def tokens_to_image(tokens: Tensor, side: int) -> Tensor:
    """[b, s*s, C] -> [b, C, s, s]."""
    b, _, c = tokens.shape
    return transpose(reshape(tokens, (b, side, side, c)), (0, 3, 1, 2))


def image_to_tokens(x: Tensor) -> Tensor:
    """[b, C, s, s] -> [b, s*s, C]."""
    b, c, h, w = x.shape
    return reshape(transpose(x, (0, 2, 3, 1)), (b, h * w, c))


def patch_embed(images: Tensor, params: dict, input_size: int, patch_size: int, grid: int,
                eps: float = 1e-5) -> TokenGrid:
    """Patch-``p`` conv stem, adaptive average pool to the stage-1 grid, then LayerNorm."""
    if images.ndim != 4 or images.shape[1] != 3:
        raise ContractError(f"expected images [b, 3, h, w], got {images.shape}")
    if images.shape[2] != input_size or images.shape[3] != input_size:
        raise ContractError(f"expected {input_size}x{input_size} input, got {images.shape[2]}x{images.shape[3]}")
    stem_side = input_size // patch_size
    if stem_side < grid:
        raise ConfigError(f"stem grid {stem_side} is smaller than the stage-1 grid {grid}")
    x = F.conv2d(images, params["proj.weight"], params["proj.bias"], stride=patch_size)
    if stem_side != grid:
        x = F.adaptive_pool(x, grid, grid, "avg")
    tokens = F.layernorm(image_to_tokens(x), params["norm.gain"], params["norm.bias"], eps)
    return TokenGrid(tokens, grid)


def window_partition(grid: TokenGrid, window: int) -> Tensor:
    """[b, s*s, C] -> [b*T, M, C]."""
    s, b, c = grid.side, grid.batch, grid.dim
    if window < 1 or s % window:
        raise ConfigError(f"grid side {s} is not divisible by window {window}")
    n = s // window
    x = reshape(grid.tokens, (b, n, window, n, window, c))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (b * n * n, window * window, c))


def window_reverse(windows: Tensor, batch: int, side: int, window: int) -> TokenGrid:
    """Inverse of :func:`window_partition`."""
    n = side // window
    c = windows.shape[2]
    if windows.shape[:2] != (batch * n * n, window * window):
        raise ContractError(f"window tensor {windows.shape} does not match {batch}x{side}^2 grid, window {window}")
    x = reshape(windows, (batch, n, n, window, window, c))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return TokenGrid(reshape(x, (batch, side * side, c)), side)


def init_cls_tokens(cls_param: Tensor, batch: int, num_windows: int) -> Tensor:
    """Broadcast a learned [1, C] CLS parameter to every window: [b, T, C]."""
    c = cls_param.shape[-1]
    return expand(reshape(cls_param, (1, 1, c)), (batch, num_windows, c))


def make_window_set(grid: TokenGrid, window: int, cls_tokens: Tensor) -> WindowSet:
    ws = WindowSet(window_partition(grid, window), cls_tokens, grid.side, window)
    if cls_tokens.shape != (grid.batch, ws.num_windows, grid.dim):
        raise ContractError(f"cls tokens {cls_tokens.shape} do not match {ws.num_windows} windows of dim {grid.dim}")
    return ws


def window_set_to_grid(ws: WindowSet) -> TokenGrid:
    return window_reverse(ws.win_tokens, ws.batch, ws.grid_side, ws.window)


def downsample(grid: TokenGrid, params: dict, target: int, eps: float = 1e-5) -> TokenGrid:
    """3x3/stride-2/pad-1 conv (C -> C'), adaptive average pool to ``target``, LayerNorm."""
    x = tokens_to_image(grid.tokens, grid.side)
    x = F.conv2d(x, params["conv.weight"], params["conv.bias"], stride=2, padding=1)
    if x.shape[2] != target:
        x = F.adaptive_pool(x, target, target, "avg")
    tokens = F.layernorm(image_to_tokens(x), params["norm.gain"], params["norm.bias"], eps)
    return TokenGrid(tokens, target)


def downsample_conv_side(side: int) -> int:
    return F.conv_output_size(side, 3, 2, 1)


def cyclic_shift(grid: TokenGrid, offset: int) -> TokenGrid:
    """Roll the grid by (-offset, -offset) on the torus."""
    if offset == 0:
        return grid
    b, c = grid.batch, grid.dim
    x = reshape(grid.tokens, (b, grid.side, grid.side, c))
    x = roll(x, (-offset, -offset), (1, 2))
    return TokenGrid(reshape(x, (b, grid.side * grid.side, c)), grid.side)


def cyclic_unshift(grid: TokenGrid, offset: int) -> TokenGrid:
    if offset == 0:
        return grid
    b, c = grid.batch, grid.dim
    x = reshape(grid.tokens, (b, grid.side, grid.side, c))
    x = roll(x, (offset, offset), (1, 2))
    return TokenGrid(reshape(x, (b, grid.side * grid.side, c)), grid.side)


def shift_region_labels(side: int, window: int, offset: int) -> np.ndarray:
    """Region id per cell of the shifted grid; cells from different regions must not attend."""
    if not 0 <= offset < window:
        raise ContractError(f"shift offset {offset} must lie in [0, {window})")
    labels = np.zeros((side, side), dtype=np.int64)
    if offset == 0:
        return labels
    bounds = (slice(0, side - window), slice(side - window, side - offset), slice(side - offset, side))
    n = 0
    for hs in bounds:
        for ws_ in bounds:
            labels[hs, ws_] = n
            n += 1
    return labels


def build_shift_mask(side: int, window: int, offset: int) -> np.ndarray:
    """Additive mask [T, M, M]: 0 within a region, ``MASK_VALUE`` across regions."""
    labels = shift_region_labels(side, window, offset)
    n = side // window
    win = labels.reshape(n, window, n, window).transpose(0, 2, 1, 3).reshape(n * n, window * window)
    same = win[:, :, None] == win[:, None, :]
    return np.where(same, 0.0, MASK_VALUE)
