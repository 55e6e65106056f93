"""Feature inheritance between stages: old CLS tokens seed the new ones."""

from __future__ import annotations

import math

from . import functional as F
from .errors import ContractError
from .tensor import Tensor, concat, matmul, reshape, transpose


def _side(t: int, which: str) -> int:
    s = math.isqrt(t)
    if s * s != t:
        raise ContractError(f"FIM needs a square window count, {which} has {t}")
    return s


def fim_fuse(old_cls: Tensor, new_cls: Tensor, proj: Tensor) -> Tensor:
    """Pool old CLS tokens onto the new window grid, concat with new, project.

    old_cls [b, T_prev, C_prev] is viewed as [b, C_prev, s, s] (channels
    first, windows row-major) and adaptively max-pooled to the new grid.
    ``proj`` is [C_prev + C_new, C_new] with the old-CLS rows first.
    """
    b, t_prev, c_prev = old_cls.shape
    b2, t_new, c_new = new_cls.shape
    if b != b2:
        raise ContractError(f"batch mismatch: old {b}, new {b2}")
    if proj.shape != (c_prev + c_new, c_new):
        raise ContractError(f"FIM projection {proj.shape} != ({c_prev + c_new}, {c_new})")
    s_prev, s_new = _side(t_prev, "old"), _side(t_new, "new")
    grid = reshape(transpose(old_cls, (0, 2, 1)), (b, c_prev, s_prev, s_prev))
    pooled = F.adaptive_pool(grid, s_new, s_new, "max")
    pooled = transpose(reshape(pooled, (b, c_prev, t_new)), (0, 2, 1))
    fused = concat([pooled, new_cls], axis=-1)
    return matmul(fused, proj)
