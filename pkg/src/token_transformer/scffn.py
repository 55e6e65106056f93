"""Spatial-Channel feed-forward network.

``fused`` keeps a conventional FFN's parameter budget: the second
projection is a 1x1 convolution over the tokens laid out on their square
grid. ``literal`` follows the two-residual form: an MLP sub-block, then a
kernel-1 convolution that mixes along the (transposed) token axis.
"""

from __future__ import annotations

import math

from . import functional as F
from .errors import ContractError
from .tensor import Tensor, reshape, transpose


def grid_side(n_tok: int, where: str = "tokens") -> int:
    side = math.isqrt(n_tok)
    if side * side != n_tok:
        raise ContractError(f"SCFFN needs a square token count, got {n_tok} ({where})")
    return side


def ffn_forward(x: Tensor, p: dict, eps: float = 1e-5) -> Tensor:
    """Conventional pre-norm FFN ``x + fc2(gelu(fc1(LN(x))))``.

    Works with either weight layout: the fused variant's 1x1 conv kernel is
    used as the fc2 matrix.
    """
    h = F.gelu(F.linear(F.layernorm(x, p["norm.gain"], p["norm.bias"], eps), p["fc1.weight"], p["fc1.bias"]))
    if "conv.weight" in p:
        w = p["conv.weight"]
        w2 = transpose(reshape(w, (w.shape[0], w.shape[1])), (1, 0))
        return x + F.linear(h, w2, p["conv.bias"])
    return x + F.linear(h, p["fc2.weight"], p["fc2.bias"])


def scffn_forward(x: Tensor, p: dict, variant: str = "fused", token_set: str = "embed",
                  eps: float = 1e-5) -> Tensor:
    """Apply SCFFN to ``x`` [N, n_tok, C] where each row of tokens forms a square grid.

    ``token_set`` names which token-mixing parameters the literal variant
    uses (``embed`` for window tokens, ``cls`` for the CLS grid).
    """
    n, n_tok, c = x.shape
    side = grid_side(n_tok, token_set)
    if variant == "fused":
        h = F.layernorm(x, p["norm.gain"], p["norm.bias"], eps)
        h = F.gelu(F.linear(h, p["fc1.weight"], p["fc1.bias"]))          # [N, n, rC]
        r = h.shape[2]
        img = transpose(reshape(h, (n, side, side, r)), (0, 3, 1, 2))   # [N, rC, s, s]
        img = F.conv2d(img, p["conv.weight"], p["conv.bias"])           # [N, C, s, s]
        return x + reshape(transpose(img, (0, 2, 3, 1)), (n, n_tok, c))
    if variant == "literal":
        x = ffn_forward(x, p, eps)
        mix = f"tokmix_{token_set}"
        if f"{mix}.conv.weight" not in p:
            raise ContractError(f"literal SCFFN has no token-mixing weights for '{token_set}'")
        k = p[f"{mix}.conv.weight"].shape[0]
        if k != n_tok:
            raise ContractError(f"literal SCFFN token mixer sized for {k} tokens, got {n_tok} ({token_set})")
        t = transpose(x, (0, 2, 1))                                      # [N, C, n]
        t = F.layernorm(t, p[f"{mix}.norm.gain"], p[f"{mix}.norm.bias"], eps)
        # kernel-1 conv with the n token rows as channels and C as length
        t = reshape(transpose(t, (0, 2, 1)), (n, n_tok, c, 1))
        t = F.conv2d(t, p[f"{mix}.conv.weight"], p[f"{mix}.conv.bias"])
        return x + reshape(t, (n, n_tok, c))
    raise ContractError(f"unknown SCFFN variant {variant!r}")


def param_shapes(dim: int, hidden: int, variant: str, token_counts: dict | None = None) -> dict:
    """Local parameter names -> shapes for one block's feed-forward network."""
    shapes = {
        "norm.gain": (dim,),
        "norm.bias": (dim,),
        "fc1.weight": (dim, hidden),
        "fc1.bias": (hidden,),
    }
    if variant == "fused":
        shapes["conv.weight"] = (dim, hidden, 1, 1)
        shapes["conv.bias"] = (dim,)
    elif variant == "literal":
        shapes["fc2.weight"] = (hidden, dim)
        shapes["fc2.bias"] = (dim,)
        for name, n in (token_counts or {}).items():
            shapes[f"tokmix_{name}.norm.gain"] = (n,)
            shapes[f"tokmix_{name}.norm.bias"] = (n,)
            shapes[f"tokmix_{name}.conv.weight"] = (n, n, 1, 1)
            shapes[f"tokmix_{name}.conv.bias"] = (n,)
    else:
        raise ContractError(f"unknown SCFFN variant {variant!r}")
    return shapes
