"""Token Transformer assembly: parameter layout, initialization and forward."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import functional as F
from . import scffn as scffn_mod
from .attention import ForwardContext, cls_attention, shifted_window_attention, w_msa_with_cls
from .config import ModelConfig
from .errors import ConfigError, ContractError
from .fim import fim_fuse
from .geometry import (
    WindowSet,
    downsample,
    init_cls_tokens,
    make_window_set,
    patch_embed,
    window_set_to_grid,
)
from .tensor import Tensor, get_default_dtype

TRUNC, ONES, ZEROS = "trunc_normal", "ones", "zeros"
INIT_STD = 0.02


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    init: str

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def _norm(prefix: str, dim: int) -> list:
    return [ParamSpec(f"{prefix}.gain", (dim,), ONES), ParamSpec(f"{prefix}.bias", (dim,), ZEROS)]


def _init_kind(local: str) -> str:
    if local.endswith(".gain"):
        return ONES
    if local.endswith("bias") and not local.endswith(("rel_bias", "cls_bias")):
        return ZEROS
    return TRUNC


def block_param_specs(cfg: ModelConfig, stage: int, prefix: str) -> list:
    s = cfg.stages[stage]
    c, h, w = s.dim, s.heads, s.window
    specs = _norm(f"{prefix}.norm1", c)
    for m in ("wq", "wk", "wv", "wo"):
        specs.append(ParamSpec(f"{prefix}.attn.{m}", (c, c), TRUNC))
    specs += [
        ParamSpec(f"{prefix}.attn.bo", (c,), ZEROS),
        ParamSpec(f"{prefix}.attn.rel_bias", ((2 * w - 1) ** 2, h), TRUNC),
        ParamSpec(f"{prefix}.attn.cls_bias", (3, h), TRUNC),
    ]
    if cfg.long_range != "none":
        specs += _norm(f"{prefix}.norm2", c)
    token_counts = {}
    if cfg.scffn_variant == "literal":
        if cfg.ffn_embed == "scffn":
            token_counts["embed"] = s.tokens_per_window
        if cfg.ffn_cls == "scffn":
            token_counts["cls"] = s.num_windows
    for local, shape in scffn_mod.param_shapes(c, cfg.hidden_dim(c), cfg.scffn_variant, token_counts).items():
        specs.append(ParamSpec(f"{prefix}.ffn.{local}", shape, _init_kind(local)))
    return specs


def param_specs(cfg: ModelConfig) -> list:
    """Every parameter of the model, in a stable order, without allocating."""
    cfg.validate()
    c1 = cfg.stages[0].dim
    p = cfg.patch_size
    specs = [
        ParamSpec("stem.proj.weight", (c1, 3, p, p), TRUNC),
        ParamSpec("stem.proj.bias", (c1,), ZEROS),
        *_norm("stem.norm", c1),
    ]
    for i, s in enumerate(cfg.stages):
        pre = f"stages.{i}"
        if i > 0:
            c_prev = cfg.stages[i - 1].dim
            specs += [
                ParamSpec(f"{pre}.downsample.conv.weight", (s.dim, c_prev, 3, 3), TRUNC),
                ParamSpec(f"{pre}.downsample.conv.bias", (s.dim,), ZEROS),
                *_norm(f"{pre}.downsample.norm", s.dim),
            ]
        specs.append(ParamSpec(f"{pre}.cls_token", (1, s.dim), TRUNC))
        if i > 0 and cfg.use_fim:
            specs.append(ParamSpec(f"{pre}.fim.proj", (cfg.stages[i - 1].dim + s.dim, s.dim), TRUNC))
        for j in range(s.depth):
            specs += block_param_specs(cfg, i, f"{pre}.blocks.{j}")
    c_last = cfg.stages[-1].dim
    specs += [
        *_norm("head.norm", c_last),
        ParamSpec("head.fc.weight", (c_last, cfg.num_classes), TRUNC),
        ParamSpec("head.fc.bias", (cfg.num_classes,), ZEROS),
    ]
    return specs


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) resampled until every value lies within ``bound`` std."""
    x = rng.standard_normal(shape)
    bad = np.abs(x) > bound
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > bound
    return x * std


def sub(params: dict, prefix: str) -> dict:
    """View of ``params`` under ``prefix.`` with the prefix stripped."""
    pre = prefix + "."
    n = len(pre)
    return {k[n:]: v for k, v in params.items() if k.startswith(pre)}


class TtModel:
    """A built Token Transformer: a config plus named parameter tensors."""

    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params

    def named_parameters(self):
        return list(self.params.items())

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def __call__(self, images, ctx: ForwardContext | None = None) -> Tensor:
        return forward(self, images, ctx)


def build(cfg: ModelConfig, seed: int = 0, dtype=None) -> TtModel:
    """Allocate and initialize every parameter; deterministic in ``seed``."""
    specs = param_specs(cfg)
    dtype = np.dtype(dtype or get_default_dtype())
    rng = np.random.default_rng(seed)
    params = {}
    for spec in specs:
        if spec.init == TRUNC:
            data = trunc_normal(rng, spec.shape)
        elif spec.init == ONES:
            data = np.ones(spec.shape)
        else:
            data = np.zeros(spec.shape)
        params[spec.name] = Tensor(data.astype(dtype), requires_grad=True)
    return TtModel(cfg, params)


def from_arrays(cfg: ModelConfig, arrays: dict) -> TtModel:
    """Wrap existing arrays (e.g. from a checkpoint), validating names and shapes."""
    specs = param_specs(cfg)
    expected = {s.name: s.shape for s in specs}
    missing = [n for n in expected if n not in arrays]
    extra = [n for n in arrays if n not in expected]
    wrong = [f"{n}: {arrays[n].shape} != {expected[n]}" for n in expected if n in arrays and arrays[n].shape != expected[n]]
    if missing or extra or wrong:
        raise ContractError(f"parameter mismatch; missing={missing[:5]} extra={extra[:5]} shape={wrong[:5]}")
    return TtModel(cfg, {s.name: Tensor(arrays[s.name], requires_grad=True) for s in specs})


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _apply_ffn(x: Tensor, ffn: dict, kind: str, cfg: ModelConfig, token_set: str) -> Tensor:
    if kind == "scffn":
        return scffn_mod.scffn_forward(x, ffn, cfg.scffn_variant, token_set, cfg.ln_eps)
    return scffn_mod.ffn_forward(x, ffn, cfg.ln_eps)


def block_forward(ws: WindowSet, bp: dict, cfg: ModelConfig, stage: int,
                  ctx: ForwardContext | None = None) -> WindowSet:
    """One token-transformer block: window attention, long-range step, feed-forward."""
    s = cfg.stages[stage]
    eps = cfg.ln_eps
    attn = sub(bp, "attn")
    ws = w_msa_with_cls(ws, attn, sub(bp, "norm1"), s.heads, eps, ctx)
    if cfg.long_range == "cls":
        ws = cls_attention(ws, attn, sub(bp, "norm2"), s.heads, cfg.cls_attention_mode, eps, ctx)
    elif cfg.long_range == "shift":
        ws = shifted_window_attention(ws, attn, sub(bp, "norm2"), s.heads, cfg.shift_offset(stage), eps, ctx)
    ffn = sub(bp, "ffn")
    tok = _apply_ffn(ws.win_tokens, ffn, cfg.ffn_embed, cfg, "embed")
    cls = _apply_ffn(ws.cls_tokens, ffn, cfg.ffn_cls, cfg, "cls")
    return ws.replace(win_tokens=tok, cls_tokens=cls)


def forward(model: TtModel, images, ctx: ForwardContext | None = None, trace: list | None = None) -> Tensor:
    """images [b, 3, h, w] -> logits [b, num_classes]."""
    cfg, p = model.cfg, model.params
    if not isinstance(images, Tensor):
        images = Tensor(np.asarray(images, dtype=next(iter(p.values())).dtype))
    if ctx is None:
        ctx = ForwardContext(attn_drop=cfg.attn_drop, proj_drop=cfg.proj_drop)
    grid = patch_embed(images, sub(p, "stem"), cfg.input_size, cfg.patch_size, cfg.stages[0].grid, cfg.ln_eps)
    b = grid.batch
    cls = None
    for i, s in enumerate(cfg.stages):
        pre = f"stages.{i}"
        if i > 0:
            grid = downsample(grid, sub(p, f"{pre}.downsample"), s.grid, cfg.ln_eps)
        new_cls = init_cls_tokens(p[f"{pre}.cls_token"], b, s.num_windows)
        if i > 0 and cfg.use_fim:
            new_cls = fim_fuse(cls, new_cls, p[f"{pre}.fim.proj"])
        ws = make_window_set(grid, s.window, new_cls)
        if trace is not None:
            trace.append({"stage": i, "grid": ws.grid_side, "window": ws.window, "num_windows": ws.num_windows,
                          "dim": ws.dim, "cls_shape": tuple(ws.cls_tokens.shape)})
        for j in range(s.depth):
            ctx.stage, ctx.block = i, j
            ws = block_forward(ws, sub(p, f"{pre}.blocks.{j}"), cfg, i, ctx)
        grid = window_set_to_grid(ws)
        cls = ws.cls_tokens
    feats = grid.tokens if cfg.head == "tokens" else cls
    feats = F.layernorm(feats, p["head.norm.gain"], p["head.norm.bias"], cfg.ln_eps).mean(axis=1)
    return F.linear(feats, p["head.fc.weight"], p["head.fc.bias"])


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

LONG_RANGE_FACTORS = {"cls": "cls", "shift": "shift"}
FIM_FACTORS = {"fim": True, "no-fim": False}
FFN_FACTORS = {f"{a}/{b}": (a, b) for a, b in itertools.product(("ffn", "scffn"), repeat=2)}


def ablation_variant(cfg: ModelConfig, name: str) -> ModelConfig:
    """Apply '+'-joined factors, e.g. ``shift+no-fim+ffn/scffn`` (CLS kind / embedded kind)."""
    changes = {}
    for factor in name.lower().split("+"):
        if factor in LONG_RANGE_FACTORS:
            changes["long_range"] = LONG_RANGE_FACTORS[factor]
        elif factor in FIM_FACTORS:
            changes["use_fim"] = FIM_FACTORS[factor]
        elif factor in FFN_FACTORS:
            changes["ffn_cls"], changes["ffn_embed"] = FFN_FACTORS[factor]
        else:
            valid = list(LONG_RANGE_FACTORS) + list(FIM_FACTORS) + list(FFN_FACTORS)
            raise ConfigError(f"unknown ablation factor {factor!r}; valid factors: {', '.join(valid)}")
    return cfg.with_(name=f"{cfg.name}[{name.lower()}]", **changes).validate()


def ablation_variants(cfg: ModelConfig) -> dict:
    """Full grid: {cls, shift} x {fim, no-fim} x the four feed-forward assignments."""
    out = {}
    for lr, fim, ffn in itertools.product(LONG_RANGE_FACTORS, FIM_FACTORS, FFN_FACTORS):
        name = f"{lr}+{fim}+{ffn}"
        out[name] = ablation_variant(cfg, name)
    return out
