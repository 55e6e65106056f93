"""Exact parameter counts and analytic FLOP counts per layer.

FLOP conventions (also printed in every report header):

* matmul / conv multiply-add = 2 FLOPs; bias add, residual add, scale and
  mask add = 1 FLOP per output element;
* LayerNorm and softmax = 5 FLOPs per element; GELU = 8 per element;
* pooling = 1 per input element visited, plus 1 divide per output for
  average pooling;
* reshapes, transposes, gathers and broadcasts are free.

The formulas mirror the op sequence of the forward pass, so an instrumented
forward (:class:`~token_transformer.tensor.FlopCounter`) reproduces them
exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

from .config import ModelConfig
from .functional import adaptive_pool_flops, conv_output_size
from .model import TtModel, param_specs
from .tensor import FlopCounter, no_grad

CONVENTIONS = (
    "multiply-add=2 FLOPs; bias/residual/scale/mask=1 per element; "
    "layernorm=5, softmax=5, gelu=8 per element; pooling=1 per visited element (+1 divide per avg output); "
    "stem and classifier head included"
)


@dataclass
class LayerCost:
    name: str
    params: int = 0
    flops: int = 0


@dataclass
class CostReport:
    config: str
    input_size: int
    batch: int
    layers: list = field(default_factory=list)
    conventions: str = CONVENTIONS
    with_flops: bool = True

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.layers)

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.layers)

    def layer(self, name: str) -> LayerCost:
        for r in self.layers:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config: {self.config}  input: {self.input_size}x{self.input_size}  batch: {self.batch}\n")
        if self.with_flops:
            buf.write(f"# conventions: {self.conventions}\n")
        width = max([len(r.name) for r in self.layers] + [5])
        flops_head = f"  {'flops':>16}" if self.with_flops else ""
        buf.write(f"{'layer':<{width}}  {'params':>12}{flops_head}\n")
        for r in [*self.layers, LayerCost("total", self.total_params, self.total_flops)]:
            flops = f"  {r.flops:>16,d}" if self.with_flops else ""
            buf.write(f"{r.name:<{width}}  {r.params:>12,d}{flops}\n")
        buf.write(f"# total params: {self.total_params / 1e6:.2f}M")
        if self.with_flops:
            buf.write(f"  total FLOPs: {self.total_flops / 1e9:.3f}G")
        buf.write("\n")
        return buf.getvalue()

    def to_csv(self) -> str:
        rows = [*self.layers, LayerCost("total", self.total_params, self.total_flops)]
        if self.with_flops:
            lines = ["layer,params,flops"] + [f"{r.name},{r.params},{r.flops}" for r in rows]
        else:
            lines = ["layer,params"] + [f"{r.name},{r.params}" for r in rows]
        return "\n".join(lines) + "\n"


def _layer_of(param_name: str) -> str:
    if param_name.endswith(".cls_token"):
        return param_name
    return param_name.rsplit(".", 1)[0]


def count_params(source: TtModel | ModelConfig) -> CostReport:
    """Exact parameter counts grouped by layer (parameter name minus its leaf)."""
    if isinstance(source, TtModel):
        cfg = source.cfg
        items = [(n, t.size) for n, t in source.params.items()]
    else:
        cfg = source
        items = [(s.name, s.size) for s in param_specs(cfg)]
    rows: dict = {}
    for name, size in items:
        layer = _layer_of(name)
        rows.setdefault(layer, LayerCost(layer)).params += size
    return CostReport(cfg.name, cfg.input_size, 1, list(rows.values()), with_flops=False)


# ---------------------------------------------------------------------------
# per-op formulas
# ---------------------------------------------------------------------------

def w_msa_flops(n_windows: int, seq: int, dim: int, heads: int, masked: bool = False) -> int:
    """Window self-attention over ``n_windows`` sequences of length ``seq`` (incl. pre-norm and residual)."""
    n, l, c, h = n_windows, seq, dim, heads
    f = 5 * n * l * c                 # layernorm
    f += 3 * 2 * n * l * c * c        # q, k, v
    f += 2 * n * l * l * c            # q k^T
    f += 2 * n * h * l * l            # scale + bias
    if masked:
        f += n * h * l * l
    f += 5 * n * h * l * l            # softmax
    f += 2 * n * l * l * c            # attn v
    f += 2 * n * l * c * c + n * l * c  # output projection + bias
    f += n * l * c                    # residual
    return f


def cls_attention_flops(batch: int, windows: int, tokens: int, dim: int, heads: int, mode: str = "global") -> int:
    b, t, m, c, h = batch, windows, tokens, dim, heads
    keys = t * m
    f = 5 * b * t * c + 5 * b * keys * c          # layernorms on queries and keys
    f += 2 * b * t * c * c                          # q
    f += 2 * 2 * b * keys * c * c                   # k, v
    f += 2 * b * t * keys * c                       # q k^T
    f += b * h * t * keys                           # scale
    f += 5 * b * h * t * keys                       # softmax
    f += 2 * b * t * keys * c                       # attn v
    if mode == "per-window":
        f += b * t * t * c + b * t * c              # mean over windows
    f += 2 * b * t * c * c + b * t * c              # output projection + bias
    f += b * t * c                                  # residual
    return f


def ffn_flops(n_tokens: int, dim: int, hidden: int) -> int:
    """Pre-norm FFN / fused SCFFN over ``n_tokens`` tokens (identical counts)."""
    n, c, r = n_tokens, dim, hidden
    return 5 * n * c + 2 * n * c * r + n * r + 8 * n * r + 2 * n * r * c + n * c + n * c


def token_mix_flops(n_sets: int, n_tok: int, dim: int) -> int:
    """Literal-SCFFN token mixing: LN over tokens, kernel-1 conv across them, residual."""
    return 5 * n_sets * n_tok * dim + 2 * n_sets * dim * n_tok * n_tok + n_sets * n_tok * dim + n_sets * n_tok * dim


def conv_flops(batch: int, cin: int, cout: int, k: int, out_side: int, bias: bool = True) -> int:
    out = batch * cout * out_side * out_side
    return 2 * out * cin * k * k + (out if bias else 0)


def matmul_flops(m: int, k: int, n: int) -> int:
    return 2 * m * k * n


def _ffn_path_flops(cfg: ModelConfig, kind: str, n_sets: int, n_tok: int, dim: int) -> int:
    f = ffn_flops(n_sets * n_tok, dim, cfg.hidden_dim(dim))
    if kind == "scffn" and cfg.scffn_variant == "literal":
        f += token_mix_flops(n_sets, n_tok, dim)
    return f


def block_flops(cfg: ModelConfig, stage: int, batch: int = 1) -> dict:
    """FLOPs of one block by sub-layer name (attn, long_range, ffn)."""
    s = cfg.stages[stage]
    b, t, m, c, h = batch, s.num_windows, s.tokens_per_window, s.dim, s.heads
    out = {"attn": w_msa_flops(b * t, m + 1, c, h)}
    if cfg.long_range == "cls":
        out["cls_attn"] = cls_attention_flops(b, t, m, c, h, cfg.cls_attention_mode)
    elif cfg.long_range == "shift":
        out["shift_attn"] = w_msa_flops(b * t, m, c, h, masked=cfg.shift_offset(stage) > 0)
    out["ffn"] = _ffn_path_flops(cfg, cfg.ffn_embed, b * t, m, c) + _ffn_path_flops(cfg, cfg.ffn_cls, b, t, c)
    return out


def count_flops(cfg: ModelConfig, input_size: int | None = None, batch: int = 1) -> CostReport:
    """Analytic FLOPs of one forward pass, merged with exact parameter counts."""
    input_size = input_size or cfg.input_size
    if input_size != cfg.input_size:
        cfg = cfg.with_(input_size=input_size).validate()
    report = count_params(cfg)
    report.batch = batch
    report.with_flops = True
    rows = {r.name: r for r in report.layers}

    def put(name: str, flops: int):
        rows.setdefault(name, LayerCost(name)).flops += flops

    b = batch
    s0 = cfg.stages[0]
    g0 = cfg.stem_grid
    put("stem.proj", conv_flops(b, 3, s0.dim, cfg.patch_size, g0))
    if g0 != s0.grid:
        put("stem.pool", adaptive_pool_flops(b * s0.dim, g0, g0, s0.grid, s0.grid, "avg"))
    put("stem.norm", 5 * b * s0.grid ** 2 * s0.dim)

    for i, s in enumerate(cfg.stages):
        pre = f"stages.{i}"
        if i > 0:
            prev = cfg.stages[i - 1]
            o = conv_output_size(prev.grid, 3, 2, 1)
            put(f"{pre}.downsample.conv", conv_flops(b, prev.dim, s.dim, 3, o))
            if o != s.grid:
                put(f"{pre}.downsample.pool", adaptive_pool_flops(b * s.dim, o, o, s.grid, s.grid, "avg"))
            put(f"{pre}.downsample.norm", 5 * b * s.grid ** 2 * s.dim)
            if cfg.use_fim:
                sp, sn = prev.windows_per_side, s.windows_per_side
                put(f"{pre}.fim", adaptive_pool_flops(b * prev.dim, sp, sp, sn, sn, "max")
                    + 2 * b * s.num_windows * (prev.dim + s.dim) * s.dim)
        for j in range(s.depth):
            for part, f in block_flops(cfg, i, b).items():
                put(f"{pre}.blocks.{j}.{part}", f)

    last = cfg.stages[-1]
    n_feat = last.grid ** 2 if cfg.head == "tokens" else last.num_windows
    put("head.norm", 5 * b * n_feat * last.dim + b * n_feat * last.dim + b * last.dim)  # norm + mean
    put("head.fc", matmul_flops(b, last.dim, cfg.num_classes) + b * cfg.num_classes)
    report.layers = list(rows.values())
    return report


def measure_flops(model: TtModel, images) -> int:
    """FLOPs actually executed by one instrumented forward (no graph recorded)."""
    with no_grad(), FlopCounter() as counter:
        model(images)
    return counter.total
