"""Model configuration, presets and the JSON config-file format."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .errors import ConfigError

SCFFN_VARIANTS = ("fused", "literal")
CLS_MODES = ("global", "per-window")
LONG_RANGE = ("cls", "shift", "none")
FFN_KINDS = ("scffn", "ffn")
HEADS = ("tokens", "cls")


@dataclass(frozen=True)
class StageConfig:
    grid: int      # token-grid side
    window: int    # window side
    dim: int
    depth: int
    heads: int

    @property
    def windows_per_side(self) -> int:
        return self.grid // self.window

    @property
    def num_windows(self) -> int:
        return self.windows_per_side ** 2

    @property
    def tokens_per_window(self) -> int:
        return self.window ** 2


@dataclass(frozen=True)
class ModelConfig:
    name: str
    input_size: int
    stages: tuple
    num_classes: int = 1000
    patch_size: int = 4
    mlp_ratio: float = 4.0
    scffn_variant: str = "fused"
    cls_attention_mode: str = "global"
    long_range: str = "cls"           # cls attention, shifted windows, or neither
    use_fim: bool = True
    ffn_cls: str = "scffn"
    ffn_embed: str = "scffn"
    head: str = "tokens"
    attn_drop: float = 0.0
    proj_drop: float = 0.0
    ln_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(
            s if isinstance(s, StageConfig) else StageConfig(**s) for s in self.stages
        ))

    def hidden_dim(self, dim: int) -> int:
        return int(round(self.mlp_ratio * dim))

    @property
    def stem_grid(self) -> int:
        return self.input_size // self.patch_size

    def shift_offset(self, stage: int) -> int:
        s = self.stages[stage]
        return 0 if s.window >= s.grid else s.window // 2

    def violations(self) -> list:
        v = []
        if not self.stages:
            v.append("at least one stage is required")
        if self.input_size % self.patch_size:
            v.append(f"input_size {self.input_size} not divisible by patch_size {self.patch_size}")
        if self.stages and self.stem_grid < self.stages[0].grid:
            v.append(f"stem grid {self.stem_grid} smaller than stage-1 grid {self.stages[0].grid}")
        for i, s in enumerate(self.stages, 1):
            for f in ("grid", "window", "dim", "depth", "heads"):
                if getattr(s, f) < 1:
                    v.append(f"stage {i}: {f} must be positive")
            if s.window >= 1 and s.grid % s.window:
                v.append(f"stage {i}: grid {s.grid} not divisible by window {s.window}")
            if s.heads >= 1 and s.dim % s.heads:
                v.append(f"stage {i}: dim {s.dim} not divisible by heads {s.heads}")
        if self.num_classes < 1:
            v.append("num_classes must be positive")
        if self.mlp_ratio <= 0:
            v.append("mlp_ratio must be positive")
        for attr, allowed in (("scffn_variant", SCFFN_VARIANTS), ("cls_attention_mode", CLS_MODES),
                              ("long_range", LONG_RANGE), ("ffn_cls", FFN_KINDS),
                              ("ffn_embed", FFN_KINDS), ("head", HEADS)):
            if getattr(self, attr) not in allowed:
                v.append(f"{attr}={getattr(self, attr)!r} not in {allowed}")
        for attr in ("attn_drop", "proj_drop"):
            if not 0.0 <= getattr(self, attr) < 1.0:
                v.append(f"{attr} must lie in [0, 1)")
        return v

    def validate(self) -> "ModelConfig":
        v = self.violations()
        if v:
            raise ConfigError(v)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in unknown])
        missing = [k for k in ("name", "input_size", "stages") if k not in d]
        if missing:
            raise ConfigError([f"missing config key {k!r}" for k in missing])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


def _stages(grids, windows, dims, depths, heads):
    return tuple(StageConfig(*row) for row in zip(grids, windows, dims, depths, heads))


_GRIDS = (49, 25, 16, 9)
_WINDOWS = (7, 5, 4, 3)

# Expansion ratio 1.75 puts tt-t/s/b inside their published parameter budgets;
# 4 overshoots them by ~40%.
PRESETS = {
    "tt-t": ModelConfig("tt-t", 224, _stages(_GRIDS, _WINDOWS, (64, 128, 256, 512), (3, 4, 19, 5), (2, 4, 8, 16)),
                        mlp_ratio=1.75),
    "tt-s": ModelConfig("tt-s", 224, _stages(_GRIDS, _WINDOWS, (96, 192, 384, 768), (4, 5, 21, 5), (3, 6, 12, 24)),
                        mlp_ratio=1.75),
    "tt-b": ModelConfig("tt-b", 224, _stages(_GRIDS, _WINDOWS, (128, 256, 512, 1024), (5, 6, 22, 5), (4, 8, 16, 32)),
                        mlp_ratio=1.75),
    "tt-nano": ModelConfig("tt-nano", 32, _stages((8, 4), (4, 2), (16, 32), (2, 2), (2, 4)), num_classes=10),
}


def preset(name: str) -> ModelConfig:
    key = name.lower()
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    return PRESETS[key]


def load_config(path) -> ModelConfig:
    """Read a JSON config file; see README for the schema."""
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    base = d.pop("preset", None)
    if base is not None:
        merged = preset(base).to_dict()
        merged.update(d)
        d = merged
    return ModelConfig.from_dict(d).validate()


def save_config(cfg: ModelConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def resolve(spec: str) -> ModelConfig:
    """Preset name or path to a config file."""
    if spec.lower() in PRESETS:
        return PRESETS[spec.lower()]
    p = Path(spec)
    if p.suffix == ".json" or p.exists():
        return load_config(p)
    return preset(spec)
