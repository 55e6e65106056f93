"""Token Transformer: a hierarchical window-attention vision backbone with CLS-token
cross-window attention, built on a small numpy autodiff engine."""

from .analysis import CostReport, count_flops, count_params, measure_flops
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PRESETS, ModelConfig, StageConfig, load_config, preset, save_config
from .data import Dataset, folder_dataset, synth_dataset
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    NonFiniteError,
    TrainingDivergedError,
    TTError,
)
from .model import TtModel, ablation_variant, ablation_variants, build, forward
from .tensor import Tensor, default_dtype, no_grad
from .train import evaluate, train

__all__ = [
    "CheckpointError", "ConfigError", "ContractError", "CostReport", "DataError", "Dataset",
    "DimensionError", "ModelConfig", "NonFiniteError", "PRESETS", "StageConfig", "TTError",
    "Tensor", "TrainingDivergedError", "TtModel", "ablation_variant", "ablation_variants",
    "build", "count_flops", "count_params", "default_dtype", "evaluate", "folder_dataset",
    "forward", "load_checkpoint", "load_config", "measure_flops", "no_grad", "preset",
    "save_checkpoint", "save_config", "synth_dataset", "train",
]
