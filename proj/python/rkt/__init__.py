"""Rank-one model editing toolkit.

Layer localization by attribution, rank-one weight edits constrained by key
statistics, and a budgeted rectification loop for small convolutional models.
"""

from ._core import (
    CheckpointError,
    Config,
    ConfigError,
    Experiment,
    KeyStatistics,
    Model,
    ShapeError,
    apply_trigger,
    generate,
    key_stats,
    layer_ig,
    load_checkpoint,
    load_config,
    locate,
    parse_config,
    pcc,
    save_checkpoint,
    span_residual,
    sub_seed,
)

__all__ = [
    "CheckpointError",
    "Config",
    "ConfigError",
    "Experiment",
    "KeyStatistics",
    "Model",
    "ShapeError",
    "apply_trigger",
    "generate",
    "key_stats",
    "layer_ig",
    "load_checkpoint",
    "load_config",
    "locate",
    "parse_config",
    "pcc",
    "save_checkpoint",
    "span_residual",
    "sub_seed",
]

__version__ = "0.1.0"
