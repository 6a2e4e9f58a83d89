"""Optimisation loops, metrics and baselines."""
from .baselines import BaselineParams, BaselineResult, train_baseline
from .config import TrainConfig
from .loop import (
    ABLATIONS,
    FinetuneResult,
    GridResult,
    PipelineResult,
    PretrainResult,
    ablate,
    finetune,
    grid_search,
    pretrain,
    run_pipeline,
)
from .metrics import MetricsReport, evaluate
from .optim import AdamState, adam_step

__all__ = [
    "ABLATIONS", "AdamState", "BaselineParams", "BaselineResult", "FinetuneResult",
    "GridResult", "MetricsReport", "PipelineResult", "PretrainResult", "TrainConfig",
    "ablate", "adam_step", "evaluate", "finetune", "grid_search", "pretrain",
    "run_pipeline", "train_baseline",
]
