"""Causally masked token-mixing MLP for sequential recommendation.

Hot kernels run through a compiled extension when available and a numpy
fallback otherwise; see `trimix.backend.KERNEL_BACKEND` for the active one.
"""

from trimix.backend import KERNEL_BACKEND, available_backends
from trimix.data import (
    SequenceDataset,
    SplitDataset,
    EvalCase,
    batch_iter,
    build_windows,
    filter_dataset,
    load_interactions,
)
from trimix.evaluation import RankingResult, bench_inference, evaluate, hr_ndcg, rank_of_target
from trimix.model import ModelConfig, TriMixModel, load_checkpoint, param_count, save_checkpoint
from trimix.training import Adam, TrainConfig, TrainResult, cross_entropy, train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "KERNEL_BACKEND",
    "ModelConfig",
    "RankingResult",
    "SequenceDataset",
    "SplitDataset",
    "EvalCase",
    "TrainConfig",
    "TrainResult",
    "TriMixModel",
    "available_backends",
    "batch_iter",
    "bench_inference",
    "build_windows",
    "cross_entropy",
    "evaluate",
    "filter_dataset",
    "hr_ndcg",
    "load_checkpoint",
    "load_interactions",
    "param_count",
    "rank_of_target",
    "save_checkpoint",
    "train",
]
