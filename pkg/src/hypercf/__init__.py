"""Hypergraph-transformer collaborative filtering with self-augmented denoising."""

from .config import Config, ConfigError, load_config
from .data import (InteractionDataset, SplitDataset,
                   build_normalized_adjacency, inject_noise,
                   load_interactions, split, synthetic_blocks)
from .evaluation import (evaluate_model, evaluate_scores, ndcg_at_n,
                         rank_all, recall_at_n, write_csv)
from .experiments import (TrainedRun, ablation_study, noise_robustness,
                          sparsity_report, sweep, train_on_split)
from .model import Model
from .trainer import (Adam, DivergenceError, fit, load_checkpoint, resume,
                      save_checkpoint)
from .viz import DEFAULT_PALETTE, embedding_to_color, write_colors_csv

__version__ = "0.1.0"

__all__ = [
    "Adam", "Config", "ConfigError", "DEFAULT_PALETTE", "DivergenceError",
    "InteractionDataset", "Model", "SplitDataset", "TrainedRun",
    "ablation_study", "build_normalized_adjacency", "embedding_to_color",
    "evaluate_model", "evaluate_scores", "fit", "inject_noise",
    "load_checkpoint", "load_config", "load_interactions", "ndcg_at_n",
    "noise_robustness", "rank_all", "recall_at_n", "resume",
    "save_checkpoint", "sparsity_report", "split", "sweep",
    "synthetic_blocks", "train_on_split", "write_colors_csv", "write_csv",
]
