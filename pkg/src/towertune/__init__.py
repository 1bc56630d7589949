"""Parameter-efficient transfer learning for dual-encoder text/image
retrieval, self-contained at desk scale: numpy-backed autodiff, a frozen
two-tower transformer, coupled deep prompts, bottleneck adapters, the
bidirectional distribution-matching loss, and retrieval metrics."""

from .autodiff import Tensor, no_grad
from .loss import LossConfig, match_matrix, sdm_directional, sdm_total
from .model import (DualEncoder, ModelConfig, clip_b16_config,
                    closed_form_trainable, count_params, desk_config,
                    similarity_matrix)
from .optim import Adam
from .params import ParamStore
from .retrieval import MetricsReport, compute_metrics, rank_gallery
from .tokenizer import Tokenizer
from .train import (RunConfig, build_pipeline, evaluate, gradient_check,
                    reference_config, run_ablation, run_sweep, train_run)

__version__ = "0.1.0"

__all__ = [
    "Adam", "DualEncoder", "LossConfig", "MetricsReport", "ModelConfig",
    "ParamStore", "RunConfig", "Tensor", "Tokenizer", "build_pipeline",
    "clip_b16_config", "closed_form_trainable", "compute_metrics",
    "count_params", "desk_config", "evaluate", "gradient_check",
    "match_matrix", "no_grad", "rank_gallery", "reference_config",
    "run_ablation", "run_sweep", "sdm_directional", "sdm_total",
    "similarity_matrix", "train_run",
]
