"""
semdrive - Semantic-masked world model for end-to-end driving

This package provides:
- A seedable top-down driving simulator with ground-truth semantic masks and weather distractors
- A recurrent state-space world model whose semantic filter keeps only driving-relevant features
- Multi-source experience replay with corner-case buckets
- Actor-critic learning in latent imagination
- Training, evaluation, inspection and plotting pipelines
"""

__version__ = "0.1.0"

from .core.agent import Agent
from .core.evaluator import evaluate
from .core.inspector import inspect
from .core.trainer import Trainer, train
from .utils.config import RunConfig, load_run_config

__all__ = [
    "Agent",
    "RunConfig",
    "Trainer",
    "evaluate",
    "inspect",
    "load_run_config",
    "train",
]
