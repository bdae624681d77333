"""
Training pipeline: agent, collection, training loop, evaluation, inspection and metrics
"""

from .agent import Agent
from .collector import Collector, EpisodeSummary, summarize
from .evaluator import (
    EvalRow,
    VariantComparison,
    compare_runs,
    compare_variants,
    confidence_interval,
    discover_runs,
    evaluate,
    evaluate_agent,
    mean_eval_return,
)
from .inspector import InspectionReport, inspect, inspect_episode, mask_accuracy, reconstruct
from .metrics import MetricsWriter, flatten_stats, read_metrics
from .plots import plot_metrics
from .trainer import TrainResult, Trainer, train

__all__ = [
    "Agent",
    "Collector",
    "EpisodeSummary",
    "EvalRow",
    "InspectionReport",
    "MetricsWriter",
    "TrainResult",
    "Trainer",
    "VariantComparison",
    "compare_runs",
    "compare_variants",
    "confidence_interval",
    "discover_runs",
    "evaluate",
    "evaluate_agent",
    "flatten_stats",
    "inspect",
    "inspect_episode",
    "mask_accuracy",
    "mean_eval_return",
    "plot_metrics",
    "read_metrics",
    "reconstruct",
    "summarize",
    "train",
]
