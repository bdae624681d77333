"""
Multi-source experience replay
"""

from .buffer import BUCKET_ORDER, BucketKind, MultiSourceBuffer, SequenceBatch
from .storage import Episode, TransitionRecord, load_episode, save_episode

__all__ = [
    "BUCKET_ORDER",
    "BucketKind",
    "Episode",
    "MultiSourceBuffer",
    "SequenceBatch",
    "TransitionRecord",
    "load_episode",
    "save_episode",
]
