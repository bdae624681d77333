"""
Behavior learning in latent imagination
"""

from .actor_critic import (
    ActionDistribution,
    Actor,
    ActorCritic,
    BehaviorMetrics,
    Critic,
    ImaginedTrajectory,
    actor_loss,
    critic_loss,
)
from .returns import TDLambdaTargets, td_lambda

__all__ = [
    "ActionDistribution",
    "Actor",
    "ActorCritic",
    "BehaviorMetrics",
    "Critic",
    "ImaginedTrajectory",
    "TDLambdaTargets",
    "actor_loss",
    "critic_loss",
    "td_lambda",
]
