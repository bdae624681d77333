"""
Latent world model components
"""

from .checkpoint import Checkpoint, check_compatible, load_checkpoint, save_checkpoint
from .networks import ConvDecoder, ConvEncoder, UnitGaussian, mlp
from .rssm import RSSM, LatentState, StateDistribution, kl_divergence, straight_through_sample
from .world_model import LossBreakdown, WorldModel

__all__ = [
    "Checkpoint",
    "ConvDecoder",
    "ConvEncoder",
    "LatentState",
    "LossBreakdown",
    "RSSM",
    "StateDistribution",
    "UnitGaussian",
    "WorldModel",
    "check_compatible",
    "kl_divergence",
    "load_checkpoint",
    "mlp",
    "save_checkpoint",
    "straight_through_sample",
]
