"""
Qualitative review: reconstruction panels of a dumped episode
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import cv2
import numpy as np
import tensorflow as tf

from ..env.rendering import write_png
from ..replay.storage import Episode, load_episode
from ..utils.config import RunConfig
from .agent import Agent

logger = logging.getLogger(__name__)

PANEL_GAP = 2


@dataclass
class Reconstruction:
    """Decoded observations (and masks, when the variant has a mask decoder) as uint8 images"""

    observations: np.ndarray
    masks: Optional[np.ndarray]


@dataclass
class InspectionReport:
    panels: List[Path] = field(default_factory=list)
    mask_accuracy: Optional[float] = None

    @property
    def has_mask(self) -> bool:
        return self.mask_accuracy is not None


def to_pixels(decoded: np.ndarray) -> np.ndarray:
    """Inverse of the [-0.5, 0.5] image normalization, rounded to uint8"""
    return np.clip(np.rint((np.asarray(decoded, dtype=np.float64) + 0.5) * 255.0), 0, 255).astype(np.uint8)


def mask_accuracy(predicted: np.ndarray, target: np.ndarray) -> float:
    """Fraction of mask channel values whose on/off state matches the ground truth"""
    if predicted.shape != target.shape:
        raise ValueError(f"Shape mismatch: {predicted.shape} vs {target.shape}")
    return float(np.mean((predicted >= 128) == (target >= 128)))


def reconstruct(agent: Agent, episode: Episode, seed: int = 0) -> Reconstruction:
    """Filter an episode through the world model and decode every posterior state"""
    model = agent.world_model
    model.reseed(seed)
    states, _, _ = model.observe(
        tf.convert_to_tensor(episode.observations[None]),
        tf.convert_to_tensor(episode.actions[None]),
    )
    flat = states.flatten()
    observations = to_pixels(model.predict_obs(flat).mode().numpy())
    masks = None
    if model.use_filter:
        masks = to_pixels(model.predict_mask(model.filter(flat)).mode().numpy())
    return Reconstruction(observations=observations, masks=masks)


def _panel(images: List[np.ndarray], scale: int) -> np.ndarray:
    height = images[0].shape[0]
    gap = np.full((height, PANEL_GAP, 3), 255, dtype=np.uint8)
    row = []
    for image in images:
        row.extend([image, gap])
    panel = cv2.hconcat(row[:-1])
    if scale > 1:
        panel = cv2.resize(panel, None, fx=scale, fy=scale, interpolation=cv2.INTER_NEAREST)
    return panel


def inspect_episode(
    agent: Agent, episode: Episode, out_dir: Union[str, Path], scale: int = 4, seed: int = 0
) -> InspectionReport:
    """
    Write one side-by-side panel per step

    Columns: observation, ground-truth mask, reconstructed mask, reconstructed observation.
    The reconstructed-mask column is left out for agents without a mask decoder.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recon = reconstruct(agent, episode, seed)
    if recon.masks is None:
        logger.warning("Checkpoint has no mask decoder (no_filter variant); panels omit the reconstructed mask")

    report = InspectionReport()
    for t in range(len(episode)):
        columns = [episode.observations[t], episode.masks[t]]
        if recon.masks is not None:
            columns.append(recon.masks[t])
        columns.append(recon.observations[t])
        path = out / f"panel_{int(episode.step_indices[t]):05d}.png"
        write_png(path, _panel(columns, scale))
        report.panels.append(path)

    if recon.masks is not None:
        report.mask_accuracy = mask_accuracy(recon.masks, episode.masks)
        logger.info(f"Mask reconstruction accuracy {report.mask_accuracy:.4f}")
    logger.info(f"Wrote {len(report.panels)} panels to {out}")
    return report


def inspect(
    checkpoint: Union[str, Path],
    episode_path: Union[str, Path],
    out_dir: Union[str, Path],
    config: Optional[RunConfig] = None,
    scale: int = 4,
) -> InspectionReport:
    """
    Render reconstruction panels of a dumped episode with a trained checkpoint

    Raises:
        ConfigurationError: If the checkpoint or episode cannot be read
        CheckpointMismatchError: If `config` does not match the checkpoint architecture
    """
    agent, _ = Agent.from_checkpoint(checkpoint, config)
    episode = load_episode(episode_path)
    return inspect_episode(agent, episode, out_dir, scale=scale)
