"""
Ego-centric top-down rasterization of semantic masks and weather-contaminated observations
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

import cv2
import numpy as np
import yaml

from ..utils.errors import ArgumentError, ConfigurationError
from .layouts import RoadLayout
from .vehicle import VehicleState

logger = logging.getLogger(__name__)

ROAD_CHANNEL = 0
ROUTE_CHANNEL = 1
VEHICLE_CHANNEL = 2

EGO_LENGTH = 4.5
EGO_WIDTH = 2.0
ROUTE_WIDTH = 1.0

# cv2 fixed-point precision for sub-pixel geometry
_SHIFT = 4
_SCALE = 1 << _SHIFT


@dataclass(frozen=True)
class Weather:
    """
    Driving-irrelevant distractor layer composited onto observations

    tint is an RGB offset, noise_std the per-pixel Gaussian noise in intensity units,
    and blob_seed fixes the start positions and drift of the bright blobs. Blob
    radius and drift are fractions of the image size.
    """

    name: str
    tint: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    noise_std: float = 0.0
    blob_seed: int = 0
    blob_count: int = 0
    blob_radius: float = 0.08
    blob_alpha: float = 0.6
    blob_drift: float = 0.01

    def __post_init__(self):
        if len(self.tint) != 3 or any(abs(float(c)) > 255.0 for c in self.tint):
            raise ArgumentError(f"Weather '{self.name}': tint must be 3 offsets within [-255, 255]")
        if not 0.0 <= self.noise_std <= 128.0:
            raise ArgumentError(f"Weather '{self.name}': noise_std must be within [0, 128]")
        if not 0.0 <= self.blob_alpha <= 1.0:
            raise ArgumentError(f"Weather '{self.name}': blob_alpha must be within [0, 1]")
        if self.blob_count < 0 or self.blob_seed < 0:
            raise ArgumentError(f"Weather '{self.name}': blob_count and blob_seed must be >= 0")
        object.__setattr__(self, "tint", tuple(float(c) for c in self.tint))

    @property
    def is_identity(self) -> bool:
        return self.noise_std == 0.0 and self.blob_count == 0 and not any(self.tint)


WEATHER_PRESETS: Dict[str, Weather] = {
    weather.name: weather
    for weather in (
        Weather("clear"),
        Weather("light", tint=(10, 10, 20), noise_std=8, blob_seed=1, blob_count=2, blob_alpha=0.5),
        Weather("dusk", tint=(60, 20, -30), noise_std=12, blob_seed=11, blob_count=3),
        Weather("overcast", tint=(-30, -30, -10), noise_std=16, blob_seed=12, blob_count=5),
        Weather("drizzle", tint=(40, 10, -20), noise_std=24, blob_seed=13, blob_count=6, blob_alpha=0.65),
        Weather("rain", tint=(30, 0, -10), noise_std=40, blob_seed=14, blob_count=8, blob_alpha=0.7),
        Weather(
            "storm", tint=(-50, -40, -20), noise_std=64, blob_seed=15, blob_count=12,
            blob_radius=0.12, blob_alpha=0.8, blob_drift=0.02,
        ),
    )
}

HELD_OUT_WEATHERS = ("dusk", "overcast", "drizzle", "rain", "storm")


def get_weather(name: str) -> Weather:
    try:
        return WEATHER_PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"Unknown weather '{name}'; presets: {sorted(WEATHER_PRESETS)}") from None


def load_weathers(path: Union[str, Path]) -> List[Weather]:
    """
    Read a weather list from YAML

    Each entry is either a preset name or a mapping of Weather fields (name required).
    A top-level mapping with a "weathers" key is also accepted.
    """
    weather_path = Path(path)
    try:
        data = yaml.safe_load(weather_path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Cannot read weather file {weather_path}: {e}") from e

    if isinstance(data, dict):
        data = data.get("weathers")
    if not isinstance(data, list) or not data:
        raise ConfigurationError(f"Weather file {weather_path} must list at least one weather")

    weathers = []
    for entry in data:
        if isinstance(entry, str):
            weathers.append(get_weather(entry))
        elif isinstance(entry, dict):
            try:
                weathers.append(Weather(**entry))
            except (TypeError, ArgumentError) as e:
                raise ConfigurationError(f"Invalid weather entry {entry}: {e}") from e
        else:
            raise ConfigurationError(f"Invalid weather entry {entry!r}")
    return weathers


@dataclass(frozen=True)
class WorldState:
    """Immutable snapshot of everything the renderers draw"""

    layout: RoadLayout
    ego: VehicleState
    obstacle_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    obstacle_radii: np.ndarray = field(default_factory=lambda: np.zeros((0,)))
    step_index: int = 0
    episode_seed: int = 0


class Renderer:
    """Rasterizes world states into H x W x 3 uint8 images centred on the ego vehicle"""

    def __init__(self, image_size: int = 64, pixels_per_meter: float = 2.0):
        if image_size < 8:
            raise ArgumentError(f"image_size must be >= 8, got {image_size}")
        self.image_size = image_size
        self.pixels_per_meter = pixels_per_meter
        # ego anchor: horizontally centred, three quarters down, heading up
        self.anchor = (image_size / 2.0, image_size * 0.75)
        self._ego_glyph = self._draw_ego_glyph()

    def _to_pixels(self, points: np.ndarray, ego: VehicleState) -> np.ndarray:
        """World (x, y) points to fixed-point (col, row) pixel coordinates"""
        delta = np.asarray(points, dtype=np.float64).reshape(-1, 2) - ego.position
        cos_yaw, sin_yaw = np.cos(ego.yaw), np.sin(ego.yaw)
        forward = delta[:, 0] * cos_yaw + delta[:, 1] * sin_yaw
        left = -delta[:, 0] * sin_yaw + delta[:, 1] * cos_yaw
        cols = self.anchor[0] - left * self.pixels_per_meter
        rows = self.anchor[1] - forward * self.pixels_per_meter
        return np.round(np.stack([cols, rows], axis=1) * _SCALE).astype(np.int32)

    def _draw_ego_glyph(self) -> np.ndarray:
        glyph = np.zeros((self.image_size, self.image_size), dtype=np.uint8)
        half_w = max(1, int(round(EGO_WIDTH / 2.0 * self.pixels_per_meter)))
        half_l = max(1, int(round(EGO_LENGTH / 2.0 * self.pixels_per_meter)))
        cx, cy = int(self.anchor[0]), int(self.anchor[1])
        cv2.rectangle(glyph, (cx - half_w, cy - half_l), (cx + half_w - 1, cy + half_l - 1), 255, -1)
        return glyph

    @property
    def ego_glyph(self) -> np.ndarray:
        return self._ego_glyph.copy()

    def render_mask(self, state: WorldState) -> np.ndarray:
        """Semantic mask: road, route and vehicles channels; ego drawn on all of them"""
        size = self.image_size
        ppm = self.pixels_per_meter
        road = np.zeros((size, size), dtype=np.uint8)
        route = np.zeros((size, size), dtype=np.uint8)
        vehicles = np.zeros((size, size), dtype=np.uint8)

        road_points = self._to_pixels(state.layout.road_polyline(), state.ego)
        cv2.polylines(
            road, [road_points.reshape(-1, 1, 2)], False, 255,
            thickness=max(1, int(round(2.0 * state.layout.lane_half_width * ppm))),
            lineType=cv2.LINE_8, shift=_SHIFT,
        )
        route_points = self._to_pixels(state.layout.route, state.ego)
        cv2.polylines(
            route, [route_points.reshape(-1, 1, 2)], False, 255,
            thickness=max(1, int(round(ROUTE_WIDTH * ppm))),
            lineType=cv2.LINE_8, shift=_SHIFT,
        )
        if len(state.obstacle_positions):
            centers = self._to_pixels(state.obstacle_positions, state.ego)
            for (col, row), radius in zip(centers, state.obstacle_radii):
                cv2.circle(
                    vehicles, (int(col), int(row)), max(_SCALE, int(round(radius * ppm * _SCALE))),
                    255, -1, lineType=cv2.LINE_8, shift=_SHIFT,
                )

        mask = np.stack([road, route, vehicles], axis=-1)
        mask[self._ego_glyph > 0] = 255
        return mask

    def render_observation(self, state: WorldState, weather: Weather) -> np.ndarray:
        """Mask geometry composited with the weather's tint, pixel noise and drifting blobs"""
        mask = self.render_mask(state)
        if weather.is_identity:
            return mask

        image = mask.astype(np.float32)
        image += np.asarray(weather.tint, dtype=np.float32)

        if weather.noise_std > 0.0:
            rng = np.random.default_rng([weather.blob_seed, state.episode_seed, state.step_index])
            image += rng.normal(0.0, weather.noise_std, size=image.shape).astype(np.float32)

        if weather.blob_count > 0:
            size = self.image_size
            blob_rng = np.random.default_rng(weather.blob_seed)
            starts = blob_rng.uniform(0.0, size, size=(weather.blob_count, 2))
            drifts = blob_rng.uniform(-1.0, 1.0, size=(weather.blob_count, 2)) * weather.blob_drift * size
            positions = np.mod(starts + drifts * state.step_index, size)
            radius = max(1, int(round(weather.blob_radius * size)))
            cover = np.zeros((size, size), dtype=np.uint8)
            for col, row in positions:
                cv2.circle(cover, (int(col), int(row)), radius, 1, -1, lineType=cv2.LINE_8)
            covered = cover.astype(bool)
            image[covered] = image[covered] * (1.0 - weather.blob_alpha) + 255.0 * weather.blob_alpha

        return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def write_png(path: Union[str, Path], image: np.ndarray) -> None:
    """Write an RGB uint8 image as PNG"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(target), cv2.cvtColor(image, cv2.COLOR_RGB2BGR)):
        raise OSError(f"cv2 could not write {target}")
