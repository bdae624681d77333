"""
Road layouts, the layout registry and route geometry
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import yaml

from ..utils.errors import ConfigurationError
from .vehicle import VehicleState

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Obstacle:
    """A surrounding vehicle modelled as a moving circle"""

    position: Tuple[float, float]
    radius: float
    velocity: Tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class TrafficSpec:
    """Vehicles relocated at random along the road at every reset"""

    count: int
    radius: float = 1.0
    speed: float = 0.0


@dataclass(frozen=True)
class RoadLayout:
    """
    Road centerline, lane width, target route and surrounding vehicles

    The route is the centerline sub-polyline between the waypoint indices of
    route_range (inclusive). On a closed layout a full route closes back on its
    first waypoint, and a range with start > end wraps around.
    """

    layout_id: str
    centerline: np.ndarray
    lane_half_width: float
    closed: bool = False
    route_range: Optional[Tuple[int, int]] = None
    obstacles: Tuple[Obstacle, ...] = ()
    random_traffic: Optional[TrafficSpec] = None
    route: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        centerline = np.asarray(self.centerline, dtype=np.float64)
        if centerline.ndim != 2 or centerline.shape[1] != 2 or centerline.shape[0] < 2:
            raise ConfigurationError(f"Layout '{self.layout_id}': centerline needs >= 2 waypoints of (x, y)")
        if not self.lane_half_width > 0:
            raise ConfigurationError(f"Layout '{self.layout_id}': lane_half_width must be positive")
        object.__setattr__(self, "centerline", centerline)
        object.__setattr__(self, "route", self._build_route(centerline))

    def _build_route(self, centerline: np.ndarray) -> np.ndarray:
        n = centerline.shape[0]
        if self.route_range is None:
            if self.closed:
                return np.vstack([centerline, centerline[:1]])
            return centerline.copy()

        start, end = self.route_range
        if not (0 <= start < n and 0 <= end < n):
            raise ConfigurationError(f"Layout '{self.layout_id}': route range {self.route_range} out of bounds")
        if start <= end:
            route = centerline[start:end + 1]
        elif self.closed:
            route = np.vstack([centerline[start:], centerline[:end + 1]])
        else:
            raise ConfigurationError(f"Layout '{self.layout_id}': wrapping route on an open road")
        if route.shape[0] < 2:
            raise ConfigurationError(f"Layout '{self.layout_id}': route needs >= 2 waypoints")
        return route.copy()

    def road_polyline(self) -> np.ndarray:
        if self.closed:
            return np.vstack([self.centerline, self.centerline[:1]])
        return self.centerline

    def spawn_candidates(self) -> np.ndarray:
        """Route waypoint indices the ego may spawn at (each has a following waypoint)"""
        count = self.route.shape[0] - 1
        if not self.closed:
            count = max(1, count // 2)
        return np.arange(count)


def point_to_polyline_distance(point: np.ndarray, polyline: np.ndarray) -> float:
    """Minimum Euclidean distance from a point to a polyline"""
    point = np.asarray(point, dtype=np.float64)
    a = polyline[:-1]
    b = polyline[1:]
    ab = b - a
    length_sq = np.einsum("ij,ij->i", ab, ab)
    safe = np.where(length_sq > 0.0, length_sq, 1.0)
    t = np.einsum("ij,ij->i", point - a, ab) / safe
    t = np.where(length_sq > 0.0, np.clip(t, 0.0, 1.0), 0.0)
    projection = a + t[:, None] * ab
    return float(np.min(np.linalg.norm(point - projection, axis=1)))


def cross_track_error(state: VehicleState, layout: RoadLayout) -> float:
    """Distance from the ego position to the route polyline (meters)"""
    return point_to_polyline_distance(state.position, layout.route)


def _straight_layout() -> RoadLayout:
    xs = np.arange(0.0, 400.0 + 1e-9, 5.0)
    return RoadLayout(
        layout_id="straight",
        centerline=np.stack([xs, np.zeros_like(xs)], axis=1),
        lane_half_width=3.5,
    )


def _loop_layout() -> RoadLayout:
    angles = np.linspace(0.0, 2.0 * math.pi, 48, endpoint=False)
    radius = 40.0
    return RoadLayout(
        layout_id="loop",
        centerline=np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1),
        lane_half_width=3.5,
        closed=True,
        random_traffic=TrafficSpec(count=4, radius=1.0, speed=0.5),
    )


def _corners_layout() -> RoadLayout:
    xs = np.arange(0.0, 300.0 + 1e-9, 4.0)
    ys = 15.0 * np.sin(xs / 20.0)
    return RoadLayout(
        layout_id="corners",
        centerline=np.stack([xs, ys], axis=1),
        lane_half_width=3.0,
        obstacles=(
            Obstacle(position=(60.0, 15.0 * math.sin(3.0) + 1.5), radius=1.2),
            Obstacle(position=(120.0, 15.0 * math.sin(6.0) - 1.5), radius=1.2),
        ),
        random_traffic=TrafficSpec(count=10, radius=1.2, speed=0.0),
    )


class LayoutRegistry:
    """Registry of named road layouts"""

    def __init__(self, with_builtins: bool = True):
        self._layouts: Dict[str, RoadLayout] = {}
        if with_builtins:
            for layout in (_straight_layout(), _loop_layout(), _corners_layout()):
                self.register(layout)

    def register(self, layout: RoadLayout, replace: bool = False) -> None:
        if layout.layout_id in self._layouts and not replace:
            raise ConfigurationError(f"Layout '{layout.layout_id}' is already registered")
        self._layouts[layout.layout_id] = layout

    def get(self, layout_id: str) -> RoadLayout:
        try:
            return self._layouts[layout_id]
        except KeyError:
            raise ConfigurationError(
                f"Unknown layout '{layout_id}'; registered: {sorted(self._layouts)}"
            ) from None

    def ids(self) -> List[str]:
        return sorted(self._layouts)

    def __contains__(self, layout_id: str) -> bool:
        return layout_id in self._layouts


def _parse_layout(layout_id: str, spec: dict) -> RoadLayout:
    try:
        obstacles = tuple(
            Obstacle(
                position=tuple(float(v) for v in item["position"]),
                radius=float(item.get("radius", 1.0)),
                velocity=tuple(float(v) for v in item.get("velocity", (0.0, 0.0))),
            )
            for item in spec.get("obstacles", []) or []
        )
        traffic = spec.get("random_traffic")
        route = spec.get("route")
        return RoadLayout(
            layout_id=layout_id,
            centerline=np.asarray(spec["centerline"], dtype=np.float64),
            lane_half_width=float(spec.get("lane_half_width", 3.5)),
            closed=bool(spec.get("closed", False)),
            route_range=(int(route[0]), int(route[1])) if route is not None else None,
            obstacles=obstacles,
            random_traffic=TrafficSpec(**traffic) if traffic else None,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid layout '{layout_id}': {e}") from e


def load_layouts(path: Union[str, Path], registry: Optional[LayoutRegistry] = None) -> LayoutRegistry:
    """
    Register layouts from a YAML file

    Args:
        path: YAML file with a top-level "layouts" mapping of id -> layout spec
        registry: Registry to extend (a fresh one with built-ins when omitted)

    Returns:
        The registry
    """
    registry = registry or LayoutRegistry()
    layout_path = Path(path)
    try:
        data = yaml.safe_load(layout_path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Cannot read layout file {layout_path}: {e}") from e

    for layout_id, spec in (data.get("layouts") or {}).items():
        registry.register(_parse_layout(str(layout_id), spec), replace=True)
        logger.info(f"Registered layout '{layout_id}' from {layout_path}")
    return registry
