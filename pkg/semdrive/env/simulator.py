"""
Seedable top-down driving simulator
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from ..utils.config import EnvConfig
from ..utils.errors import ArgumentError, ProtocolError
from .layouts import LayoutRegistry, RoadLayout, cross_track_error, load_layouts
from .rendering import Renderer, Weather, WorldState, get_weather, write_png
from .reward import RewardBreakdown, RewardEvents, compute_reward
from .vehicle import Action, VehicleState, bicycle_step

logger = logging.getLogger(__name__)

SPAWN_CLEARANCE = 6.0
MAX_SPAWN_ATTEMPTS = 50


class Termination(str, Enum):
    NONE = "none"
    OUT_LANE = "out_lane"
    COLLISION = "collision"
    TIMEOUT = "timeout"


@dataclass
class StepResult:
    """Observation, mask, reward and termination kind of one environment step"""

    observation: np.ndarray
    mask: np.ndarray
    reward: float
    reward_breakdown: Optional[RewardBreakdown]
    termination: Termination
    info: Dict[str, Any] = field(default_factory=dict)

    @property
    def done(self) -> bool:
        return self.termination != Termination.NONE


class DrivingSimulator:
    """
    Kinematic-bicycle ego vehicle on a registered road layout

    One instance serves one caller at a time; instances share no mutable state.
    """

    def __init__(self, config: Optional[EnvConfig] = None, registry: Optional[LayoutRegistry] = None):
        self.config = config or EnvConfig()
        self.registry = registry or LayoutRegistry()
        self.renderer = Renderer(self.config.image_size, self.config.pixels_per_meter)

        self._layout: Optional[RoadLayout] = None
        self._weather: Weather = get_weather("clear")
        self._ego: Optional[VehicleState] = None
        self._obstacle_positions = np.zeros((0, 2))
        self._obstacle_velocities = np.zeros((0, 2))
        self._obstacle_radii = np.zeros((0,))
        self._seed = 0
        self._step_index = 0
        self._termination = Termination.NONE
        self._last: Optional[StepResult] = None

    @classmethod
    def from_config(cls, config: EnvConfig) -> "DrivingSimulator":
        """Simulator with the built-in layouts plus those of config.layout_file"""
        registry = LayoutRegistry()
        if config.layout_file:
            load_layouts(config.layout_file, registry)
        return cls(config, registry)

    @property
    def layout(self) -> Optional[RoadLayout]:
        return self._layout

    @property
    def weather(self) -> Weather:
        return self._weather

    @property
    def step_index(self) -> int:
        return self._step_index

    @property
    def terminated(self) -> bool:
        return self._termination != Termination.NONE

    @property
    def ego(self) -> Optional[VehicleState]:
        return self._ego

    def reset(
        self,
        seed: int,
        layout_id: Optional[str] = None,
        weather: Optional[Union[Weather, str]] = None,
    ) -> StepResult:
        """
        Start a new episode

        Args:
            seed: Non-negative episode seed; fixes spawn, random traffic and weather choice
            layout_id: Registered layout (defaults to the configured training layout)
            weather: Weather or preset name; drawn from the training weathers when omitted

        Returns:
            StepResult with reward 0, no breakdown and termination none

        Raises:
            ConfigurationError: If the layout or weather is unknown
        """
        if seed < 0:
            raise ArgumentError(f"Episode seed must be >= 0, got {seed}")
        layout = self.registry.get(layout_id or self.config.layout)
        rng = np.random.default_rng(seed)

        if weather is None:
            names = self.config.train_weathers
            weather = names[int(rng.integers(len(names)))]
        self._weather = get_weather(weather) if isinstance(weather, str) else weather

        self._layout = layout
        self._seed = int(seed)
        self._step_index = 0
        self._termination = Termination.NONE

        self._place_obstacles(layout, rng)
        self._ego = self._spawn(layout, rng)

        self._last = self._result(reward=0.0, breakdown=None, cte=cross_track_error(self._ego, layout))
        logger.debug(
            f"Reset layout={layout.layout_id} seed={seed} weather={self._weather.name} "
            f"spawn=({self._ego.x:.2f}, {self._ego.y:.2f}, {self._ego.yaw:.3f})"
        )
        return self._last

    def _place_obstacles(self, layout: RoadLayout, rng: np.random.Generator) -> None:
        positions = [o.position for o in layout.obstacles]
        velocities = [o.velocity for o in layout.obstacles]
        radii = [o.radius for o in layout.obstacles]

        traffic = layout.random_traffic
        if traffic is not None and traffic.count > 0:
            road = layout.road_polyline()
            for _ in range(traffic.count):
                i = int(rng.integers(road.shape[0] - 1))
                t = float(rng.uniform())
                a, b = road[i], road[i + 1]
                direction = (b - a) / max(float(np.linalg.norm(b - a)), 1e-9)
                normal = np.array([-direction[1], direction[0]])
                offset = float(rng.uniform(-0.5, 0.5)) * layout.lane_half_width
                positions.append(tuple(a + t * (b - a) + offset * normal))
                velocities.append(tuple(direction * traffic.speed))
                radii.append(traffic.radius)

        self._obstacle_positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        self._obstacle_velocities = np.asarray(velocities, dtype=np.float64).reshape(-1, 2)
        self._obstacle_radii = np.asarray(radii, dtype=np.float64).reshape(-1)

    def _spawn(self, layout: RoadLayout, rng: np.random.Generator) -> VehicleState:
        candidates = layout.spawn_candidates()
        route = layout.route
        index = int(candidates[0])
        for _ in range(MAX_SPAWN_ATTEMPTS):
            index = int(rng.choice(candidates))
            if self._clearance(route[index]) >= SPAWN_CLEARANCE:
                break
        else:
            # keep the last candidate; traffic near it is moved out of the way
            keep = self._distances(route[index]) >= SPAWN_CLEARANCE
            self._obstacle_positions = self._obstacle_positions[keep]
            self._obstacle_velocities = self._obstacle_velocities[keep]
            self._obstacle_radii = self._obstacle_radii[keep]

        heading = route[index + 1] - route[index]
        return VehicleState(
            x=float(route[index][0]),
            y=float(route[index][1]),
            yaw=math.atan2(float(heading[1]), float(heading[0])),
            v_lon=0.0,
        )

    def _distances(self, point: np.ndarray) -> np.ndarray:
        if not len(self._obstacle_positions):
            return np.zeros((0,))
        return np.linalg.norm(self._obstacle_positions - point, axis=1) - self._obstacle_radii

    def _clearance(self, point: np.ndarray) -> float:
        distances = self._distances(point)
        return float(distances.min()) if distances.size else math.inf

    def step(self, action: Union[Action, np.ndarray]) -> StepResult:
        """
        Advance the world by one time step

        Raises:
            ProtocolError: If called before reset or after termination
            ArgumentError: If the action is not finite
        """
        if self._ego is None or self._layout is None:
            raise ProtocolError("step() called before reset()")
        if self.terminated:
            raise ProtocolError(f"step() called after termination ({self._termination.value})")

        if not isinstance(action, Action):
            action = Action.from_array(action)
        action = action.clamp()

        cfg = self.config
        self._ego = bicycle_step(self._ego, action, cfg.dt, cfg.wheelbase)
        if len(self._obstacle_positions):
            self._obstacle_positions = self._obstacle_positions + self._obstacle_velocities * cfg.dt
        self._step_index += 1

        cte = cross_track_error(self._ego, self._layout)
        collision = bool(np.any(self._distances(self._ego.position) < cfg.ego_radius))
        out_lane = cte > cfg.cte_threshold
        breakdown = compute_reward(
            self._ego, action, RewardEvents(collision=collision, out_lane=out_lane), cte, cfg.desired_speed
        )

        if collision:
            self._termination = Termination.COLLISION
        elif out_lane:
            self._termination = Termination.OUT_LANE
        elif self._step_index >= cfg.max_episode_steps:
            self._termination = Termination.TIMEOUT

        self._last = self._result(reward=breakdown.total, breakdown=breakdown, cte=cte)
        if self.terminated:
            logger.debug(f"Episode seed={self._seed} ended {self._termination.value} at step {self._step_index}")
        return self._last

    def world_state(self) -> WorldState:
        if self._ego is None or self._layout is None:
            raise ProtocolError("world_state() called before reset()")
        return WorldState(
            layout=self._layout,
            ego=self._ego,
            obstacle_positions=self._obstacle_positions.copy(),
            obstacle_radii=self._obstacle_radii.copy(),
            step_index=self._step_index,
            episode_seed=self._seed,
        )

    def _result(self, reward: float, breakdown: Optional[RewardBreakdown], cte: float) -> StepResult:
        state = self.world_state()
        return StepResult(
            observation=self.renderer.render_observation(state, self._weather),
            mask=self.renderer.render_mask(state),
            reward=float(reward),
            reward_breakdown=breakdown,
            termination=self._termination,
            info={
                "cte": float(cte),
                "step_index": self._step_index,
                "weather": self._weather.name,
                "layout": self._layout.layout_id,
                "v_lon": self._ego.v_lon,
            },
        )

    def save_frames(self, directory: Union[str, Path]) -> None:
        """Write the latest observation and mask as PNG frames"""
        if self._last is None:
            raise ProtocolError("save_frames() called before reset()")
        out = Path(directory)
        write_png(out / f"obs_{self._step_index:05d}.png", self._last.observation)
        write_png(out / f"mask_{self._step_index:05d}.png", self._last.mask)
