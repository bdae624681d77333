"""
Ego vehicle state, action bounds and kinematic bicycle dynamics
"""

import math
from dataclasses import dataclass

import numpy as np

from ..utils.errors import ArgumentError

THROTTLE_LIMIT = 3.0
STEER_LIMIT = 0.5
ACTION_BOUNDS = np.array([THROTTLE_LIMIT, STEER_LIMIT], dtype=np.float64)


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]"""
    wrapped = math.atan2(math.sin(angle), math.cos(angle))
    if wrapped == -math.pi:
        return math.pi
    return wrapped


@dataclass(frozen=True)
class VehicleState:
    """Ego pose and longitudinal speed (meters, radians, m/s)"""

    x: float
    y: float
    yaw: float
    v_lon: float

    def __post_init__(self):
        if not self.v_lon >= 0.0:
            raise ArgumentError(f"v_lon must be >= 0, got {self.v_lon}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class Action:
    """Throttle (longitudinal acceleration, m/s^2) and steering angle (rad)"""

    throttle: float
    steer: float

    def clamp(self) -> "Action":
        if not (math.isfinite(self.throttle) and math.isfinite(self.steer)):
            raise ArgumentError(f"Action components must be finite: {self}")
        return Action(
            throttle=float(min(max(self.throttle, -THROTTLE_LIMIT), THROTTLE_LIMIT)),
            steer=float(min(max(self.steer, -STEER_LIMIT), STEER_LIMIT)),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.throttle, self.steer], dtype=np.float32)

    @classmethod
    def from_array(cls, values) -> "Action":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.shape[0] != 2:
            raise ArgumentError(f"Action needs 2 components, got {values.shape[0]}")
        return cls(throttle=float(values[0]), steer=float(values[1]))


def bicycle_step(state: VehicleState, action: Action, dt: float, wheelbase: float) -> VehicleState:
    """
    Advance the kinematic bicycle model by one step

    Position and heading integrate the current speed; the speed then integrates the
    throttle and is clipped at zero.
    """
    action = action.clamp()
    x = state.x + state.v_lon * math.cos(state.yaw) * dt
    y = state.y + state.v_lon * math.sin(state.yaw) * dt
    yaw = state.yaw + state.v_lon / wheelbase * math.tan(action.steer) * dt
    v_lon = max(0.0, state.v_lon + action.throttle * dt)
    return VehicleState(x=x, y=y, yaw=yaw, v_lon=v_lon)
