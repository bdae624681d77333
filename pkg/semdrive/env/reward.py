"""
Driving reward: collision, speed, lane and smoothness terms
"""

from dataclasses import asdict, dataclass
from typing import Dict

from .vehicle import Action, VehicleState

COLLISION_WEIGHT = 200.0
FAST_WEIGHT = 10.0
STEER_WEIGHT = 5.0
LATERAL_WEIGHT = 0.2
CTE_WEIGHT = 0.2
STEP_CONSTANT = -0.1


@dataclass(frozen=True)
class RewardEvents:
    collision: bool = False
    out_lane: bool = False


@dataclass(frozen=True)
class RewardBreakdown:
    """Individual reward terms; total is their fixed linear combination"""

    r_collision: float
    v_lon: float
    r_fast: float
    r_out: float
    alpha: float
    r_lat: float
    r_cte: float
    constant: float = STEP_CONSTANT

    @property
    def total(self) -> float:
        return (
            COLLISION_WEIGHT * self.r_collision
            + self.v_lon
            + FAST_WEIGHT * self.r_fast
            + self.r_out
            - STEER_WEIGHT * self.alpha ** 2
            + LATERAL_WEIGHT * self.r_lat
            + CTE_WEIGHT * self.r_cte
            + self.constant
        )

    def as_dict(self) -> Dict[str, float]:
        data = asdict(self)
        data["total"] = self.total
        return data


def compute_reward(
    state: VehicleState,
    action: Action,
    events: RewardEvents,
    cte: float,
    desired_speed: float = 8.0,
) -> RewardBreakdown:
    """
    Compute the reward terms for arriving in `state` after applying `action`

    Args:
        state: Vehicle state after the step
        action: Clamped action of the step (steer is the angle alpha)
        events: Collision / out-lane flags of the step
        cte: Cross-track error in meters
        desired_speed: Speed above which the speeding penalty applies

    Returns:
        RewardBreakdown
    """
    alpha = float(action.steer)
    v_lon = float(state.v_lon)
    return RewardBreakdown(
        r_collision=-1.0 if events.collision else 0.0,
        v_lon=v_lon,
        r_fast=-1.0 if v_lon > desired_speed else 0.0,
        r_out=-1.0 if events.out_lane else 0.0,
        alpha=alpha,
        r_lat=-abs(alpha) * v_lon ** 2,
        r_cte=-float(cte),
    )
