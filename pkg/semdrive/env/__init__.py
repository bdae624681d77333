"""
Top-down driving environment with ground-truth semantic masks
"""

from .layouts import LayoutRegistry, Obstacle, RoadLayout, TrafficSpec, cross_track_error, load_layouts
from .rendering import HELD_OUT_WEATHERS, WEATHER_PRESETS, Renderer, Weather, WorldState, get_weather, load_weathers
from .reward import RewardBreakdown, RewardEvents, compute_reward
from .simulator import DrivingSimulator, StepResult, Termination
from .vehicle import ACTION_BOUNDS, Action, VehicleState, bicycle_step

__all__ = [
    "ACTION_BOUNDS",
    "Action",
    "DrivingSimulator",
    "HELD_OUT_WEATHERS",
    "LayoutRegistry",
    "Obstacle",
    "Renderer",
    "RewardBreakdown",
    "RewardEvents",
    "RoadLayout",
    "StepResult",
    "Termination",
    "TrafficSpec",
    "VehicleState",
    "WEATHER_PRESETS",
    "Weather",
    "WorldState",
    "bicycle_step",
    "compute_reward",
    "cross_track_error",
    "get_weather",
    "load_layouts",
    "load_weathers",
]
