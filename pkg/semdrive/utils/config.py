"""
Configuration management for semdrive
Handles process settings, run configuration files, overrides and logging configuration
"""

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

Variant = Literal["sem2", "no_filter", "no_multisource"]


class Settings(BaseSettings):
    """Process-level settings read from the environment (prefix SEMDRIVE_) or a .env file"""

    model_config = SettingsConfigDict(env_prefix="SEMDRIVE_", env_file=".env", extra="ignore")

    # Logging
    log_level: str = "INFO"
    log_file: str = "logs/semdrive.log"
    log_max_bytes: int = 10485760
    log_backup_count: int = 5

    # Runs
    runs_dir: str = Field(default="runs", description="Default parent directory of run outputs")
    deterministic_ops: bool = Field(
        default=True, description="Enable TensorFlow op determinism for reproducible runs"
    )

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"Log level must be one of: {valid_levels}")
        return v.upper()


class EnvConfig(BaseModel):
    """Simulator configuration"""

    model_config = ConfigDict(extra="forbid")

    layout: str = Field(default="loop", description="Layout id used for training episodes")
    eval_layout: Optional[str] = Field(default=None, description="Layout id for evaluation (defaults to layout)")
    layout_file: Optional[str] = Field(default=None, description="YAML file with extra layouts to register")
    image_size: int = Field(default=64, description="Raster height and width in pixels (full scale 128)")
    pixels_per_meter: float = Field(default=2.0, gt=0.0)
    dt: float = Field(default=0.1, gt=0.0, description="Simulation step in seconds (10 Hz)")
    wheelbase: float = Field(default=2.5, gt=0.0)
    ego_radius: float = Field(default=1.0, gt=0.0, description="Collision radius of the ego vehicle")
    cte_threshold: float = Field(default=2.0, gt=0.0, description="Cross-track error ending an episode out-lane")
    desired_speed: float = Field(default=8.0, gt=0.0, description="Speed above which r_fast = -1")
    max_episode_steps: int = Field(default=1000, ge=1)
    train_weathers: List[str] = Field(
        default_factory=lambda: ["clear", "light"],
        description="Weather presets drawn per training episode",
    )

    @field_validator("image_size")
    @classmethod
    def validate_image_size(cls, v: int) -> int:
        if v < 8 or v & (v - 1):
            raise ValueError("image_size must be a power of two >= 8")
        return v


class ModelConfig(BaseModel):
    """World model configuration"""

    model_config = ConfigDict(extra="forbid")

    deter_size: int = Field(default=256, ge=1, description="Recurrent state width D_h (full scale 2048)")
    stoch_groups: int = Field(default=16, ge=1, description="Categorical groups G (full scale 32)")
    stoch_classes: int = Field(default=16, ge=2, description="Classes per group C (full scale 32)")
    filter_size: int = Field(default=256, ge=1, description="D_m, width of the filtered feature")
    hidden_size: int = Field(default=256, ge=1)
    cnn_depth: int = Field(default=32, ge=1)
    beta: float = Field(default=1.0, ge=0.0, description="KL weight")
    kl_balancing: bool = Field(default=False, description="Mix prior/posterior-frozen KL terms")
    kl_balance: float = Field(default=0.8, ge=0.0, le=1.0)
    free_nats: float = Field(default=0.0, ge=0.0)
    learning_rate: float = Field(default=3e-5, gt=0.0)
    adam_epsilon: float = Field(default=1e-5, gt=0.0)
    grad_clip: float = Field(default=100.0, gt=0.0)
    latent_mode: Literal["sample", "mean"] = "sample"
    dtype: Literal["float32", "float64"] = "float32"
    use_tf_function: bool = True


class ReplayConfig(BaseModel):
    """Replay buffer configuration (capacities in transitions)"""

    model_config = ConfigDict(extra="forbid")

    common_capacity: int = Field(default=100_000, ge=1)
    out_lane_capacity: int = Field(default=20_000, ge=1)
    collision_capacity: int = Field(default=20_000, ge=1)
    batch_size: int = Field(default=16, ge=1)
    sequence_length: int = Field(default=16, ge=1)
    spill_dir: Optional[str] = None


class BehaviorConfig(BaseModel):
    """Actor-critic configuration"""

    model_config = ConfigDict(extra="forbid")

    horizon: int = Field(default=4, ge=1)
    gamma: float = Field(default=0.99, ge=0.0, le=1.0)
    lam: float = Field(default=0.95, ge=0.0, le=1.0)
    eta: float = Field(default=1e-4, ge=0.0, description="Entropy regularizer weight")
    actor_learning_rate: float = Field(default=1e-5, gt=0.0)
    critic_learning_rate: float = Field(default=1e-5, gt=0.0)
    hidden_size: int = Field(default=256, ge=1)
    min_std: float = Field(default=0.1, gt=0.0)
    grad_clip: float = Field(default=100.0, gt=0.0)


class ScheduleConfig(BaseModel):
    """Training schedule"""

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    total_env_steps: int = Field(default=100_000, ge=1)
    env_steps_per_update: int = Field(default=5, ge=1)
    updates_per_round: int = Field(default=1, ge=1, description="K model and K behavior steps per round")
    prefill_episodes: int = Field(default=5, ge=0)
    max_prefill_episodes: int = Field(default=100, ge=1)
    eval_every: int = Field(default=2000, ge=1)
    eval_episodes: int = Field(default=3, ge=1)
    eval_weathers: List[str] = Field(default_factory=lambda: ["clear"])
    checkpoint_every: int = Field(default=10_000, ge=1)
    expl_noise: float = Field(default=0.3, ge=0.0)
    expl_noise_min: float = Field(default=0.0, ge=0.0)
    expl_decay_steps: Optional[int] = Field(default=None, description="Defaults to total_env_steps")
    num_workers: int = Field(default=1, ge=1)
    run_dir: str = Field(
        default="default", description="Run output directory; relative paths are placed under Settings.runs_dir"
    )


class RunConfig(BaseSettings):
    """
    Complete run configuration

    Sources by precedence: explicit overrides > SEMDRIVE_<SECTION>__<KEY> environment
    variables > YAML file > defaults.
    """

    model_config = SettingsConfigDict(env_prefix="SEMDRIVE_", env_nested_delimiter="__", extra="forbid")

    env: EnvConfig = Field(default_factory=EnvConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    replay: ReplayConfig = Field(default_factory=ReplayConfig)
    behavior: BehaviorConfig = Field(default_factory=BehaviorConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    variant: Variant = "sem2"

    @classmethod
    def settings_customise_sources(
        cls, settings_cls, init_settings, env_settings, dotenv_settings, file_secret_settings
    ):
        return env_settings, init_settings

    @model_validator(mode="after")
    def check_horizon_against_episode(self) -> "RunConfig":
        if self.replay.sequence_length > self.env.max_episode_steps:
            raise ValueError("replay.sequence_length cannot exceed env.max_episode_steps")
        return self

    @property
    def use_filter(self) -> bool:
        return self.variant != "no_filter"

    @property
    def multisource(self) -> bool:
        return self.variant != "no_multisource"

    def architecture_fingerprint(self) -> Dict[str, Any]:
        """Keys that determine parameter shapes; used to validate checkpoints"""
        return {
            "env.image_size": self.env.image_size,
            "model.deter_size": self.model.deter_size,
            "model.stoch_groups": self.model.stoch_groups,
            "model.stoch_classes": self.model.stoch_classes,
            "model.filter_size": self.model.filter_size,
            "model.hidden_size": self.model.hidden_size,
            "model.cnn_depth": self.model.cnn_depth,
            "model.dtype": self.model.dtype,
            "behavior.hidden_size": self.behavior.hidden_size,
            "variant.use_filter": self.use_filter,
        }

    def with_overrides(self, assignments: Union[Dict[str, Any], Iterable[str]]) -> "RunConfig":
        """Return a copy with key-path overrides applied (environment is not re-read)"""
        data = self.model_dump(mode="json")
        data = apply_overrides(data, assignments)
        try:
            return RunConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid override: {e}") from e

    @classmethod
    def tiny(cls, **sections: Dict[str, Any]) -> "RunConfig":
        """Miniature configuration for tests and smoke runs"""
        data: Dict[str, Any] = {
            "env": {"layout": "loop", "image_size": 16, "pixels_per_meter": 0.5, "max_episode_steps": 100},
            "model": {
                "deter_size": 16, "stoch_groups": 4, "stoch_classes": 4, "filter_size": 12,
                "hidden_size": 32, "cnn_depth": 4, "learning_rate": 1e-3,
            },
            "replay": {
                "common_capacity": 5000, "out_lane_capacity": 1000, "collision_capacity": 1000,
                "batch_size": 4, "sequence_length": 8,
            },
            "behavior": {"hidden_size": 32, "actor_learning_rate": 1e-4, "critic_learning_rate": 1e-4},
            "schedule": {
                "total_env_steps": 400, "prefill_episodes": 2, "eval_every": 200, "eval_episodes": 1,
                "checkpoint_every": 200,
            },
        }
        for section, values in sections.items():
            data.setdefault(section, {}).update(values)
        return cls.model_validate(data)

    @classmethod
    def full_scale(cls) -> "RunConfig":
        """Full-scale dimensions: 128 px images, 2048-unit recurrent state, 32 x 32 latent"""
        return cls.model_validate({
            "env": {"image_size": 128},
            "model": {"deter_size": 2048, "stoch_groups": 32, "stoch_classes": 32},
            "schedule": {"total_env_steps": 300_000, "eval_every": 20_000},
        })


def _parse_value(raw: str) -> Any:
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw


def apply_overrides(data: Dict[str, Any], assignments: Union[Dict[str, Any], Iterable[str], None]) -> Dict[str, Any]:
    """
    Apply key-path overrides to a nested configuration dictionary

    Args:
        data: Nested configuration dictionary (modified in place)
        assignments: Mapping of "section.key" to value, or strings of the form "section.key=value"

    Returns:
        The updated dictionary
    """
    if not assignments:
        return data
    if isinstance(assignments, dict):
        items = list(assignments.items())
    else:
        items = []
        for assignment in assignments:
            if "=" not in assignment:
                raise ConfigurationError(f"Override must look like key.path=value: '{assignment}'")
            key, raw = assignment.split("=", 1)
            items.append((key.strip(), _parse_value(raw.strip())))

    for key_path, value in items:
        parts = key_path.split(".")
        node = data
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = {}
                node[part] = child
            if not isinstance(child, dict):
                raise ConfigurationError(f"Cannot descend into '{part}' of '{key_path}'")
            node = child
        node[parts[-1]] = value
    return data


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Union[Dict[str, Any], Iterable[str], None] = None,
) -> RunConfig:
    """
    Load a run configuration

    Args:
        path: Optional YAML file
        overrides: Explicit key-path overrides, applied last

    Returns:
        Validated RunConfig

    Raises:
        ConfigurationError: If the file cannot be read or values are invalid
    """
    data: Dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigurationError(f"Config file not found: {config_path}")
        try:
            loaded = yaml.safe_load(config_path.read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Cannot parse config file {config_path}: {e}") from e
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigurationError(f"Config file {config_path} must contain a mapping")
        data = loaded or {}

    try:
        config = RunConfig(**data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e

    if overrides:
        config = config.with_overrides(overrides)

    logger.debug(f"Loaded run config (variant={config.variant}, seed={config.schedule.seed})")
    return config


def resolve_run_dir(run_dir: Union[str, Path], active: Optional[Settings] = None) -> Path:
    """Absolute run directories are kept; relative ones are placed under runs_dir"""
    path = Path(run_dir)
    if path.is_absolute():
        return path
    return Path((active or settings).runs_dir) / path


def validate_configuration(config: RunConfig) -> List[str]:
    """Check a run configuration for combinations that will not train well and return the issues"""
    issues = []
    length = config.replay.sequence_length

    if config.multisource:
        for name in ("out_lane_capacity", "collision_capacity"):
            if getattr(config.replay, name) < 2 * length:
                issues.append(f"replay.{name} is smaller than one corner tail (2 x sequence_length)")

    if config.replay.common_capacity < config.env.max_episode_steps:
        issues.append("replay.common_capacity is smaller than one full episode")

    if config.schedule.num_workers > 1:
        issues.append("parallel collection is only reproducible per worker stream")

    return issues


class LoggingConfig:
    """Logging configuration"""

    @staticmethod
    def get_logging_config(settings: Settings) -> dict:
        """Get logging configuration for logging.config.dictConfig"""
        log_dir = Path(settings.log_file).parent
        log_dir.mkdir(exist_ok=True, parents=True)

        return {
            "version": 1,
            "disable_existing_loggers": False,
            "formatters": {
                "detailed": {
                    "format": "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s",
                    "datefmt": "%Y-%m-%d %H:%M:%S"
                },
                "simple": {
                    "format": "%(levelname)s - %(message)s"
                },
                "json": {
                    "format": "%(asctime)s %(name)s %(levelname)s %(message)s",
                    "class": "pythonjsonlogger.jsonlogger.JsonFormatter"
                }
            },
            "handlers": {
                "console": {
                    "class": "logging.StreamHandler",
                    "level": settings.log_level,
                    "formatter": "simple",
                    "stream": "ext://sys.stdout"
                },
                "file": {
                    "class": "logging.handlers.RotatingFileHandler",
                    "level": settings.log_level,
                    "formatter": "detailed",
                    "filename": settings.log_file,
                    "maxBytes": settings.log_max_bytes,
                    "backupCount": settings.log_backup_count
                },
                "error_file": {
                    "class": "logging.handlers.RotatingFileHandler",
                    "level": "ERROR",
                    "formatter": "json",
                    "filename": str(log_dir / "errors.jsonl"),
                    "maxBytes": settings.log_max_bytes,
                    "backupCount": 3
                }
            },
            "loggers": {
                "semdrive": {
                    "level": settings.log_level,
                    "handlers": ["console", "file", "error_file"],
                    "propagate": False
                },
                "tensorflow": {
                    "level": "WARNING",
                    "handlers": ["file"],
                    "propagate": False
                }
            },
            "root": {
                "level": "WARNING",
                "handlers": ["console"]
            }
        }


def setup_logging(settings: Settings) -> None:
    """Apply the logging configuration"""
    import logging.config

    logging.config.dictConfig(LoggingConfig.get_logging_config(settings))


# Global settings instance
settings = Settings()
