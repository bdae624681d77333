"""
Greedy-policy evaluation under weather shift
"""

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import stats

from ..env.rendering import Weather, get_weather
from ..env.simulator import DrivingSimulator, Termination
from ..utils.config import RunConfig
from ..utils.errors import ArgumentError, ConfigurationError
from .agent import Agent
from .collector import Collector, summarize
from .metrics import MetricsWriter, read_metrics

logger = logging.getLogger(__name__)

CONFIDENCE = 0.95


@dataclass
class EvalRow:
    """Returns of one weather condition with a normal-approximation confidence interval"""

    weather: str
    mean_return: float
    ci_half_width: float
    returns: List[float]
    lengths: List[int]
    terminations: Dict[str, int] = field(default_factory=dict)

    @property
    def ci_low(self) -> float:
        return self.mean_return - self.ci_half_width

    @property
    def ci_high(self) -> float:
        return self.mean_return + self.ci_half_width

    @property
    def episodes(self) -> int:
        return len(self.returns)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "weather": self.weather,
            "mean_return": self.mean_return,
            "ci_half_width": self.ci_half_width,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "episodes": self.episodes,
            "returns": list(self.returns),
            "lengths": list(self.lengths),
            "terminations": dict(self.terminations),
        }


def confidence_interval(returns: Sequence[float], confidence: float = CONFIDENCE) -> float:
    """Half-width of the normal-approximation interval of the mean; 0 for a single episode"""
    values = np.asarray(returns, dtype=np.float64)
    if values.size < 2:
        return 0.0
    z = float(stats.norm.ppf(0.5 + confidence / 2.0))
    return z * float(values.std(ddof=1)) / math.sqrt(values.size)


def _as_weather(weather: Union[Weather, str]) -> Weather:
    return get_weather(weather) if isinstance(weather, str) else weather


def evaluate_agent(
    agent: Agent,
    weathers: Sequence[Union[Weather, str]],
    episodes_per_weather: int,
    seed: int = 0,
    layout_id: Optional[str] = None,
) -> List[EvalRow]:
    """
    Run greedy episodes of an agent for every weather

    Episode i of every weather uses environment seed `seed + i` and its own latent-sampling
    stream, so identical weather entries produce identical rows.

    Args:
        agent: Trained agent; its parameters are not modified
        weathers: Weather presets or preset names
        episodes_per_weather: Episodes per weather (>= 1)
        seed: Base seed
        layout_id: Layout to drive on; the configured evaluation layout when omitted

    Returns:
        One EvalRow per weather, in input order
    """
    if episodes_per_weather < 1:
        raise ArgumentError(f"episodes_per_weather must be >= 1, got {episodes_per_weather}")
    if not weathers:
        raise ArgumentError("At least one weather is required")
    if seed < 0:
        raise ArgumentError(f"seed must be >= 0, got {seed}")

    env_config = agent.config.env
    layout_id = layout_id or env_config.eval_layout or env_config.layout
    env = DrivingSimulator.from_config(env_config)

    rows = []
    for entry in weathers:
        weather = _as_weather(entry)
        returns, lengths, kinds = [], [], Counter()
        for i in range(episodes_per_weather):
            collector = Collector(env, agent, seed=[seed, i], layout_id=layout_id, weather=weather)
            summary = summarize(collector.run_episode(episode_id=i, episode_seed=seed + i, greedy=True))
            returns.append(summary.episode_return)
            lengths.append(summary.length)
            kinds[summary.termination] += 1

        row = EvalRow(
            weather=weather.name,
            mean_return=float(np.mean(returns)),
            ci_half_width=confidence_interval(returns),
            returns=returns,
            lengths=lengths,
            terminations={kind.value: kinds.get(kind.value, 0) for kind in Termination if kind != Termination.NONE},
        )
        logger.info(
            f"Eval weather={row.weather} mean={row.mean_return:.2f} "
            f"+/-{row.ci_half_width:.2f} over {row.episodes} episodes"
        )
        rows.append(row)
    return rows


def evaluate(
    checkpoint: Union[str, Path],
    weathers: Sequence[Union[Weather, str]],
    episodes_per_weather: int,
    seed: int = 0,
    config: Optional[RunConfig] = None,
    metrics_path: Optional[Union[str, Path]] = None,
) -> List[EvalRow]:
    """
    Evaluate a checkpoint with the greedy actor under each weather

    Args:
        checkpoint: Checkpoint file written by training
        weathers: Weather presets or preset names
        episodes_per_weather: Episodes per weather (>= 1)
        seed: Base seed
        config: Configuration to build the agent with; the checkpoint's own when omitted
        metrics_path: When given, the rows are also written there as `eval` records at the
            checkpoint's global step, replacing any earlier content

    Raises:
        CheckpointMismatchError: If `config` does not match the checkpoint architecture
        ArgumentError: If episodes_per_weather < 1 or no weather is given
    """
    if episodes_per_weather < 1:
        raise ArgumentError(f"episodes_per_weather must be >= 1, got {episodes_per_weather}")
    agent, loaded = Agent.from_checkpoint(checkpoint, config)
    rows = evaluate_agent(agent, weathers, episodes_per_weather, seed)
    if metrics_path is not None:
        with MetricsWriter(metrics_path, overwrite=True) as writer:
            for row in rows:
                writer.write("eval", loaded.global_step, checkpoint=str(checkpoint), seed=seed, **row.as_dict())
        logger.info(f"Wrote {len(rows)} eval records to {metrics_path}")
    return rows


# ---- experiment comparison ------------------------------------------------

REFERENCE_VARIANT = "sem2"
# Share of seeds on which the reference variant must reach at least the baseline's return
WIN_FRACTIONS: Dict[str, float] = {"no_filter": 0.8, "no_multisource": 0.6}
SEED_DIR = re.compile(r"^seed(\d+)$")


@dataclass
class VariantComparison:
    """Per-seed ordering of the reference variant against one baseline"""

    reference: str
    baseline: str
    seeds: List[int]
    reference_returns: List[float]
    baseline_returns: List[float]
    fraction: float

    @property
    def wins(self) -> List[bool]:
        return [ref >= base for ref, base in zip(self.reference_returns, self.baseline_returns)]

    @property
    def win_count(self) -> int:
        return sum(self.wins)

    @property
    def required(self) -> int:
        return math.ceil(round(self.fraction * len(self.seeds), 9))

    @property
    def passed(self) -> bool:
        return bool(self.seeds) and self.win_count >= self.required

    def as_dict(self) -> Dict[str, Any]:
        return {
            "reference": self.reference,
            "baseline": self.baseline,
            "seeds": list(self.seeds),
            "reference_returns": list(self.reference_returns),
            "baseline_returns": list(self.baseline_returns),
            "wins": self.win_count,
            "required": self.required,
            "passed": self.passed,
        }


def mean_eval_return(path: Union[str, Path], weathers: Optional[Sequence[str]] = None) -> float:
    """
    Mean of the per-weather mean returns in the latest evaluation of a metrics file

    Only records at the largest global step count, so a training stream with several
    periodic evaluations contributes its last one.

    Raises:
        ConfigurationError: If the file holds no eval records, or none for the requested weathers
    """
    frame = read_metrics(path, "eval")
    if frame.empty:
        raise ConfigurationError(f"No eval records in {path}")
    latest = frame[frame["global_step"] == frame["global_step"].max()]
    if weathers:
        latest = latest[latest["weather"].isin(list(weathers))]
        if latest.empty:
            raise ConfigurationError(f"No eval records for weathers {list(weathers)} in {path}")
    return float(latest["mean_return"].mean())


def discover_runs(root: Union[str, Path], file_name: str) -> Dict[str, Dict[int, Path]]:
    """Find `<root>/<variant>/seed<k>/<file_name>` and map variant -> seed -> path"""
    base = Path(root)
    if not base.is_dir():
        raise ConfigurationError(f"Experiment directory not found: {base}")
    runs: Dict[str, Dict[int, Path]] = {}
    for path in sorted(base.glob(f"*/seed*/{file_name}")):
        match = SEED_DIR.match(path.parent.name)
        if match is None:
            continue
        runs.setdefault(path.parent.parent.name, {})[int(match.group(1))] = path
    return runs


def compare_variants(
    scores: Dict[str, Dict[int, float]],
    reference: str = REFERENCE_VARIANT,
    fractions: Optional[Dict[str, float]] = None,
) -> List[VariantComparison]:
    """
    Order the reference variant against each baseline on their shared seeds

    Args:
        scores: variant -> seed -> mean evaluation return
        reference: Variant expected to match or beat the baselines
        fractions: baseline -> share of shared seeds the reference must win; WIN_FRACTIONS when omitted

    Returns:
        One comparison per baseline present in `scores`, in `fractions` order

    Raises:
        ConfigurationError: If the reference variant has no scores
    """
    fractions = WIN_FRACTIONS if fractions is None else fractions
    if not scores.get(reference):
        raise ConfigurationError(f"No results for reference variant '{reference}'")

    comparisons = []
    for baseline, fraction in fractions.items():
        if baseline not in scores:
            logger.warning(f"No results for variant '{baseline}'; skipping its comparison")
            continue
        seeds = sorted(set(scores[reference]) & set(scores[baseline]))
        if not seeds:
            logger.warning(f"Variants '{reference}' and '{baseline}' share no seeds")
        comparison = VariantComparison(
            reference=reference,
            baseline=baseline,
            seeds=seeds,
            reference_returns=[scores[reference][s] for s in seeds],
            baseline_returns=[scores[baseline][s] for s in seeds],
            fraction=fraction,
        )
        logger.info(
            f"{reference} >= {baseline} on {comparison.win_count}/{len(seeds)} seeds "
            f"(required {comparison.required}): {'pass' if comparison.passed else 'fail'}"
        )
        comparisons.append(comparison)
    return comparisons


def compare_runs(
    root: Union[str, Path],
    file_name: str = "heldout.jsonl",
    weathers: Optional[Sequence[str]] = None,
    reference: str = REFERENCE_VARIANT,
) -> List[VariantComparison]:
    """Score every `<root>/<variant>/seed<k>/<file_name>` and compare the variants"""
    runs = discover_runs(root, file_name)
    if not runs:
        raise ConfigurationError(f"No '{file_name}' files under {root}/<variant>/seed<k>/")
    scores = {
        variant: {seed: mean_eval_return(path, weathers) for seed, path in paths.items()}
        for variant, paths in runs.items()
    }
    return compare_variants(scores, reference)
