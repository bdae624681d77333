"""
Plots of a metrics stream: training losses, episode returns and evaluation returns
"""

import logging
from pathlib import Path
from typing import Dict, List, Union

import pandas as pd
import plotly.graph_objects as go

from .metrics import read_metrics

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("total", "image_nll", "mask_nll", "reward_nll", "kl", "actor_loss", "critic_loss")


def _save(figure: go.Figure, out_dir: Path, name: str) -> Path:
    """Write PNG when a static image backend is available, HTML otherwise"""
    png = out_dir / f"{name}.png"
    try:
        figure.write_image(str(png))
        return png
    except (ValueError, ImportError, RuntimeError) as e:
        html = out_dir / f"{name}.html"
        logger.warning(f"Static image export unavailable ({e}); writing {html.name} instead")
        figure.write_html(str(html), include_plotlyjs="cdn")
        return html


def loss_figure(train: pd.DataFrame) -> go.Figure:
    figure = go.Figure()
    for column in LOSS_COLUMNS:
        if column in train and train[column].notna().any():
            figure.add_trace(go.Scatter(x=train["global_step"], y=train[column], mode="lines", name=column))
    figure.update_layout(title="Training losses", xaxis_title="environment step", yaxis_title="loss")
    return figure


def episode_figure(episodes: pd.DataFrame, window: int = 10) -> go.Figure:
    figure = go.Figure()
    figure.add_trace(
        go.Scatter(x=episodes["global_step"], y=episodes["episode_return"], mode="markers", name="episode", opacity=0.4)
    )
    smoothed = episodes["episode_return"].rolling(window, min_periods=1).mean()
    figure.add_trace(go.Scatter(x=episodes["global_step"], y=smoothed, mode="lines", name=f"mean of {window}"))
    figure.update_layout(title="Episode returns", xaxis_title="environment step", yaxis_title="return")
    return figure


def eval_figure(evals: pd.DataFrame) -> go.Figure:
    """Mean evaluation return per weather with its 95% confidence band"""
    figure = go.Figure()
    for weather, rows in evals.groupby("weather", sort=True):
        rows = rows.sort_values("global_step")
        steps = rows["global_step"].tolist()
        figure.add_trace(
            go.Scatter(
                x=steps + steps[::-1],
                y=rows["ci_high"].tolist() + rows["ci_low"].tolist()[::-1],
                fill="toself",
                opacity=0.2,
                line={"width": 0},
                showlegend=False,
                name=f"{weather} 95% CI",
            )
        )
        figure.add_trace(go.Scatter(x=steps, y=rows["mean_return"], mode="lines+markers", name=str(weather)))
    figure.update_layout(title="Evaluation return", xaxis_title="environment step", yaxis_title="mean return")
    return figure


def plot_metrics(metrics_path: Union[str, Path], out_dir: Union[str, Path]) -> List[Path]:
    """
    Render every plot the metrics stream has data for

    Args:
        metrics_path: Metrics file written by training
        out_dir: Output directory (created if missing)

    Returns:
        Paths of the written figures
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames: Dict[str, pd.DataFrame] = {kind: read_metrics(metrics_path, kind) for kind in ("train", "episode", "eval")}

    written = []
    if not frames["train"].empty:
        written.append(_save(loss_figure(frames["train"]), out, "losses"))
    if not frames["episode"].empty:
        written.append(_save(episode_figure(frames["episode"]), out, "episode_returns"))
    if not frames["eval"].empty:
        written.append(_save(eval_figure(frames["eval"]), out, "eval_returns"))

    if not written:
        logger.warning(f"No records to plot in {metrics_path}")
    return written
