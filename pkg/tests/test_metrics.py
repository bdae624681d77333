"""
Tests for the metrics stream and plots
"""

import json
from unittest.mock import patch

import numpy as np
import pytest

from semdrive.core.metrics import MetricsWriter, flatten_stats, read_metrics
from semdrive.core.plots import plot_metrics
from semdrive.utils.errors import ArgumentError, ConfigurationError


def write_sample_stream(path):
    with MetricsWriter(path) as writer:
        writer.write("episode", 10, episode_return=1.0, length=10, termination="collision")
        writer.write("train", 20, total=5.0, image_nll=3.0, mask_nll=1.0, reward_nll=0.5, kl=0.5)
        writer.write("episode", 30, episode_return=2.0, length=20, termination="timeout")
        writer.write("train", 40, total=4.0, image_nll=2.5, mask_nll=0.8, reward_nll=0.4, kl=0.3)
        writer.write("eval", 40, weather="clear", mean_return=1.5, ci_low=1.0, ci_high=2.0)
        writer.write("eval", 40, weather="rain", mean_return=0.5, ci_low=0.0, ci_high=1.0)
    return path


@pytest.mark.unit
class TestMetricsWriter:
    """Test the JSON-lines writer"""

    def test_sorted_keys_and_count(self, tmp_path):
        """Test records are single lines with sorted keys"""
        path = tmp_path / "metrics.jsonl"
        with MetricsWriter(path) as writer:
            writer.write("train", 0, zeta=1, alpha=2)
            assert writer.count == 1
        line = path.read_text(encoding="utf-8").strip()
        assert line == '{"alpha": 2, "global_step": 0, "kind": "train", "zeta": 1}'

    def test_non_finite_values_become_null(self, tmp_path):
        """Test NaN and infinities are written as null"""
        path = tmp_path / "metrics.jsonl"
        with MetricsWriter(path) as writer:
            writer.write("train", 0, loss=float("nan"), nested={"a": float("inf")}, values=[1.0, float("-inf")])
        record = json.loads(path.read_text(encoding="utf-8"))
        assert record["loss"] is None
        assert record["nested"] == {"a": None}
        assert record["values"] == [1.0, None]

    def test_numpy_scalars(self, tmp_path):
        """Test numpy scalars are stored as plain JSON numbers"""
        path = tmp_path / "metrics.jsonl"
        with MetricsWriter(path) as writer:
            writer.write("episode", np.int64(3), episode_return=np.float32(1.5), length=np.int64(7))
        record = json.loads(path.read_text(encoding="utf-8"))
        assert record == {"episode_return": 1.5, "global_step": 3, "kind": "episode", "length": 7}

    def test_step_must_not_decrease(self, tmp_path):
        """Test a decreasing global step is rejected"""
        with MetricsWriter(tmp_path / "metrics.jsonl") as writer:
            writer.write("train", 5)
            writer.write("eval", 5)
            with pytest.raises(ArgumentError):
                writer.write("train", 4)

    def test_appending_continues_the_step_order(self, tmp_path):
        """Test a second writer on the same file cannot restart the step count"""
        path = tmp_path / "metrics.jsonl"
        with MetricsWriter(path) as writer:
            writer.write("train", 10)
        with MetricsWriter(path) as writer:
            with pytest.raises(ArgumentError):
                writer.write("train", 0)
            writer.write("train", 10)
        assert len(read_metrics(path)) == 2

    def test_overwrite_starts_a_fresh_stream(self, tmp_path):
        """Test overwrite discards earlier records"""
        path = tmp_path / "metrics.jsonl"
        with MetricsWriter(path) as writer:
            writer.write("train", 10)
        with MetricsWriter(path, overwrite=True) as writer:
            writer.write("train", 0)
        assert read_metrics(path)["global_step"].tolist() == [0]

    def test_append_to_corrupt_stream(self, tmp_path):
        path = tmp_path / "metrics.jsonl"
        path.write_text("not json\n", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            MetricsWriter(path)

    def test_unknown_kind(self, tmp_path):
        with MetricsWriter(tmp_path / "metrics.jsonl") as writer:
            with pytest.raises(ArgumentError):
                writer.write("debug", 0)


@pytest.mark.unit
class TestReadMetrics:
    """Test loading metrics into DataFrames"""

    def test_filter_by_kind(self, tmp_path):
        """Test records are selected by kind"""
        path = write_sample_stream(tmp_path / "metrics.jsonl")
        assert len(read_metrics(path)) == 6
        train = read_metrics(path, "train")
        assert list(train["global_step"]) == [20, 40]
        assert list(read_metrics(path, "eval")["weather"]) == ["clear", "rain"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            read_metrics(tmp_path / "absent.jsonl")

    def test_corrupt_line(self, tmp_path):
        """Test an unparsable line names the file position"""
        path = tmp_path / "metrics.jsonl"
        path.write_text('{"kind": "train", "global_step": 0}\nnot json\n', encoding="utf-8")
        with pytest.raises(ConfigurationError, match=":2:"):
            read_metrics(path)

    def test_empty_file(self, tmp_path):
        """Test an empty stream gives empty frames"""
        path = tmp_path / "metrics.jsonl"
        path.touch()
        assert read_metrics(path, "train").empty

    def test_flatten_stats(self):
        stats = {"common": {"episodes": 2, "transitions": 40}, "collision": {"episodes": 1, "transitions": 8}}
        assert flatten_stats(stats) == {
            "buffer_common_episodes": 2,
            "buffer_common_transitions": 40,
            "buffer_collision_episodes": 1,
            "buffer_collision_transitions": 8,
        }


@pytest.mark.unit
class TestPlots:
    """Test metrics plots"""

    def test_html_fallback(self, tmp_path):
        """Test figures fall back to HTML when static export fails"""
        path = write_sample_stream(tmp_path / "metrics.jsonl")
        with patch("plotly.graph_objects.Figure.write_image", side_effect=ValueError("no kaleido")):
            written = plot_metrics(path, tmp_path / "plots")
        assert [p.name for p in written] == ["losses.html", "episode_returns.html", "eval_returns.html"]
        assert all(p.exists() for p in written)

    def test_png_export(self, tmp_path):
        """Test PNG files are written through the static image backend"""
        path = write_sample_stream(tmp_path / "metrics.jsonl")

        def fake_write_image(figure, target):
            with open(target, "wb") as fh:
                fh.write(b"\x89PNG")

        with patch("plotly.graph_objects.Figure.write_image", autospec=True, side_effect=fake_write_image):
            written = plot_metrics(path, tmp_path / "plots")
        assert [p.suffix for p in written] == [".png", ".png", ".png"]

    def test_only_available_plots(self, tmp_path):
        """Test kinds without records produce no figure"""
        path = tmp_path / "metrics.jsonl"
        with MetricsWriter(path) as writer:
            writer.write("episode", 1, episode_return=0.0)
        with patch("plotly.graph_objects.Figure.write_image", side_effect=ValueError("no kaleido")):
            written = plot_metrics(path, tmp_path / "plots")
        assert [p.stem for p in written] == ["episode_returns"]

    def test_nothing_to_plot(self, tmp_path):
        path = tmp_path / "metrics.jsonl"
        path.touch()
        assert plot_metrics(path, tmp_path / "plots") == []
