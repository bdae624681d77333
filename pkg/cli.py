#!/usr/bin/env python3
"""
semdrive CLI
Command-line interface for training, evaluating and inspecting semantic-masked world-model agents

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

# Add the project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from semdrive.env.rendering import Weather, get_weather, load_weathers
from semdrive.utils.config import Settings, load_run_config, settings, setup_logging
from semdrive.utils.errors import NumericalError, SemDriveError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

console = Console()


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        console.print(f"❌ {message}", style="red")
        sys.exit(EXIT_USAGE)


def parse_weathers(value: str) -> List[Weather]:
    """A weather YAML file, or a comma-separated list of preset names"""
    if Path(value).is_file():
        return load_weathers(value)
    return [get_weather(name.strip()) for name in value.split(",") if name.strip()]


def run_train(args) -> int:
    """Train an agent"""
    from semdrive.core.trainer import train

    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"schedule.seed={args.seed}")
    if args.variant:
        overrides.append(f"variant={args.variant}")
    config = load_run_config(args.config, overrides)

    console.print(f"🚀 Training variant [bold]{config.variant}[/bold] with seed {config.schedule.seed}")
    result = train(config, run_dir=args.run_dir, frames_dir=args.frames)

    console.print("✅ Training finished")
    console.print(f"   Steps: {result.global_step} | Updates: {result.updates} | Episodes: {result.episodes}")
    if result.first_loss is not None:
        console.print(f"   Model loss: {result.first_loss:.3f} → {result.last_loss:.3f}")
    if result.best_return is not None:
        console.print(f"🏆 Best eval return: {result.best_return:.2f} ({result.best_checkpoint})")
    console.print(f"💾 Final checkpoint: {result.final_checkpoint}")
    console.print(f"📈 Metrics: {result.metrics_path}")
    return EXIT_OK


def run_evaluate(args) -> int:
    """Evaluate a checkpoint under a list of weathers"""
    from semdrive.core.evaluator import evaluate

    config = load_run_config(args.config) if args.config else None
    weathers = parse_weathers(args.weathers)
    console.print(f"🧪 Evaluating {args.checkpoint} on {len(weathers)} weathers x {args.episodes} episodes")
    rows = evaluate(args.checkpoint, weathers, args.episodes, seed=args.seed, config=config, metrics_path=args.out)

    table = Table(title="Evaluation (greedy actor)")
    table.add_column("Weather")
    table.add_column("Mean return", justify="right")
    table.add_column("95% CI", justify="right")
    table.add_column("Episodes", justify="right")
    table.add_column("Terminations")
    for row in rows:
        kinds = ", ".join(f"{kind}={count}" for kind, count in row.terminations.items() if count)
        table.add_row(
            row.weather,
            f"{row.mean_return:.2f}",
            f"[{row.ci_low:.2f}, {row.ci_high:.2f}]",
            str(row.episodes),
            kinds or "-",
        )
    console.print(table)
    if args.out:
        console.print(f"📈 Eval records: {args.out}")
    return EXIT_OK


def run_compare(args) -> int:
    """Compare variants across seeds from their evaluation files"""
    from semdrive.core.evaluator import compare_runs

    weathers = [name.strip() for name in args.weathers.split(",") if name.strip()] if args.weathers else None
    comparisons = compare_runs(args.root, args.file, weathers=weathers, reference=args.reference)
    if not comparisons:
        console.print("⚠️ No baseline variants to compare against")
        return EXIT_USAGE

    for comparison in comparisons:
        table = Table(title=f"{comparison.reference} vs {comparison.baseline}")
        table.add_column("Seed", justify="right")
        table.add_column(comparison.reference, justify="right")
        table.add_column(comparison.baseline, justify="right")
        table.add_column("≥")
        for seed, ref, base, win in zip(
            comparison.seeds, comparison.reference_returns, comparison.baseline_returns, comparison.wins
        ):
            table.add_row(str(seed), f"{ref:.2f}", f"{base:.2f}", "✅" if win else "❌")
        console.print(table)
        verdict = "✅ pass" if comparison.passed else "❌ fail"
        console.print(
            f"   {comparison.win_count}/{len(comparison.seeds)} seeds, {comparison.required} required: {verdict}"
        )
    return EXIT_OK


def run_inspect(args) -> int:
    """Write reconstruction panels for a dumped episode"""
    from semdrive.core.inspector import inspect

    report = inspect(args.checkpoint, args.episode, args.out, scale=args.scale)
    console.print(f"🖼️ Wrote {len(report.panels)} panels to {args.out}")
    if report.has_mask:
        console.print(f"   Mask reconstruction accuracy: {report.mask_accuracy:.4f}")
    else:
        console.print("⏭️ No mask decoder in this checkpoint; mask column omitted")
    return EXIT_OK


def run_plot(args) -> int:
    """Render plots of a metrics stream"""
    from semdrive.core.plots import plot_metrics

    written = plot_metrics(args.metrics, args.out)
    if not written:
        console.print("⚠️ Nothing to plot")
    for path in written:
        console.print(f"📊 {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(
        prog="semdrive",
        description="semdrive - semantic-masked world model for end-to-end driving",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s train --config configs/tiny.yaml --seed 1 --variant sem2
  %(prog)s train --config configs/desk.yaml --set model.beta=0.5 --frames frames/
  %(prog)s evaluate --checkpoint runs/tiny/best.ckpt --weathers configs/weathers_heldout.yaml --episodes 10
  %(prog)s compare --root runs/desk --file heldout.jsonl
  %(prog)s inspect --checkpoint runs/tiny/final.ckpt --episode runs/tiny/episodes/episode_000003.joblib
  %(prog)s plot --metrics runs/tiny/metrics.jsonl --out runs/tiny/plots
        """
    )
    parser.add_argument("--log-level", help="Override SEMDRIVE_LOG_LEVEL (DEBUG, INFO, WARNING, ...)")

    subparsers = parser.add_subparsers(dest="command", help="Available commands", parser_class=UsageParser)

    train_parser = subparsers.add_parser("train", help="Train an agent")
    train_parser.add_argument("--config", help="YAML run configuration")
    train_parser.add_argument("--seed", type=int, help="Override schedule.seed")
    train_parser.add_argument("--variant", choices=["sem2", "no_filter", "no_multisource"], help="Override variant")
    train_parser.add_argument("--set", action="append", metavar="KEY.PATH=VALUE", help="Override a config value")
    train_parser.add_argument("--run-dir", help="Output directory (defaults to schedule.run_dir under SEMDRIVE_RUNS_DIR)")
    train_parser.add_argument("--frames", metavar="DIR", help="Dump PNG frames of the first collected episode")
    train_parser.set_defaults(func=run_train)

    eval_parser = subparsers.add_parser("evaluate", help="Evaluate a checkpoint under weather shift")
    eval_parser.add_argument("--checkpoint", required=True, help="Checkpoint file")
    eval_parser.add_argument(
        "--weathers", default="clear", help="Weather YAML file or comma-separated preset names"
    )
    eval_parser.add_argument("--episodes", type=int, default=10, help="Episodes per weather")
    eval_parser.add_argument("--seed", type=int, default=0, help="Base evaluation seed")
    eval_parser.add_argument("--config", help="Run configuration to check the checkpoint against")
    eval_parser.add_argument("--out", metavar="FILE", help="Write the rows as eval records to this metrics file")
    eval_parser.set_defaults(func=run_evaluate)

    compare_parser = subparsers.add_parser("compare", help="Compare variants across seeds")
    compare_parser.add_argument("--root", required=True, help="Directory holding <variant>/seed<k>/ runs")
    compare_parser.add_argument("--file", default="heldout.jsonl", help="Eval metrics file inside each seed directory")
    compare_parser.add_argument("--weathers", help="Comma-separated weathers to average (all when omitted)")
    compare_parser.add_argument("--reference", default="sem2", help="Variant compared against the others")
    compare_parser.set_defaults(func=run_compare)

    inspect_parser = subparsers.add_parser("inspect", help="Render reconstruction panels of an episode dump")
    inspect_parser.add_argument("--checkpoint", required=True, help="Checkpoint file")
    inspect_parser.add_argument("--episode", required=True, help="Episode dump (.joblib)")
    inspect_parser.add_argument("--out", default="panels", help="Output directory")
    inspect_parser.add_argument("--scale", type=int, default=4, help="Integer upscaling of the panels")
    inspect_parser.set_defaults(func=run_inspect)

    plot_parser = subparsers.add_parser("plot", help="Plot a metrics stream")
    plot_parser.add_argument("--metrics", required=True, help="metrics.jsonl written by train")
    plot_parser.add_argument("--out", default="plots", help="Output directory")
    plot_parser.set_defaults(func=run_plot)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_USAGE

    active = settings
    if args.log_level:
        try:
            active = Settings(log_level=args.log_level)
        except ValidationError as e:
            console.print(f"❌ Invalid --log-level: {e.errors()[0]['msg']}", style="red")
            return EXIT_USAGE
    setup_logging(active)

    try:
        return args.func(args)
    except NumericalError as e:
        console.print(f"💥 Numerical failure: {e}", style="red")
        return EXIT_NUMERICAL
    except SemDriveError as e:
        console.print(f"❌ {e}", style="red")
        return EXIT_USAGE
    except KeyboardInterrupt:
        console.print("\n👋 Interrupted")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
