"""Command-line front end: base training, experiments, acceptance, benchmarks."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import acceptance, experiments, kernels


def _load_overrides(config_path) -> dict | None:
    if config_path is None:
        return None
    return experiments.load_config_file(config_path)


@click.group()
def main() -> None:
    """Desk-scale speech personalization workbench."""


@main.command("train-base")
@click.option("--config", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON file overriding default settings.")
@click.option("--out", type=click.Path(file_okay=False), default="runs/base",
              show_default=True, help="Output directory for base artifacts.")
def train_base_cmd(config, out) -> None:
    """Train the base recognizer; writes checkpoint, Fisher, anchors, reports."""
    doc = experiments.train_base(_load_overrides(config), out)
    stats = doc["training"]["epochs"]
    click.echo(f"epochs run: {len(stats)}, returned epoch: "
               f"{doc['training']['returned_epoch']}")
    click.echo(f"base test WER: {doc['final_base_wer']:.4f} "
               f"(target < {doc['config']['base_train']['target_wer']})")
    if doc["diverged"]:
        click.echo("training diverged; best earlier checkpoint was kept")
    if not doc["converged"]:
        click.echo("NOT CONVERGED", err=True)
        sys.exit(1)
    click.echo(f"artifacts under {out}")


@main.command("run")
@click.option("--experiment", "name", required=True,
              type=click.Choice(experiments.EXPERIMENT_NAMES))
@click.option("--seeds", default="0,1,2", show_default=True,
              help="Comma-separated user seeds.")
@click.option("--seed", "single_seed", type=int, default=None,
              help="Shortcut for a single seed (overrides --seeds).")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", type=click.Path(file_okay=False), default="runs",
              show_default=True)
@click.option("--base-checkpoint", type=click.Path(exists=True),
              default="runs/base/checkpoint.json", show_default=True,
              help="Base checkpoint file (Fisher/anchors expected alongside).")
def run_cmd(name, seeds, single_seed, config, out, base_checkpoint) -> None:
    """Run one experiment and write report.json + timing.json."""
    seed_list = ([single_seed] if single_seed is not None
                 else [int(s) for s in seeds.split(",") if s.strip() != ""])
    report, timing = experiments.run_experiment(
        name, seed_list, base_checkpoint, _load_overrides(config), out)
    evaluation = report.get("evaluation", timing.get("evaluation", {}))
    for key, value in evaluation.items():
        click.echo(f"{key}: {value}")
    click.echo(f"report: {Path(out) / name / 'report.json'}")


@main.command("accept")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", type=click.Path(file_okay=False), default="runs/acceptance",
              show_default=True)
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--reuse/--no-reuse", default=True, show_default=True,
              help="Reuse existing artifacts under --out when present.")
def accept_cmd(config, out, seeds, reuse) -> None:
    """Evaluate every acceptance criterion; exit status reflects the verdict."""
    seed_list = [int(s) for s in seeds.split(",") if s.strip() != ""]
    results = acceptance.run_all(out, overrides=_load_overrides(config),
                                 seeds=seed_list, reuse=reuse)
    failed = 0
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        click.echo(f"{mark} - {r.number:2d}. {r.name}: {r.detail}")
        failed += 0 if r.passed else 1
    click.echo(f"{len(results) - failed}/{len(results)} criteria passed")
    sys.exit(1 if failed else 0)


@main.command("bench-kernels")
@click.option("--repeats", type=int, default=5, show_default=True)
def bench_cmd(repeats) -> None:
    """Compare the pure and compiled kernel routes on identical work."""
    doc = experiments.kernel_benchmark(repeats=repeats)
    click.echo(f"active backend: {kernels.backend_name()}")
    for tag in ("lstm", "transducer_loss"):
        pure = doc["pure_seconds"][tag]
        line = f"{tag:16s} pure {pure * 1000:8.2f} ms"
        if doc["compiled_seconds"] is not None:
            comp = doc["compiled_seconds"][tag]
            line += f"   compiled {comp * 1000:8.2f} ms   speedup {pure / comp:6.1f}x"
        click.echo(line)


if __name__ == "__main__":
    main()
