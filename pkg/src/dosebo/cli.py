"""Command line entry points: batch simulation studies and the HTTP service."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import __version__


def _resolve(names, registry, what: str) -> list:
    out = []
    for name in names:
        if name not in registry:
            raise click.UsageError(
                "unknown %s %r; available: %s"
                % (what, name, ", ".join(sorted(registry)))
            )
        out.append(registry[name])
    return out


@click.group()
@click.version_option(version=__version__)
def main() -> None:
    """Constrained Bayesian optimization for personalized dose-finding."""


@main.command()
@click.option("--scenario", "scenario_names", multiple=True, default=("scenario1",),
              show_default=True, help="Scenario name (repeatable).")
@click.option("--design", "design_names", multiple=True, default=("pers-g0.2",),
              show_default=True, help="Design name (repeatable).")
@click.option("--m", default=200, show_default=True,
              help="Replicates per scenario x design cell.")
@click.option("--seed", default=0, show_default=True, help="Master seed.")
@click.option("--threads", default=1, show_default=True,
              help="Worker processes (1 = run in-process).")
@click.option("--out", default="study-output", show_default=True,
              type=click.Path(file_okay=False), help="Output directory.")
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="YAML scenario/design registry (defaults to the built-ins).")
@click.option("--rpsel-samples", default=None, type=int,
              help="Posterior draws per RPSEL evaluation.")
@click.option("--allow-partial", is_flag=True,
              help="Exit 0 even when some replicates failed.")
def simulate(scenario_names, design_names, m, seed, threads, out, config_path,
             rpsel_samples, allow_partial) -> None:
    """Run a replicated simulation study and write metrics.csv + manifest.json."""
    from .config import default_registries, load_config
    from .simulate import (
        DEFAULT_RPSEL_SAMPLES,
        run_study,
        write_manifest,
        write_metrics_csv,
    )

    registries = load_config(config_path) if config_path else default_registries()
    scenarios = _resolve(scenario_names, registries["scenarios"], "scenario")
    designs = _resolve(design_names, registries["designs"], "design")

    click.echo(
        "running %d cell(s) x %d replicate(s) on %d thread(s)"
        % (len(scenarios) * len(designs), m, threads)
    )
    result = run_study(
        scenarios, designs, m,
        master_seed=seed, threads=threads,
        rpsel_samples=rpsel_samples or DEFAULT_RPSEL_SAMPLES,
    )

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(result.rows, out_dir / "metrics.csv")
    write_manifest(result.manifest, out_dir / "manifest.json")
    click.echo("wrote %d metric rows to %s" % (len(result.rows), out_dir / "metrics.csv"))

    failures = result.manifest["failures"]
    if failures:
        for failure in failures:
            click.echo(
                "replicate failed: %(scenario)s/%(design)s #%(replicate)d: %(error)s"
                % failure,
                err=True,
            )
        if not allow_partial:
            click.echo("%d replicate(s) failed; rerun with --allow-partial to "
                       "accept partial results" % len(failures), err=True)
            sys.exit(1)
        click.echo("continuing despite %d failed replicate(s)" % len(failures), err=True)


@main.command()
@click.option("--port", envvar="DOSEBO_PORT", default=8000, show_default=True, type=int)
@click.option("--host", envvar="DOSEBO_HOST", default="127.0.0.1", show_default=True)
@click.option("--state-dir", envvar="DOSEBO_STATE_DIR", default="dosebo-state",
              show_default=True, type=click.Path(file_okay=False),
              help="Directory holding the per-trial event logs.")
def serve(port, host, state_dir) -> None:
    """Run the trial-conduct HTTP service."""
    import uvicorn

    from .service import create_app

    click.echo("serving trial state from %s on %s:%d" % (state_dir, host, port))
    uvicorn.run(create_app(state_dir), host=host, port=port)


if __name__ == "__main__":
    main()
