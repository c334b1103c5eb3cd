"""CLI entry point for memfem."""

import logging
import sys
from pathlib import Path

import click
from dotenv import load_dotenv
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table as RichTable

from memfem.config import Config
from memfem.exceptions import ConfigError, MemfemError, SolverError
from memfem.scenarios import builtin_scenarios, export_builtins
from memfem.simulator import EXIT_CONFIG, EXIT_ERROR, EXIT_SOLVER, MembraneSimulator

console = Console()


def setup_logging(level: str = "INFO"):
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%H:%M:%S",
    )


def _fmt(value, spec: str = ".6g") -> str:
    return "-" if value is None else format(value, spec)


@click.group()
@click.option("--config", "-c", default=None, help="Path to config file")
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging")
@click.pass_context
def cli(ctx, config, verbose):
    """memfem - nonlinear membrane finite element solver."""
    load_dotenv(override=False)
    ctx.ensure_object(dict)
    try:
        ctx.obj["config"] = Config.load(config)
    except ValidationError as e:
        console.print(f"[red]Invalid configuration:[/red] {e}")
        sys.exit(EXIT_CONFIG)
    setup_logging("DEBUG" if verbose else ctx.obj["config"].app.log_level)


@cli.command()
@click.argument("source")
@click.option("--quadrature", "-q", type=click.IntRange(1, 6), default=None,
              help="Gauss points per direction (overrides the scenario)")
@click.option("--strict-deterministic", is_flag=True, help="Serial assembly only")
@click.option("--out", "-o", "out_dir", default=None, help="Output directory")
@click.pass_context
def run(ctx, source, quadrature, strict_deterministic, out_dir):
    """Run a scenario file (JSON) or a builtin scenario by name."""
    config = ctx.obj["config"]
    simulator = MembraneSimulator(config=config)

    try:
        with console.status("[bold green]Solving..."):
            result = simulator.run(
                source, Path(out_dir) if out_dir else None, quadrature, strict_deterministic
            )
    except ConfigError as e:
        console.print(f"[red]Configuration error:[/red] {e}")
        sys.exit(EXIT_CONFIG)
    except SolverError as e:
        console.print(f"[red]Solver error:[/red] {e}")
        sys.exit(EXIT_SOLVER)
    except MemfemError as e:
        console.print(f"[red]Error:[/red] {e}")
        sys.exit(EXIT_ERROR)

    table = RichTable(title=f"Scenario: {result.scenario.name}")
    table.add_column("Step", style="cyan")
    table.add_column(result.scenario.schedule.parameter.value, style="cyan")
    table.add_column("V", style="green")
    table.add_column("p_v", style="green")
    table.add_column("sigma_min", style="green")
    table.add_column("|I1/2g - 1|", style="green")
    table.add_column("Iterations", style="magenta")
    for r in result.records:
        sigma = _fmt(r.sigma_min, ".4g")
        table.add_row(
            str(r.step),
            _fmt(r.load_value),
            _fmt(r.volume),
            _fmt(r.p_v, ".10g"),
            f"[red]{sigma}[/red]" if r.compression else sigma,
            _fmt(r.surface_tension_error, ".3e"),
            str(r.iterations),
        )
    console.print(table)
    if result.compression_steps:
        console.print(
            f"[yellow]Warning:[/yellow] in-plane compression (sigma_min < 0) at step(s) "
            f"{result.compression_steps}"
        )

    if result.status == "completed":
        console.print(f"\n[bold green]Completed in {result.elapsed:.1f}s[/bold green]")
    else:
        console.print(f"\n[bold red]Solver failed:[/bold red] {result.message}")
    console.print(f"Output saved to: [blue]{result.scenario.outputs.out_dir}[/blue]")
    sys.exit(result.exit_code)


@cli.command()
@click.option("--export", "export_dir", default=None,
              help="Write the builtin scenarios as JSON files into this directory")
def scenarios(export_dir):
    """List builtin scenarios."""
    table = RichTable(title="Builtin Scenarios")
    table.add_column("Name", style="cyan")
    table.add_column("Mesh", style="green")
    table.add_column("Material", style="green")
    table.add_column("Schedule", style="magenta")
    for s in builtin_scenarios():
        mesh = f"{s.mesh.generator} ({s.mesh.kind})"
        values = ", ".join(f"{v:g}" for v in s.schedule.values)
        table.add_row(s.name, mesh, s.material.type, f"{s.schedule.parameter}: {values}")
    console.print(table)

    if export_dir:
        paths = export_builtins(export_dir)
        console.print(f"[bold green]Exported {len(paths)} scenario(s)[/bold green]")
        for p in paths:
            console.print(f"  - {p}")


@cli.command()
@click.argument("source")
@click.option("--samples", "-n", type=click.IntRange(min=1), default=None,
              help="Random element states to check")
@click.option("--seed", default=0, show_default=True, help="Random seed")
@click.option("--quadrature", "-q", type=click.IntRange(1, 6), default=None,
              help="Gauss points per direction")
@click.pass_context
def audit(ctx, source, samples, seed, quadrature):
    """Check analytic tangents against central finite differences."""
    simulator = MembraneSimulator(config=ctx.obj["config"])
    try:
        with console.status("[bold green]Auditing tangents..."):
            report = simulator.audit(source, samples, seed, quadrature)
    except ConfigError as e:
        console.print(f"[red]Configuration error:[/red] {e}")
        sys.exit(EXIT_CONFIG)
    except MemfemError as e:
        console.print(f"[red]Error:[/red] {e}")
        sys.exit(EXIT_ERROR)

    table = RichTable(title=f"Tangent Audit ({report.n_samples} samples)")
    table.add_column("Block", style="cyan")
    table.add_column("Max relative error", style="green")
    table.add_column("Status")
    for block, err in report.blocks.items():
        ok = err < report.tolerance
        table.add_row(block, f"{err:.3e}", "[green]ok[/green]" if ok else "[red]FAIL[/red]")
    console.print(table)
    if not report.passed:
        console.print(
            f"[bold red]Worst error {report.worst:.3e} exceeds {report.tolerance:g}[/bold red]"
        )
        sys.exit(EXIT_SOLVER)


if __name__ == "__main__":
    cli()
