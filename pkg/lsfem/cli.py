"""Command-line interface for lsfem."""

from __future__ import annotations

import json
import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .analysis import (
    TABLE_NAMES,
    LevelResult,
    compute_errors,
    expected_rates,
    implemented_pairs,
    rate_table,
    run_study,
    solve_problem,
)
from .config import StudyConfig
from .linalg import SOLVER_METHODS, dump_matrix
from .mesh import Mesh, build_structured, load_mesh, refine_uniform
from .problems import BUILTIN_PROBLEMS, builtin
from .report import (
    comparison_markdown,
    level_table_markdown,
    rich_level_table,
    summary_markdown,
    write_csv,
    write_gnuplot,
    write_vtk,
)
from .types import NORM_LABELS, PLAIN_NORMS, SUPER_NORMS, ElementPair

console = Console()
error_console = Console(stderr=True)

EXIT_OK = 0
EXIT_GATE = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

logger = logging.getLogger("lsfem")


def setup_logging(verbose: int) -> None:
    """Route library logging and warnings through rich on stderr."""
    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose > 1:
        level = logging.DEBUG
    handler = RichHandler(console=error_console, show_path=False, markup=False)
    logging.basicConfig(level=level, format="%(message)s", handlers=[handler], force=True)
    logging.captureWarnings(True)


def run_guarded(action: Callable[[], int]) -> None:
    """Run a command body and map failures to exit codes.

    ArithmeticError (solver, local solves) exits 3; ValueError and OSError
    (bad input, unknown elements, config problems, missing files) exit 2.
    """
    try:
        code = action()
    except click.ClickException:
        raise
    except ArithmeticError as e:
        error_console.print(f"[red]Error:[/red] {e}")
        sys.exit(EXIT_NUMERICAL)
    except (ValueError, OSError) as e:
        error_console.print(f"[red]Error:[/red] {e}")
        sys.exit(EXIT_USAGE)
    sys.exit(code)


def parse_levels(text: str | None) -> list[int] | None:
    """Parse "4,8,16" into [4, 8, 16]."""
    if text is None:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}") from e


def _pair_override(flux: str | None, scalar: str | None) -> list[str] | None:
    if flux is None and scalar is None:
        return None
    if flux is None or scalar is None:
        raise click.UsageError("--flux and --scalar must be given together")
    return [f"{flux}/{scalar}"]


def _slug(problem: str, pair: ElementPair, omega: float) -> str:
    return f"{problem}_{pair.flux}-{pair.scalar}_w{omega:g}"


@click.group()
@click.version_option(package_name="lsfem")
@click.option("-v", "--verbose", count=True, help="Increase log output (-v info, -vv debug)")
def main(verbose: int) -> None:
    """lsfem - div least-squares finite elements and convergence studies."""
    setup_logging(verbose)


@main.command()
@click.option("--config", "config_path", type=click.Path(path_type=Path), help="JSON study config")
@click.option("--problem", type=click.Choice(BUILTIN_PROBLEMS), help="Built-in problem")
@click.option("--flux", help="Flux space: RT0..RT2, BDM1..BDM2")
@click.option("--scalar", help="Scalar space: P1..P3")
@click.option("--omega", type=float, help="Wavenumber (default: problem default)")
@click.option("--n", "n", type=click.IntRange(min=1), default=8, help="Structured mesh size (default: 8)")
@click.option("--mesh", "mesh_path", type=click.Path(path_type=Path), help="Mesh file instead of --n")
@click.option("--tol", type=float, help="Solver tolerance (default: 1e-11)")
@click.option("--solver", type=click.Choice(SOLVER_METHODS), help="Linear solver")
@click.option("-o", "--out", type=click.Path(path_type=Path), help="Directory for the solve report")
@click.option("--vtk", is_flag=True, help="Write u_h and q_h as legacy VTK (needs --out)")
@click.option(
    "--dump-matrix", "dump", is_flag=True,
    help="Write the system in MatrixMarket format (needs --out)",
)
def solve(
    config_path: Path | None,
    problem: str | None,
    flux: str | None,
    scalar: str | None,
    omega: float | None,
    n: int,
    mesh_path: Path | None,
    tol: float | None,
    solver: str | None,
    out: Path | None,
    vtk: bool,
    dump: bool,
) -> None:
    """Assemble and solve one problem on one mesh.

    Prints the solve report and, when the problem has an exact solution, the
    error norms.
    """

    def action() -> int:
        config = StudyConfig.load(config_path) if config_path else StudyConfig()
        config = config.merged(
            problem=problem,
            pairs=_pair_override(flux, scalar),
            omegas=[omega] if omega is not None else None,
            tol=tol,
            solver=solver,
        )
        pair = ElementPair.parse(config.pairs[0])
        prob = builtin(config.problem, config.omegas[0] if config.omegas else None)
        mesh = load_mesh(mesh_path) if mesh_path else build_structured(n)
        q_h, u_h, system, report = solve_problem(
            prob,
            pair,
            mesh,
            tol=config.tol,
            solver=config.solver,
            maxiter=config.maxiter,
            assembly_degree=config.assembly_degree,
            singular_splits=config.singular_splits,
            sequential=config.sequential,
        )
        summary: dict[str, Any] = {
            "problem": prob.name,
            "pair": str(pair),
            "omega": prob.omega,
            "triangles": mesh.num_triangles,
            "h": mesh.h,
            "unknowns": system.layout.size,
            "solver": report.to_dict(),
        }
        table = Table(title=f"{pair}  {prob.name}  ω={prob.omega:g}")
        table.add_column("quantity")
        table.add_column("value", justify="right")
        table.add_row("triangles", str(mesh.num_triangles))
        table.add_row("unknowns", str(system.layout.size))
        table.add_row("method", report.method)
        table.add_row("iterations", str(report.iterations))
        table.add_row("relative residual", f"{report.residual:.3e}")
        if prob.has_exact:
            errors = compute_errors(
                prob, q_h, u_h, singular_splits=config.singular_splits, solver=report
            )
            summary["norms"] = errors.norms
            for key in PLAIN_NORMS + SUPER_NORMS + ("energy",):
                table.add_row(NORM_LABELS[key], f"{errors.norms[key]:.6e}")
        console.print(table)

        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / "solve.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
            stem = _slug(prob.name, pair, prob.omega)
            if vtk:
                write_vtk(out / f"{stem}.vtk", mesh, u_h, q_h)
            if dump:
                dump_matrix(system.matrix, out / f"{stem}.mtx")
            error_console.print(f"[green]Output written to {out}[/green]")
        elif vtk or dump:
            error_console.print("[yellow]Warning:[/yellow] --vtk/--dump-matrix need --out; skipped")
        return EXIT_OK if report.converged else EXIT_NUMERICAL

    run_guarded(action)


@main.command()
@click.argument("config_path", required=False, type=click.Path(path_type=Path))
@click.option("--problem", type=click.Choice(BUILTIN_PROBLEMS), help="Built-in problem")
@click.option("--flux", help="Flux space: RT0..RT2, BDM1..BDM2")
@click.option("--scalar", help="Scalar space: P1..P3")
@click.option("--omega", type=float, multiple=True, help="Wavenumber; repeat for several runs")
@click.option("--levels", help="Structured mesh sizes, e.g. 4,8,16,32,64")
@click.option("--mesh", "mesh_path", help="Base mesh file, refined uniformly")
@click.option("--refinements", type=click.IntRange(min=2), help="Uniform refinements of --mesh")
@click.option("--tol", type=float, help="Solver tolerance")
@click.option("--solver", type=click.Choice(SOLVER_METHODS), help="Linear solver")
@click.option("-o", "--out", help="Output directory (default: results)")
@click.option("--no-gate", is_flag=True, help="Report rates without pass/fail")
@click.option("--sequential", is_flag=True, help="Disable worker threads")
@click.option("--postprocess", is_flag=True, help="Also measure the postprocessed scalar u*_h")
@click.option("--vtk", is_flag=True, help="Write VTK output per level")
@click.option("--gnuplot", is_flag=True, help="Write a gnuplot script per run")
@click.option("--dump-matrix", is_flag=True, help="Write the finest system in MatrixMarket format")
def study(
    config_path: Path | None,
    problem: str | None,
    flux: str | None,
    scalar: str | None,
    omega: tuple[float, ...],
    levels: str | None,
    mesh_path: str | None,
    refinements: int | None,
    tol: float | None,
    solver: str | None,
    out: str | None,
    no_gate: bool,
    sequential: bool,
    postprocess: bool,
    vtk: bool,
    gnuplot: bool,
    dump_matrix: bool,
) -> None:
    """Run a convergence study and write CSV and markdown results.

    CONFIG_PATH: Optional JSON study config; command-line flags override it.

    Exits 0 when every gated rate passes, 1 otherwise.
    """

    def action() -> int:
        config = StudyConfig.load(config_path) if config_path else StudyConfig()
        config = config.merged(
            problem=problem,
            pairs=_pair_override(flux, scalar),
            omegas=list(omega) or None,
            levels=parse_levels(levels),
            mesh=mesh_path,
            refinements=refinements,
            tol=tol,
            solver=solver,
            out=out,
            gate=False if no_gate else None,
            sequential=sequential or None,
            postprocess=postprocess or None,
            vtk=vtk or None,
            gnuplot=gnuplot or None,
            dump_matrix=dump_matrix or None,
        )
        return run_config(config)

    run_guarded(action)


def _mesh_sequence(config: StudyConfig) -> list[Mesh] | None:
    if config.mesh is None:
        return None
    meshes = [load_mesh(config.mesh)]
    for _ in range(config.refinements):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


def run_config(config: StudyConfig) -> int:
    """Execute every run of ``config``; returns the exit code."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    config.dump(out / "config.json")
    meshes = _mesh_sequence(config)
    reports = []
    for run in config.plan():
        pair = ElementPair.parse(run["pair"])
        prob = builtin(config.problem, run["omega"])
        stem = _slug(prob.name, pair, prob.omega)
        count = len(meshes) if meshes is not None else len(config.levels)

        def on_level(result: LevelResult, stem: str = stem, count: int = count) -> None:
            level = result.report
            if config.vtk:
                write_vtk(out / f"{stem}_n{level.n}.vtk", result.mesh, result.u_h,
                          result.q_h, result.postprocessed)
            if config.dump_matrix and level.level == count - 1:
                dump_matrix(result.system.matrix, out / f"{stem}_n{level.n}.mtx")

        report = run_study(
            prob,
            pair,
            None if meshes is not None else config.levels,
            meshes=meshes,
            tol=config.tol,
            solver=config.solver,
            maxiter=config.maxiter,
            assembly_degree=config.assembly_degree,
            error_degree=config.error_degree,
            singular_splits=config.singular_splits,
            slack=config.slack,
            singular_tolerance=config.singular_tolerance,
            postprocess_fields=config.postprocess,
            gate=config.gate,
            sequential=config.sequential,
            expected_overrides=run["expected_overrides"],
            on_level=on_level,
        )
        reports.append(report)
        console.print(rich_level_table(report, PLAIN_NORMS + SUPER_NORMS))
        if config.gnuplot:
            write_gnuplot(out / f"{stem}.gp", report)

    write_csv(reports, out / "results.csv")
    (out / "results.json").write_text(
        json.dumps([r.to_dict() for r in reports], indent=2) + "\n", encoding="utf-8"
    )
    sections = [f"# {config.problem}\n", summary_markdown(reports)]
    for pair in config.pairs:
        runs = [r for r in reports if str(r.pair) == pair]
        if len(runs) > 1:
            sections.extend(comparison_markdown(runs, norm) for norm in SUPER_NORMS)
    sections.extend(level_table_markdown(r) for r in reports)
    (out / "results.md").write_text("\n".join(sections), encoding="utf-8")

    console.print(summary_markdown(reports), markup=False)
    failed = [r for r in reports if not r.ok]
    if failed:
        for report in failed:
            names = ", ".join(k for k, ok in report.passed.items() if not ok)
            error_console.print(
                f"[red]FAIL[/red] {report.pair} ω={report.omega:g}: {names}"
            )
        return EXIT_GATE
    error_console.print(f"[green]Output written to {out}[/green]")
    return EXIT_OK


def _table_cell(entry, resolved=None) -> str:
    text = f"{entry.formula}{'*' if entry.starred else ''} = {entry.value:g}"
    if resolved is not None:
        if resolved.value != entry.value:
            text += f" (ω-adjusted {resolved.value:g})"
        if entry.starred and resolved.fallback is not None:
            text += f", gate {resolved.fallback:g}"
    return text


@main.command()
@click.option("--omega", type=float, default=1.0, help="Wavenumber for ω-dependent entries")
@click.option(
    "-o",
    "--output",
    type=click.Path(path_type=Path),
    help="Also write the tables as markdown",
)
def tables(omega: float, output: Path | None) -> None:
    """Print the expected-rate tables for every implemented pair.

    Entries show the formula in k (k1 = min(k-2,1), k2 = min(k,2),
    k3 = min(k,1)), its value, a * where H³ regularity is needed, and the rate
    actually used for gating.
    """

    def action() -> int:
        markdown = []
        titles = {
            "state_of_the_art": "Previously known estimates",
            "optimal": "Optimal error estimates",
            "supercloseness": "Supercloseness error estimates",
        }
        for name in TABLE_NAMES:
            norms = SUPER_NORMS if name == "supercloseness" else PLAIN_NORMS
            table = Table(title=titles[name])
            table.add_column("pair")
            for norm in norms:
                table.add_column(NORM_LABELS[norm])
            rows = []
            for pair in implemented_pairs():
                raw = rate_table(pair, name)
                resolved = expected_rates(pair, omega=omega) if name != "state_of_the_art" else {}
                cells = [
                    _table_cell(entry, resolved.get(norm))
                    for entry, norm in zip(raw, norms)
                ]
                table.add_row(str(pair), *cells)
                rows.append([str(pair), *cells])
            console.print(table)
            header = ["pair"] + [NORM_LABELS[norm] for norm in norms]
            markdown.append(f"## {titles[name]}\n")
            markdown.append("| " + " | ".join(header) + " |")
            markdown.append("|" + "|".join("---" for _ in header) + "|")
            markdown.extend("| " + " | ".join(row) + " |" for row in rows)
            markdown.append("")
        if output:
            output.write_text("\n".join(markdown) + "\n", encoding="utf-8")
            error_console.print(f"[green]Output written to {output}[/green]")
        return EXIT_OK

    run_guarded(action)


if __name__ == "__main__":
    main()
