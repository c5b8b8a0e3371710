"""Serializers for study results: CSV, markdown, rich tables, VTK and gnuplot."""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from rich.table import Table

from lsfem.mesh import Mesh
from lsfem.projections import PiecewisePolynomial
from lsfem.spaces import DiscreteField
from lsfem.types import (
    EXTRA_NORMS,
    NORM_LABELS,
    NORMS,
    SUPER_NORMS,
    ConvergenceReport,
)

logger = logging.getLogger(__name__)

CSV_FIELDS = (
    "pair", "problem", "omega", "level", "n", "h", "dofs",
    "norm", "error", "rate", "expected", "gated", "passed",
)

_CENTROID = np.array([[1.0 / 3.0, 1.0 / 3.0]])


def _float(value: float | None) -> str:
    return "" if value is None else f"{value:.12e}"


def _rate(value: float | None) -> str:
    return "-" if value is None else f"{value:.2f}"


def _norm_keys(report: ConvergenceReport) -> list[str]:
    present = report.levels[0].norms if report.levels else {}
    return [key for key in NORMS + EXTRA_NORMS if key in present]


def csv_rows(report: ConvergenceReport) -> list[dict[str, str]]:
    """One row per level and norm; the rate column holds the rate into that level."""
    rows = []
    last = len(report.levels) - 1
    for index, level in enumerate(report.levels):
        for norm in _norm_keys(report):
            expected = report.expected.get(norm)
            rates = report.rates.get(norm, [])
            gated = report.gated and norm in report.passed
            rows.append(
                {
                    "pair": str(report.pair),
                    "problem": report.problem,
                    "omega": f"{report.omega:g}",
                    "level": str(level.level),
                    "n": str(level.n),
                    "h": _float(level.h),
                    "dofs": str(level.dofs),
                    "norm": norm,
                    "error": _float(level.norms[norm]),
                    "rate": _float(rates[index - 1]) if index > 0 else "",
                    "expected": _float(expected.gate_value) if expected else "",
                    "gated": "1" if gated else "0",
                    "passed": (
                        str(int(report.passed[norm])) if gated and index == last else ""
                    ),
                }
            )
    return rows


def write_csv(reports: Sequence[ConvergenceReport], path: str | Path) -> Path:
    """Write all reports into one CSV file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for report in reports:
            writer.writerows(csv_rows(report))
    return path


def _markdown(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    return "\n".join(lines) + "\n"


def level_table_markdown(report: ConvergenceReport, norms: Sequence[str] | None = None) -> str:
    """Errors and rates per level; the last row lists the expected rates."""
    norms = list(norms or _norm_keys(report))
    header = ["n", "h", "DOF"]
    for norm in norms:
        header += [NORM_LABELS[norm], "rate"]
    rows = []
    for index, level in enumerate(report.levels):
        row = [str(level.n), f"{level.h:.4e}", str(level.dofs)]
        for norm in norms:
            rate = report.rates[norm][index - 1] if index > 0 else None
            row += [f"{level.norms[norm]:.4e}", _rate(rate)]
        rows.append(row)
    expected_row = ["", "", "expected"]
    for norm in norms:
        expected = report.expected.get(norm)
        expected_row += ["", expected.label() if expected else ""]
    rows.append(expected_row)
    title = f"### {report.pair}, {report.problem}, ω = {report.omega:g}\n\n"
    return title + _markdown(header, rows)


def comparison_markdown(reports: Sequence[ConvergenceReport], norm: str) -> str:
    """One Error/Rate column pair per run, rows by level (DOF of the first run)."""
    if not reports:
        return ""
    header = ["DOF"]
    for report in reports:
        header += [f"ω = {report.omega:g} Error", "Rate"]
    rows = []
    for index, level in enumerate(reports[0].levels):
        row = [str(level.dofs)]
        for report in reports:
            rate = report.rates[norm][index - 1] if index > 0 else None
            row += [f"{report.levels[index].norms[norm]:.4e}", _rate(rate)]
        rows.append(row)
    title = f"### {NORM_LABELS[norm]}, {reports[0].pair}, {reports[0].problem}\n\n"
    return title + _markdown(header, rows)


def summary_markdown(reports: Sequence[ConvergenceReport], norms: Sequence[str] = SUPER_NORMS) -> str:
    """Final-interval rate per pair with the expected value in brackets.

    Parenthesised expectations are known to be beaten in practice; starred ones
    need H³ regularity.
    """
    header = ["pair", "ω"] + [NORM_LABELS[norm] for norm in norms] + ["status"]
    rows = []
    for report in reports:
        row = [str(report.pair), f"{report.omega:g}"]
        for norm in norms:
            expected = report.expected.get(norm)
            label = f" [{expected.label()}]" if expected else ""
            row.append(_rate(report.final_rate(norm)) + label)
        status = "pass" if report.ok else "FAIL"
        if not report.gated:
            status = "informational"
        if not report.asymptotic:
            status += ", not asymptotic"
        rows.append(row + [status])
    return _markdown(header, rows)


def rich_level_table(report: ConvergenceReport, norms: Sequence[str] | None = None) -> Table:
    """Console rendering of ``level_table_markdown``."""
    norms = list(norms or _norm_keys(report))
    table = Table(title=f"{report.pair}  {report.problem}  ω={report.omega:g}")
    table.add_column("n", justify="right")
    table.add_column("DOF", justify="right")
    for norm in norms:
        table.add_column(NORM_LABELS[norm], justify="right")
        table.add_column("rate", justify="right", style="cyan")
    for index, level in enumerate(report.levels):
        cells = [str(level.n), str(level.dofs)]
        for norm in norms:
            rate = report.rates[norm][index - 1] if index > 0 else None
            cells += [f"{level.norms[norm]:.3e}", _rate(rate)]
        table.add_row(*cells)
    expected_cells = ["", "expected"]
    for norm in norms:
        expected = report.expected.get(norm)
        mark = ""
        if norm in report.passed:
            mark = "[green]✓[/green]" if report.passed[norm] else "[red]✗[/red]"
        expected_cells += ["", f"{expected.label() if expected else ''} {mark}".strip()]
    table.add_row(*expected_cells, style="dim")
    return table


def write_vtk(
    path: str | Path,
    mesh: Mesh,
    u_h: DiscreteField,
    q_h: DiscreteField | None = None,
    postprocessed: PiecewisePolynomial | None = None,
    title: str = "lsfem solution",
) -> Path:
    """Legacy ASCII VTK unstructured grid.

    u_h is written at the vertices; q_h and u*_h as cell data at centroids.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = io.StringIO()
    nv, nt = mesh.num_vertices, mesh.num_triangles
    out.write("# vtk DataFile Version 2.0\n")
    out.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    out.write(f"POINTS {nv} double\n")
    for x, y in mesh.vertices:
        out.write(f"{x:.16e} {y:.16e} 0.0\n")
    out.write(f"CELLS {nt} {4 * nt}\n")
    for a, b, c in mesh.triangles:
        out.write(f"3 {a} {b} {c}\n")
    out.write(f"CELL_TYPES {nt}\n")
    out.write("5\n" * nt)
    out.write(f"POINT_DATA {nv}\nSCALARS u_h double 1\nLOOKUP_TABLE default\n")
    for value in u_h.coefficients[:nv]:
        out.write(f"{value:.16e}\n")
    if q_h is not None or postprocessed is not None:
        out.write(f"CELL_DATA {nt}\n")
    if q_h is not None:
        values, divergence = q_h.evaluate(_CENTROID)
        out.write("VECTORS q_h double\n")
        for qx, qy in values[:, 0, :]:
            out.write(f"{qx:.16e} {qy:.16e} 0.0\n")
        out.write("SCALARS div_q_h double 1\nLOOKUP_TABLE default\n")
        for value in divergence[:, 0]:
            out.write(f"{value:.16e}\n")
    if postprocessed is not None:
        values, _ = postprocessed.evaluate(_CENTROID)
        out.write("SCALARS u_star double 1\nLOOKUP_TABLE default\n")
        for value in values[:, 0]:
            out.write(f"{value:.16e}\n")
    path.write_text(out.getvalue(), encoding="utf-8")
    logger.debug("wrote %s", path)
    return path


def write_gnuplot(
    path: str | Path,
    report: ConvergenceReport,
    norms: Sequence[str] | None = None,
) -> Path:
    """Gnuplot script with inline data: log-log error against h per norm."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    norms = list(norms or _norm_keys(report))
    stem = path.with_suffix("").name
    lines = [f"# {report.pair}, {report.problem}, omega = {report.omega:g}", "$data << EOD"]
    lines.append("# h " + " ".join(norms))
    for level in report.levels:
        lines.append(" ".join([f"{level.h:.12e}"] + [f"{level.norms[n]:.12e}" for n in norms]))
    lines += [
        "EOD",
        "set terminal pngcairo size 900,600",
        f"set output '{stem}.png'",
        "set logscale xy",
        "set key outside right",
        "set xlabel 'h'",
        "set ylabel 'error'",
        f"set title '{report.pair}  {report.problem}  omega={report.omega:g}'",
    ]
    plots = [
        f"$data using 1:{column} with linespoints title '{norm}'"
        for column, norm in enumerate(norms, start=2)
    ]
    lines.append("plot " + ", \\\n     ".join(plots))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
