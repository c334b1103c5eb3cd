"""Result files: load-response CSV, VTK surfaces, pressure error report, metadata."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from memfem.analytic_references import balloon_peak, reference_pressure, relative_error
from memfem.models import ReferenceCurve, ReferenceKind, ResultRow, StepRecord

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["step"] + list(ResultRow.__dataclass_fields__)


def atomic_write(path: Path, text: str) -> Path:
    """Write ``text`` to a temporary sibling and rename it over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ReportGenerator:
    """Turn solver trajectories into result files."""

    def __init__(self, subdivisions: int = 4):
        self.subdivisions = subdivisions

    # ------------------------------------------------------------------
    # CSV
    # ------------------------------------------------------------------

    def generate_csv(self, records: list[StepRecord]) -> str:
        """One row per converged step."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for record in records:
            row = asdict(ResultRow.from_record(record))
            writer.writerow([record.step] + [_fmt(row[k]) for k in CSV_COLUMNS[1:]])
        return buf.getvalue()

    # ------------------------------------------------------------------
    # VTK legacy PolyData
    # ------------------------------------------------------------------

    def generate_vtk(self, points: np.ndarray, polygons: np.ndarray, fields: dict[str, np.ndarray],
                     title: str = "memfem surface") -> str:
        """Legacy ASCII PolyData with scalar point data."""
        lines = [
            "# vtk DataFile Version 3.0",
            title.replace("\n", " ")[:255],
            "ASCII",
            "DATASET POLYDATA",
            f"POINTS {len(points)} double",
        ]
        lines.extend(" ".join(f"{c:.17g}" for c in p) for p in points)
        n_poly = len(polygons)
        size = int(sum(len(poly) + 1 for poly in polygons))
        lines.append(f"POLYGONS {n_poly} {size}")
        lines.extend(f"{len(poly)} " + " ".join(str(int(i)) for i in poly) for poly in polygons)
        if fields:
            lines.append(f"POINT_DATA {len(points)}")
            for name, values in fields.items():
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(f"{v:.17g}" for v in np.asarray(values, dtype=float))
        return "\n".join(lines) + "\n"

    def clear_step_vtk(self, vtk_dir: Path) -> None:
        """Remove step files left over from an earlier run."""
        for stale in vtk_dir.glob("step_*.vtk"):
            stale.unlink()

    def write_step_vtk(self, assembler, record: StepRecord, vtk_dir: Path) -> Path:
        points, facets, fields = assembler.sample_fields(record.state, self.subdivisions)
        text = self.generate_vtk(
            points, facets, fields, title=f"step {record.step} value {record.load_value:.12g}"
        )
        path = atomic_write(vtk_dir / f"step_{record.step:04d}.vtk", text)
        logger.debug(f"Saved VTK surface to {path}")
        return path

    # ------------------------------------------------------------------
    # Pressure error report
    # ------------------------------------------------------------------

    def pressure_errors(self, records: list[StepRecord], reference: ReferenceCurve,
                        reference_volume: float) -> list[dict]:
        rows = []
        for record in records:
            v_ratio = record.volume / reference_volume
            p_ref = reference_pressure(reference, v_ratio)
            rows.append(
                {
                    "step": record.step,
                    "v_ratio": v_ratio,
                    "p": record.p_v,
                    "p_ref": p_ref,
                    "rel_error": relative_error(record.p_v, p_ref),
                }
            )
        return rows

    def generate_error_report(self, name: str, records: list[StepRecord],
                              reference: ReferenceCurve, reference_volume: float,
                              quadrature: Optional[int] = None) -> str:
        """Markdown table of computed against analytic pressure."""
        rows = self.pressure_errors(records, reference, reference_volume)
        lines = ["---"]
        lines.append(f'scenario: "{name}"')
        lines.append(f'reference: "{reference.kind.value}"')
        lines.append(f"radius: {reference.radius}")
        lines.append(f"quadrature: {quadrature if quadrature is not None else 'default'}")
        lines.append("---\n")
        lines.append(f"# Pressure Error: {name}\n")
        lines.append("| Step | V/V0 | p | p (analytic) | Relative error |")
        lines.append("|------|------|---|--------------|----------------|")
        for r in rows:
            lines.append(
                f"| {r['step']} | {r['v_ratio']:.6f} | {r['p']:.10g} | {r['p_ref']:.10g} "
                f"| {r['rel_error']:.3e} |"
            )
        if rows:
            worst = max(rows, key=lambda r: r["rel_error"])
            lines.append("")
            lines.append(
                f"- **Maximum relative error:** {worst['rel_error']:.3e} (step {worst['step']})"
            )
        if reference.kind == ReferenceKind.BALLOON:
            peak_ratio, peak_p = balloon_peak(reference.mu_t, reference.radius)
            lines.append(
                f"- **Analytic pressure peak:** p = {peak_p:.10g} at V/V0 = {peak_ratio:.6f}"
            )
        lines.append("")
        return "\n".join(lines)

    # ------------------------------------------------------------------
    # Metadata and bundle
    # ------------------------------------------------------------------

    def generate_metadata(self, scenario, records: list[StepRecord], status: str,
                          message: str = "") -> dict:
        from memfem import __version__

        return {
            "memfem_version": __version__,
            "scenario": scenario.name,
            "written_at": datetime.now(timezone.utc).isoformat(),
            "status": status,
            "message": message,
            "n_nodes": scenario.mesh.n_nodes,
            "n_elements": len(scenario.mesh.elements),
            "material": {"type": scenario.material.kind, **asdict(scenario.material)},
            "schedule": {
                "parameter": scenario.schedule.parameter.value,
                "values": list(scenario.schedule.values),
            },
            "quadrature": scenario.quadrature,
            "reference_volume": scenario.reference_volume,
            "steps_completed": len(records),
            "compression_steps": [r.step for r in records if r.compression],
        }

    def save_all(self, scenario, records: list[StepRecord], output_dir: Path,
                 reference_volume: Optional[float] = None, status: str = "completed",
                 message: str = "") -> None:
        """Save CSV, pressure error report and metadata."""
        output_dir.mkdir(parents=True, exist_ok=True)
        outputs = scenario.outputs

        csv_path = atomic_write(output_dir / outputs.csv_name, self.generate_csv(records))
        logger.info(f"Saved results to {csv_path}")

        if scenario.reference is not None and reference_volume:
            report_path = atomic_write(
                output_dir / outputs.report_name,
                self.generate_error_report(
                    scenario.name, records, scenario.reference, reference_volume,
                    scenario.quadrature,
                ),
            )
            logger.info(f"Saved pressure error report to {report_path}")

        meta = self.generate_metadata(scenario, records, status, message)
        atomic_write(output_dir / "metadata.json", json.dumps(meta, indent=2) + "\n")
