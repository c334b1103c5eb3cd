"""Main orchestrator: scenario in, result files out."""

from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from memfem.assembly import Assembler
from memfem.config import Config
from memfem.exceptions import ConfigError, MemfemError, SolverError, SubstepExhaustedError
from memfem.models import AuditReport, Scenario, StepRecord
from memfem.report_generator import ReportGenerator
from memfem.scenarios import build_scenario, load_scenario_config
from memfem.solver import fd_tangent_audit, run_schedule

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


@dataclass
class RunResult:
    scenario: Scenario
    records: list[StepRecord] = field(default_factory=list)
    reference_volume: Optional[float] = None
    status: str = "completed"
    message: str = ""
    elapsed: float = 0.0

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.status == "completed" else EXIT_SOLVER

    @property
    def compression_steps(self) -> list[int]:
        """Steps whose minimum principal stress went negative (wrinkling onset)."""
        return [r.step for r in self.records if r.compression]


@contextmanager
def diagnostics_file(path: Optional[Path]):
    """Attach a file handler to the Newton diagnostics logger for the duration."""
    if path is None:
        yield
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(message)s"))
    diag = logging.getLogger("memfem.diagnostics")
    previous = diag.level
    diag.setLevel(logging.INFO)
    diag.addHandler(handler)
    try:
        yield
    finally:
        diag.removeHandler(handler)
        diag.setLevel(previous)
        handler.close()


class MembraneSimulator:
    """Coordinates scenario loading, the load-stepping solver and result writing."""

    def __init__(self, config: Optional[Config] = None):
        self.config = config or Config.load()
        self.report_generator = ReportGenerator(self.config.assembly.vtk_subdivisions)

    def prepare(self, source: str | Path, out_dir: Optional[Path] = None,
                quadrature: Optional[int] = None) -> Scenario:
        """Load and build a scenario; nothing is written.

        Raises:
            ConfigError: On any scenario problem.
        """
        cfg, base_dir = load_scenario_config(source)
        out_dir = Path(out_dir or Path(self.config.app.output_dir) / cfg.name)
        return build_scenario(cfg, self.config, base_dir, out_dir, quadrature)

    def run(self, source: str | Path, out_dir: Optional[Path] = None,
            quadrature: Optional[int] = None, strict_deterministic: bool = False) -> RunResult:
        """Solve a scenario and write all result files.

        Solver failures are captured in the result (status ``failed``) after the
        outputs of the converged steps have been written.
        """
        scenario = self.prepare(source, out_dir, quadrature)
        outputs = scenario.outputs
        out = outputs.out_dir
        out.mkdir(parents=True, exist_ok=True)

        workers = 1 if strict_deterministic else self.config.workers
        assembler = Assembler(
            scenario.mesh, scenario.bcs, scenario.material, scenario.quadrature,
            threads=workers, fd_step=self.config.assembly.fd_step_factor,
        )
        vtk_dir = out / outputs.vtk_dir if outputs.vtk_dir else None
        diag_path = out / outputs.diagnostics_name if outputs.diagnostics_name else None
        if vtk_dir is not None:
            self.report_generator.clear_step_vtk(vtk_dir)

        def on_step(record: StepRecord):
            if vtk_dir is not None:
                self.report_generator.write_step_vtk(assembler, record, vtk_dir)

        result = RunResult(scenario=scenario)
        start = time.time()
        logger.info(f"Running scenario '{scenario.name}' with {workers} worker(s)")
        with diagnostics_file(diag_path):
            try:
                trajectory = run_schedule(scenario, on_step=on_step, assembler=assembler)
                result.records = trajectory.records
                result.reference_volume = trajectory.reference_volume
            except SubstepExhaustedError as e:
                result.records = list(e.records)
                result.status, result.message = "failed", str(e)
                logger.error(f"Solver failed: {e}")
            except SolverError as e:
                result.status, result.message = "failed", str(e)
                logger.error(f"Solver failed: {e}")
        result.elapsed = time.time() - start

        if result.reference_volume is None:
            result.reference_volume = scenario.reference_volume or _initial_volume(assembler,
                                                                                    scenario)
        self.report_generator.save_all(
            scenario, result.records, out, result.reference_volume, result.status,
            result.message,
        )
        logger.info(
            f"Scenario '{scenario.name}' {result.status}: {len(result.records)} step(s) "
            f"in {result.elapsed:.1f}s"
        )
        if result.compression_steps:
            logger.warning(
                f"In-plane compression (sigma_min < 0) at step(s) {result.compression_steps}"
            )
        return result

    def audit(self, source: str | Path, n_samples: Optional[int] = None, seed: int = 0,
              quadrature: Optional[int] = None) -> AuditReport:
        scenario = self.prepare(source, quadrature=quadrature)
        return fd_tangent_audit(scenario, n_samples or self.config.assembly.audit_samples, seed)


def _initial_volume(assembler: Assembler, scenario: Scenario) -> float:
    state = assembler.initial_state()
    return assembler.assemble(scenario.load, state, with_tangent=False).volume


def run(config_path: str | Path, out_dir: Optional[Path] = None,
        quadrature: Optional[int] = None, strict_deterministic: bool = False,
        config: Optional[Config] = None) -> int:
    """Run a scenario and return the process exit code (0 ok, 1 error, 2 config, 3 solver)."""
    try:
        result = MembraneSimulator(config).run(config_path, out_dir, quadrature,
                                               strict_deterministic)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except SolverError as e:
        logger.error(f"Solver error: {e}")
        return EXIT_SOLVER
    except MemfemError as e:
        logger.error(f"Error: {e}")
        return EXIT_ERROR
    return result.exit_code
