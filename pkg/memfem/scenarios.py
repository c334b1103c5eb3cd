"""Scenario files, builtin experiments and translation into domain objects."""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError

from memfem.config import (
    SCENARIO_VERSION,
    BoundaryConfig,
    Config,
    HydrostaticConfig,
    LiquidConfig,
    LoadConfig,
    MeshConfig,
    NeoHookeConfig,
    ObstacleConfig,
    OutputConfig,
    ReferenceConfig,
    ScenarioConfig,
    ScheduleConfig,
    StabilizedLiquidConfig,
)
from memfem.exceptions import ConfigError, MemfemError
from memfem.mesh_model import (
    characteristic_length,
    default_boundary_conditions,
    enclosed_volume,
    load_mesh,
    make_sphere,
    make_square_sheet,
)
from memfem.models import (
    BoundaryConditions,
    EdgeTraction,
    HalfSpace,
    HydrostaticConvention,
    HydrostaticLoad,
    Liquid,
    LoadCase,
    MaterialModel,
    Mesh,
    NeoHooke,
    NewtonSettings,
    Obstacle,
    OutputSettings,
    PrescribedPressure,
    ReferenceCurve,
    Scenario,
    SphereObstacle,
    StabilizedLiquid,
    StepSchedule,
    VolumeConstraint,
)

logger = logging.getLogger(__name__)

# initial penetration that seats the droplet on the substrate
CONTACT_SEAT = 0.005


# ----------------------------------------------------------------------
# Builtin experiments
# ----------------------------------------------------------------------


def builtin_scenarios() -> list[ScenarioConfig]:
    """Ready-made balloon, sheet and droplet experiments."""
    return [
        ScenarioConfig(
            version=SCENARIO_VERSION,
            name="balloon",
            mesh=MeshConfig(generator="sphere", kind="bezier", n_circ=1, n_merid=1, radius=1.0),
            material=NeoHookeConfig(mu_t=1.0),
            load=LoadConfig(pressure_mode="volume"),
            schedule=ScheduleConfig(parameter="volume", values=[float(v) for v in range(1, 11)]),
            quadrature=6,
            reference=ReferenceConfig(kind="balloon", radius=1.0),
        ),
        ScenarioConfig(
            version=SCENARIO_VERSION,
            name="sheet",
            mesh=MeshConfig(
                generator="square_sheet", kind="bezier", n=8, half_width=2.0,
                prestretch=1.05,
            ),
            material=NeoHookeConfig(mu_t=1.0),
            load=LoadConfig(pressure_mode="volume"),
            schedule=ScheduleConfig(
                parameter="volume", values=[0.5] + [float(v) for v in range(1, 11)]
            ),
            reference_volume=4.0,
        ),
        ScenarioConfig(
            version=SCENARIO_VERSION,
            name="droplet-growth",
            mesh=MeshConfig(
                generator="sphere", kind="lagrange_quadratic", n_circ=4, n_merid=3, radius=1.0
            ),
            material=StabilizedLiquidConfig(gamma=1.0, mu_stab=0.01),
            load=LoadConfig(pressure_mode="volume"),
            schedule=ScheduleConfig(
                parameter="volume", values=[0.125, 0.25, 0.5, 1.0, 2.0, 3.0, 4.0]
            ),
            reference=ReferenceConfig(kind="droplet", radius=1.0),
        ),
        ScenarioConfig(
            version=SCENARIO_VERSION,
            name="droplet-contact",
            mesh=MeshConfig(
                generator="sphere", kind="lagrange_quadratic", n_circ=3, n_merid=3, radius=1.0,
                octants=[(1, 1, 1), (1, 1, -1)],
            ),
            material=StabilizedLiquidConfig(gamma=1.0, mu_stab=0.005),
            load=LoadConfig(
                pressure_mode="volume",
                volume_ratio=1.0,
                hydrostatic=HydrostaticConfig(g=(0.0, 0.0, -1.0)),
                obstacles=[
                    ObstacleConfig(
                        type="half_space", normal=(0.0, 0.0, 1.0), offset=-(1.0 - CONTACT_SEAT)
                    )
                ],
            ),
            schedule=ScheduleConfig(parameter="gravity", values=[1.0, 2.0, 4.0, 8.0]),
        ),
    ]


def builtin_names() -> list[str]:
    return [s.name for s in builtin_scenarios()]


def get_builtin(name: str) -> ScenarioConfig:
    for scenario in builtin_scenarios():
        if scenario.name == name:
            return scenario
    raise ConfigError(f"Unknown builtin scenario '{name}'; choose from {builtin_names()}")


# ----------------------------------------------------------------------
# Loading
# ----------------------------------------------------------------------


def parse_scenario(payload: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"Invalid scenario: {e}") from e


def load_scenario_config(source: str | Path) -> tuple[ScenarioConfig, Optional[Path]]:
    """Read a scenario JSON file, or resolve a builtin name.

    Returns:
        The validated config and the directory relative paths resolve against
        (None for builtins).

    Raises:
        ConfigError: On a missing file, malformed JSON or schema violation.
    """
    path = Path(source)
    if not path.exists():
        if str(source) in builtin_names():
            return get_builtin(str(source)), None
        raise ConfigError(f"Scenario file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read scenario {path}: {e}") from e
    if not isinstance(payload, dict):
        raise ConfigError(f"Scenario {path} must be a JSON object")
    return parse_scenario(payload), path.parent


def export_builtins(out_dir: Path | str) -> list[Path]:
    """Write every builtin scenario as ``<name>.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for scenario in builtin_scenarios():
        path = out / f"{scenario.name}.json"
        path.write_text(json.dumps(scenario.model_dump(mode="json"), indent=2) + "\n")
        paths.append(path)
    return paths


# ----------------------------------------------------------------------
# Translation into domain objects
# ----------------------------------------------------------------------


def build_mesh(cfg: MeshConfig, base_dir: Optional[Path] = None) -> Mesh:
    if cfg.file is not None:
        path = Path(cfg.file)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        mesh = load_mesh(path)
        return replace(mesh, prestretch=cfg.prestretch) if cfg.prestretch != 1.0 else mesh
    if cfg.generator == "sphere":
        mesh = make_sphere(cfg.n_circ, cfg.n_merid, cfg.kind, cfg.radius,
                           octants=tuple(tuple(o) for o in cfg.octants))
        return replace(mesh, prestretch=cfg.prestretch)
    return make_square_sheet(cfg.n, cfg.kind, cfg.half_width, cfg.prestretch)


def build_material(cfg) -> MaterialModel:
    if isinstance(cfg, NeoHookeConfig):
        return NeoHooke(cfg.mu_t)
    if isinstance(cfg, LiquidConfig):
        return Liquid(cfg.gamma)
    return StabilizedLiquid(cfg.gamma, cfg.mu_stab)


def material_modulus(material: MaterialModel) -> float:
    return material.mu_t if isinstance(material, NeoHooke) else material.gamma


def build_boundary(cfg: BoundaryConfig, mesh: Mesh) -> BoundaryConditions:
    bcs = default_boundary_conditions(mesh) if cfg.use_default else BoundaryConditions.free(
        mesh.n_nodes
    )
    for entry in cfg.fixed:
        if entry.node_set not in mesh.node_sets:
            raise ConfigError(f"Unknown node set '{entry.node_set}'")
        bcs.fix(mesh.node_sets[entry.node_set], entry.components, entry.value)
    return bcs


def build_load(cfg: LoadConfig, mesh: Mesh, material: MaterialModel, penalty_factor: float,
               reference_volume: Optional[float]) -> LoadCase:
    if cfg.pressure_mode == "volume":
        pressure_mode = VolumeConstraint(cfg.volume_ratio * (reference_volume or 0.0))
    else:
        pressure_mode = PrescribedPressure(cfg.pressure)

    hydrostatic = None
    if cfg.hydrostatic is not None:
        hydrostatic = HydrostaticLoad(
            rho=cfg.hydrostatic.rho,
            g_vec=np.asarray(cfg.hydrostatic.g, dtype=float),
            convention=HydrostaticConvention(cfg.hydrostatic.convention),
        )

    default_eps = penalty_factor * material_modulus(material) / characteristic_length(mesh)
    obstacles = []
    for ob in cfg.obstacles:
        if ob.type == "half_space":
            shape = HalfSpace(normal=np.asarray(ob.normal, float), offset=ob.offset)
        else:
            shape = SphereObstacle(center=np.asarray(ob.center, float), radius=ob.radius)
        obstacles.append(Obstacle(shape=shape, epsilon_n=ob.epsilon_n or default_eps))

    for t in cfg.tractions:
        if t.edge_set not in mesh.edge_sets:
            raise ConfigError(f"Unknown edge set '{t.edge_set}'")
    tractions = tuple(EdgeTraction(t.edge_set, np.asarray(t.traction, float))
                      for t in cfg.tractions)

    return LoadCase(
        pressure_mode=pressure_mode,
        dead_load=np.asarray(cfg.dead_load, dtype=float),
        hydrostatic=hydrostatic,
        obstacles=tuple(obstacles),
        tractions=tractions,
    )


def build_scenario(
    cfg: ScenarioConfig,
    config: Optional[Config] = None,
    base_dir: Optional[Path] = None,
    out_dir: Optional[Path] = None,
    quadrature: Optional[int] = None,
) -> Scenario:
    """Turn a validated scenario config into a solvable Scenario.

    Raises:
        ConfigError: If the mesh or any referenced set cannot be built.
    """
    config = config or Config()
    quadrature = quadrature or cfg.quadrature
    try:
        mesh = build_mesh(cfg.mesh, base_dir)
        material = build_material(cfg.material)
        bcs = build_boundary(cfg.boundary, mesh)
        reference_volume = cfg.reference_volume
        if reference_volume is None and cfg.load.pressure_mode == "volume":
            reference_volume = enclosed_volume(mesh, mesh.ref_coords, quadrature)
        load = build_load(cfg.load, mesh, material, config.assembly.penalty_factor,
                          reference_volume)
    except ConfigError:
        raise
    except MemfemError as e:
        raise ConfigError(f"Cannot build scenario '{cfg.name}': {e}") from e

    s = config.solver
    n = cfg.newton
    newton = NewtonSettings(
        tol_residual=n.tol_residual or s.tol_residual,
        tol_increment=n.tol_increment or s.tol_increment,
        max_iter=n.max_iter or s.max_iter,
        line_search=s.line_search if n.line_search is None else n.line_search,
        min_step=s.min_step,
    )
    levels = cfg.schedule.substep_levels
    schedule = StepSchedule(
        parameter=cfg.schedule.parameter,
        values=tuple(cfg.schedule.values),
        substep_levels=s.substep_levels if levels is None else levels,
    )

    reference = None
    if cfg.reference is not None:
        reference = ReferenceCurve(
            kind=cfg.reference.kind,
            radius=cfg.reference.radius,
            mu_t=getattr(material, "mu_t", None),
            gamma=getattr(material, "gamma", None),
        )

    outputs = None
    if out_dir is not None:
        outputs = _output_settings(cfg.outputs, Path(out_dir))

    return Scenario(
        name=cfg.name,
        mesh=mesh,
        bcs=bcs,
        material=material,
        load=load,
        schedule=schedule,
        newton=newton,
        quadrature=quadrature,
        reference_volume=reference_volume,
        reference=reference,
        outputs=outputs,
    )


def _output_settings(cfg: OutputConfig, out_dir: Path) -> OutputSettings:
    return OutputSettings(
        out_dir=out_dir,
        csv_name=cfg.csv,
        vtk_dir=cfg.vtk_dir,
        diagnostics_name=cfg.diagnostics,
        report_name=cfg.report,
    )
