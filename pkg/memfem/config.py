"""Configuration management for memfem.

Two layers: ``Config`` holds application settings (YAML file plus ``MEMFEM_``
environment variables); ``ScenarioConfig`` is the schema of a scenario JSON file.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource

SCENARIO_VERSION = 1

Vector3 = tuple[float, float, float]


# ----------------------------------------------------------------------
# Application settings
# ----------------------------------------------------------------------


class AppConfig(BaseModel):
    name: str = "memfem"
    output_dir: str = "./output"
    log_level: str = "INFO"


class SolverConfig(BaseModel):
    tol_residual: float = Field(default=1e-9, gt=0)
    tol_increment: float = Field(default=1e-10, gt=0)
    max_iter: int = Field(default=30, ge=1)
    line_search: bool = True
    min_step: float = Field(default=2.0**-8, gt=0, le=1)
    substep_levels: int = Field(default=6, ge=0)


class AssemblyConfig(BaseModel):
    fd_step_factor: float = Field(default=1e-7, gt=0)  # stabilization tangent
    penalty_factor: float = Field(default=100.0, gt=0)  # eps_n = factor * modulus / h
    audit_samples: int = Field(default=20, ge=1)
    vtk_subdivisions: int = Field(default=4, ge=1)


class Config(BaseSettings):
    """Application configuration loaded from env vars and config file."""

    app: AppConfig = Field(default_factory=AppConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    assembly: AssemblyConfig = Field(default_factory=AssemblyConfig)

    threads: int = Field(default=1, ge=1)
    strict_deterministic: bool = False

    model_config = {
        "env_prefix": "MEMFEM_",
        "env_nested_delimiter": "__",
        "extra": "ignore",
    }

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        # environment first: MEMFEM_* beats values read from the YAML file
        return env_settings, dotenv_settings, init_settings, file_secret_settings

    @classmethod
    def load(cls, config_path: Optional[str] = None) -> Config:
        """Load configuration from a YAML file; ``MEMFEM_*`` variables override it."""
        config_path = config_path or os.getenv("MEMFEM_CONFIG", "./config.yaml")

        file_config = {}
        config_file = Path(config_path)
        if config_file.exists():
            with open(config_file) as f:
                file_config = yaml.safe_load(f) or {}

        return cls(**file_config)

    @property
    def workers(self) -> int:
        return 1 if self.strict_deterministic else self.threads


# ----------------------------------------------------------------------
# Scenario schema
# ----------------------------------------------------------------------


class MeshConfig(BaseModel):
    """Either a generator spec or a mesh file, never both."""

    generator: Optional[Literal["sphere", "square_sheet"]] = None
    file: Optional[str] = None
    kind: Literal["lagrange_linear", "lagrange_quadratic", "bezier"] = "lagrange_quadratic"
    n_circ: int = Field(default=1, ge=1)
    n_merid: int = Field(default=1, ge=1)
    n: int = Field(default=4, ge=1)
    radius: float = Field(default=1.0, gt=0)
    half_width: float = Field(default=1.0, gt=0)
    octants: list[tuple[int, int, int]] = Field(default_factory=lambda: [(1, 1, 1)])
    prestretch: float = Field(default=1.0, ge=1.0)

    @model_validator(mode="after")
    def _one_source(self) -> MeshConfig:
        if (self.generator is None) == (self.file is None):
            raise ValueError("mesh needs exactly one of 'generator' or 'file'")
        return self

    @field_validator("octants")
    @classmethod
    def _signs(cls, value):
        for octant in value:
            if any(s not in (1, -1) for s in octant):
                raise ValueError(f"octant signs must be +1 or -1, got {octant}")
        return value


class FixedDofs(BaseModel):
    node_set: str
    components: list[int] = Field(default_factory=lambda: [0, 1, 2])
    value: float = 0.0

    @field_validator("components")
    @classmethod
    def _range(cls, value):
        if any(c not in (0, 1, 2) for c in value):
            raise ValueError(f"components must be 0, 1 or 2, got {value}")
        return value


class BoundaryConfig(BaseModel):
    use_default: bool = True  # symmetry and clamped node sets
    fixed: list[FixedDofs] = Field(default_factory=list)


class NeoHookeConfig(BaseModel):
    type: Literal["neo_hooke"] = "neo_hooke"
    mu_t: float = Field(gt=0)


class LiquidConfig(BaseModel):
    type: Literal["liquid"] = "liquid"
    gamma: float = Field(gt=0)


class StabilizedLiquidConfig(BaseModel):
    type: Literal["stabilized_liquid"] = "stabilized_liquid"
    gamma: float = Field(gt=0)
    mu_stab: float = Field(ge=0)


MaterialConfig = Annotated[
    Union[NeoHookeConfig, LiquidConfig, StabilizedLiquidConfig], Field(discriminator="type")
]


class HydrostaticConfig(BaseModel):
    rho: float = Field(default=0.0, ge=0)
    g: Vector3 = (0.0, 0.0, -1.0)
    convention: Literal["physical", "as_printed"] = "physical"


class ObstacleConfig(BaseModel):
    type: Literal["half_space", "sphere"]
    normal: Vector3 = (0.0, 0.0, 1.0)
    offset: float = 0.0
    center: Vector3 = (0.0, 0.0, 0.0)
    radius: float = Field(default=1.0, gt=0)
    epsilon_n: Optional[float] = Field(default=None, gt=0)


class TractionConfig(BaseModel):
    edge_set: str
    traction: Vector3


class LoadConfig(BaseModel):
    pressure_mode: Literal["prescribed", "volume"] = "prescribed"
    pressure: float = 0.0
    volume_ratio: float = Field(default=1.0, gt=0)
    dead_load: Vector3 = (0.0, 0.0, 0.0)
    hydrostatic: Optional[HydrostaticConfig] = None
    obstacles: list[ObstacleConfig] = Field(default_factory=list)
    tractions: list[TractionConfig] = Field(default_factory=list)


class ScheduleConfig(BaseModel):
    parameter: Literal["volume", "gravity", "pressure", "dead_load"]
    values: list[float] = Field(default_factory=list)
    substep_levels: Optional[int] = Field(default=None, ge=0)

    @field_validator("values")
    @classmethod
    def _monotone(cls, value):
        diffs = [b - a for a, b in zip(value, value[1:])]
        if diffs and not (all(d > 0 for d in diffs) or all(d < 0 for d in diffs)):
            raise ValueError("schedule values must be strictly monotone")
        return value


class NewtonConfig(BaseModel):
    tol_residual: Optional[float] = Field(default=None, gt=0)
    tol_increment: Optional[float] = Field(default=None, gt=0)
    max_iter: Optional[int] = Field(default=None, ge=1)
    line_search: Optional[bool] = None


class ReferenceConfig(BaseModel):
    kind: Literal["balloon", "droplet"]
    radius: float = Field(gt=0)


class OutputConfig(BaseModel):
    csv: str = "results.csv"
    vtk_dir: Optional[str] = "vtk"
    diagnostics: Optional[str] = "diagnostics.log"
    report: str = "pressure_error.md"


class ScenarioConfig(BaseModel):
    """Scenario JSON document."""

    version: int
    name: str
    mesh: MeshConfig
    boundary: BoundaryConfig = Field(default_factory=BoundaryConfig)
    material: MaterialConfig
    load: LoadConfig = Field(default_factory=LoadConfig)
    schedule: ScheduleConfig
    newton: NewtonConfig = Field(default_factory=NewtonConfig)
    quadrature: Optional[int] = Field(default=None, ge=1, le=6)
    reference_volume: Optional[float] = Field(default=None, gt=0)
    reference: Optional[ReferenceConfig] = None
    outputs: OutputConfig = Field(default_factory=OutputConfig)

    model_config = {"extra": "forbid"}

    @field_validator("version")
    @classmethod
    def _known_version(cls, value):
        if value != SCENARIO_VERSION:
            raise ValueError(f"unsupported scenario version {value}")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> ScenarioConfig:
        parameter = self.schedule.parameter
        if parameter == "volume" and self.load.pressure_mode != "volume":
            raise ValueError("a volume schedule needs load.pressure_mode = 'volume'")
        if parameter == "pressure" and self.load.pressure_mode != "prescribed":
            raise ValueError("a pressure schedule needs load.pressure_mode = 'prescribed'")
        if parameter == "gravity" and self.load.hydrostatic is None:
            raise ValueError("a gravity schedule needs load.hydrostatic")
        if self.reference is not None:
            wanted = "neo_hooke" if self.reference.kind == "balloon" else "liquid"
            if wanted not in self.material.type:
                raise ValueError(
                    f"{self.reference.kind} reference does not match {self.material.type}"
                )
        return self
