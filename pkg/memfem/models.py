"""Data models shared across the memfem pipeline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import ClassVar, Optional, Union

import numpy as np

from memfem.exceptions import BasisError, ConstitutiveError, MeshError

logger = logging.getLogger(__name__)


class ElementKind(str, Enum):
    LAGRANGE_LINEAR = "lagrange_linear"
    LAGRANGE_QUADRATIC = "lagrange_quadratic"
    BEZIER = "bezier"


class ElementSide(str, Enum):
    XI1_MIN = "xi1-"
    XI1_MAX = "xi1+"
    XI2_MIN = "xi2-"
    XI2_MAX = "xi2+"


class ScheduleParameter(str, Enum):
    VOLUME = "volume"
    GRAVITY = "gravity"
    PRESSURE = "pressure"
    DEAD_LOAD = "dead_load"


class HydrostaticConvention(str, Enum):
    PHYSICAL = "physical"  # p_h = rho g.x, decreasing with height along -g
    AS_PRINTED = "as_printed"  # p_h = -rho g.x


class ReferenceKind(str, Enum):
    BALLOON = "balloon"
    DROPLET = "droplet"


# ----------------------------------------------------------------------
# Master element
# ----------------------------------------------------------------------


LAGRANGE_NODE_COUNT = {ElementKind.LAGRANGE_LINEAR: 4, ElementKind.LAGRANGE_QUADRATIC: 9}


@dataclass(frozen=True, eq=False)
class ElementBasis:
    """Shape function family of one element.

    Lagrange kinds are fully described by ``kind``. Bezier-extracted elements carry
    the extraction operator (n_ne x (p+1)^2, rows are local functions, columns the
    tensor-product Bernstein polynomials with xi^1 fastest) and one rational weight
    per local function.
    """

    kind: ElementKind
    degree: int = 1
    extraction: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        kind = ElementKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in LAGRANGE_NODE_COUNT:
            object.__setattr__(self, "degree", 1 if kind == ElementKind.LAGRANGE_LINEAR else 2)
            return

        if self.degree < 1:
            raise BasisError(f"Bezier degree must be >= 1, got {self.degree}")
        n_bern = (self.degree + 1) ** 2
        extraction = (
            np.eye(n_bern) if self.extraction is None else np.asarray(self.extraction, float)
        )
        if extraction.ndim != 2 or extraction.shape[1] != n_bern:
            raise BasisError(
                f"Extraction operator must have {n_bern} columns for degree {self.degree}, "
                f"got shape {extraction.shape}"
            )
        if not np.all(np.isfinite(extraction)):
            raise BasisError("Extraction operator contains non-finite entries")
        weights = (
            np.ones(extraction.shape[0])
            if self.weights is None
            else np.asarray(self.weights, float).reshape(-1)
        )
        if weights.shape[0] != extraction.shape[0]:
            raise BasisError(
                f"Expected {extraction.shape[0]} rational weights, got {weights.shape[0]}"
            )
        if np.any(weights <= 0.0) or not np.all(np.isfinite(weights)):
            raise BasisError("Rational weights must be finite and strictly positive")
        object.__setattr__(self, "extraction", extraction)
        object.__setattr__(self, "weights", weights)

    @property
    def n_ne(self) -> int:
        if self.kind in LAGRANGE_NODE_COUNT:
            return LAGRANGE_NODE_COUNT[self.kind]
        return self.extraction.shape[0]


@dataclass
class BasisEval:
    """Shape functions and parametric derivatives.

    Arrays may carry a leading batch axis of evaluation points:
    N (..., n_ne), dN (..., n_ne, 2), d2N (..., n_ne, 3) with columns (11, 12, 22).
    """

    N: np.ndarray
    dN: np.ndarray
    d2N: np.ndarray


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray  # (n_points, 2)
    weights: np.ndarray  # (n_points,)

    @property
    def n_points(self) -> int:
        return self.weights.shape[0]


# ----------------------------------------------------------------------
# Surface kinematics
# ----------------------------------------------------------------------


@dataclass
class SurfaceFrame:
    """Curvilinear surface quantities at one or more parametric points.

    Leading axes of every field index the evaluation points.
    """

    a: np.ndarray  # (..., 2, 3) covariant tangents a_alpha
    a_cov: np.ndarray  # (..., 2, 2) a_{alpha beta}
    a_con: np.ndarray  # (..., 2, 2) a^{alpha beta}
    a_dual: np.ndarray  # (..., 2, 3) a^alpha
    n: np.ndarray  # (..., 3)
    Ja: np.ndarray  # (...,)
    x: np.ndarray  # (..., 3) position
    b_cov: Optional[np.ndarray] = None  # (..., 2, 2)


@dataclass
class DeformationMeasures:
    J: np.ndarray
    A_con_push: np.ndarray


# ----------------------------------------------------------------------
# Materials
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class NeoHooke:
    """Incompressible Neo-Hookean membrane with stiffness mu*T (force/length)."""

    mu_t: float
    kind: ClassVar[str] = "neo_hooke"

    def __post_init__(self):
        if not self.mu_t > 0.0:
            raise ConstitutiveError(f"muT must be positive, got {self.mu_t}")


@dataclass(frozen=True)
class Liquid:
    """Constant isotropic surface tension."""

    gamma: float
    kind: ClassVar[str] = "liquid"

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ConstitutiveError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class StabilizedLiquid:
    """Surface tension plus an in-plane-only Neo-Hookean stabilization."""

    gamma: float
    mu_stab: float
    kind: ClassVar[str] = "stabilized_liquid"

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ConstitutiveError(f"gamma must be positive, got {self.gamma}")
        if self.mu_stab < 0.0:
            raise ConstitutiveError(f"mu_stab must be non-negative, got {self.mu_stab}")
        if self.mu_stab > 0.1 * self.gamma:
            logger.warning(
                "mu_stab=%g exceeds 0.1*gamma=%g; stabilization may affect the solution",
                self.mu_stab,
                0.1 * self.gamma,
            )


MaterialModel = Union[NeoHooke, Liquid, StabilizedLiquid]


@dataclass
class StressState:
    """Kirchhoff stress components and moduli at the evaluation points.

    ``tau``/``c_int`` enter the full internal force; ``tau_stab``/``c_stab`` are the
    stabilization part routed only into the in-plane force.
    """

    tau: np.ndarray  # (..., 2, 2)
    tau_stab: np.ndarray  # (..., 2, 2)
    c_int: np.ndarray  # (..., 2, 2, 2, 2)
    c_stab: np.ndarray  # (..., 2, 2, 2, 2)
    J: np.ndarray
    thickness_ratio: Optional[np.ndarray] = None

    @property
    def tau_total(self) -> np.ndarray:
        return self.tau + self.tau_stab


# ----------------------------------------------------------------------
# Mesh and problem definition
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MeshElement:
    basis: ElementBasis
    node_ids: np.ndarray


@dataclass(eq=False)
class Mesh:
    """Nodes or control points, connectivity and named node/edge sets."""

    ref_coords: np.ndarray
    elements: list[MeshElement]
    node_sets: dict[str, np.ndarray] = field(default_factory=dict)
    edge_sets: dict[str, list[tuple[int, ElementSide]]] = field(default_factory=dict)
    closed: bool = True
    prestretch: float = 1.0

    def __post_init__(self):
        self.ref_coords = np.asarray(self.ref_coords, dtype=float).reshape(-1, 3)
        n_nodes = self.ref_coords.shape[0]
        if not np.all(np.isfinite(self.ref_coords)):
            raise MeshError("Reference coordinates must be finite")
        for idx, element in enumerate(self.elements):
            ids = np.asarray(element.node_ids)
            if ids.shape != (element.basis.n_ne,):
                raise MeshError(
                    f"Element {idx} has {ids.size} nodes but its basis needs {element.basis.n_ne}"
                )
            if ids.size and (ids.min() < 0 or ids.max() >= n_nodes):
                raise MeshError(f"Element {idx} references a node outside 0..{n_nodes - 1}")
        for name, ids in self.node_sets.items():
            ids = np.asarray(ids, dtype=int)
            if ids.size and (ids.min() < 0 or ids.max() >= n_nodes):
                raise MeshError(f"Node set '{name}' references unknown nodes")
            self.node_sets[name] = ids
        for name, sides in self.edge_sets.items():
            for elem, side in sides:
                if not 0 <= elem < len(self.elements):
                    raise MeshError(f"Edge set '{name}' references unknown element {elem}")
            self.edge_sets[name] = [(int(e), ElementSide(s)) for e, s in sides]
        if self.prestretch < 1.0:
            raise MeshError(f"Pre-stretch must be >= 1, got {self.prestretch}")

    @property
    def n_nodes(self) -> int:
        return self.ref_coords.shape[0]

    @property
    def n_dof(self) -> int:
        return 3 * self.n_nodes


@dataclass
class BoundaryConditions:
    """Per-node, per-component fixed flags and prescribed displacements."""

    fixed: np.ndarray  # (n_nodes, 3) bool
    values: np.ndarray  # (n_nodes, 3)

    @classmethod
    def free(cls, n_nodes: int) -> BoundaryConditions:
        return cls(np.zeros((n_nodes, 3), dtype=bool), np.zeros((n_nodes, 3)))

    def fix(self, nodes, components, value: float = 0.0) -> None:
        nodes = np.asarray(nodes, dtype=int)
        for comp in components:
            self.fixed[nodes, comp] = True
            self.values[nodes, comp] = value

    @property
    def fixed_dofs(self) -> np.ndarray:
        return np.flatnonzero(self.fixed.reshape(-1))

    @property
    def free_mask(self) -> np.ndarray:
        return ~self.fixed.reshape(-1)


@dataclass(frozen=True)
class PrescribedPressure:
    p: float


@dataclass(frozen=True)
class VolumeConstraint:
    target: float  # absolute enclosed volume V-bar


PressureMode = Union[PrescribedPressure, VolumeConstraint]


@dataclass(frozen=True, eq=False)
class HydrostaticLoad:
    rho: float
    g_vec: np.ndarray
    convention: HydrostaticConvention = HydrostaticConvention.PHYSICAL

    @property
    def sign(self) -> float:
        return 1.0 if self.convention == HydrostaticConvention.PHYSICAL else -1.0


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """Rigid region {x : n_p.x <= offset}; n_p points out of the obstacle."""

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(normal)
        if norm == 0.0:
            raise MeshError("Half-space normal must be non-zero")
        object.__setattr__(self, "normal", normal / norm)


@dataclass(frozen=True, eq=False)
class SphereObstacle:
    """Rigid ball; the membrane is expected outside it."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0.0:
            raise MeshError(f"Sphere obstacle radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Obstacle:
    shape: Union[HalfSpace, SphereObstacle]
    epsilon_n: float

    def __post_init__(self):
        if not self.epsilon_n > 0.0:
            raise MeshError(f"Penalty parameter must be positive, got {self.epsilon_n}")


@dataclass(frozen=True, eq=False)
class EdgeTraction:
    """Dead traction per unit reference length on a named edge set."""

    edge_set: str
    traction: np.ndarray


@dataclass(frozen=True, eq=False)
class LoadCase:
    pressure_mode: PressureMode = field(default_factory=lambda: PrescribedPressure(0.0))
    dead_load: np.ndarray = field(default_factory=lambda: np.zeros(3))
    hydrostatic: Optional[HydrostaticLoad] = None
    obstacles: tuple[Obstacle, ...] = ()
    tractions: tuple[EdgeTraction, ...] = ()

    @property
    def volume_constrained(self) -> bool:
        return isinstance(self.pressure_mode, VolumeConstraint)


@dataclass
class SystemState:
    coords: np.ndarray
    p_v: float = 0.0
    load_factor: float = 0.0

    def copy(self) -> SystemState:
        return SystemState(self.coords.copy(), self.p_v, self.load_factor)


# ----------------------------------------------------------------------
# Assembly and solver data
# ----------------------------------------------------------------------


@dataclass
class ElementArrays:
    f_int: np.ndarray
    f_ext: np.ndarray
    f_c: np.ndarray
    k: np.ndarray
    l_ext: np.ndarray
    h_v: np.ndarray
    g_v_e: float = 0.0


@dataclass
class GlobalSystem:
    residual: np.ndarray
    tangent: object  # scipy.sparse.csr_matrix
    h_v: np.ndarray
    l_ext: np.ndarray
    g_v: float
    volume: float
    volume_constrained: bool
    free_mask: np.ndarray
    force_scale: float = 0.0  # max(|f_int|, |f_ext + f_c|) over free dofs


@dataclass(frozen=True)
class NewtonSettings:
    tol_residual: float = 1e-9
    tol_increment: float = 1e-10
    max_iter: int = 30
    line_search: bool = True
    min_step: float = 2.0**-8

    def __post_init__(self):
        if self.tol_residual <= 0 or self.tol_increment <= 0:
            raise ValueError("Newton tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class StepSchedule:
    parameter: ScheduleParameter
    values: tuple[float, ...] = ()
    substep_levels: int = 6

    def __post_init__(self):
        object.__setattr__(self, "parameter", ScheduleParameter(self.parameter))
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        diffs = np.diff(values)
        if diffs.size and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError(f"Schedule values must be strictly monotone: {values}")


@dataclass
class StepRecord:
    """Converged state and monitors after one schedule value."""

    step: int
    load_value: float
    state: SystemState
    volume: float
    p_v: float
    p_min: float
    p_max: float
    energy: float
    sigma_min: float
    surface_tension_error: Optional[float]
    iterations: int
    residual_history: list[float] = field(default_factory=list)

    @property
    def compression(self) -> bool:
        return self.sigma_min < 0.0


@dataclass
class Trajectory:
    """Initial state plus one record per converged schedule value."""

    initial_state: SystemState
    reference_volume: float
    records: list[StepRecord] = field(default_factory=list)

    @property
    def final_state(self) -> SystemState:
        return self.records[-1].state if self.records else self.initial_state


@dataclass
class AuditReport:
    """Maximum relative error of each analytic tangent block against central differences."""

    blocks: dict[str, float]
    n_samples: int
    tolerance: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.blocks.values())

    @property
    def worst(self) -> float:
        return max(self.blocks.values(), default=0.0)


@dataclass
class ResultRow:
    load_value: float
    volume: float
    p_v: float
    p_min: float
    p_max: float
    sigma_min: float
    surface_tension_error: Optional[float]
    iterations: int
    energy: float
    compression: bool

    @classmethod
    def from_record(cls, record: StepRecord) -> ResultRow:
        return cls(
            load_value=record.load_value,
            volume=record.volume,
            p_v=record.p_v,
            p_min=record.p_min,
            p_max=record.p_max,
            sigma_min=record.sigma_min,
            surface_tension_error=record.surface_tension_error,
            iterations=record.iterations,
            energy=record.energy,
            compression=record.compression,
        )


@dataclass(frozen=True)
class ReferenceCurve:
    kind: ReferenceKind
    radius: float
    mu_t: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ReferenceKind(self.kind))
        modulus = self.mu_t if self.kind == ReferenceKind.BALLOON else self.gamma
        if not self.radius > 0.0 or modulus is None or not modulus > 0.0:
            raise ValueError(f"Reference curve parameters must be positive: {self}")


@dataclass
class OutputSettings:
    out_dir: Path
    csv_name: str = "results.csv"
    vtk_dir: Optional[str] = "vtk"
    diagnostics_name: Optional[str] = "diagnostics.log"
    report_name: str = "pressure_error.md"


@dataclass
class Scenario:
    """Fully built problem: mesh, BCs, material, loading and solver schedule."""

    name: str
    mesh: Mesh
    bcs: BoundaryConditions
    material: MaterialModel
    load: LoadCase
    schedule: StepSchedule
    newton: NewtonSettings = field(default_factory=NewtonSettings)
    quadrature: Optional[int] = None
    reference_volume: Optional[float] = None
    reference: Optional[ReferenceCurve] = None
    outputs: Optional[OutputSettings] = None
