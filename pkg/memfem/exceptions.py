"""Custom exceptions for the memfem membrane solver."""


class MemfemError(Exception):
    """Base exception for all memfem errors."""


class BasisError(MemfemError):
    """Invalid element basis definition or evaluation point."""


class QuadratureError(MemfemError):
    """Unsupported quadrature order."""


class KinematicsError(MemfemError):
    """Surface kinematics could not be evaluated."""


class DegenerateFrameError(KinematicsError):
    """Tangent vectors are (nearly) linearly dependent."""


class InvertedElementError(KinematicsError):
    """Non-positive or non-finite area stretch."""


class ConstitutiveError(MemfemError):
    """Material evaluation failure."""


class MeshError(MemfemError):
    """Inconsistent mesh, node set, or mesh file."""


class VolumeError(MeshError):
    """Enclosed volume is undefined for this mesh."""


class ContactError(MemfemError):
    """Closest-point projection onto an obstacle failed."""


class SolverError(MemfemError):
    """Nonlinear or linear solve failure."""


class SingularSystemError(SolverError):
    """Bordered tangent could not be factorized."""


class NewtonDivergenceError(SolverError):
    """Newton iteration failed to converge within the allowed iterations."""


class SubstepExhaustedError(SolverError):
    """Load step could not be completed after the maximum number of halvings."""

    def __init__(self, message: str, records: list | None = None):
        super().__init__(message)
        # steps completed before the failure, kept for partial output
        self.records = list(records or [])


class ConfigError(MemfemError):
    """Configuration error."""


class CompressionWarning(UserWarning):
    """Negative minimum principal stress (in-plane compression)."""
