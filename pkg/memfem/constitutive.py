"""Membrane constitutive laws in surface Kirchhoff stress form.

tau^{ab} = J sigma^{ab} is the canonical stress. Moduli c^{abcd} are returned as
full 2x2x2x2 arrays so that ``Delta tau^{ab} = c^{abcd} a_c . Delta a_d``.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np

from memfem.exceptions import CompressionWarning, ConstitutiveError
from memfem.models import (
    DeformationMeasures,
    Liquid,
    MaterialModel,
    NeoHooke,
    StabilizedLiquid,
    StressState,
    SurfaceFrame,
)

logger = logging.getLogger(__name__)

DISCRIMINANT_TOLERANCE = 1e-12

# e^{ac} e^{bd} + e^{ad} e^{bc} with the unit alternator e = [[0, 1], [-1, 0]]
_ALT = np.array([[0.0, 1.0], [-1.0, 0.0]])
ALTERNATOR_PAIR = np.einsum("ac,bd->abcd", _ALT, _ALT) + np.einsum("ad,bc->abcd", _ALT, _ALT)


def _check_stretch(J: np.ndarray) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    if np.any(~np.isfinite(J)) or np.any(J <= 0.0):
        raise ConstitutiveError(f"Area stretch must be positive, got min J = {np.min(J):.3e}")
    return J


def _metric_det(cur_frame: SurfaceFrame) -> np.ndarray:
    a_cov = cur_frame.a_cov
    return a_cov[..., 0, 0] * a_cov[..., 1, 1] - a_cov[..., 0, 1] * a_cov[..., 1, 0]


def _neo_hooke(mu_t: float, J, A_con, a_con, det_a):
    inv_j2 = 1.0 / (J * J)
    tau = mu_t * (A_con - a_con * inv_j2[..., None, None])
    aa = np.einsum("...ab,...cd->...abcd", a_con, a_con)
    c = (mu_t * inv_j2)[..., None, None, None, None] * (
        4.0 * aa - ALTERNATOR_PAIR / det_a[..., None, None, None, None]
    )
    return tau, c


def _liquid(gamma: float, J, a_con, det_a):
    tau = gamma * J[..., None, None] * a_con
    aa = np.einsum("...ab,...cd->...abcd", a_con, a_con)
    c = (gamma * J)[..., None, None, None, None] * (
        ALTERNATOR_PAIR / det_a[..., None, None, None, None] - aa
    )
    return tau, c


def evaluate(
    model: MaterialModel, deformation: DeformationMeasures, cur_frame: SurfaceFrame
) -> StressState:
    """Kirchhoff stress components and tangent moduli.

    Args:
        model: NeoHooke, Liquid or StabilizedLiquid.
        deformation: Area stretch and reference inverse metric.
        cur_frame: Current surface frame at the same points.

    Returns:
        StressState; for StabilizedLiquid ``tau``/``c_int`` hold the liquid part and
        ``tau_stab``/``c_stab`` the Neo-Hookean stabilization.
    """
    J = _check_stretch(deformation.J)
    a_con = cur_frame.a_con
    det_a = _metric_det(cur_frame)
    zeros2 = np.zeros_like(a_con)
    zeros4 = np.zeros(a_con.shape[:-2] + (2, 2, 2, 2))

    if isinstance(model, NeoHooke):
        tau, c = _neo_hooke(model.mu_t, J, deformation.A_con_push, a_con, det_a)
        return StressState(
            tau=tau, tau_stab=zeros2, c_int=c, c_stab=zeros4, J=J, thickness_ratio=1.0 / J
        )
    if isinstance(model, Liquid):
        tau, c = _liquid(model.gamma, J, a_con, det_a)
        return StressState(tau=tau, tau_stab=zeros2, c_int=c, c_stab=zeros4, J=J)
    if isinstance(model, StabilizedLiquid):
        tau, c = _liquid(model.gamma, J, a_con, det_a)
        if model.mu_stab > 0.0:
            tau_s, c_s = _neo_hooke(model.mu_stab, J, deformation.A_con_push, a_con, det_a)
        else:
            tau_s, c_s = zeros2, zeros4
        return StressState(tau=tau, tau_stab=tau_s, c_int=c, c_stab=c_s, J=J)
    raise ConstitutiveError(f"Unknown material model: {model!r}")


def mixed_stress(stress: StressState, cur_frame: SurfaceFrame) -> np.ndarray:
    """Cauchy mixed components sigma^a_b = tau^{ag} a_{gb} / J (total stress)."""
    sigma = np.einsum("...ag,...gb->...ab", stress.tau_total, cur_frame.a_cov)
    return sigma / stress.J[..., None, None]


def strain_energy(
    model: MaterialModel, deformation: DeformationMeasures, cur_frame: SurfaceFrame
) -> np.ndarray:
    """Stored energy per unit reference area."""
    J = _check_stretch(deformation.J)

    def neo_hooke(mu):
        trace_c = np.einsum("...ab,...ab->...", deformation.A_con_push, cur_frame.a_cov)
        return 0.5 * mu * (trace_c + 1.0 / (J * J) - 3.0)

    if isinstance(model, NeoHooke):
        return neo_hooke(model.mu_t)
    if isinstance(model, Liquid):
        return model.gamma * J
    if isinstance(model, StabilizedLiquid):
        return model.gamma * J + neo_hooke(model.mu_stab)
    raise ConstitutiveError(f"Unknown material model: {model!r}")


def min_principal_stress(sigma_mixed, warn: bool = True):
    """Smaller eigenvalue of the mixed stress components sigma^a_b.

    Uses I1/2 - sqrt(I1^2/4 - I2). A slightly negative discriminant is clamped
    to zero; a strongly negative one means the input is not a symmetric tensor.

    Raises:
        ConstitutiveError: If the discriminant is below the tolerance.
    """
    sigma = np.asarray(sigma_mixed, dtype=float)
    if not np.all(np.isfinite(sigma)):
        raise ConstitutiveError("Stress components must be finite")
    i1, i2 = stress_invariants(sigma)
    disc = 0.25 * i1 * i1 - i2
    tol = DISCRIMINANT_TOLERANCE * np.maximum(1.0, 0.25 * i1 * i1)
    if np.any(disc < -tol):
        raise ConstitutiveError(
            f"Negative discriminant {np.min(disc):.3e}: stress is not symmetrizable"
        )
    result = 0.5 * i1 - np.sqrt(np.maximum(disc, 0.0))
    if warn and np.any(result < 0.0):
        warnings.warn(
            f"Compressive minimum principal stress {np.min(result):.6g}",
            CompressionWarning,
            stacklevel=2,
        )
    return float(result) if np.ndim(result) == 0 else result


def stress_invariants(sigma_mixed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    i1 = sigma_mixed[..., 0, 0] + sigma_mixed[..., 1, 1]
    i2 = sigma_mixed[..., 0, 0] * sigma_mixed[..., 1, 1] - sigma_mixed[..., 0, 1] * sigma_mixed[
        ..., 1, 0
    ]
    return i1, i2


def surface_tension(model: MaterialModel) -> float | None:
    if isinstance(model, (Liquid, StabilizedLiquid)):
        return model.gamma
    return None
