"""Curvilinear surface kinematics at quadrature points.

Every routine works on a single point or a batch of points: leading axes of the
BasisEval arrays carry through to the SurfaceFrame fields.
"""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from memfem.exceptions import DegenerateFrameError, InvertedElementError, KinematicsError
from memfem.models import BasisEval, DeformationMeasures, SurfaceFrame

logger = logging.getLogger(__name__)

DEGENERACY_EPS = 1e-14


def inverse_metric(a_cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form 2x2 inverse; returns (a_con, det)."""
    a11 = a_cov[..., 0, 0]
    a12 = a_cov[..., 0, 1]
    a22 = a_cov[..., 1, 1]
    det = a11 * a22 - a12 * a12
    a_con = np.empty_like(a_cov)
    a_con[..., 0, 0] = a22 / det
    a_con[..., 0, 1] = -a12 / det
    a_con[..., 1, 0] = -a12 / det
    a_con[..., 1, 1] = a11 / det
    return a_con, det


def frame(
    basis_eval: BasisEval,
    nodal_coords: np.ndarray,
    with_curvature: bool = False,
    eps: float = DEGENERACY_EPS,
) -> SurfaceFrame:
    """Tangent bases, metric, normal, area Jacobian and optionally curvature.

    Args:
        basis_eval: Shape functions at the evaluation point(s).
        nodal_coords: Element nodal (control point) coordinates, shape ``(n_ne, 3)``.
        with_curvature: Also compute the curvature components ``b_cov``.
        eps: Degeneracy threshold on ``det a / (a_11 a_22)``.

    Raises:
        DegenerateFrameError: If the tangents are (nearly) parallel or vanish.
    """
    x_e = np.asarray(nodal_coords, dtype=float)
    if not np.all(np.isfinite(x_e)):
        raise KinematicsError("Nodal coordinates contain non-finite values")

    a = np.einsum("...ik,ij->...kj", basis_eval.dN, x_e)
    a_cov = np.einsum("...aj,...bj->...ab", a, a)
    a_con, det = inverse_metric(a_cov)

    scale = a_cov[..., 0, 0] * a_cov[..., 1, 1]
    if np.any(~np.isfinite(det)) or np.any(det <= eps * scale) or np.any(scale <= 0.0):
        raise DegenerateFrameError(
            f"Degenerate surface frame: min det a = {np.min(det):.3e}, "
            f"min a11*a22 = {np.min(scale):.3e}"
        )

    Ja = np.sqrt(det)
    n = np.cross(a[..., 0, :], a[..., 1, :]) / Ja[..., None]
    a_dual = np.einsum("...ab,...bj->...aj", a_con, a)
    x = np.einsum("...i,ij->...j", basis_eval.N, x_e)

    result = SurfaceFrame(a=a, a_cov=a_cov, a_con=a_con, a_dual=a_dual, n=n, Ja=Ja, x=x)
    if with_curvature:
        x_dd = np.einsum("...ic,ij->...cj", basis_eval.d2N, x_e)
        b = np.einsum("...cj,...j->...c", x_dd, n)
        b_cov = np.stack(
            [np.stack([b[..., 0], b[..., 1]], -1), np.stack([b[..., 1], b[..., 2]], -1)], -2
        )
        result.b_cov = b_cov
    return result


def prestretched(ref_frame: SurfaceFrame, lam0: float) -> SurfaceFrame:
    """Reference frame of a surface pre-stretched isotropically by ``lam0``.

    The stress-free metric is ``A_ab / lam0^2``; nodal coordinates stay untouched.
    """
    if lam0 == 1.0:
        return ref_frame
    factor = lam0 * lam0
    return replace(
        ref_frame,
        a_cov=ref_frame.a_cov / factor,
        a_con=ref_frame.a_con * factor,
        a_dual=ref_frame.a_dual * factor,
        Ja=ref_frame.Ja / factor,
    )


def deformation(ref_frame: SurfaceFrame, cur_frame: SurfaceFrame) -> DeformationMeasures:
    """Area stretch J = J_a / J_A and the reference inverse metric A^{ab}."""
    J = cur_frame.Ja / ref_frame.Ja
    if np.any(~np.isfinite(J)) or np.any(J <= 0.0):
        raise InvertedElementError(f"Non-positive area stretch: min J = {np.min(J):.3e}")
    return DeformationMeasures(J=J, A_con_push=ref_frame.a_con)


def mean_curvature_trace(frame_: SurfaceFrame) -> np.ndarray:
    """Return b^a_a = a^{ab} b_ab (twice the mean curvature)."""
    if frame_.b_cov is None:
        raise KinematicsError("Curvature was not computed for this frame")
    result = np.einsum("...ab,...ab->...", frame_.a_con, frame_.b_cov)
    return float(result) if np.ndim(result) == 0 else result


def area_change_operator(frame_: SurfaceFrame, dN: np.ndarray) -> np.ndarray:
    """Linearization of the area-weighted normal, divided by Ja.

    Returns ``D`` with shape ``(..., 3, n_ne, 3)`` such that
    ``Delta(n da) = Ja * D[..., :, I, k] * Delta x_{I,k}`` per unit parametric area,
    i.e. ``(n (x) a^alpha - a^alpha (x) n) N_{,alpha}``.
    """
    n = frame_.n
    ad = frame_.a_dual
    term = np.einsum("...i,...ak->...aik", n, ad) - np.einsum("...ai,...k->...aik", ad, n)
    return np.einsum("...aik,...Ia->...iIk", term, dN)
