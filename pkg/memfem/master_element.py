"""Shape functions and Gauss quadrature on the master element [-1, 1]^2.

All element kinds use tensor-product local ordering with xi^1 running fastest:
local function ``I = i + m * j`` where ``i``/``j`` index the 1D functions along
xi^1/xi^2 and ``m`` is the number of 1D functions per direction.
"""

from __future__ import annotations

import logging
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import comb

from memfem.exceptions import BasisError, QuadratureError
from memfem.models import BasisEval, ElementBasis, ElementKind, QuadratureRule

logger = logging.getLogger(__name__)

MAX_GAUSS_ORDER = 6
DOMAIN_TOLERANCE = 1e-12

DEFAULT_ORDER = {
    ElementKind.LAGRANGE_LINEAR: 2,
    ElementKind.LAGRANGE_QUADRATIC: 3,
}


# ----------------------------------------------------------------------
# 1D bases: each returns values, first and second derivatives, shape (n, m)
# ----------------------------------------------------------------------


def _lagrange_linear_1d(x: np.ndarray):
    one = np.ones_like(x)
    values = np.stack([0.5 * (1.0 - x), 0.5 * (1.0 + x)], axis=-1)
    first = np.stack([-0.5 * one, 0.5 * one], axis=-1)
    return values, first, np.zeros_like(values)


def _lagrange_quadratic_1d(x: np.ndarray):
    one = np.ones_like(x)
    values = np.stack([0.5 * x * (x - 1.0), 1.0 - x * x, 0.5 * x * (x + 1.0)], axis=-1)
    first = np.stack([x - 0.5, -2.0 * x, x + 0.5], axis=-1)
    second = np.stack([one, -2.0 * one, one], axis=-1)
    return values, first, second


def _bernstein_values(p: int, t: np.ndarray) -> np.ndarray:
    """Bernstein polynomials of degree p on [0, 1]; empty basis for p < 0."""
    if p < 0:
        return np.zeros(t.shape + (0,))
    i = np.arange(p + 1)
    return comb(p, i) * t[..., None] ** i * (1.0 - t[..., None]) ** (p - i)


def _bernstein_1d(p: int, x: np.ndarray):
    """Degree-p Bernstein basis on [-1, 1] with derivatives w.r.t. x."""
    t = 0.5 * (1.0 + x)
    values = _bernstein_values(p, t)

    # d/dt B_i^p = p (B_{i-1}^{p-1} - B_i^{p-1}); dt/dx = 1/2
    lower = np.pad(_bernstein_values(p - 1, t), [(0, 0)] * t.ndim + [(1, 1)])
    first = 0.5 * p * (lower[..., :-1] - lower[..., 1:])

    lower2 = np.pad(_bernstein_values(p - 2, t), [(0, 0)] * t.ndim + [(2, 2)])
    second = 0.25 * p * (p - 1) * (lower2[..., :-2] - 2.0 * lower2[..., 1:-1] + lower2[..., 2:])
    return values, first, second


def _tensor_product(f1, f2) -> BasisEval:
    """Combine 1D bases along xi^1 (f1) and xi^2 (f2) into a surface basis."""
    v1, d1, dd1 = f1
    v2, d2, dd2 = f2
    n_pts = v1.shape[0]

    def outer(a, b):
        return np.einsum("qj,qi->qji", b, a).reshape(n_pts, -1)

    N = outer(v1, v2)
    dN = np.stack([outer(d1, v2), outer(v1, d2)], axis=-1)
    d2N = np.stack([outer(dd1, v2), outer(d1, d2), outer(v1, dd2)], axis=-1)
    return BasisEval(N=N, dN=dN, d2N=d2N)


def _rational(basis: ElementBasis, poly: BasisEval) -> BasisEval:
    """Apply extraction and rational weighting with quotient-rule derivatives."""
    C = basis.extraction
    w = basis.weights

    S = poly.N @ C.T
    dS = np.einsum("ab,qbk->qak", C, poly.dN)
    ddS = np.einsum("ab,qbk->qak", C, poly.d2N)

    W = S @ w
    dW = np.einsum("a,qak->qk", w, dS)
    ddW = np.einsum("a,qak->qk", w, ddS)

    R = w * S / W[:, None]
    dR = (w[None, :, None] * dS - R[:, :, None] * dW[:, None, :]) / W[:, None, None]

    # second derivative components (11, 12, 22) -> index pairs
    pairs = ((0, 0), (0, 1), (1, 1))
    ddR = np.empty_like(ddS)
    for col, (a, b) in enumerate(pairs):
        ddR[:, :, col] = (
            w * ddS[:, :, col]
            - dR[:, :, a] * dW[:, None, b]
            - dR[:, :, b] * dW[:, None, a]
            - R * ddW[:, None, col]
        ) / W[:, None]
    return BasisEval(N=R, dN=dR, d2N=ddR)


def eval_basis(basis: ElementBasis, xi) -> BasisEval:
    """Evaluate shape functions and derivatives at one or many master points.

    Args:
        basis: Element basis definition.
        xi: A point ``(xi1, xi2)`` or an array of points with shape ``(n, 2)``.

    Returns:
        BasisEval with a leading point axis when ``xi`` is an array of points.
    """
    pts = np.asarray(xi, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != 2:
        raise BasisError(f"Master coordinates must be 2D, got shape {pts.shape}")
    if np.any(np.abs(pts) > 1.0 + DOMAIN_TOLERANCE):
        raise BasisError(f"Point outside master domain [-1, 1]^2: {pts.max()}")
    pts = np.clip(pts, -1.0, 1.0)

    x1, x2 = pts[:, 0], pts[:, 1]
    if basis.kind == ElementKind.LAGRANGE_LINEAR:
        result = _tensor_product(_lagrange_linear_1d(x1), _lagrange_linear_1d(x2))
    elif basis.kind == ElementKind.LAGRANGE_QUADRATIC:
        result = _tensor_product(_lagrange_quadratic_1d(x1), _lagrange_quadratic_1d(x2))
    elif basis.kind == ElementKind.BEZIER:
        poly = _tensor_product(_bernstein_1d(basis.degree, x1), _bernstein_1d(basis.degree, x2))
        result = _rational(basis, poly)
    else:
        raise BasisError(f"Unknown element kind: {basis.kind}")

    if single:
        return BasisEval(N=result.N[0], dN=result.dN[0], d2N=result.d2N[0])
    return result


def tabulate(basis: ElementBasis, rule: QuadratureRule) -> BasisEval:
    """Evaluate a basis at every point of a quadrature rule."""
    return eval_basis(basis, rule.points)


# ----------------------------------------------------------------------
# Quadrature
# ----------------------------------------------------------------------


@lru_cache(maxsize=None)
def _gauss_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    points, weights = leggauss(n)
    points.flags.writeable = False
    weights.flags.writeable = False
    return points, weights


def gauss_rule_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [-1, 1]."""
    if not 1 <= n <= MAX_GAUSS_ORDER:
        raise QuadratureError(f"Gauss order must be in 1..{MAX_GAUSS_ORDER}, got {n}")
    return _gauss_1d(n)


@lru_cache(maxsize=None)
def gauss_rule(n_per_dir: int) -> QuadratureRule:
    """Tensor-product Gauss-Legendre rule with ``n_per_dir**2`` points, xi^1 fastest."""
    if not isinstance(n_per_dir, (int, np.integer)) or not 1 <= n_per_dir <= MAX_GAUSS_ORDER:
        raise QuadratureError(
            f"Gauss order must be an integer in 1..{MAX_GAUSS_ORDER}, got {n_per_dir}"
        )
    x, w = _gauss_1d(int(n_per_dir))
    x1, x2 = np.meshgrid(x, x, indexing="xy")
    points = np.column_stack([x1.ravel(), x2.ravel()])
    weights = np.outer(w, w).ravel()
    points.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(points=points, weights=weights)


def default_quadrature(basis: ElementBasis) -> int:
    """Default Gauss order per direction for an element kind."""
    if basis.kind in DEFAULT_ORDER:
        return DEFAULT_ORDER[basis.kind]
    # quadratic NURBS 3x3, cubic 4x4
    return min(basis.degree + 1, MAX_GAUSS_ORDER)


def make_basis(kind: ElementKind | str, degree: int = 2, extraction=None, weights=None):
    """Convenience constructor accepting string kinds."""
    return ElementBasis(
        kind=ElementKind(kind), degree=degree, extraction=extraction, weights=weights
    )
