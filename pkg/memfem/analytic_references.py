"""Closed-form pressure-volume relations for inflated spheres."""

from __future__ import annotations

import numpy as np

from memfem.models import ReferenceCurve, ReferenceKind

# stationary point of the balloon curve: stretch^6 = 7
BALLOON_PEAK_RATIO = np.sqrt(7.0)


def _check_ratio(v_ratio):
    v = np.asarray(v_ratio, dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v <= 0.0):
        raise ValueError(f"Volume ratio must be positive, got {v_ratio}")
    return v


def _scalar(value):
    return float(value) if np.ndim(value) == 0 else value


def balloon_pressure(v_ratio, mu_t: float, radius: float):
    """Neo-Hookean sphere: p = (muT/R) 2 ((V0/V)^(1/3) - (V0/V)^(7/3))."""
    v = _check_ratio(v_ratio)
    inv = 1.0 / v
    return _scalar(mu_t / radius * 2.0 * (np.cbrt(inv) - inv ** (7.0 / 3.0)))


def droplet_pressure(v_ratio, gamma: float, radius: float):
    """Liquid sphere (Young-Laplace): p = (gamma/R) 2 (V0/V)^(1/3)."""
    v = _check_ratio(v_ratio)
    return _scalar(gamma / radius * 2.0 * np.cbrt(1.0 / v))


def balloon_peak(mu_t: float, radius: float) -> tuple[float, float]:
    """Volume ratio and pressure at the balloon pressure maximum."""
    return float(BALLOON_PEAK_RATIO), balloon_pressure(BALLOON_PEAK_RATIO, mu_t, radius)


def reference_pressure(curve: ReferenceCurve, v_ratio):
    if curve.kind == ReferenceKind.BALLOON:
        return balloon_pressure(v_ratio, curve.mu_t, curve.radius)
    return droplet_pressure(v_ratio, curve.gamma, curve.radius)


def relative_error(computed: float, reference: float) -> float:
    """|computed - reference| / |reference|, falling back to the absolute error at zero."""
    if reference == 0.0:
        return abs(computed)
    return abs(computed - reference) / abs(reference)
