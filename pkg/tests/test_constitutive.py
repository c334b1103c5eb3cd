"""Tests for the membrane constitutive laws."""

from __future__ import annotations

import numpy as np
import pytest

from memfem.constitutive import (
    evaluate,
    min_principal_stress,
    mixed_stress,
    strain_energy,
    stress_invariants,
    surface_tension,
)
from memfem.exceptions import CompressionWarning, ConstitutiveError
from memfem.master_element import gauss_rule, tabulate
from memfem.models import (
    DeformationMeasures,
    Liquid,
    NeoHooke,
    StabilizedLiquid,
    SurfaceFrame,
)
from memfem.surface_geometry import deformation, frame, inverse_metric
from tests.fixtures.sample_meshes import make_curved_coords, make_flat_patch

A_COV = np.array([[1.3, 0.2], [0.2, 0.8]])
a_COV = np.array([[2.1, -0.4], [-0.4, 1.7]])


def _metric_frame(a_cov: np.ndarray) -> SurfaceFrame:
    a_con, det = inverse_metric(a_cov)
    return SurfaceFrame(
        a=np.zeros((2, 3)), a_cov=a_cov, a_con=a_con, a_dual=np.zeros((2, 3)),
        n=np.zeros(3), Ja=np.sqrt(det), x=np.zeros(3),
    )


def _tau(model, a_cov):
    """Stress at a single point with metric a_cov over the reference A_COV."""
    ref = _metric_frame(A_COV[None])
    cur = _metric_frame(a_cov[None])
    defo = DeformationMeasures(J=cur.Ja / ref.Ja, A_con_push=ref.a_con)
    return evaluate(model, defo, cur)


def _stretched(lam: float):
    mesh = make_flat_patch("lagrange_quadratic")
    ev = tabulate(mesh.elements[0].basis, gauss_rule(3))
    ref = frame(ev, mesh.ref_coords)
    cur = frame(ev, lam * mesh.ref_coords)
    return deformation(ref, cur), cur


class TestNeoHooke:
    def test_stress_free_reference(self):
        stress = _tau(NeoHooke(1.0), A_COV)
        np.testing.assert_allclose(stress.tau[0], 0.0, atol=1e-15)
        np.testing.assert_allclose(stress.J, 1.0)

    @pytest.mark.parametrize("lam", [1.1, 1.5, 2.0])
    def test_equibiaxial_stress(self, lam):
        defo, cur = _stretched(lam)
        stress = evaluate(NeoHooke(2.0), defo, cur)
        sigma = mixed_stress(stress, cur)
        expected = 2.0 * (1.0 - lam**-6)
        np.testing.assert_allclose(sigma[:, 0, 0], expected, rtol=1e-12)
        np.testing.assert_allclose(sigma[:, 1, 1], expected, rtol=1e-12)
        np.testing.assert_allclose(sigma[:, 0, 1], 0.0, atol=1e-14)
        np.testing.assert_allclose(stress.thickness_ratio, lam**-2)

    def test_moduli_symmetries(self):
        c = _tau(NeoHooke(1.0), a_COV).c_int[0]
        np.testing.assert_allclose(c, np.swapaxes(c, 0, 1), atol=1e-14)
        np.testing.assert_allclose(c, np.swapaxes(c, 2, 3), atol=1e-14)
        np.testing.assert_allclose(c, np.transpose(c, (2, 3, 0, 1)), atol=1e-14)

    @pytest.mark.parametrize("model", [NeoHooke(1.0), Liquid(0.7)])
    def test_moduli_match_metric_derivative(self, model):
        c = _tau(model, a_COV).c_int[0]
        h = 1e-6
        for g, d in [(0, 0), (0, 1), (1, 1)]:
            E = np.zeros((2, 2))
            E[g, d] = E[d, g] = 1.0
            plus = _tau(model, a_COV + h * E).tau[0]
            minus = _tau(model, a_COV - h * E).tau[0]
            fd = (plus - minus) / (2 * h)
            expected = c[:, :, g, d] if g != d else 0.5 * c[:, :, g, d]
            np.testing.assert_allclose(fd, expected, atol=1e-8)

    def test_energy_zero_at_reference(self):
        defo, cur = _stretched(1.0)
        np.testing.assert_allclose(strain_energy(NeoHooke(1.0), defo, cur), 0.0, atol=1e-14)

    def test_invalid_modulus(self):
        with pytest.raises(ConstitutiveError):
            NeoHooke(0.0)


class TestLiquid:
    def test_isotropic_surface_tension(self):
        mesh = make_flat_patch()
        ev = tabulate(mesh.elements[0].basis, gauss_rule(3))
        cur = frame(ev, make_curved_coords())
        ref = frame(ev, mesh.ref_coords)
        stress = evaluate(Liquid(0.3), deformation(ref, cur), cur)
        sigma = mixed_stress(stress, cur)
        np.testing.assert_allclose(sigma, 0.3 * np.broadcast_to(np.eye(2), sigma.shape),
                                   atol=1e-13)

    def test_stabilized_liquid_splits_stress(self):
        defo, cur = _stretched(1.2)
        stress = evaluate(StabilizedLiquid(1.0, 0.01), defo, cur)
        liquid = evaluate(Liquid(1.0), defo, cur)
        neo = evaluate(NeoHooke(0.01), defo, cur)
        np.testing.assert_allclose(stress.tau, liquid.tau)
        np.testing.assert_allclose(stress.tau_stab, neo.tau)
        np.testing.assert_allclose(stress.c_int + stress.c_stab, liquid.c_int + neo.c_int)

    def test_unstabilized_has_no_stabilization_stress(self):
        defo, cur = _stretched(1.2)
        stress = evaluate(StabilizedLiquid(1.0, 0.0), defo, cur)
        np.testing.assert_allclose(stress.tau_stab, 0.0)

    def test_energy(self):
        defo, cur = _stretched(1.5)
        np.testing.assert_allclose(strain_energy(Liquid(2.0), defo, cur), 2.0 * 2.25)

    def test_surface_tension_lookup(self):
        assert surface_tension(Liquid(0.5)) == 0.5
        assert surface_tension(StabilizedLiquid(0.5, 0.01)) == 0.5
        assert surface_tension(NeoHooke(1.0)) is None

    def test_negative_stabilization_rejected(self):
        with pytest.raises(ConstitutiveError):
            StabilizedLiquid(1.0, -0.1)


class TestStressMonitors:
    def test_min_principal_diagonal(self):
        assert min_principal_stress(np.diag([3.0, 1.0])) == pytest.approx(1.0)

    def test_min_principal_non_symmetric_mixed(self):
        # mixed components of a symmetric tensor in a skew basis
        sigma = np.array([[2.0, 2.0], [0.5, 2.0]])
        assert min_principal_stress(sigma) == pytest.approx(1.0)

    def test_batched(self):
        sigma = np.stack([np.diag([1.0, 2.0]), np.diag([5.0, 4.0])])
        np.testing.assert_allclose(min_principal_stress(sigma), [1.0, 4.0])

    def test_compression_warns(self):
        with pytest.warns(CompressionWarning):
            value = min_principal_stress(np.diag([1.0, -0.5]))
        assert value == pytest.approx(-0.5)

    def test_compression_silent_when_disabled(self, recwarn):
        min_principal_stress(np.diag([1.0, -0.5]), warn=False)
        assert not any(issubclass(w.category, CompressionWarning) for w in recwarn)

    def test_rotation_like_input_rejected(self):
        with pytest.raises(ConstitutiveError):
            min_principal_stress(np.array([[0.0, 1.0], [-1.0, 0.0]]))

    def test_invariants(self):
        i1, i2 = stress_invariants(np.array([[2.0, 1.0], [1.0, 3.0]]))
        assert i1 == pytest.approx(5.0)
        assert i2 == pytest.approx(5.0)

    def test_non_positive_stretch(self):
        defo = DeformationMeasures(J=np.array([-1.0]), A_con_push=np.eye(2)[None])
        with pytest.raises(ConstitutiveError):
            evaluate(NeoHooke(1.0), defo, _metric_frame(np.eye(2)[None]))
