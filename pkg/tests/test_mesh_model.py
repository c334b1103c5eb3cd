"""Tests for mesh generators, boundary conditions, volume and mesh files."""

from __future__ import annotations

import json

import numpy as np
import pytest
from scipy.spatial import cKDTree

from memfem.exceptions import MeshError, VolumeError
from memfem.master_element import gauss_rule, tabulate
from memfem.mesh_model import (
    CLAMPED_SET,
    boundary_sides,
    characteristic_length,
    default_boundary_conditions,
    enclosed_volume,
    load_mesh,
    make_full_sphere,
    make_sphere,
    make_sphere_octant,
    make_square_sheet,
    mesh_from_dict,
    mesh_to_dict,
    save_mesh,
    surface_area,
)
from memfem.models import ElementKind, ElementSide, Mesh
from memfem.surface_geometry import frame


class TestSphereGenerators:
    def test_exact_octant_volume(self):
        mesh = make_sphere_octant(1, 1, ElementKind.BEZIER, radius=2.0)
        assert not mesh.closed
        volume = enclosed_volume(mesh, mesh.ref_coords, quadrature=6)
        assert volume == pytest.approx(np.pi * 8.0 / 6.0, rel=1e-6)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_refined_nurbs_octant_stays_on_sphere(self, n):
        mesh = make_sphere_octant(n, n, ElementKind.BEZIER)
        rule = gauss_rule(3)
        for element in mesh.elements:
            f = frame(tabulate(element.basis, rule), mesh.ref_coords[element.node_ids])
            np.testing.assert_allclose(np.linalg.norm(f.x, axis=1), 1.0, atol=1e-12)

    def test_full_sphere_closed(self):
        mesh = make_full_sphere(1, 1, "bezier")
        assert mesh.closed
        assert mesh.node_sets == {}
        assert boundary_sides(mesh) == []
        volume = enclosed_volume(mesh, mesh.ref_coords, quadrature=6)
        area = surface_area(mesh, mesh.ref_coords, quadrature=6)
        assert volume == pytest.approx(4.0 * np.pi / 3.0, rel=1e-6)
        assert area == pytest.approx(4.0 * np.pi, rel=1e-6)

    def test_shared_nodes_are_merged(self):
        mesh = make_full_sphere(2, 2, "lagrange_quadratic")
        assert not cKDTree(mesh.ref_coords).query_pairs(1e-9)
        # 16 meridians by 7 interior latitudes plus both poles
        assert mesh.n_nodes == 16 * 7 + 2

    @pytest.mark.parametrize("kind", ["lagrange_linear", "lagrange_quadratic", "bezier"])
    def test_outward_normals(self, kind):
        mesh = make_sphere(2, 2, kind, octants=[(1, 1, 1), (-1, 1, -1)])
        for element in mesh.elements:
            ev = tabulate(element.basis, gauss_rule(2))
            f = frame(ev, mesh.ref_coords[element.node_ids])
            assert np.all(np.einsum("qj,qj->q", f.x, f.n) > 0.0)

    def test_quadratic_octant_volume_converges(self):
        exact = np.pi / 6.0
        errors = []
        for n in (1, 2, 4):
            mesh = make_sphere_octant(n, n, "lagrange_quadratic")
            errors.append(abs(enclosed_volume(mesh, mesh.ref_coords) - exact) / exact)
        assert errors[0] > errors[1] > errors[2]
        assert errors[2] < 1e-3

    def test_symmetry_sets(self):
        mesh = make_sphere_octant(2, 2, "lagrange_quadratic")
        assert set(mesh.node_sets) == {"sym_x", "sym_y", "sym_z"}
        np.testing.assert_allclose(mesh.ref_coords[mesh.node_sets["sym_z"], 2], 0.0, atol=1e-12)
        half = make_sphere(2, 2, "lagrange_quadratic", octants=[(1, 1, 1), (1, 1, -1)])
        assert set(half.node_sets) == {"sym_x", "sym_y"}

    def test_default_bcs_fix_normal_components(self):
        mesh = make_sphere_octant(1, 1, "bezier")
        bcs = default_boundary_conditions(mesh)
        for name, axis in (("sym_x", 0), ("sym_y", 1), ("sym_z", 2)):
            assert np.all(bcs.fixed[mesh.node_sets[name], axis])
        on_axis = np.linalg.norm(mesh.ref_coords[:, :2], axis=1) < 1e-12
        pole = np.flatnonzero(on_axis & np.isclose(mesh.ref_coords[:, 2], 1.0))
        assert pole.size == 1
        np.testing.assert_array_equal(bcs.fixed[pole[0]], [True, True, False])

    @pytest.mark.parametrize("args", [(0, 1, "bezier"), (1, 1, "bezier", -1.0)])
    def test_invalid_arguments(self, args):
        with pytest.raises(MeshError):
            make_sphere(*args)

    def test_invalid_octant(self):
        with pytest.raises(MeshError):
            make_sphere(1, 1, "bezier", octants=[(1, 0, 1)])


class TestSquareSheet:
    @pytest.mark.parametrize("kind", ["lagrange_linear", "lagrange_quadratic", "bezier"])
    def test_flat_sheet(self, kind):
        mesh = make_square_sheet(3, kind, half_width=2.0)
        assert len(mesh.elements) == 9
        assert enclosed_volume(mesh, mesh.ref_coords) == pytest.approx(0.0, abs=1e-14)
        assert surface_area(mesh, mesh.ref_coords) == pytest.approx(16.0)
        assert len(mesh.edge_sets["boundary"]) == 12

    def test_clamped_set(self):
        mesh = make_square_sheet(4, "lagrange_linear")
        clamped = mesh.node_sets[CLAMPED_SET]
        assert clamped.size == 16
        np.testing.assert_allclose(np.max(np.abs(mesh.ref_coords[clamped, :2]), axis=1), 1.0)
        bcs = default_boundary_conditions(mesh)
        assert bcs.fixed_dofs.size == 48

    def test_prestretch(self):
        assert make_square_sheet(1, "lagrange_linear", prestretch=1.05).prestretch == 1.05
        with pytest.raises(MeshError):
            make_square_sheet(1, "lagrange_linear", prestretch=0.9)

    def test_inflated_sheet_volume(self):
        mesh = make_square_sheet(2, "lagrange_quadratic")
        coords = mesh.ref_coords.copy()
        x, y = coords[:, 0], coords[:, 1]
        coords[:, 2] = (1.0 - x**2) * (1.0 - y**2)
        # int (1-x^2)(1-y^2) over [-1,1]^2 = (4/3)^2, exact for biquadratic elements
        assert enclosed_volume(mesh, coords) == pytest.approx(16.0 / 9.0, rel=1e-12)

    def test_lifted_boundary_has_no_volume(self):
        mesh = make_square_sheet(2, "lagrange_linear")
        coords = mesh.ref_coords + np.array([0.0, 0.0, 1.0])
        with pytest.raises(VolumeError):
            enclosed_volume(mesh, coords)

    def test_characteristic_length(self):
        mesh = make_square_sheet(2, "lagrange_linear", half_width=1.0)
        assert characteristic_length(mesh) == pytest.approx(np.sqrt(2.0))


class TestMeshFiles:
    def test_save_and_load(self, tmp_path):
        mesh = make_sphere_octant(2, 1, "bezier")
        mesh.edge_sets["seam"] = [(0, ElementSide.XI1_MIN)]
        path = save_mesh(mesh, tmp_path / "meshes" / "octant.json")
        loaded = load_mesh(path)
        np.testing.assert_array_equal(loaded.ref_coords, mesh.ref_coords)
        assert len(loaded.elements) == len(mesh.elements)
        np.testing.assert_array_equal(loaded.elements[1].basis.weights,
                                      mesh.elements[1].basis.weights)
        assert loaded.edge_sets["seam"][0][0] == 0
        assert enclosed_volume(loaded, loaded.ref_coords) == pytest.approx(
            enclosed_volume(mesh, mesh.ref_coords)
        )

    def test_missing_file(self, tmp_path):
        with pytest.raises(MeshError):
            load_mesh(tmp_path / "missing.json")

    def test_failed_save_leaves_no_temp_file(self, tmp_path, monkeypatch):
        def fail(src, dst):
            raise OSError("disk full")

        monkeypatch.setattr("memfem.report_generator.os.replace", fail)
        with pytest.raises(OSError):
            save_mesh(make_square_sheet(1, "lagrange_linear"), tmp_path / "sheet.json")
        assert list(tmp_path.iterdir()) == []

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(MeshError):
            load_mesh(path)

    def test_wrong_version(self):
        payload = mesh_to_dict(make_square_sheet(1, "lagrange_linear"))
        payload["version"] = 99
        with pytest.raises(MeshError):
            mesh_from_dict(payload)

    def test_out_of_range_connectivity(self):
        payload = mesh_to_dict(make_square_sheet(1, "lagrange_linear"))
        payload["elements"][0]["nodes"] = [0, 1, 2, 7]
        with pytest.raises(MeshError):
            mesh_from_dict(json.loads(json.dumps(payload)))

    def test_node_count_mismatch(self):
        payload = mesh_to_dict(make_square_sheet(1, "lagrange_linear"))
        payload["elements"][0]["kind"] = "lagrange_quadratic"
        with pytest.raises(MeshError):
            mesh_from_dict(payload)

    def test_mesh_rejects_non_finite(self):
        sheet = make_square_sheet(1, "lagrange_linear")
        coords = sheet.ref_coords.copy()
        coords[0, 0] = np.inf
        with pytest.raises(MeshError):
            Mesh(ref_coords=coords, elements=sheet.elements)
