"""Tests for scenario loading, builtins and translation into domain objects."""

from __future__ import annotations

import json

import numpy as np
import pytest

from memfem.config import Config, FixedDofs, LoadConfig, ObstacleConfig, TractionConfig
from memfem.exceptions import ConfigError
from memfem.mesh_model import characteristic_length, make_square_sheet, save_mesh
from memfem.models import HalfSpace, NeoHooke, StabilizedLiquid, VolumeConstraint
from memfem.scenarios import (
    build_scenario,
    builtin_names,
    builtin_scenarios,
    export_builtins,
    get_builtin,
    load_scenario_config,
    parse_scenario,
)
from tests.fixtures.sample_meshes import (
    make_balloon_config,
    make_contact_config,
    make_scenario_payload,
    make_sheet_config,
)


class TestBuiltins:
    def test_names(self):
        assert builtin_names() == ["balloon", "sheet", "droplet-growth", "droplet-contact"]

    def test_experiment_parameters(self):
        by_name = {s.name: s for s in builtin_scenarios()}
        assert by_name["balloon"].schedule.values[-1] == 10.0
        assert by_name["sheet"].mesh.prestretch == 1.05
        assert by_name["sheet"].reference_volume == 4.0
        assert by_name["droplet-growth"].material.mu_stab == 0.01
        assert by_name["droplet-contact"].schedule.values == [1.0, 2.0, 4.0, 8.0]

    def test_unknown_builtin(self):
        with pytest.raises(ConfigError):
            get_builtin("zeppelin")

    def test_export_round_trips(self, tmp_path):
        paths = export_builtins(tmp_path / "scenarios")
        assert sorted(p.name for p in paths) == sorted(f"{n}.json" for n in builtin_names())
        for path in paths:
            cfg, base_dir = load_scenario_config(path)
            assert cfg == get_builtin(path.stem)
            assert base_dir == path.parent


class TestLoading:
    def test_builtin_name(self):
        cfg, base_dir = load_scenario_config("balloon")
        assert cfg.name == "balloon"
        assert base_dir is None

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_scenario_config(tmp_path / "absent.json")

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{\"version\": 1,")
        with pytest.raises(ConfigError):
            load_scenario_config(path)

    def test_non_object(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_scenario_config(path)

    def test_schema_violation(self):
        payload = make_scenario_payload(schedule={"parameter": "volume", "values": [2, 1, 3]})
        with pytest.raises(ConfigError):
            parse_scenario(payload)


class TestBuildScenario:
    def test_balloon(self):
        scenario = build_scenario(make_balloon_config(values=(2.0, 4.0)))
        assert isinstance(scenario.material, NeoHooke)
        assert scenario.reference_volume == pytest.approx(np.pi / 6.0, rel=1e-6)
        assert scenario.load.pressure_mode == VolumeConstraint(scenario.reference_volume)
        assert scenario.schedule.values == (2.0, 4.0)
        assert scenario.quadrature == 6
        assert scenario.reference.mu_t == 1.0
        assert scenario.outputs is None

    def test_quadrature_override(self):
        scenario = build_scenario(make_balloon_config(), quadrature=3)
        assert scenario.quadrature == 3

    def test_solver_settings_merge(self):
        cfg = make_balloon_config()
        cfg.newton.max_iter = 5
        config = Config()
        config.solver.tol_residual = 1e-8
        config.solver.substep_levels = 2
        scenario = build_scenario(cfg, config)
        assert scenario.newton.max_iter == 5
        assert scenario.newton.tol_residual == 1e-8
        assert scenario.schedule.substep_levels == 2

    def test_sheet(self):
        scenario = build_scenario(make_sheet_config(n=2))
        assert scenario.mesh.prestretch == 1.05
        assert scenario.reference_volume == 4.0
        assert scenario.bcs.fixed_dofs.size == 8 * 3

    def test_contact_penalty_default(self):
        scenario = build_scenario(make_contact_config())
        (obstacle,) = scenario.load.obstacles
        assert isinstance(obstacle.shape, HalfSpace)
        assert isinstance(scenario.material, StabilizedLiquid)
        expected = 100.0 * 1.0 / characteristic_length(scenario.mesh)
        assert obstacle.epsilon_n == pytest.approx(expected)
        assert scenario.load.hydrostatic.rho == 0.0

    def test_explicit_penalty(self):
        cfg = make_contact_config()
        cfg.load.obstacles = [ObstacleConfig(type="sphere", radius=0.5, epsilon_n=12.0)]
        (obstacle,) = build_scenario(cfg).load.obstacles
        assert obstacle.epsilon_n == 12.0

    def test_unknown_node_set(self):
        cfg = make_balloon_config()
        cfg.boundary.fixed = [FixedDofs(node_set="equator")]
        with pytest.raises(ConfigError):
            build_scenario(cfg)

    def test_unknown_edge_set(self):
        cfg = make_sheet_config()
        cfg.load = LoadConfig(pressure_mode="volume",
                              tractions=[TractionConfig(edge_set="rim", traction=(1, 0, 0))])
        with pytest.raises(ConfigError):
            build_scenario(cfg)

    def test_mesh_file_relative_to_scenario(self, tmp_path):
        save_mesh(make_square_sheet(2, "lagrange_linear", half_width=2.0), tmp_path / "sheet.json")
        payload = make_sheet_config().model_dump(mode="json")
        payload["mesh"] = {"file": "sheet.json", "prestretch": 1.05}
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(payload))
        cfg, base_dir = load_scenario_config(path)
        scenario = build_scenario(cfg, base_dir=base_dir, out_dir=tmp_path / "out")
        assert scenario.mesh.n_nodes == 9
        assert scenario.mesh.prestretch == 1.05
        assert scenario.outputs.out_dir == tmp_path / "out"
        assert scenario.outputs.csv_name == "results.csv"

    def test_missing_mesh_file(self, tmp_path):
        payload = make_sheet_config().model_dump(mode="json")
        payload["mesh"] = {"file": "nowhere.json"}
        cfg = parse_scenario(payload)
        with pytest.raises(ConfigError):
            build_scenario(cfg, base_dir=tmp_path)
