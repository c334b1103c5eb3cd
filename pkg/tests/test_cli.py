"""Tests for the memfem command line."""

from __future__ import annotations

import json

from click.testing import CliRunner

from memfem.__main__ import cli
from tests.fixtures.sample_meshes import make_scenario_payload


def _invoke(tmp_path, *args):
    return CliRunner().invoke(cli, ["-c", str(tmp_path / "none.yaml"), *args])


class TestScenariosCommand:
    def test_lists_builtins(self, tmp_path):
        result = _invoke(tmp_path, "scenarios")
        assert result.exit_code == 0
        assert "Builtin Scenarios" in result.output

    def test_export(self, tmp_path):
        result = _invoke(tmp_path, "scenarios", "--export", str(tmp_path / "scenarios"))
        assert result.exit_code == 0
        exported = sorted(p.name for p in (tmp_path / "scenarios").iterdir())
        assert exported == ["balloon.json", "droplet-contact.json", "droplet-growth.json",
                            "sheet.json"]


class TestRunCommand:
    def test_success(self, tmp_path):
        path = tmp_path / "balloon.json"
        path.write_text(json.dumps(make_scenario_payload()))
        out = tmp_path / "out"
        result = _invoke(tmp_path, "run", str(path), "-o", str(out), "-q", "4")
        assert result.exit_code == 0, result.output
        assert (out / "results.csv").exists()
        assert json.loads((out / "metadata.json").read_text())["quadrature"] == 4

    def test_malformed_config_exits_2(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{")
        out = tmp_path / "out"
        result = _invoke(tmp_path, "run", str(path), "-o", str(out))
        assert result.exit_code == 2
        assert not out.exists()

    def test_missing_source_exits_2(self, tmp_path):
        result = _invoke(tmp_path, "run", str(tmp_path / "nope.json"))
        assert result.exit_code == 2

    def test_quadrature_range(self, tmp_path):
        result = _invoke(tmp_path, "run", "balloon", "-q", "9")
        assert result.exit_code == 2


class TestAuditCommand:
    def test_audit_builtin(self, tmp_path):
        result = _invoke(tmp_path, "audit", "balloon", "-n", "2")
        assert result.exit_code == 0, result.output
        assert "Tangent Audit" in result.output
