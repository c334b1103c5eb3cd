"""Tests for the Newton solver, load stepping and the tangent audit."""

from __future__ import annotations

import logging

import numpy as np
import pytest
from scipy.sparse import csr_matrix

from memfem.analytic_references import balloon_pressure, droplet_pressure, relative_error
from memfem.assembly import Assembler
from memfem.config import Config, SolverConfig, StabilizedLiquidConfig
from memfem.exceptions import (
    NewtonDivergenceError,
    SingularSystemError,
    SolverError,
    SubstepExhaustedError,
)
from memfem.models import (
    GlobalSystem,
    HydrostaticLoad,
    LoadCase,
    NewtonSettings,
    PrescribedPressure,
    ScheduleParameter,
    StepSchedule,
    VolumeConstraint,
)
from memfem.scenarios import build_scenario, get_builtin
from memfem.solver import NewtonSolver, fd_tangent_audit, load_at, newton_step, run_schedule
from tests.fixtures.sample_meshes import make_balloon_config, make_droplet_config


def _system(K, residual, l_ext=None, h_v=None, g_v=0.0, free=None):
    n = len(residual)
    return GlobalSystem(
        residual=np.asarray(residual, float),
        tangent=csr_matrix(np.asarray(K, float)),
        h_v=np.zeros(n) if h_v is None else np.asarray(h_v, float),
        l_ext=np.zeros(n) if l_ext is None else np.asarray(l_ext, float),
        g_v=g_v,
        volume=0.0,
        volume_constrained=h_v is not None,
        free_mask=np.ones(n, bool) if free is None else np.asarray(free, bool),
    )


class TestNewtonStep:
    def test_unconstrained(self):
        dx, dp, info = newton_step(_system(np.diag([2.0, 4.0]), [2.0, -4.0]))
        np.testing.assert_allclose(dx, [-1.0, 1.0])
        assert dp == 0.0
        assert info["residual"] == pytest.approx(np.sqrt(20.0))

    def test_bordered(self):
        system = _system(np.eye(2), [0.0, 0.0], l_ext=[1.0, 0.0], h_v=[1.0, 0.0], g_v=0.5)
        dx, dp, info = newton_step(system)
        np.testing.assert_allclose(dx, [-0.5, 0.0])
        assert dp == pytest.approx(-0.5)
        assert info["gv"] == 0.5

    def test_all_fixed_gives_zero_increment(self):
        system = _system(np.eye(3), [0.0, 0.0, 0.0], free=[False, False, False])
        dx, dp, _ = newton_step(system)
        np.testing.assert_array_equal(dx, 0.0)
        assert dp == 0.0

    def test_singular(self):
        with pytest.raises(SingularSystemError):
            newton_step(_system([[1.0, 1.0], [1.0, 1.0]], [1.0, 0.0]))


class TestNewtonSolver:
    def test_reference_residual_is_fixed_per_solve(self, caplog):
        scenario = build_scenario(make_balloon_config(values=(3.0,)))
        assembler = Assembler(scenario.mesh, scenario.bcs, scenario.material, scenario.quadrature)
        solver = NewtonSolver(assembler, NewtonSettings(max_iter=1, line_search=False),
                              scenario.reference_volume)
        load = load_at(scenario.load, ScheduleParameter.VOLUME, 3.0, scenario.reference_volume)
        caplog.set_level(logging.INFO, logger="memfem.diagnostics")
        with pytest.raises(NewtonDivergenceError):
            solver.solve(load, assembler.initial_state(), step=1)
        errors = [r.args[2] for r in caplog.records if r.name == "memfem.diagnostics"]
        assert errors[0] == pytest.approx(2.0)
        # an overshooting full step must show up as growth
        assert errors[1] > errors[0]

    def test_line_search_never_accepts_growth(self, caplog):
        scenario = build_scenario(make_balloon_config(values=(3.0,)))
        caplog.set_level(logging.INFO, logger="memfem.diagnostics")
        run_schedule(scenario)
        solves = []
        for r in caplog.records:
            if r.name == "memfem.diagnostics":
                if r.args[1] == 0:
                    solves.append([])
                solves[-1].append(r.args[2])
        assert solves
        for errors in solves:
            assert all(b < a for a, b in zip(errors, errors[1:]))

    def test_pressure_estimate_on_balanced_sphere(self):
        scenario = build_scenario(make_droplet_config(values=(1.0,)))
        assembler = Assembler(scenario.mesh, scenario.bcs, scenario.material, scenario.quadrature)
        solver = NewtonSolver(assembler, scenario.newton, scenario.reference_volume)
        load = load_at(scenario.load, ScheduleParameter.VOLUME, 1.0, scenario.reference_volume)
        assert solver.pressure_estimate(load, assembler.initial_state()) == pytest.approx(
            2.0, rel=1e-3
        )


class TestLoadAt:
    def test_parameters(self):
        base = LoadCase(
            dead_load=np.array([0.0, 0.0, -1.0]),
            hydrostatic=HydrostaticLoad(rho=0.0, g_vec=np.array([0.0, 0.0, -2.0])),
        )
        volume = load_at(base, ScheduleParameter.VOLUME, 2.0, 3.0)
        assert volume.pressure_mode == VolumeConstraint(6.0)
        pressure = load_at(base, ScheduleParameter.PRESSURE, 0.4, 3.0)
        assert pressure.pressure_mode == PrescribedPressure(0.4)
        dead = load_at(base, ScheduleParameter.DEAD_LOAD, 0.5, 3.0)
        np.testing.assert_allclose(dead.dead_load, [0.0, 0.0, -0.5])
        gravity = load_at(base, ScheduleParameter.GRAVITY, 8.0, 3.0)
        assert gravity.hydrostatic.rho == pytest.approx(4.0)

    def test_gravity_needs_hydrostatic(self):
        with pytest.raises(SolverError):
            load_at(LoadCase(), ScheduleParameter.GRAVITY, 1.0, 1.0)


class TestRunSchedule:
    def test_empty_schedule(self):
        scenario = build_scenario(make_balloon_config(values=()))
        trajectory = run_schedule(scenario)
        assert trajectory.records == []
        np.testing.assert_array_equal(trajectory.final_state.coords, scenario.mesh.ref_coords)

    def test_balloon_matches_analytic_pressure(self):
        scenario = build_scenario(make_balloon_config(values=range(2, 11)))
        trajectory = run_schedule(scenario)
        assert len(trajectory.records) == 9
        for record in trajectory.records:
            v_ratio = record.volume / trajectory.reference_volume
            assert v_ratio == pytest.approx(record.load_value, rel=1e-9)
            assert relative_error(record.p_v, balloon_pressure(v_ratio, 1.0, 1.0)) < 1e-6
            assert record.residual_history[-1] <= 1e-9
            assert record.sigma_min > 0.0
        assert trajectory.records[-1].p_v == pytest.approx(0.919035, abs=1e-6)
        assert all(r.iterations <= 8 for r in trajectory.records[1:])

    def test_stabilized_droplet_keeps_young_laplace_pressure(self):
        scenario = build_scenario(make_droplet_config(values=(1.0, 2.0)))
        trajectory = run_schedule(scenario)
        first, second = trajectory.records
        assert first.p_v == pytest.approx(2.0, rel=1e-6)
        assert relative_error(second.p_v, droplet_pressure(2.0, 1.0, 1.0)) < 1e-6
        assert second.surface_tension_error < 1e-6

    def test_pure_liquid_sphere_young_laplace(self):
        scenario = build_scenario(make_droplet_config(values=(1.0,), mu_stab=0.0))
        (record,) = run_schedule(scenario).records
        assert relative_error(record.p_v, 2.0) < 1e-8

    def test_volume_run_starts_from_pressure_estimate(self):
        scenario = build_scenario(make_droplet_config(values=(1.0,), mu_stab=0.0))
        trajectory = run_schedule(scenario)
        assert trajectory.initial_state.p_v == pytest.approx(2.0, rel=1e-3)

    def test_on_step_callback(self):
        seen = []
        scenario = build_scenario(make_balloon_config(values=(1.5, 2.0)))
        run_schedule(scenario, on_step=seen.append)
        assert [r.step for r in seen] == [1, 2]

    def test_substep_exhaustion_keeps_converged_records(self):
        config = Config(solver=SolverConfig(max_iter=1, substep_levels=0))
        scenario = build_scenario(make_balloon_config(values=(1.0, 3.0)), config)
        with pytest.raises(SubstepExhaustedError) as info:
            run_schedule(scenario)
        assert [r.step for r in info.value.records] == [1]
        assert info.value.records[0].iterations == 0

    def test_threaded_run_matches_serial(self):
        cfg = make_balloon_config(values=(2.0,), kind="lagrange_quadratic", n_circ=2,
                                  quadrature=None)
        scenario = build_scenario(cfg)
        serial = run_schedule(scenario)
        assembler = Assembler(scenario.mesh, scenario.bcs, scenario.material, threads=3)
        threaded = run_schedule(scenario, assembler=assembler)
        np.testing.assert_array_equal(serial.final_state.coords, threaded.final_state.coords)
        assert serial.records[0].p_v == threaded.records[0].p_v

    def test_schedule_rejects_non_monotone_values(self):
        with pytest.raises(ValueError):
            StepSchedule(parameter="volume", values=(1.0, 3.0, 2.0))


class TestTangentAudit:
    def test_balloon_audit(self):
        report = fd_tangent_audit(build_scenario(make_balloon_config()), n_samples=4, seed=1)
        assert set(report.blocks) == {"k_int", "k_ext_pressure", "k_ext_hydro", "k_c", "h_v",
                                      "l_ext"}
        assert report.passed, report.blocks

    def test_liquid_audit(self):
        report = fd_tangent_audit(
            build_scenario(make_droplet_config(kind="lagrange_quadratic", quadrature=None)),
            n_samples=4,
        )
        assert report.worst < 1e-5



def _balloon_error(kind: str, n: int) -> float:
    cfg = make_balloon_config(values=range(2, 11), kind=kind, n_circ=n, n_merid=n,
                              quadrature=None)
    trajectory = run_schedule(build_scenario(cfg))
    last = trajectory.records[-1]
    v_ratio = last.volume / trajectory.reference_volume
    return relative_error(last.p_v, balloon_pressure(v_ratio, 1.0, 1.0))


def _droplet_growth_error(mu_stab: float = 0.01, n_circ: int = 4, n_merid: int = 3) -> float:
    cfg = get_builtin("droplet-growth")
    cfg.material = StabilizedLiquidConfig(gamma=1.0, mu_stab=mu_stab)
    cfg.mesh = cfg.mesh.model_copy(update={"n_circ": n_circ, "n_merid": n_merid})
    trajectory = run_schedule(build_scenario(cfg))
    last = trajectory.records[-1]
    v_ratio = last.volume / trajectory.reference_volume
    assert v_ratio == pytest.approx(4.0, rel=1e-9)
    assert all(r.iterations <= 8 for r in trajectory.records[1:])
    return relative_error(last.p_v, droplet_pressure(v_ratio, 1.0, 1.0))


@pytest.mark.slow
class TestExperiments:
    @pytest.mark.parametrize("kind", ["lagrange_linear", "lagrange_quadratic"])
    def test_balloon_mesh_convergence(self, kind):
        errors = [_balloon_error(kind, n) for n in (1, 2, 4)]
        assert errors[0] > errors[1] > errors[2]

    def test_quadratic_beats_linear_at_matched_dofs(self):
        # n linear elements per side carry as many nodes as n/2 quadratic ones
        for n in (1, 2):
            assert _balloon_error("lagrange_quadratic", n) < _balloon_error(
                "lagrange_linear", 2 * n
            )

    def test_droplet_growth(self):
        assert _droplet_growth_error() < 0.01

    def test_droplet_growth_stabilization_and_refinement(self):
        base = _droplet_growth_error()
        assert _droplet_growth_error(mu_stab=0.005) <= base
        assert _droplet_growth_error(n_circ=6, n_merid=5) < base

    def test_droplet_contact_flattens_under_gravity(self):
        scenario = build_scenario(get_builtin("droplet-contact"))
        trajectory = run_schedule(scenario)
        assert len(trajectory.records) == len(scenario.schedule.values)
        heights = []
        for record in trajectory.records:
            assert record.volume == pytest.approx(trajectory.reference_volume, rel=1e-8)
            assert record.p_max > record.p_min
            z = record.state.coords[:, 2]
            heights.append(z.max() - z.min())
        assert all(b < a for a, b in zip(heights, heights[1:]))

        tension_errors = [r.surface_tension_error for r in trajectory.records]
        assert max(tension_errors) <= 0.025
        assert all(b > a for a, b in zip(tension_errors, tension_errors[1:]))
