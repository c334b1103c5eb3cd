"""Newton solution of the volume-constrained membrane equations with load stepping."""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Callable, Optional

import numpy as np
from scipy.sparse import bmat, csc_matrix
from scipy.sparse.linalg import norm as sparse_norm
from scipy.sparse.linalg import splu

from memfem.assembly import (
    Assembler,
    element_contact,
    element_fext,
    element_fint,
    element_kext,
    element_kint,
    element_state,
    element_volume_terms,
    pressure_at_points,
)
from memfem.constitutive import surface_tension
from memfem.exceptions import (
    ConstitutiveError,
    KinematicsError,
    NewtonDivergenceError,
    SingularSystemError,
    SolverError,
    SubstepExhaustedError,
)
from memfem.models import (
    AuditReport,
    GlobalSystem,
    HalfSpace,
    HydrostaticLoad,
    LoadCase,
    NewtonSettings,
    Obstacle,
    PrescribedPressure,
    Scenario,
    ScheduleParameter,
    SphereObstacle,
    StepRecord,
    SystemState,
    Trajectory,
    VolumeConstraint,
)

logger = logging.getLogger(__name__)
diagnostics = logging.getLogger("memfem.diagnostics")

RESIDUAL_FLOOR = 1e-12
AUDIT_STEP_FACTOR = 1e-6

_RECOVERABLE = (SolverError, KinematicsError, ConstitutiveError)


# ----------------------------------------------------------------------
# Linear step
# ----------------------------------------------------------------------


def newton_step(system: GlobalSystem, state: Optional[SystemState] = None):
    """Solve the (bordered) Newton system for the increments.

    Solves ``[[K, -L], [H^T, 0]] [dx; dp] = -[f; g_v]`` when the volume constraint
    is active, otherwise ``K dx = -f``.

    Returns:
        Tuple ``(dx, dp_v, info)`` where ``info`` holds the residual norm and |g_v|.

    Raises:
        SingularSystemError: If the factorization fails or yields non-finite values.
    """
    n = system.residual.size
    info = {
        "residual": float(np.linalg.norm(system.residual)),
        "gv": abs(float(system.g_v)),
    }
    if n == 0 or not np.any(system.free_mask):
        return np.zeros(n), 0.0, info

    K = csc_matrix(system.tangent)
    if system.volume_constrained:
        A = bmat(
            [
                [K, csc_matrix(-system.l_ext[:, None])],
                [csc_matrix(system.h_v[None, :]), None],
            ],
            format="csc",
        )
        rhs = -np.append(system.residual, system.g_v)
    else:
        A = K
        rhs = -system.residual

    try:
        sol = splu(A).solve(rhs)
    except RuntimeError as e:
        raise SingularSystemError(_singular_message(A, system, str(e))) from e
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError(_singular_message(A, system, "non-finite solution"))

    if system.volume_constrained:
        return sol[:n], float(sol[n]), info
    return sol, 0.0, info


def _singular_message(A, system: GlobalSystem, reason: str) -> str:
    return (
        f"Singular {'bordered ' if system.volume_constrained else ''}system ({reason}): "
        f"|A|_1 = {sparse_norm(A, 1):.3e}, |h_v| = {np.linalg.norm(system.h_v):.3e}"
    )


# ----------------------------------------------------------------------
# Newton iteration
# ----------------------------------------------------------------------


class NewtonSolver:
    """Damped Newton iteration on one load value.

    Convergence uses ``max(|f| / f_ref, |g_v| / V0) <= tol_residual``. ``f_ref`` is
    fixed at the start of each solve: the first residual, floored by the force
    magnitude of the starting state and by ``modulus * element size``.
    """

    def __init__(self, assembler: Assembler, settings: NewtonSettings, reference_volume: float):
        self.assembler = assembler
        self.settings = settings
        self.reference_volume = abs(reference_volume) or 1.0
        self.length_scale = max(
            (ctx.size for ctx in assembler.contexts), default=1.0
        )
        modulus = getattr(assembler.material, "mu_t", None) or surface_tension(assembler.material)
        self.force_floor = max(float(modulus or 0.0) * self.length_scale, RESIDUAL_FLOOR)

    def _error(self, system: GlobalSystem, f_ref: float) -> float:
        gv = abs(system.g_v) / self.reference_volume if system.volume_constrained else 0.0
        return max(np.linalg.norm(system.residual) / f_ref, gv)

    def pressure_estimate(self, load: LoadCase, state: SystemState) -> float:
        """Least-squares p_v balancing the out-of-balance forces of ``state``."""
        system = self.assembler.assemble(load, state, with_tangent=False)
        free = system.free_mask
        l_ext = system.l_ext[free]
        ll = float(l_ext @ l_ext)
        if ll == 0.0:
            return float(state.p_v)
        return float(state.p_v + l_ext @ system.residual[free] / ll)

    def _trial(self, load, state, dx, dp, alpha):
        trial = state.copy()
        trial.coords = state.coords + alpha * dx.reshape(state.coords.shape)
        trial.p_v = state.p_v + alpha * dp
        return trial, self.assembler.assemble(load, trial)

    def solve(self, load: LoadCase, state: SystemState, step: int = 0):
        """Iterate to equilibrium from ``state`` (not modified).

        Returns:
            Tuple ``(state, iterations, residual_history)``.

        Raises:
            NewtonDivergenceError: On failed line search, non-finite values or max_iter.
        """
        s = self.settings
        state = state.copy()
        system = self.assembler.assemble(load, state)
        f_ref = max(float(np.linalg.norm(system.residual)), system.force_scale, self.force_floor)
        err = self._error(system, f_ref)
        history = [err]
        self._log(step, 0, system, state, err, 1.0)
        if err <= s.tol_residual:
            return state, 0, history

        for it in range(1, s.max_iter + 1):
            dx, dp, _ = newton_step(system, state)
            alpha = 1.0
            while True:
                try:
                    trial, trial_system = self._trial(load, state, dx, dp, alpha)
                    trial_err = self._error(trial_system, f_ref)
                    ok = bool(np.isfinite(trial_err))
                except (KinematicsError, ConstitutiveError) as e:
                    logger.debug("Trial step alpha=%.4g rejected: %s", alpha, e)
                    ok = False
                if ok and (not s.line_search or trial_err < err):
                    break
                alpha *= 0.5
                if alpha < s.min_step:
                    raise NewtonDivergenceError(
                        f"Line search failed at step {step}, iteration {it}: "
                        f"error {err:.3e}"
                    )

            increment = alpha * np.linalg.norm(dx)
            state, system, err = trial, trial_system, trial_err
            history.append(err)
            self._log(step, it, system, state, err, alpha)

            if err <= s.tol_residual:
                return state, it, history
            if increment <= s.tol_increment * self.length_scale and err <= 1e3 * s.tol_residual:
                logger.debug("Accepting step %d on increment size (error %.3e)", step, err)
                return state, it, history

        raise NewtonDivergenceError(
            f"No convergence in {s.max_iter} iterations at step {step}: error {err:.3e}"
        )

    @staticmethod
    def _log(step, it, system, state, err, alpha):
        diagnostics.info(
            "step=%d iter=%d residual=%.6e gv=%.6e pv=%.12g alpha=%.4g",
            step, it, err, abs(system.g_v), state.p_v, alpha,
        )


# ----------------------------------------------------------------------
# Load stepping
# ----------------------------------------------------------------------


def load_at(base: LoadCase, parameter: ScheduleParameter, value: float, reference_volume: float
            ) -> LoadCase:
    """Load case for one value of the schedule parameter."""
    if parameter == ScheduleParameter.VOLUME:
        return replace(base, pressure_mode=VolumeConstraint(value * reference_volume))
    if parameter == ScheduleParameter.PRESSURE:
        return replace(base, pressure_mode=PrescribedPressure(value))
    if parameter == ScheduleParameter.DEAD_LOAD:
        return replace(base, dead_load=np.asarray(base.dead_load, float) * value)
    if parameter == ScheduleParameter.GRAVITY:
        if base.hydrostatic is None:
            raise SolverError("Gravity schedule needs a hydrostatic load")
        g = np.asarray(base.hydrostatic.g_vec, float)
        g_norm = np.linalg.norm(g)
        if g_norm == 0.0:
            raise SolverError("Gravity direction must be non-zero")
        hydro = replace(base.hydrostatic, rho=value / g_norm)
        return replace(base, hydrostatic=hydro)
    raise SolverError(f"Unknown schedule parameter: {parameter}")


def _start_value(parameter: ScheduleParameter, initial_volume: float, reference_volume: float,
                 base: LoadCase) -> float:
    if parameter == ScheduleParameter.VOLUME:
        return initial_volume / reference_volume
    if parameter == ScheduleParameter.PRESSURE and isinstance(base.pressure_mode,
                                                               PrescribedPressure):
        return float(base.pressure_mode.p)
    return 0.0


def record_step(assembler: Assembler, load: LoadCase, state: SystemState, step: int,
                value: float, iterations: int, history: list[float]) -> StepRecord:
    mon = assembler.monitors(load, state)
    p_v = assembler.pressure_datum(load, state)
    record = StepRecord(
        step=step,
        load_value=value,
        state=state.copy(),
        volume=mon.volume,
        p_v=p_v,
        p_min=mon.p_min,
        p_max=mon.p_max,
        energy=mon.energy,
        sigma_min=mon.sigma_min,
        surface_tension_error=mon.surface_tension_error,
        iterations=iterations,
        residual_history=list(history),
    )
    if record.compression:
        logger.warning(
            "Step %d (value %.6g): compressive minimum principal stress %.3e",
            step, value, record.sigma_min,
        )
    return record


def run_schedule(
    scenario: Scenario,
    threads: int = 1,
    on_step: Optional[Callable[[StepRecord], None]] = None,
    assembler: Optional[Assembler] = None,
) -> Trajectory:
    """Solve every schedule value in turn, continuing from the last converged state.

    Failed steps are bisected up to ``schedule.substep_levels`` times.

    Raises:
        SubstepExhaustedError: Carrying the records converged so far.
    """
    if assembler is None:
        assembler = Assembler(scenario.mesh, scenario.bcs, scenario.material,
                              scenario.quadrature, threads)
    schedule = scenario.schedule
    base = scenario.load

    state = assembler.initial_state()
    if isinstance(base.pressure_mode, PrescribedPressure):
        state.p_v = float(base.pressure_mode.p)
    initial_volume = assembler.assemble(base, state, with_tangent=False).volume
    v_ref = scenario.reference_volume or initial_volume
    if schedule.parameter == ScheduleParameter.VOLUME and not abs(v_ref) > 0.0:
        raise SolverError("Volume schedule needs a non-zero reference volume")
    solver = NewtonSolver(assembler, scenario.newton, v_ref if v_ref else 1.0)

    current = _start_value(schedule.parameter, initial_volume, v_ref or 1.0, base)
    start_load = load_at(base, schedule.parameter, current, v_ref or 1.0)
    if isinstance(start_load.pressure_mode, VolumeConstraint):
        state.p_v = solver.pressure_estimate(start_load, state)
        logger.debug("Initial pressure estimate p_v = %.6g", state.p_v)
    trajectory = Trajectory(initial_state=state.copy(), reference_volume=float(v_ref))
    logger.info(
        "Scenario %s: %d step(s) over %s, V_ref = %.6g",
        scenario.name, len(schedule.values), schedule.parameter.value, v_ref,
    )

    for step, target in enumerate(schedule.values, start=1):
        value, level = target, 0
        iterations, history = 0, []
        while True:
            load = load_at(base, schedule.parameter, value, v_ref)
            try:
                state, its, hist = solver.solve(load, state, step)
            except _RECOVERABLE as e:
                level += 1
                if level > schedule.substep_levels:
                    raise SubstepExhaustedError(
                        f"Step {step} failed after {schedule.substep_levels} substep levels "
                        f"(value {value:.6g}): {e}",
                        trajectory.records,
                    ) from e
                value = 0.5 * (current + value)
                logger.info("Step %d: halving to %.6g (level %d)", step, value, level)
                continue
            iterations += its
            history.extend(hist)
            increment = value - current
            current = value
            if value == target:
                break
            # keep the reduced increment, never overshooting the target
            value = current + increment
            if (target - value) * increment <= 0.0:
                value = target
        load = load_at(base, schedule.parameter, target, v_ref)
        record = record_step(assembler, load, state, step, target, iterations, history)
        trajectory.records.append(record)
        logger.info(
            "Step %d: value=%.6g V=%.6g p=%.8g iterations=%d",
            step, target, record.volume, record.p_v, iterations,
        )
        if on_step is not None:
            on_step(record)
    return trajectory


# ----------------------------------------------------------------------
# Finite-difference tangent audit
# ----------------------------------------------------------------------


def _central_difference(fn, x: np.ndarray, h: float) -> np.ndarray:
    x = np.array(x, dtype=float)
    flat = x.reshape(-1)
    columns = []
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        f_plus = np.atleast_1d(fn(x))
        flat[j] = orig - h
        f_minus = np.atleast_1d(fn(x))
        flat[j] = orig
        columns.append((f_plus - f_minus) / (2.0 * h))
    return np.column_stack(columns)


def _rel_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    scale = np.linalg.norm(reference)
    diff = np.linalg.norm(np.asarray(analytic) - reference)
    return float(diff / scale) if scale > 0.0 else float(diff)


def fd_tangent_audit(scenario: Scenario, n_samples: int = 20, seed: int = 0,
                     perturbation: float = 0.05) -> AuditReport:
    """Compare every analytic element tangent block against central differences.

    Samples random elements at randomly perturbed configurations. Loads missing
    from the scenario (hydrostatic, obstacles) are replaced by synthetic ones
    so that every block is exercised.
    """
    rng = np.random.default_rng(seed)
    assembler = Assembler(scenario.mesh, scenario.bcs, scenario.material, scenario.quadrature)
    material = scenario.material
    modulus = getattr(material, "mu_t", None) or surface_tension(material) or 1.0
    hydro = scenario.load.hydrostatic or HydrostaticLoad(rho=1.0, g_vec=np.array([0, 0, -1.0]))
    blocks = {k: 0.0 for k in ("k_int", "k_ext_pressure", "k_ext_hydro", "k_c", "h_v", "l_ext")}
    base = assembler.initial_state().coords

    for sample in range(n_samples):
        ctx = assembler.contexts[rng.integers(len(assembler.contexts))]
        size = ctx.size
        coords = base + perturbation * size * rng.standard_normal(base.shape)
        x_e = coords[ctx.node_ids]
        h = AUDIT_STEP_FACTOR * size
        tab, w = ctx.tab, ctx.weights
        p_test = modulus / size * (1.0 + rng.random())

        def fint(x):
            cur, stress = element_state(ctx, x, material)
            return element_fint(tab, ctx.ref, cur, stress.tau, w)

        cur, stress = element_state(ctx, x_e, material)
        k_int = element_kint(tab, ctx.ref, cur, stress.tau, stress.c_int, w)
        blocks["k_int"] = max(
            blocks["k_int"], _rel_error(k_int, _central_difference(fint, x_e, h))
        )

        pressure_load = LoadCase()

        def fext_pressure(x):
            cur_ = element_state(ctx, x, material)[0]
            p = pressure_at_points(cur_, pressure_load, p_test)
            return element_fext(tab, ctx.ref, cur_, w, pressure_load, p)[0]

        p_pts = pressure_at_points(cur, pressure_load, p_test)
        k_live, _ = element_kext(tab, cur, w, pressure_load, p_pts)
        blocks["k_ext_pressure"] = max(
            blocks["k_ext_pressure"],
            _rel_error(k_live, _central_difference(fext_pressure, x_e, h)),
        )

        hydro_load = LoadCase(hydrostatic=hydro)

        def fext_hydro(x):
            cur_ = element_state(ctx, x, material)[0]
            return element_fext(tab, ctx.ref, cur_, w, hydro_load,
                                pressure_at_points(cur_, hydro_load, 0.0))[0]

        p_h = pressure_at_points(cur, hydro_load, 0.0)
        k_live_h, k_hydro = element_kext(tab, cur, w, hydro_load, p_h)
        blocks["k_ext_hydro"] = max(
            blocks["k_ext_hydro"],
            _rel_error(k_live_h + k_hydro, _central_difference(fext_hydro, x_e, h)),
        )

        obstacles = scenario.load.obstacles or _synthetic_obstacles(cur.x, size, modulus, sample)

        def fc(x):
            return element_contact(tab, element_state(ctx, x, material)[0], w, obstacles)[0]

        _, k_c, _ = element_contact(tab, cur, w, obstacles)
        blocks["k_c"] = max(blocks["k_c"], _rel_error(k_c, _central_difference(fc, x_e, h)))

        def volume(x):
            return element_volume_terms(tab, element_state(ctx, x, material)[0], w)[0]

        _, h_v = element_volume_terms(tab, cur, w)
        blocks["h_v"] = max(
            blocks["h_v"], _rel_error(h_v, _central_difference(volume, x_e, h).ravel())
        )

        def fext_p(p):
            return element_fext(tab, ctx.ref, cur, w, pressure_load,
                                pressure_at_points(cur, pressure_load, float(p[0])))[0]

        l_fd = _central_difference(fext_p, np.array([p_test]), 1e-6 * p_test).ravel()
        _, l_ext = element_fext(tab, ctx.ref, cur, w, pressure_load, p_pts)
        blocks["l_ext"] = max(blocks["l_ext"], _rel_error(l_ext, l_fd))

    report = AuditReport(blocks=blocks, n_samples=n_samples)
    logger.info("Tangent audit over %d sample(s): worst %.3e", n_samples, report.worst)
    return report


def _synthetic_obstacles(x: np.ndarray, size: float, modulus: float, sample: int):
    """An obstacle penetrated by part of the element: plane and sphere alternately."""
    centroid = x.mean(axis=0)
    eps = 100.0 * modulus / size
    if sample % 2 == 0:
        shape = HalfSpace(normal=np.array([0.0, 0.0, 1.0]), offset=float(centroid[2]) + 0.1 * size)
    else:
        shape = SphereObstacle(center=centroid + np.array([0.0, 0.0, 0.05 * size]),
                               radius=0.6 * size)
    return (Obstacle(shape=shape, epsilon_n=eps),)


