"""Element force vectors, consistent tangents and global assembly.

Element arrays use node-major dof ordering: dof ``3*I + k`` is component ``k`` of
local node ``I``. Residual convention: ``f = f_int - f_ext - f_c`` where ``f_c`` is
the contact force exerted by the obstacles on the membrane.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix

from memfem.constitutive import (
    evaluate,
    min_principal_stress,
    mixed_stress,
    strain_energy,
    stress_invariants,
)
from memfem.exceptions import ContactError, KinematicsError
from memfem.master_element import (
    default_quadrature,
    eval_basis,
    gauss_rule,
    gauss_rule_1d,
    tabulate,
)
from memfem.models import (
    BasisEval,
    BoundaryConditions,
    ElementArrays,
    ElementSide,
    GlobalSystem,
    HalfSpace,
    LoadCase,
    MaterialModel,
    Mesh,
    NeoHooke,
    PrescribedPressure,
    SphereObstacle,
    StabilizedLiquid,
    StressState,
    SurfaceFrame,
    SystemState,
    VolumeConstraint,
)
from memfem.surface_geometry import area_change_operator, deformation, frame, prestretched

logger = logging.getLogger(__name__)

FD_STEP_FACTOR = 1e-7
CONTACT_CENTER_TOLERANCE = 1e-12


def _flat(v: np.ndarray) -> np.ndarray:
    return v.reshape(-1)


def _square(k: np.ndarray) -> np.ndarray:
    n = k.shape[0] * k.shape[1]
    return k.reshape(n, n)


# ----------------------------------------------------------------------
# Element kernels
# ----------------------------------------------------------------------


def element_fint(
    tab: BasisEval, ref: SurfaceFrame, cur: SurfaceFrame, tau: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """f_int = int N_{,a}^T tau^{ab} a_b dA over the reference area measure."""
    w_ref = weights * ref.Ja
    return _flat(np.einsum("q,qia,qab,qbk->ik", w_ref, tab.dN, tau, cur.a))


def element_fint_split(
    tab: BasisEval, ref: SurfaceFrame, cur: SurfaceFrame, tau: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """In-plane and out-of-plane parts of the internal force.

    The out-of-plane part is ``-int N^T n (tau^{ab} b_ab) dA``; the two sum to
    ``element_fint``.
    """
    if cur.b_cov is None:
        raise KinematicsError("Split internal force needs curvature data")
    f_int = element_fint(tab, ref, cur, tau, weights)
    tau_b = np.einsum("qab,qab->q", tau, cur.b_cov)
    normal_part = _flat(np.einsum("q,qi,qk->ik", weights * ref.Ja * tau_b, tab.N, cur.n))
    return f_int + normal_part, -normal_part


def element_kint(
    tab: BasisEval,
    ref: SurfaceFrame,
    cur: SurfaceFrame,
    tau: np.ndarray,
    c: np.ndarray,
    weights: np.ndarray,
) -> np.ndarray:
    """Material plus geometric stiffness, shape (3 n_ne, 3 n_ne)."""
    w_ref = weights * ref.Ja
    moduli = np.einsum("qabgd,qbk,qgl->qadkl", c, cur.a, cur.a)
    k_mat = np.einsum("q,qia,qadkl,qjd->ikjl", w_ref, tab.dN, moduli, tab.dN, optimize=True)
    geo = np.einsum("q,qia,qab,qjb->ij", w_ref, tab.dN, tau, tab.dN)
    k_geo = np.einsum("ij,kl->ikjl", geo, np.eye(3))
    return _square(k_mat + k_geo)


def pressure_at_points(cur: SurfaceFrame, load: LoadCase, p_datum: float) -> np.ndarray:
    """p = p_v + p_h at the quadrature points."""
    p = np.full(cur.Ja.shape, float(p_datum))
    if load.hydrostatic is not None:
        h = load.hydrostatic
        p = p + h.sign * h.rho * (cur.x @ h.g_vec)
    return p


def element_fext(
    tab: BasisEval,
    ref: SurfaceFrame,
    cur: SurfaceFrame,
    weights: np.ndarray,
    load: LoadCase,
    p_points: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """External force (dead load on reference area, pressure on current area) and l_ext."""
    w_cur = weights * cur.Ja
    l_ext = np.einsum("q,qi,qk->ik", w_cur, tab.N, cur.n)
    f_p = np.einsum("q,qi,qk->ik", w_cur * p_points, tab.N, cur.n)
    f_dead = np.einsum("q,qi,k->ik", weights * ref.Ja, tab.N, np.asarray(load.dead_load, float))
    return _flat(f_p + f_dead), _flat(l_ext)


def element_kext(
    tab: BasisEval,
    cur: SurfaceFrame,
    weights: np.ndarray,
    load: LoadCase,
    p_points: np.ndarray,
    area_op: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Live-pressure and hydrostatic parts of d f_ext / d x."""
    w_cur = weights * cur.Ja
    if area_op is None:
        area_op = area_change_operator(cur, tab.dN)
    k_live = np.einsum("q,qi,qkjl->ikjl", w_cur * p_points, tab.N, area_op)
    if load.hydrostatic is None:
        return _square(k_live), np.zeros_like(_square(k_live))
    h = load.hydrostatic
    grad = h.sign * h.rho * np.asarray(h.g_vec, float)
    k_hydro = np.einsum("q,qi,qk,l,qj->ikjl", w_cur, tab.N, cur.n, grad, tab.N)
    return _square(k_live), _square(k_hydro)


def element_volume_terms(
    tab: BasisEval, cur: SurfaceFrame, weights: np.ndarray, area_op: Optional[np.ndarray] = None
) -> tuple[float, np.ndarray]:
    """Element volume contribution and its gradient h_v."""
    w_cur = weights * cur.Ja
    if area_op is None:
        area_op = area_change_operator(cur, tab.dN)
    g_v_e = float(np.sum(w_cur * np.einsum("qj,qj->q", cur.x, cur.n)) / 3.0)
    h_v = np.einsum("q,qi,qk->ik", w_cur, tab.N, cur.n)
    h_v = h_v + np.einsum("q,qj,qjik->ik", w_cur, cur.x, area_op)
    return g_v_e, _flat(h_v / 3.0)


def project(obstacle_shape, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closest-point data for points ``x`` (q, 3): gap, obstacle normal, d n_p / d x.

    Raises:
        ContactError: If a point sits at a sphere center.
    """
    if isinstance(obstacle_shape, HalfSpace):
        n_p = np.broadcast_to(obstacle_shape.normal, x.shape)
        gap = x @ obstacle_shape.normal - obstacle_shape.offset
        return gap, n_p, np.zeros(x.shape + (3,))
    if isinstance(obstacle_shape, SphereObstacle):
        d = x - obstacle_shape.center
        r = np.linalg.norm(d, axis=-1)
        if np.any(r <= CONTACT_CENTER_TOLERANCE * obstacle_shape.radius):
            raise ContactError("Ambiguous projection: point at sphere obstacle center")
        n_p = d / r[:, None]
        dn = (np.eye(3) - np.einsum("qk,ql->qkl", n_p, n_p)) / r[:, None, None]
        return r - obstacle_shape.radius, n_p, dn
    raise ContactError(f"Unknown obstacle shape: {obstacle_shape!r}")


def element_contact(
    tab: BasisEval, cur: SurfaceFrame, weights: np.ndarray, obstacles
) -> tuple[np.ndarray, np.ndarray, int]:
    """Penalty contact force on the membrane, its tangent, and active point count."""
    n_ne = tab.N.shape[-1]
    f_c = np.zeros((n_ne, 3))
    k_c = np.zeros((n_ne, 3, n_ne, 3))
    n_active = 0
    w_cur = weights * cur.Ja
    for obstacle in obstacles:
        gap, n_p, dn = project(obstacle.shape, cur.x)
        active = gap < 0.0
        if not np.any(active):
            continue
        n_active += int(np.count_nonzero(active))
        eps = obstacle.epsilon_n
        g = np.where(active, gap, 0.0)
        t_c = -eps * g[:, None] * n_p
        dt = -eps * (
            np.einsum("qk,ql->qkl", n_p, n_p) * active[:, None, None] + g[:, None, None] * dn
        )
        f_c += np.einsum("q,qi,qk->ik", w_cur, tab.N, t_c)
        k_c += np.einsum("q,qi,qkl,qj->ikjl", w_cur, tab.N, dt, tab.N)
        # change of the current area measure
        k_c += np.einsum("q,qi,qk,qal,qja->ikjl", w_cur, tab.N, t_c, cur.a_dual, tab.dN)
    return _flat(f_c), _square(k_c), n_active


# ----------------------------------------------------------------------
# Element context and evaluation
# ----------------------------------------------------------------------


@dataclass
class ElementContext:
    """Precomputed per-element data; immutable after construction."""

    index: int
    node_ids: np.ndarray
    dofs: np.ndarray
    tab: BasisEval
    weights: np.ndarray
    ref: SurfaceFrame
    size: float


def build_context(mesh: Mesh, index: int, quadrature: Optional[int] = None) -> ElementContext:
    element = mesh.elements[index]
    rule = gauss_rule(quadrature or default_quadrature(element.basis))
    tab = tabulate(element.basis, rule)
    X_e = mesh.ref_coords[element.node_ids]
    ref = prestretched(frame(tab, X_e, with_curvature=False), mesh.prestretch)
    dofs = (3 * element.node_ids[:, None] + np.arange(3)).reshape(-1)
    size = float(np.linalg.norm(np.ptp(X_e, axis=0)))
    return ElementContext(index, element.node_ids, dofs, tab, rule.weights, ref, size)


def _needs_curvature(material: MaterialModel) -> bool:
    return isinstance(material, StabilizedLiquid) and material.mu_stab > 0.0


def element_state(
    ctx: ElementContext, coords_e: np.ndarray, material: MaterialModel, with_curvature=False
) -> tuple[SurfaceFrame, StressState]:
    cur = frame(ctx.tab, coords_e, with_curvature=with_curvature)
    return cur, evaluate(material, deformation(ctx.ref, cur), cur)


def stabilization_force(ctx: ElementContext, coords_e: np.ndarray, mu_stab: float) -> np.ndarray:
    """In-plane force f_inti of the Neo-Hookean stabilization."""
    cur = frame(ctx.tab, coords_e, with_curvature=True)
    stress = evaluate(NeoHooke(mu_stab), deformation(ctx.ref, cur), cur)
    f_inti, _ = element_fint_split(ctx.tab, ctx.ref, cur, stress.tau, ctx.weights)
    return f_inti


def stabilization_tangent(
    ctx: ElementContext, coords_e: np.ndarray, mu_stab: float, step_factor: float = FD_STEP_FACTOR
) -> np.ndarray:
    """Central-difference tangent of ``stabilization_force``."""
    h = step_factor * max(ctx.size, 1e-300)
    x = np.array(coords_e, dtype=float)
    n = x.size
    k = np.empty((n, n))
    flat = x.reshape(-1)
    for j in range(n):
        orig = flat[j]
        flat[j] = orig + h
        f_plus = stabilization_force(ctx, x, mu_stab)
        flat[j] = orig - h
        f_minus = stabilization_force(ctx, x, mu_stab)
        flat[j] = orig
        k[:, j] = (f_plus - f_minus) / (2.0 * h)
    return k


def _stiffness(ctx, cur, stress, coords_e, material, load, p_points, area_op, fd_step):
    k_live, k_hydro = element_kext(ctx.tab, cur, ctx.weights, load, p_points, area_op)
    k = element_kint(ctx.tab, ctx.ref, cur, stress.tau, stress.c_int, ctx.weights)
    k = k - k_live - k_hydro
    if _needs_curvature(material):
        k = k + stabilization_tangent(ctx, coords_e, material.mu_stab, fd_step)
    if load.obstacles:
        k = k - element_contact(ctx.tab, cur, ctx.weights, load.obstacles)[1]
    return k


def element_tangent(
    ctx: ElementContext,
    coords_e: np.ndarray,
    material: MaterialModel,
    load: LoadCase,
    p_datum: float,
    fd_step: float = FD_STEP_FACTOR,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Element tangent of the residual with its pressure and volume couplings.

    Returns:
        Tuple ``(k, l_ext, h_v)`` with ``k = k_int - k_live - k_hydro - k_c``
        (plus the stabilization tangent for stabilized liquids).
    """
    cur, stress = element_state(ctx, coords_e, material)
    p_points = pressure_at_points(cur, load, p_datum)
    area_op = area_change_operator(cur, ctx.tab.dN)
    k = _stiffness(ctx, cur, stress, coords_e, material, load, p_points, area_op, fd_step)
    _, l_ext = element_fext(ctx.tab, ctx.ref, cur, ctx.weights, load, p_points)
    _, h_v = element_volume_terms(ctx.tab, cur, ctx.weights, area_op)
    return k, l_ext, h_v


def compute_element(
    ctx: ElementContext,
    coords_e: np.ndarray,
    material: MaterialModel,
    load: LoadCase,
    p_datum: float,
    with_tangent: bool = True,
    fd_step: float = FD_STEP_FACTOR,
) -> ElementArrays:
    """All element arrays at the current element coordinates."""
    cur, stress = element_state(ctx, coords_e, material)
    f_int = element_fint(ctx.tab, ctx.ref, cur, stress.tau, ctx.weights)
    stab = _needs_curvature(material)
    if stab:
        f_int = f_int + stabilization_force(ctx, coords_e, material.mu_stab)

    p_points = pressure_at_points(cur, load, p_datum)
    f_ext, l_ext = element_fext(ctx.tab, ctx.ref, cur, ctx.weights, load, p_points)
    area_op = area_change_operator(cur, ctx.tab.dN)
    g_v_e, h_v = element_volume_terms(ctx.tab, cur, ctx.weights, area_op)

    f_c = np.zeros(3 * len(ctx.node_ids))
    if load.obstacles:
        f_c = element_contact(ctx.tab, cur, ctx.weights, load.obstacles)[0]

    k = np.zeros((0, 0))
    if with_tangent:
        k = _stiffness(ctx, cur, stress, coords_e, material, load, p_points, area_op, fd_step)
    return ElementArrays(f_int=f_int, f_ext=f_ext, f_c=f_c, k=k, l_ext=l_ext, h_v=h_v,
                         g_v_e=g_v_e)


# ----------------------------------------------------------------------
# Global assembly
# ----------------------------------------------------------------------


@dataclass
class PointMonitors:
    """Post-processing quantities gathered over all quadrature points."""

    volume: float
    area: float
    energy: float
    p_min: float
    p_max: float
    sigma_min: float
    surface_tension_error: Optional[float]
    contact_points: int


class Assembler:
    """Scatter element arrays into the global bordered system.

    Element evaluation runs on up to ``threads`` workers; results are reduced in
    element order, so serial and threaded runs agree bit for bit.
    """

    def __init__(
        self,
        mesh: Mesh,
        bcs: BoundaryConditions,
        material: MaterialModel,
        quadrature: Optional[int] = None,
        threads: int = 1,
        fd_step: float = FD_STEP_FACTOR,
    ):
        self.mesh = mesh
        self.bcs = bcs
        self.material = material
        self.quadrature = quadrature
        self.threads = max(1, int(threads))
        self.fd_step = fd_step
        self.contexts = [build_context(mesh, i, quadrature) for i in range(len(mesh.elements))]
        self.free_mask = bcs.free_mask
        self._traction_cache: dict[int, np.ndarray] = {}
        logger.debug(
            "Assembler ready: %d elements, %d dofs (%d free), %d worker(s)",
            len(self.contexts), mesh.n_dof, int(self.free_mask.sum()), self.threads,
        )

    # ------------------------------------------------------------------
    # Helpers
    # ------------------------------------------------------------------

    def initial_state(self, p_v: float = 0.0) -> SystemState:
        coords = self.mesh.ref_coords.copy()
        coords[self.bcs.fixed] += self.bcs.values[self.bcs.fixed]
        return SystemState(coords=coords, p_v=p_v, load_factor=0.0)

    @staticmethod
    def pressure_datum(load: LoadCase, state: SystemState) -> float:
        if isinstance(load.pressure_mode, PrescribedPressure):
            return float(load.pressure_mode.p)
        return float(state.p_v)

    def _map(self, fn, items):
        if self.threads == 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    def traction_force(self, load: LoadCase) -> np.ndarray:
        """Dead boundary tractions per unit reference length, 1D Gauss along sides."""
        key = id(load.tractions)
        if key in self._traction_cache:
            return self._traction_cache[key]
        f = np.zeros(self.mesh.n_dof)
        for traction in load.tractions:
            for elem, side in self.mesh.edge_sets.get(traction.edge_set, []):
                ctx = self.contexts[elem]
                n_gauss = int(round(np.sqrt(len(ctx.weights))))
                s, w = gauss_rule_1d(n_gauss)
                fixed = -1.0 if side in (ElementSide.XI1_MIN, ElementSide.XI2_MIN) else 1.0
                if side in (ElementSide.XI1_MIN, ElementSide.XI1_MAX):
                    pts, along = np.column_stack([np.full_like(s, fixed), s]), 1
                else:
                    pts, along = np.column_stack([s, np.full_like(s, fixed)]), 0
                ev = eval_basis(self.mesh.elements[elem].basis, pts)
                X_e = self.mesh.ref_coords[ctx.node_ids]
                tangent = ev.dN[:, :, along] @ X_e
                ds = w * np.linalg.norm(tangent, axis=1)
                fe = np.einsum("q,qi,k->ik", ds, ev.N, np.asarray(traction.traction, float))
                np.add.at(f, ctx.dofs, fe.reshape(-1))
        self._traction_cache = {key: f}
        return f

    # ------------------------------------------------------------------
    # Assembly
    # ------------------------------------------------------------------

    def assemble(self, load: LoadCase, state: SystemState, with_tangent: bool = True
                 ) -> GlobalSystem:
        """Global residual f = f_int - f_ext - f_c, bordered tangent blocks and g_v."""
        n_dof = self.mesh.n_dof
        p_datum = self.pressure_datum(load, state)
        coords = state.coords

        def work(ctx):
            return compute_element(ctx, coords[ctx.node_ids], self.material, load, p_datum,
                                   with_tangent, self.fd_step)

        results = self._map(work, self.contexts)

        residual = -self.traction_force(load) if load.tractions else np.zeros(n_dof)
        l_ext = np.zeros(n_dof)
        h_v = np.zeros(n_dof)
        volume = 0.0
        f_int = np.zeros(n_dof)
        rows, cols, vals = [], [], []
        for ctx, arr in zip(self.contexts, results):
            np.add.at(residual, ctx.dofs, arr.f_int - arr.f_ext - arr.f_c)
            np.add.at(f_int, ctx.dofs, arr.f_int)
            np.add.at(l_ext, ctx.dofs, arr.l_ext)
            np.add.at(h_v, ctx.dofs, arr.h_v)
            volume += arr.g_v_e
            if with_tangent:
                rows.append(np.repeat(ctx.dofs, ctx.dofs.size))
                cols.append(np.tile(ctx.dofs, ctx.dofs.size))
                vals.append(arr.k.reshape(-1))

        free = self.free_mask
        residual[~free] = 0.0
        l_ext[~free] = 0.0
        h_v[~free] = 0.0

        tangent = None
        if with_tangent:
            rows = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
            cols = np.concatenate(cols) if cols else np.zeros(0, dtype=int)
            vals = np.concatenate(vals) if vals else np.zeros(0)
            keep = free[rows] & free[cols]
            fixed = np.flatnonzero(~free)
            rows = np.concatenate([rows[keep], fixed])
            cols = np.concatenate([cols[keep], fixed])
            vals = np.concatenate([vals[keep], np.ones(fixed.size)])
            tangent = coo_matrix((vals, (rows, cols)), shape=(n_dof, n_dof)).tocsr()

        constrained = isinstance(load.pressure_mode, VolumeConstraint)
        g_v = volume - load.pressure_mode.target if constrained else 0.0
        force_scale = max(np.linalg.norm(f_int[free]), np.linalg.norm((f_int - residual)[free]))
        return GlobalSystem(
            residual=residual,
            tangent=tangent,
            h_v=h_v,
            l_ext=l_ext,
            g_v=g_v,
            volume=volume,
            volume_constrained=constrained,
            free_mask=free,
            force_scale=force_scale,
        )

    # ------------------------------------------------------------------
    # Post-processing
    # ------------------------------------------------------------------

    def monitors(self, load: LoadCase, state: SystemState) -> PointMonitors:
        """Volume, energy, pressure range and stress monitors at quadrature points."""
        p_datum = self.pressure_datum(load, state)
        gamma = getattr(self.material, "gamma", None)
        volume = area = energy = 0.0
        p_min, p_max, sigma_min = np.inf, -np.inf, np.inf
        tension_error = 0.0 if gamma else None
        contact_points = 0
        for ctx in self.contexts:
            cur = frame(ctx.tab, state.coords[ctx.node_ids])
            defo = deformation(ctx.ref, cur)
            stress = evaluate(self.material, defo, cur)
            w_cur = ctx.weights * cur.Ja
            volume += float(np.sum(w_cur * np.einsum("qj,qj->q", cur.x, cur.n)) / 3.0)
            area += float(np.sum(w_cur))
            energy += float(np.sum(ctx.weights * ctx.ref.Ja * strain_energy(self.material, defo,
                                                                               cur)))
            p = pressure_at_points(cur, load, p_datum)
            p_min, p_max = min(p_min, float(p.min())), max(p_max, float(p.max()))
            sigma = mixed_stress(stress, cur)
            sigma_min = min(sigma_min, float(np.min(min_principal_stress(sigma, warn=False))))
            if gamma:
                i1 = stress_invariants(sigma)[0]
                tension_error = max(tension_error, float(np.max(np.abs(i1 / (2 * gamma) - 1))))
            if load.obstacles:
                contact_points += element_contact(ctx.tab, cur, ctx.weights, load.obstacles)[2]
        return PointMonitors(volume, area, energy, p_min, p_max, sigma_min, tension_error,
                             contact_points)

    def sample_fields(self, state: SystemState, subdivisions: int = 4):
        """Facet points and point fields (J, I1, sigma_min) for visualization.

        Each element is split into ``subdivisions``^2 bilinear facets. Fields are
        evaluated at points pulled slightly inside the element so that degenerate
        pole edges stay evaluable.
        """
        s = np.linspace(-1.0, 1.0, subdivisions + 1)
        grid = np.column_stack([np.tile(s, s.size), np.repeat(s, s.size)])
        inset = np.clip(grid, -1.0 + 1e-6, 1.0 - 1e-6)
        m = s.size
        points, facets = [], []
        fields = {"J": [], "I1": [], "sigma_min": []}
        for ctx, element in zip(self.contexts, self.mesh.elements):
            x_e = state.coords[ctx.node_ids]
            X_e = self.mesh.ref_coords[ctx.node_ids]
            base = sum(len(p) for p in points)
            points.append(eval_basis(element.basis, grid).N @ x_e)
            ev = eval_basis(element.basis, inset)
            ref = prestretched(frame(ev, X_e), self.mesh.prestretch)
            cur = frame(ev, x_e)
            stress = evaluate(self.material, deformation(ref, cur), cur)
            sigma = mixed_stress(stress, cur)
            fields["J"].append(stress.J)
            fields["I1"].append(stress_invariants(sigma)[0])
            fields["sigma_min"].append(min_principal_stress(sigma, warn=False))
            for j in range(subdivisions):
                for i in range(subdivisions):
                    a = base + j * m + i
                    facets.append([a, a + 1, a + 1 + m, a + m])
        return (
            np.concatenate(points),
            np.asarray(facets, dtype=int),
            {k: np.concatenate(v) for k, v in fields.items()},
        )


def assemble(
    mesh: Mesh,
    bcs: BoundaryConditions,
    load: LoadCase,
    state: SystemState,
    material: MaterialModel,
    quadrature: Optional[int] = None,
) -> GlobalSystem:
    """One-shot global assembly."""
    return Assembler(mesh, bcs, material, quadrature).assemble(load, state)
