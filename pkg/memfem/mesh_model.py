"""Mesh definition, generators, enclosed volume and the JSON mesh format."""

from __future__ import annotations

import json
import logging
from itertools import product
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from memfem.exceptions import MeshError, VolumeError
from memfem.master_element import default_quadrature, eval_basis, gauss_rule, tabulate
from memfem.models import (
    BoundaryConditions,
    ElementBasis,
    ElementKind,
    ElementSide,
    Mesh,
    MeshElement,
)
from memfem.report_generator import atomic_write
from memfem.surface_geometry import frame

logger = logging.getLogger(__name__)

MESH_FORMAT_VERSION = 1
MERGE_TOLERANCE = 1e-10
PLANE_TOLERANCE = 1e-8

SYMMETRY_SETS = {"sym_x": 0, "sym_y": 1, "sym_z": 2}
CLAMPED_SET = "clamped"

# unit-radius quarter circle as a rational quadratic Bezier curve
_QUARTER = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
_QUARTER_WEIGHTS = np.array([1.0, np.sqrt(0.5), 1.0])

# (xi1, xi2) samples along each element side, start / middle / end
_SIDE_SAMPLES = {
    ElementSide.XI1_MIN: np.array([[-1.0, -1.0], [-1.0, 0.0], [-1.0, 1.0]]),
    ElementSide.XI1_MAX: np.array([[1.0, -1.0], [1.0, 0.0], [1.0, 1.0]]),
    ElementSide.XI2_MIN: np.array([[-1.0, -1.0], [0.0, -1.0], [1.0, -1.0]]),
    ElementSide.XI2_MAX: np.array([[-1.0, 1.0], [0.0, 1.0], [1.0, 1.0]]),
}


# ----------------------------------------------------------------------
# Spline helpers (knot insertion in homogeneous coordinates)
# ----------------------------------------------------------------------


def _insert_knot(knots: np.ndarray, ctrl: np.ndarray, p: int, u: float):
    """Insert knot ``u`` once; ``ctrl`` holds control data along axis 0."""
    k = int(np.searchsorted(knots, u, side="right")) - 1
    n = ctrl.shape[0]
    new = np.empty((n + 1,) + ctrl.shape[1:])
    for i in range(n + 1):
        if i <= k - p:
            new[i] = ctrl[i]
        elif i >= k + 1:
            new[i] = ctrl[i - 1]
        else:
            alpha = (u - knots[i]) / (knots[i + p] - knots[i])
            new[i] = alpha * ctrl[i] + (1.0 - alpha) * ctrl[i - 1]
    return np.insert(knots, k + 1, u), new


def _uniform_refinement(ctrl: np.ndarray, p: int, n_elements: int):
    """Refine a single Bezier segment (axis 0 of ``ctrl``) into ``n_elements`` spans."""
    knots = np.concatenate([np.zeros(p + 1), np.ones(p + 1)])
    for u in np.arange(1, n_elements) / n_elements:
        knots, ctrl = _insert_knot(knots, ctrl, p, u)
    return knots, ctrl


def _extraction_1d(knots: np.ndarray, p: int) -> list[np.ndarray]:
    """Per-element Bezier extraction operators of an open knot vector with simple knots.

    Inserting every interior knot up to multiplicity ``p`` applied to the identity
    gives each Bezier control point as a combination of the B-spline functions.
    """
    n_funcs = len(knots) - p - 1
    interior = np.unique(knots[p + 1 : -p - 1])
    T = np.eye(n_funcs)
    k = knots.copy()
    for u in interior:
        for _ in range(p - int(np.sum(k == u))):
            k, T = _insert_knot(k, T, p, u)
    n_elements = len(interior) + 1
    operators = []
    for e in range(n_elements):
        rows = T[e * p : e * p + p + 1, e : e + p + 1]
        operators.append(rows.T.copy())
    return operators


# ----------------------------------------------------------------------
# Structured patches
# ----------------------------------------------------------------------


class _Patch:
    """Structured tensor-product grid of nodes or control points.

    ``coords`` has shape (m2, m1, 3) with rows along xi^2 and columns along xi^1.
    """

    def __init__(self, kind: ElementKind, coords, weights=None, knots=None, counts=(1, 1)):
        self.kind = kind
        self.coords = np.asarray(coords, float)
        self.weights = None if weights is None else np.asarray(weights, float)
        self.knots = knots
        self.counts = counts  # (n1, n2) elements along xi^1 / xi^2

    def mirrored(self, signs: np.ndarray) -> _Patch:
        coords = self.coords * signs
        weights = self.weights
        knots = self.knots
        if np.prod(signs) < 0:
            # reverse xi^1 to keep the normal pointing outward
            coords = coords[:, ::-1]
            weights = None if weights is None else weights[:, ::-1]
            if knots is not None:
                knots = (1.0 - knots[0][::-1], knots[1])
        return _Patch(self.kind, coords, weights, knots, self.counts)

    def elements(self, offset: int) -> Iterable[tuple[ElementBasis, np.ndarray, int, int]]:
        m2, m1 = self.coords.shape[:2]
        ids = offset + np.arange(m1 * m2).reshape(m2, m1)
        n1, n2 = self.counts
        if self.kind == ElementKind.BEZIER:
            ops1 = _extraction_1d(self.knots[0], 2)
            ops2 = _extraction_1d(self.knots[1], 2)
            for e2, e1 in product(range(n2), range(n1)):
                local = ids[e2 : e2 + 3, e1 : e1 + 3].ravel()
                w = self.weights[e2 : e2 + 3, e1 : e1 + 3].ravel()
                basis = ElementBasis(
                    ElementKind.BEZIER, degree=2, extraction=np.kron(ops2[e2], ops1[e1]), weights=w
                )
                yield basis, local, e1, e2
        else:
            p = 1 if self.kind == ElementKind.LAGRANGE_LINEAR else 2
            basis = ElementBasis(self.kind)
            for e2, e1 in product(range(n2), range(n1)):
                local = ids[p * e2 : p * e2 + p + 1, p * e1 : p * e1 + p + 1].ravel()
                yield basis, local, e1, e2


def _octant_patch(n_circ: int, n_merid: int, kind: ElementKind, radius: float) -> _Patch:
    if kind == ElementKind.BEZIER:
        # homogeneous net of the exact rational octant, rows along latitude
        w = np.outer(_QUARTER_WEIGHTS, _QUARTER_WEIGHTS)
        pts = np.empty((3, 3, 3))
        for j, i in product(range(3), range(3)):
            r, z = _QUARTER[j]
            pts[j, i] = radius * np.array([_QUARTER[i, 0] * r, _QUARTER[i, 1] * r, z])
        hom = np.concatenate([pts * w[..., None], w[..., None]], axis=-1)
        knots1, hom = _uniform_refinement(np.swapaxes(hom, 0, 1), 2, n_circ)
        hom = np.swapaxes(hom, 0, 1)
        knots2, hom = _uniform_refinement(hom, 2, n_merid)
        weights = hom[..., 3]
        return _Patch(kind, hom[..., :3] / weights[..., None], weights, (knots1, knots2),
                      (n_circ, n_merid))

    p = 1 if kind == ElementKind.LAGRANGE_LINEAR else 2
    phi = 0.5 * np.pi * np.linspace(0.0, 1.0, p * n_circ + 1)
    theta = 0.5 * np.pi * np.linspace(0.0, 1.0, p * n_merid + 1)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    coords = radius * np.stack([np.cos(T) * np.cos(P), np.cos(T) * np.sin(P), np.sin(T)], -1)
    coords[np.abs(coords) < 1e-14 * radius] = 0.0
    coords[-1, :] = [0.0, 0.0, radius]  # exact pole
    return _Patch(kind, coords, counts=(n_circ, n_merid))


def _merge_coincident(coords: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Merge nodes closer than ``tol``; returns (unique coords, old -> new map)."""
    pairs = cKDTree(coords).query_pairs(tol, output_type="ndarray")
    n = coords.shape[0]
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    _, first = np.unique(labels, return_index=True)
    return coords[first], labels


def _assemble_patches(patches: Sequence[_Patch], radius_scale: float):
    coords, elements, origins = [], [], []
    offset = 0
    for patch_id, patch in enumerate(patches):
        for basis, local, e1, e2 in patch.elements(offset):
            elements.append((basis, local))
            origins.append((patch_id, e1, e2))
        flat = patch.coords.reshape(-1, 3)
        coords.append(flat)
        offset += flat.shape[0]
    coords = np.concatenate(coords)
    merged, mapping = _merge_coincident(coords, MERGE_TOLERANCE * radius_scale)
    mesh_elements = [MeshElement(basis, mapping[local]) for basis, local in elements]
    return merged, mesh_elements, origins


# ----------------------------------------------------------------------
# Generators
# ----------------------------------------------------------------------


def make_sphere(
    n_circ: int,
    n_merid: int,
    kind: ElementKind | str,
    radius: float = 1.0,
    octants: Sequence[tuple[int, int, int]] = ((1, 1, 1),),
) -> Mesh:
    """Sphere surface built from mirrored octant patches.

    Args:
        n_circ: Elements per octant along longitude (xi^1).
        n_merid: Elements per octant from equator to pole (xi^2).
        kind: Element kind; ``bezier`` gives the exact rational quadratic geometry.
        radius: Sphere radius.
        octants: Sign triples of the octants to include.

    Returns:
        Outward-oriented mesh. Symmetry node sets are created for every coordinate
        plane that bounds the selected octants.
    """
    kind = ElementKind(kind)
    if n_circ < 1 or n_merid < 1:
        raise MeshError(f"Element counts must be positive, got {n_circ}x{n_merid}")
    if not radius > 0.0:
        raise MeshError(f"Radius must be positive, got {radius}")
    octants = [tuple(int(s) for s in o) for o in octants]
    if not octants or any(set(o) - {-1, 1} or len(o) != 3 for o in octants):
        raise MeshError(f"Octants must be sign triples, got {octants}")

    base = _octant_patch(n_circ, n_merid, kind, radius)
    patches = [base.mirrored(np.array(o, dtype=float)) for o in octants]
    coords, elements, _ = _assemble_patches(patches, radius)

    node_sets = {}
    signs = np.array(octants)
    for name, axis in SYMMETRY_SETS.items():
        if np.all(signs[:, axis] == signs[0, axis]):
            node_sets[name] = np.flatnonzero(np.abs(coords[:, axis]) < PLANE_TOLERANCE * radius)
    closed = len(set(octants)) == 8

    mesh = Mesh(ref_coords=coords, elements=elements, node_sets=node_sets, closed=closed)
    volume = enclosed_volume(mesh, mesh.ref_coords)
    if volume <= 0.0:
        raise MeshError(f"Generated sphere has non-positive volume {volume:.3e}")
    logger.debug(
        "Sphere mesh: %d octant(s), %d elements, %d nodes, V=%.6g",
        len(octants), len(elements), mesh.n_nodes, volume,
    )
    return mesh


def make_sphere_octant(
    n_circ: int, n_merid: int, kind: ElementKind | str, radius: float = 1.0
) -> Mesh:
    """First-octant sphere patch with sym_x/sym_y/sym_z node sets."""
    return make_sphere(n_circ, n_merid, kind, radius, octants=((1, 1, 1),))


def make_full_sphere(n_circ: int, n_merid: int, kind: ElementKind | str,
                     radius: float = 1.0) -> Mesh:
    return make_sphere(n_circ, n_merid, kind, radius,
                       octants=tuple(product((1, -1), repeat=3)))


def make_square_sheet(
    n: int, kind: ElementKind | str, half_width: float = 1.0, prestretch: float = 1.0
) -> Mesh:
    """Flat square sheet in z=0 centered at the origin, normal +z.

    Node set ``clamped`` holds the boundary nodes; edge sets ``x_min``, ``x_max``,
    ``y_min``, ``y_max`` and ``boundary`` hold element sides.
    """
    kind = ElementKind(kind)
    if n < 1:
        raise MeshError(f"Sheet needs at least one element per side, got {n}")
    if not half_width > 0.0:
        raise MeshError(f"Half width must be positive, got {half_width}")
    if prestretch < 1.0:
        raise MeshError(f"Pre-stretch must be >= 1, got {prestretch}")

    if kind == ElementKind.BEZIER:
        line = np.linspace(-half_width, half_width, 3)
        Y, X = np.meshgrid(line, line, indexing="ij")
        hom = np.stack([X, Y, np.zeros_like(X), np.ones_like(X)], -1)
        knots1, hom = _uniform_refinement(np.swapaxes(hom, 0, 1), 2, n)
        hom = np.swapaxes(hom, 0, 1)
        knots2, hom = _uniform_refinement(hom, 2, n)
        patch = _Patch(kind, hom[..., :3] / hom[..., 3:], hom[..., 3], (knots1, knots2), (n, n))
    else:
        p = 1 if kind == ElementKind.LAGRANGE_LINEAR else 2
        line = np.linspace(-half_width, half_width, p * n + 1)
        Y, X = np.meshgrid(line, line, indexing="ij")
        patch = _Patch(kind, np.stack([X, Y, np.zeros_like(X)], -1), counts=(n, n))

    coords, elements, origins = _assemble_patches([patch], half_width)
    on_edge = np.isclose(np.abs(coords[:, :2]), half_width, rtol=0.0,
                         atol=PLANE_TOLERANCE * half_width).any(axis=1)

    edge_sets: dict[str, list[tuple[int, ElementSide]]] = {
        "x_min": [], "x_max": [], "y_min": [], "y_max": []
    }
    for idx, (_, e1, e2) in enumerate(origins):
        if e1 == 0:
            edge_sets["x_min"].append((idx, ElementSide.XI1_MIN))
        if e1 == n - 1:
            edge_sets["x_max"].append((idx, ElementSide.XI1_MAX))
        if e2 == 0:
            edge_sets["y_min"].append((idx, ElementSide.XI2_MIN))
        if e2 == n - 1:
            edge_sets["y_max"].append((idx, ElementSide.XI2_MAX))
    edge_sets["boundary"] = [side for key in ("x_min", "x_max", "y_min", "y_max")
                             for side in edge_sets[key]]

    return Mesh(
        ref_coords=coords,
        elements=elements,
        node_sets={CLAMPED_SET: np.flatnonzero(on_edge)},
        edge_sets=edge_sets,
        closed=False,
        prestretch=prestretch,
    )


# ----------------------------------------------------------------------
# Boundary conditions
# ----------------------------------------------------------------------


def default_boundary_conditions(mesh: Mesh) -> BoundaryConditions:
    """Fix the normal component on symmetry planes and all components when clamped."""
    bcs = BoundaryConditions.free(mesh.n_nodes)
    for name, axis in SYMMETRY_SETS.items():
        if name in mesh.node_sets:
            bcs.fix(mesh.node_sets[name], [axis])
    if CLAMPED_SET in mesh.node_sets:
        bcs.fix(mesh.node_sets[CLAMPED_SET], [0, 1, 2])
    return bcs


# ----------------------------------------------------------------------
# Volume
# ----------------------------------------------------------------------


def boundary_sides(mesh: Mesh, coords: Optional[np.ndarray] = None
                   ) -> list[tuple[int, ElementSide, np.ndarray]]:
    """Element sides not shared with another element.

    Sides are matched by their physical midpoints; sides that collapse to a point
    (sphere poles) are skipped. Returns (element, side, sample points).
    """
    coords = mesh.ref_coords if coords is None else np.asarray(coords, float)
    scale = max(float(np.max(np.abs(coords))), 1e-300)
    candidates = []
    for idx, element in enumerate(mesh.elements):
        x_e = coords[element.node_ids]
        for side, samples in _SIDE_SAMPLES.items():
            pts = eval_basis(element.basis, samples).N @ x_e
            length = np.linalg.norm(pts[1] - pts[0]) + np.linalg.norm(pts[2] - pts[1])
            if length > MERGE_TOLERANCE * scale:
                candidates.append((idx, side, pts))
    if not candidates:
        return []
    midpoints = np.array([pts[1] for _, _, pts in candidates])
    counts = np.zeros(len(candidates), dtype=int)
    for i, j in cKDTree(midpoints).query_pairs(1e-8 * scale):
        counts[i] += 1
        counts[j] += 1
    return [c for c, count in zip(candidates, counts) if count == 0]


def check_open_boundary(mesh: Mesh, coords: Optional[np.ndarray] = None) -> None:
    """Validate that the open boundary lies on planes through the origin.

    Accepted: a single plane through the origin (sheets) or the coordinate planes
    (symmetry-reduced models).

    Raises:
        VolumeError: If the closure surface would not contribute zero volume.
    """
    sides = boundary_sides(mesh, coords)
    if not sides:
        return
    pts = np.concatenate([s[2] for s in sides])
    scale = max(float(np.max(np.linalg.norm(pts, axis=1))), 1e-300)
    tol = PLANE_TOLERANCE * scale

    normal = np.linalg.svd(pts, full_matrices=False)[2][-1]
    if np.max(np.abs(pts @ normal)) <= tol:
        return
    if np.all(np.min(np.abs(pts), axis=1) <= tol):
        return
    raise VolumeError(
        "Open mesh boundary does not lie on planes through the origin; "
        "enclosed volume is undefined"
    )


def element_volume(basis_eval, weights, coords_e) -> float:
    f = frame(basis_eval, coords_e)
    return float(np.sum(weights * f.Ja * np.einsum("qj,qj->q", f.x, f.n)) / 3.0)


def enclosed_volume(
    mesh: Mesh,
    coords: np.ndarray,
    quadrature: Optional[int] = None,
    check_boundary: bool = True,
) -> float:
    """V = (1/3) sum_e int x.n da.

    Args:
        mesh: Mesh definition.
        coords: Nodal positions, shape (n_nodes, 3).
        quadrature: Gauss order per direction; per-kind default when None.
        check_boundary: Validate the open-boundary datum planes first.
    """
    coords = np.asarray(coords, dtype=float)
    if not mesh.closed and check_boundary:
        check_open_boundary(mesh, coords)
    total = 0.0
    for element in mesh.elements:
        rule = gauss_rule(quadrature or default_quadrature(element.basis))
        total += element_volume(tabulate(element.basis, rule), rule.weights,
                                coords[element.node_ids])
    return total


def surface_area(mesh: Mesh, coords: np.ndarray, quadrature: Optional[int] = None) -> float:
    total = 0.0
    for element in mesh.elements:
        rule = gauss_rule(quadrature or default_quadrature(element.basis))
        f = frame(tabulate(element.basis, rule), coords[element.node_ids])
        total += float(np.sum(rule.weights * f.Ja))
    return total


def characteristic_length(mesh: Mesh, coords: Optional[np.ndarray] = None) -> float:
    """Mean bounding-box diagonal of the elements."""
    coords = mesh.ref_coords if coords is None else coords
    sizes = [np.linalg.norm(np.ptp(coords[e.node_ids], axis=0)) for e in mesh.elements]
    return float(np.mean(sizes)) if sizes else 0.0


# ----------------------------------------------------------------------
# JSON mesh format
# ----------------------------------------------------------------------


def mesh_to_dict(mesh: Mesh) -> dict:
    elements = []
    for element in mesh.elements:
        entry = {"kind": element.basis.kind.value, "nodes": element.node_ids.tolist()}
        if element.basis.kind == ElementKind.BEZIER:
            entry["degree"] = element.basis.degree
            entry["extraction"] = element.basis.extraction.tolist()
            entry["weights"] = element.basis.weights.tolist()
        elements.append(entry)
    return {
        "version": MESH_FORMAT_VERSION,
        "closed": mesh.closed,
        "prestretch": mesh.prestretch,
        "nodes": mesh.ref_coords.tolist(),
        "elements": elements,
        "node_sets": {k: v.tolist() for k, v in mesh.node_sets.items()},
        "edge_sets": {k: [[e, s.value] for e, s in v] for k, v in mesh.edge_sets.items()},
    }


def mesh_from_dict(payload: dict) -> Mesh:
    version = payload.get("version")
    if version != MESH_FORMAT_VERSION:
        raise MeshError(f"Unsupported mesh format version: {version!r}")
    try:
        elements = []
        for entry in payload["elements"]:
            basis = ElementBasis(
                kind=ElementKind(entry["kind"]),
                degree=int(entry.get("degree", 2)),
                extraction=entry.get("extraction"),
                weights=entry.get("weights"),
            )
            elements.append(MeshElement(basis, np.asarray(entry["nodes"], dtype=int)))
        return Mesh(
            ref_coords=np.asarray(payload["nodes"], dtype=float),
            elements=elements,
            node_sets={
                k: np.asarray(v, dtype=int) for k, v in payload.get("node_sets", {}).items()
            },
            edge_sets={k: [(int(e), ElementSide(s)) for e, s in v]
                       for k, v in payload.get("edge_sets", {}).items()},
            closed=bool(payload.get("closed", True)),
            prestretch=float(payload.get("prestretch", 1.0)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise MeshError(f"Malformed mesh document: {e}") from e


def save_mesh(mesh: Mesh, path: Path | str) -> Path:
    """Write a mesh JSON file atomically."""
    path = atomic_write(Path(path), json.dumps(mesh_to_dict(mesh)))
    logger.info("Saved mesh to %s", path)
    return path


def load_mesh(path: Path | str) -> Mesh:
    path = Path(path)
    if not path.exists():
        raise MeshError(f"Mesh file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise MeshError(f"Mesh file {path} is not valid JSON: {e}") from e
    return mesh_from_dict(payload)
