"""
Kernels, panel integrals, dense operator assembly and potential evaluation.

Conventions (owned here and nowhere else):

  * time factor exp(-i omega t); outgoing kernel G(d) = exp(ikd) / (4 pi d)
  * element normals point out of the body, into the fluid
  * for a collocation point x and a source point y, r = x - y, d = |r|
  * double layer  K  = int dG/dn_y  = int G'(d) (-r . n_y) / d
    adjoint       K' = int dG/dn_x  = int G'(d) ( r . n_x) / d
    single layer  S  = int G
    hypersingular H  = d/dn_x int dG/dn_y,  G'(d) = (ik - 1/d) G
  * exterior surface equation for the total pressure p and q = dp/dn:

        1/2 p - K p + S q = p_inc

    and in the domain  p_s(z) = K_z p - S_z q.
  * vibrating surface: q = i omega rho v_n

The hypersingular operator is never integrated in its raw form next to the
singularity. For a flat panel T with constant density, Stokes' theorem on
grad_x int_T dG/dn_y dS gives

    n_x . grad_x int_T dG/dn_y dS_y
        = k^2 (n_x . n_T) int_T G dS_y  -  n_x . loop_dT grad_x G x dl_y

with the loop taken counter-clockwise about n_T. The area term has a 1/d
singularity handled by the polar rule; the line term is smooth unless x
sits on the boundary of T. Far pairs use the direct kernel.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

import dualnum as dn
from errors import CoincidentPointsError
from formulations import BoundaryOperators, InteriorOperators, get_formulation
from mesh import DEFAULT_NEAR_FACTOR, AdjacencyClass, Mesh, PairClassification, PanelGeometry, image_reflections, panel_geometry
from quadrature import QuadratureRule, edge_rule, gauss_high, gauss_low, polar_singular, subdivided_near

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * np.pi
PAIRS_PER_BLOCK = 40_000


class Formulation(str, Enum):
    CONVENTIONAL = "conventional"
    BURTON_MILLER = "burton_miller"
    CHIEF = "chief"


class BoundaryCondition(str, Enum):
    RIGID_SCATTERING = "rigid_scattering"
    NEUMANN_RADIATION = "neumann_radiation"


@dataclass(frozen=True)
class Medium:
    c: float = 343.0  # m/s
    rho: float = 1.21  # kg/m^3


@dataclass(frozen=True)
class IncidentPlaneWave:
    direction: np.ndarray
    amplitude: complex
    k: float

    def __post_init__(self):
        direction = np.asarray(self.direction, dtype=float)
        if direction.shape != (3,) or abs(np.linalg.norm(direction) - 1.0) > 1e-12:
            raise ValueError(f"incident direction must be a unit 3-vector, got {self.direction!r}")
        object.__setattr__(self, "direction", direction)

    def __call__(self, points):
        return self.amplitude * dn.exp(1j * self.k * dn.dot(points, self.direction))

    def normal_derivative(self, points, normals):
        return 1j * self.k * dn.dot(normals, self.direction) * self(points)

    def at(self, k: float) -> "IncidentPlaneWave":
        return replace(self, k=k)


def incident_plane_wave(direction, amplitude: complex, k: float) -> IncidentPlaneWave:
    return IncidentPlaneWave(np.asarray(direction, dtype=float), amplitude, k)


@dataclass(frozen=True)
class WaveConfig:
    k: float
    formulation: Formulation = Formulation.BURTON_MILLER
    bc: BoundaryCondition = BoundaryCondition.RIGID_SCATTERING
    coupling: Optional[complex] = None
    chief_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    incident: Optional[IncidentPlaneWave] = None
    velocity: Optional[np.ndarray] = None
    medium: Medium = Medium()
    symmetry: tuple = ()
    polar_order: int = 8

    def __post_init__(self):
        object.__setattr__(self, "formulation", Formulation(self.formulation))
        object.__setattr__(self, "bc", BoundaryCondition(self.bc))
        object.__setattr__(self, "chief_points", np.asarray(self.chief_points, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "symmetry", tuple(sorted(self.symmetry)))
        if not self.k > 0:
            raise ValueError(f"wavenumber must be positive, got {self.k}")
        if self.bc is BoundaryCondition.RIGID_SCATTERING:
            if self.incident is None:
                raise ValueError("rigid scattering needs an incident field")
            if abs(self.incident.k - self.k) > 1e-12 * self.k:
                raise ValueError("incident field wavenumber differs from the configured k")
            for plane in self.symmetry:
                axis = "xyz".index(plane)
                if self.incident.direction[axis] != 0.0:
                    raise ValueError(f"incident direction is not symmetric about the {plane}=0 plane")
        elif self.velocity is None:
            raise ValueError("radiation needs a normal velocity per element")
        if self.formulation is Formulation.CHIEF and len(self.chief_points) == 0:
            raise ValueError("CHIEF needs at least one interior point")

    @property
    def eta(self) -> complex:
        return 1j / self.k if self.coupling is None else self.coupling

    @property
    def omega(self) -> float:
        return self.k * self.medium.c

    def normal_gradient(self) -> Optional[np.ndarray]:
        """q = dp/dn on each element for radiation, None for scattering."""
        if self.bc is BoundaryCondition.RIGID_SCATTERING:
            return None
        return 1j * self.omega * self.medium.rho * np.asarray(self.velocity, dtype=complex)

    def at(self, k: float) -> "WaveConfig":
        incident = self.incident.at(k) if self.incident is not None else None
        return replace(self, k=k, incident=incident)


@dataclass
class OperatorMatrix:
    entries: np.ndarray  # (N, N), or (N + M, N) for CHIEF
    rhs: np.ndarray
    k: float
    formulation: Formulation
    d_entries: Optional[np.ndarray] = None  # (P, rows, N)
    d_rhs: Optional[np.ndarray] = None  # (P, rows)

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def least_squares(self) -> bool:
        return self.entries.shape[0] != self.entries.shape[1]

    def matvec(self, v):
        return self.entries @ v

    def rmatvec(self, v):
        return (v.conj() @ self.entries).conj()


@dataclass
class BoundarySolution:
    x: np.ndarray
    residual_norm: float
    iterations: int = 0
    history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# kernels on point pairs


def _distance(r, rp):
    d = np.linalg.norm(np.asarray(r, dtype=float) - np.asarray(rp, dtype=float), axis=-1)
    if np.any(d == 0.0):
        raise CoincidentPointsError("Green's function evaluated at coincident points")
    return d


def greens(r, rp, k: float):
    d = _distance(r, rp)
    return np.exp(1j * k * d) / (FOUR_PI * d)


def greens_dn(r, rp, n_p, k: float):
    """dG/dn at the source point rp, normal n_p."""
    d = _distance(r, rp)
    projection = np.sum((np.asarray(rp) - np.asarray(r)) * np.asarray(n_p), axis=-1) / d
    return (1j * k - 1.0 / d) * np.exp(1j * k * d) / (FOUR_PI * d) * projection


# ---------------------------------------------------------------------------
# panel integrals


class QuadraturePlan(NamedTuple):
    rule: QuadratureRule
    line: tuple  # (u, weights) on [0, 1]
    maue: bool  # hypersingular through the line-integral identity


class PanelIntegrals(NamedTuple):
    S: object
    K: object
    Kp: Optional[object]
    H: Optional[object]


def _points_on(corners, barycentric):
    """Physical quadrature points, shape (n, Q, 3)."""
    c = corners
    return (
        c[:, None, 0, :] * barycentric[None, :, 0, None]
        + c[:, None, 1, :] * barycentric[None, :, 1, None]
        + c[:, None, 2, :] * barycentric[None, :, 2, None]
    )


def panel_integrals(x, nx, panels: PanelGeometry, k: float, plan: QuadraturePlan,
                    need_kp=False, need_hyper=False, orientation=1.0) -> PanelIntegrals:
    """
    Operator entries for n (point, panel) pairs at once. `x`, `nx` have
    shape (n, 3); `panels` holds the matching n panels. Every input may be
    a `Dual`. `orientation` is -1 for mirror images, whose corners run
    clockwise about the reflected normal.
    """
    w = plan.rule.weights
    y = _points_on(panels.corners, plan.rule.points)
    r = x[:, None, :] - y
    d = dn.norm(r)
    G = dn.exp(1j * k * d) / (FOUR_PI * d)
    ik_1d = 1j * k - 1.0 / d
    gp_d = ik_1d * G / d  # G'(d) / d
    nj = panels.normals[:, None, :]
    rn_y = dn.dot(r, nj)

    S = (G * w).sum(axis=1) * panels.areas
    K = (-(gp_d * rn_y) * w).sum(axis=1) * panels.areas
    Kp = H = None
    if need_kp or (need_hyper and not plan.maue):
        rn_x = dn.dot(r, nx[:, None, :])
    if need_kp:
        Kp = ((gp_d * rn_x) * w).sum(axis=1) * panels.areas
    if need_hyper and not plan.maue:
        gpp = G / d**2 + ik_1d**2 * G
        dgp_d = (gpp - gp_d) / d  # d/dd (G'/d)
        nn = dn.dot(nx[:, None, :], nj)
        H = ((-(gp_d * nn) - dgp_d * rn_x * rn_y / d) * w).sum(axis=1) * panels.areas
    elif need_hyper:
        H = k**2 * dn.dot(nx, panels.normals) * S - orientation * _edge_term(x, nx, panels, k, plan.line)
    return PanelIntegrals(S, K, Kp, H)


def _edge_term(x, nx, panels, k, line):
    """n_x . loop grad_x G x dl over the three panel edges."""
    u, wl = line
    total = 0.0
    for m in range(3):
        e = panels.edges[:, None, m, :]
        y = panels.corners[:, None, m, :] + u[None, :, None] * e
        r = x[:, None, :] - y
        d = dn.norm(r)
        gp_d = (1j * k - 1.0 / d) * dn.exp(1j * k * d) / (FOUR_PI * d) / d
        twist = dn.dot(dn.cross(r, e), nx[:, None, :])
        total = total + ((gp_d * twist) * wl).sum(axis=1)
    return total


def _panel_subset(geometry: PanelGeometry, index, flip=None) -> PanelGeometry:
    corners = geometry.corners[index]
    normals = geometry.normals[index]
    edges = geometry.edges[index]
    centroids = geometry.centroids[index]
    if flip is not None:
        corners, normals, edges, centroids = corners * flip, normals * flip, edges * flip, centroids * flip
    return PanelGeometry(corners, centroids, normals, geometry.areas[index], edges)


def quadrature_plans(polar_order: int = 8) -> dict:
    near_line = edge_rule(8, 4)
    return {
        AdjacencyClass.SELF: QuadraturePlan(polar_singular(polar_order), near_line, True),
        AdjacencyClass.SHARED_EDGE: QuadraturePlan(subdivided_near(), near_line, True),
        AdjacencyClass.SHARED_VERTEX: QuadraturePlan(gauss_high(), edge_rule(8), True),
        AdjacencyClass.REGULAR_NEAR: QuadraturePlan(gauss_high(), edge_rule(8), True),
        AdjacencyClass.REGULAR_FAR: QuadraturePlan(gauss_low(), edge_rule(3), False),
    }


def _image_plans() -> dict:
    return {
        AdjacencyClass.REGULAR_NEAR: QuadraturePlan(subdivided_near(), edge_rule(8, 4), True),
        AdjacencyClass.REGULAR_FAR: QuadraturePlan(gauss_low(), edge_rule(3), False),
    }


# ---------------------------------------------------------------------------
# accumulation


class _Accumulator:
    """Dense (rows, cols) operator with optional (P, rows, cols) tangents."""

    def __init__(self, rows, cols, directions):
        self.value = np.zeros((rows, cols), dtype=complex)
        self.tangent = None if directions is None else np.zeros((directions, rows, cols), dtype=complex)

    def add(self, r, c, entries):
        self.value[r, c] += dn.value(entries)
        if self.tangent is not None:
            self.tangent[:, r, c] += entries.tangent

    def operand(self):
        return self.value if self.tangent is None else dn.Dual(self.value, self.tangent)


def _blocks(n_rows, n_cols):
    size = max(1, PAIRS_PER_BLOCK // max(n_cols, 1))
    return [np.arange(s, min(s + size, n_rows)) for s in range(0, n_rows, size)]


def _run(blocks, work, threads):
    if threads <= 1 or len(blocks) == 1:
        for rows in blocks:
            work(rows)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, blocks))


def _geometry(mesh: Mesh, vertex_tangents):
    if vertex_tangents is None:
        return mesh.geometry, None
    tangents = np.asarray(vertex_tangents, dtype=float)
    if tangents.shape[1:] != mesh.vertices.shape:
        raise ValueError(f"vertex tangents must have shape (P, {mesh.n_vertices}, 3), got {tangents.shape}")
    return panel_geometry(dn.Dual(mesh.vertices, tangents), mesh.elements), len(tangents)


def _check_config(mesh: Mesh, cfg: WaveConfig, classes: Optional[PairClassification] = None):
    if cfg.velocity is not None and cfg.bc is BoundaryCondition.NEUMANN_RADIATION:
        if len(cfg.velocity) != mesh.n_elements:
            raise ValueError(f"velocity has {len(cfg.velocity)} entries for {mesh.n_elements} elements")
    if classes is not None:
        if classes.classes.shape != (mesh.n_elements, mesh.n_elements):
            raise ValueError("pair classification does not match the mesh")
        if len(classes.reflections) != len(image_reflections(cfg.symmetry)):
            raise ValueError("pair classification was computed for different symmetry planes")
    if len(cfg.chief_points):
        winding = winding_numbers(mesh, cfg.chief_points, cfg.symmetry)
        outside = np.flatnonzero(np.abs(winding - 1.0) > 1e-6)
        if len(outside):
            raise ValueError(f"CHIEF point {int(outside[0])} is not inside the surface")


def winding_numbers(mesh: Mesh, points, symmetry: Sequence[str] = ()) -> np.ndarray:
    """Solid angle subtended by the closed surface (images included) over 4 pi."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    corners = mesh.vertices[mesh.elements]
    total = np.zeros(len(points))
    for flip, orientation in [(np.ones(3), 1.0)] + [(f, np.prod(f)) for f in image_reflections(symmetry)]:
        c = corners * flip
        a, b, cc = (c[None, :, m, :] - points[:, None, :] for m in range(3))
        la, lb, lc = (np.linalg.norm(v, axis=-1) for v in (a, b, cc))
        triple = np.einsum("pij,pij->pi", a, np.cross(b, cc))
        denom = la * lb * lc + np.einsum("pij,pij->pi", a, b) * lc + np.einsum("pij,pij->pi", a, cc) * lb
        denom = denom + np.einsum("pij,pij->pi", b, cc) * la
        total += orientation * 2.0 * np.arctan2(triple, denom).sum(axis=1)
    return total / FOUR_PI


# ---------------------------------------------------------------------------
# assembly


def assemble(mesh: Mesh, cfg: WaveConfig, classes: PairClassification,
             vertex_tangents=None, threads: int = 1) -> OperatorMatrix:
    """
    Dense collocation system for `cfg`. With `vertex_tangents` of shape
    (P, V, 3) the returned matrix also carries d_entries and d_rhs, the
    directional derivatives along each of the P vertex motions.
    """
    _check_config(mesh, cfg, classes)
    formulation = get_formulation(cfg.formulation)
    geometry, directions = _geometry(mesh, vertex_tangents)
    n = mesh.n_elements
    q = cfg.normal_gradient()
    need_hyper = formulation.needs_hypersingular
    need_kp = formulation.needs_adjoint_double_layer and q is not None

    S = _Accumulator(n, n, directions)
    K = _Accumulator(n, n, directions)
    Kp = _Accumulator(n, n, directions) if need_kp else None
    H = _Accumulator(n, n, directions) if need_hyper else None
    plans = quadrature_plans(cfg.polar_order)
    image_plans = _image_plans()

    def add(r, c, values: PanelIntegrals, self_pairs=False):
        S.add(r, c, values.S)
        if not self_pairs:
            K.add(r, c, values.K)
            if Kp is not None:
                Kp.add(r, c, values.Kp)
        if H is not None:
            H.add(r, c, values.H)

    def work(rows):
        block = classes.classes[rows]
        for kind, plan in plans.items():
            r, c = np.nonzero(block == kind)
            if len(r) == 0:
                continue
            i = rows[r]
            values = panel_integrals(
                geometry.centroids[i], geometry.normals[i], _panel_subset(geometry, c),
                cfg.k, plan, need_kp, need_hyper,
            )
            add(i, c, values, self_pairs=kind is AdjacencyClass.SELF)
        for flip, image_block in zip(classes.reflections, classes.image_classes):
            block = image_block[rows]
            for kind, plan in image_plans.items():
                r, c = np.nonzero(block == kind)
                if len(r) == 0:
                    continue
                i = rows[r]
                values = panel_integrals(
                    geometry.centroids[i], geometry.normals[i], _panel_subset(geometry, c, flip),
                    cfg.k, plan, need_kp, need_hyper, orientation=float(np.prod(flip)),
                )
                add(i, c, values)

    _run(_blocks(n, n), work, threads)

    p_inc = dp_inc = None
    if q is None:
        p_inc = cfg.incident(geometry.centroids)
        dp_inc = cfg.incident.normal_derivative(geometry.centroids, geometry.normals)
    interior = None
    if len(cfg.chief_points):
        Kz, Sz = _potential_operators(mesh, geometry, directions, cfg, cfg.chief_points, threads)
        pz = cfg.incident(cfg.chief_points) if q is None else np.zeros(len(cfg.chief_points), dtype=complex)
        interior = InteriorOperators(Kz, Sz, pz)

    ops = BoundaryOperators(
        n=n,
        S=S.operand(),
        K=K.operand(),
        Kp=Kp.operand() if Kp is not None else None,
        H=H.operand() if H is not None else None,
        eta=cfg.eta,
        p_inc=p_inc,
        dp_inc=dp_inc,
        q=q,
        interior=interior,
    )
    A, b = formulation.system(ops)
    entries, rhs = np.asarray(dn.value(A), dtype=complex), np.asarray(dn.value(b), dtype=complex)
    if not (np.all(np.isfinite(entries)) and np.all(np.isfinite(rhs))):
        raise FloatingPointError("assembled operator has non-finite entries")
    d_entries = d_rhs = None
    if directions is not None:
        d_entries = A.tangent if isinstance(A, dn.Dual) else np.zeros((directions,) + entries.shape, complex)
        d_rhs = b.tangent if isinstance(b, dn.Dual) else np.zeros((directions,) + rhs.shape, complex)
    logger.debug(f"Assembled {cfg.formulation.value} operator {entries.shape} at k={cfg.k:.6g}")
    return OperatorMatrix(entries, rhs, cfg.k, cfg.formulation, d_entries, d_rhs)


def smallest_singular_value(A: OperatorMatrix) -> float:
    return float(np.linalg.svd(A.entries, compute_uv=False)[-1])


def locate_resonance(mesh: Mesh, cfg: WaveConfig, classes: PairClassification, lower: float, upper: float,
                     xatol: float = 1e-6, threads: int = 1) -> Tuple[float, float]:
    """
    Wavenumber in [lower, upper] where the discretised conventional operator
    comes closest to singular, and its smallest singular value there. The
    discrete resonance sits off the continuous one by the mesh error.
    """
    if not 0 < lower < upper:
        raise ValueError(f"resonance bracket must satisfy 0 < lower < upper, got [{lower}, {upper}]")
    conventional = replace(cfg, formulation=Formulation.CONVENTIONAL, chief_points=np.zeros((0, 3)))

    def sigma(k):
        return smallest_singular_value(assemble(mesh, conventional.at(k), classes, threads=threads))

    found = minimize_scalar(sigma, bounds=(lower, upper), method="bounded", options={"xatol": xatol})
    if not found.success:
        logger.warning(f"Resonance search in [{lower:g}, {upper:g}] stopped early: {found.message}")
    logger.debug(f"Conventional operator nearly singular at k={found.x:.8g} (sigma_min {found.fun:.3e})")
    return float(found.x), float(found.fun)


# ---------------------------------------------------------------------------
# boundary to domain


def _potential_operators(mesh, geometry, directions, cfg, points, threads=1):
    """(K_z, S_z) for points off the surface, arrays or duals."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    m, n = len(points), mesh.n_elements
    K = _Accumulator(m, n, directions)
    S = _Accumulator(m, n, directions)
    diameters = mesh.diameters
    centroids = mesh.centroids
    near_plan = QuadraturePlan(subdivided_near(), edge_rule(8, 4), False)
    far_plan = QuadraturePlan(gauss_low(), edge_rule(3), False)
    images = [np.ones(3)] + image_reflections(cfg.symmetry)
    too_close = np.zeros(m, dtype=bool)

    def work(rows):
        for flip in images:
            dist = np.linalg.norm(points[rows, None, :] - (centroids * flip)[None, :, :], axis=-1)
            too_close[rows] |= np.any(dist < 0.5 * diameters[None, :], axis=1)
            near = dist < DEFAULT_NEAR_FACTOR * diameters[None, :]
            for mask, plan in ((near, near_plan), (~near, far_plan)):
                r, c = np.nonzero(mask)
                if len(r) == 0:
                    continue
                values = panel_integrals(points[rows[r]], None, _panel_subset(geometry, c, flip), cfg.k, plan)
                K.add(rows[r], c, values.K)
                S.add(rows[r], c, values.S)

    _run(_blocks(m, n * len(images)), work, threads)
    if too_close.any():
        logger.warning(
            f"{int(too_close.sum())} evaluation points lie within half an element diameter "
            f"of the surface; accuracy is degraded"
        )
    return K.operand(), S.operand()


@dataclass
class PotentialMatrix:
    """p_s(z) = double_layer @ x + offset, with offset = -S_z q."""

    double_layer: np.ndarray  # (M, N)
    offset: np.ndarray  # (M,)
    d_double_layer: Optional[np.ndarray] = None  # (P, M, N)
    d_offset: Optional[np.ndarray] = None  # (P, M)

    def apply(self, x):
        return self.double_layer @ x + self.offset

    def directional(self, x):
        """(P, M) derivative of apply(x) with x held fixed."""
        return self.d_double_layer @ x + self.d_offset


def potential_matrix(mesh: Mesh, cfg: WaveConfig, points, vertex_tangents=None, threads: int = 1) -> PotentialMatrix:
    geometry, directions = _geometry(mesh, vertex_tangents)
    K, S = _potential_operators(mesh, geometry, directions, cfg, points, threads)
    q = cfg.normal_gradient()
    m = len(dn.value(K))
    offset = -(S @ q) if q is not None else np.zeros(m, dtype=complex)
    if directions is None:
        return PotentialMatrix(K, offset)
    d_offset = offset.tangent if isinstance(offset, dn.Dual) else np.zeros((directions, m), dtype=complex)
    return PotentialMatrix(K.value, dn.value(offset), K.tangent, d_offset)


def evaluate_potential(mesh: Mesh, cfg: WaveConfig, x, points, threads: int = 1, chunk: int = 4096) -> np.ndarray:
    """Scattered (or radiated) pressure at exterior points."""
    x = np.asarray(getattr(x, "x", x), dtype=complex)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    out = np.empty(len(points), dtype=complex)
    for start in range(0, len(points), chunk):
        stop = min(start + chunk, len(points))
        out[start:stop] = potential_matrix(mesh, cfg, points[start:stop], threads=threads).apply(x)
    return out
