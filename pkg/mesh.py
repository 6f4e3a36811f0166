"""
Triangle surface meshes: loading, generation, pair classification and
spline deformation.

Geometry helpers (`panel_geometry`) work on plain arrays and on
`dualnum.Dual` vertex arrays alike; topology (`classify_pairs`) only ever
sees plain floats and integers and is recomputed outside the
differentiable path.
"""

import logging
import re
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.spatial.distance import cdist

import dualnum as dn
from errors import DegenerateElementError, InvalidGeometryError, MeshParseError, NonTriangleError

logger = logging.getLogger(__name__)

MIN_AREA = 1e-12
DEFAULT_NEAR_FACTOR = 2.5
MAX_ICOSPHERE_SUBDIVISIONS = 7
AXES = {"x": 0, "y": 1, "z": 2}


class PanelGeometry(NamedTuple):
    corners: object  # (N, 3, 3)
    centroids: object  # (N, 3)
    normals: object  # (N, 3)
    areas: object  # (N,)
    edges: object  # (N, 3, 3): edge m runs from corner m to corner m+1


def panel_geometry(vertices, elements) -> PanelGeometry:
    corners = vertices[elements]
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    n = dn.cross(b - a, c - a)
    twice_area = dn.norm(n)
    normals = n / twice_area[:, None]
    centroids = (a + b + c) / 3.0
    edges = corners[:, [1, 2, 0]] - corners
    return PanelGeometry(corners, centroids, normals, 0.5 * twice_area, edges)


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    elements: np.ndarray
    tags: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "elements", np.ascontiguousarray(self.elements, dtype=np.int64))
        tags = np.zeros(len(self.elements), dtype=np.int64) if self.tags is None else np.asarray(self.tags)
        object.__setattr__(self, "tags", tags.astype(np.int64))

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def geometry(self) -> PanelGeometry:
        return panel_geometry(self.vertices, self.elements)

    @property
    def normals(self):
        return self.geometry.normals

    @property
    def areas(self):
        return self.geometry.areas

    @property
    def centroids(self):
        return self.geometry.centroids

    @cached_property
    def diameters(self) -> np.ndarray:
        return np.linalg.norm(self.geometry.edges, axis=2).max(axis=1)

    def validate(self, error=DegenerateElementError) -> "Mesh":
        e = self.elements
        if e.ndim != 2 or e.shape[1] != 3:
            raise NonTriangleError("<mesh>", 0, f"elements have shape {e.shape}, expected (N, 3)")
        if len(e) and (e.min() < 0 or e.max() >= self.n_vertices):
            bad = int(np.flatnonzero((e < 0).any(axis=1) | (e >= self.n_vertices).any(axis=1))[0])
            raise error(bad, 0.0)
        repeated = (e[:, 0] == e[:, 1]) | (e[:, 1] == e[:, 2]) | (e[:, 0] == e[:, 2])
        small = repeated | ~(self.areas > MIN_AREA)
        if small.any():
            bad = int(np.flatnonzero(small)[0])
            raise error(bad, float(self.areas[bad]))
        return self

    def signed_volume(self) -> float:
        a, b, c = (self.vertices[self.elements[:, m]] for m in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def edge_counts(self) -> np.ndarray:
        edges = np.sort(self.elements[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return counts

    def is_watertight(self) -> bool:
        return bool(np.all(self.edge_counts() == 2))

    def with_vertices(self, vertices) -> "Mesh":
        return Mesh(vertices, self.elements, self.tags)


# ---------------------------------------------------------------------------
# file formats


def load_mesh(path, format: Optional[str] = None) -> Mesh:
    """Read an ASCII OBJ or Gmsh MSH 2.2 triangle mesh."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    lines = path.read_text().splitlines()
    if fmt == "obj":
        mesh = _parse_obj(path, lines)
    elif fmt in ("msh", "msh2"):
        mesh = _parse_msh2(path, lines)
    else:
        raise MeshParseError(path, 0, f"unsupported mesh format {fmt!r}")
    logger.info(f"Loaded {path.name}: {mesh.n_vertices} vertices, {mesh.n_elements} elements")
    return mesh.validate()


_TAG_GROUP = re.compile(r"tag(\d+)$")


def _parse_obj(path, lines) -> Mesh:
    vertices, elements, tags = [], [], []
    tag = 0
    for number, line in enumerate(lines, 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError("vertex needs three coordinates")
                vertices.append([float(s) for s in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise NonTriangleError(path, number, f"face with {len(parts) - 1} vertices")
                face = []
                for token in parts[1:]:
                    index = int(token.split("/")[0])
                    resolved = index - 1 if index > 0 else len(vertices) + index
                    # faces may only name vertices already read; negative indices count back from the last
                    if index == 0 or not 0 <= resolved < len(vertices):
                        raise MeshParseError(path, number, f"face index {index} outside 1..{len(vertices)}")
                    face.append(resolved)
                elements.append(face)
                tags.append(tag)
            elif parts[0] == "g":
                match = _TAG_GROUP.match(parts[1]) if len(parts) > 1 else None
                tag = int(match.group(1)) if match else 0
        except MeshParseError:
            raise
        except ValueError as e:
            raise MeshParseError(path, number, str(e)) from e
    if not elements:
        raise MeshParseError(path, len(lines), "no faces")
    return Mesh(np.asarray(vertices), np.asarray(elements), np.asarray(tags))


def _section(path, lines, name):
    try:
        start = lines.index(f"${name}")
        end = lines.index(f"$End{name}", start)
    except ValueError:
        raise MeshParseError(path, 0, f"missing ${name} section") from None
    return start, lines[start + 1 : end]


def _parse_msh2(path, lines) -> Mesh:
    lines = [line.strip() for line in lines]
    start, header = _section(path, lines, "MeshFormat")
    if not header or not header[0].startswith("2."):
        raise MeshParseError(path, start + 2, "only MSH 2.x ASCII is supported")
    if header[0].split()[1] != "0":
        raise MeshParseError(path, start + 2, "binary MSH is not supported")

    start, body = _section(path, lines, "Nodes")
    ids, vertices = {}, []
    try:
        count = int(body[0])
        for offset, line in enumerate(body[1 : count + 1]):
            parts = line.split()
            ids[int(parts[0])] = len(vertices)
            vertices.append([float(s) for s in parts[1:4]])
    except (ValueError, IndexError) as e:
        raise MeshParseError(path, start + 2, f"bad node record: {e}") from e

    start, body = _section(path, lines, "Elements")
    elements, tags = [], []
    for offset, line in enumerate(body[1:]):
        number = start + offset + 3
        try:
            parts = [int(s) for s in line.split()]
            kind, n_tags = parts[1], parts[2]
            if kind in (1, 15):
                continue
            if kind != 2:
                raise NonTriangleError(path, number, f"element type {kind} is not a triangle")
            nodes = parts[3 + n_tags :]
            elements.append([ids[n] for n in nodes])
            tags.append(parts[3] if n_tags else 0)
        except MeshParseError:
            raise
        except (ValueError, IndexError, KeyError) as e:
            raise MeshParseError(path, number, f"bad element record: {e}") from e
    if not elements:
        raise MeshParseError(path, start + 1, "no triangles")
    return Mesh(np.asarray(vertices), np.asarray(elements), np.asarray(tags))


def write_obj(mesh: Mesh, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = [f"# {mesh.n_vertices} vertices, {mesh.n_elements} elements"]
    out += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    current = None
    for (a, b, c), tag in zip(mesh.elements, mesh.tags):
        if tag != current:
            out.append(f"g tag{tag}")
            current = tag
        out.append(f"f {a + 1} {b + 1} {c + 1}")
    path.write_text("\n".join(out) + "\n")
    return path


# ---------------------------------------------------------------------------
# generated geometries


def _icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    vertices = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return vertices, faces


def make_icosphere(subdivisions: int, radius: float) -> Mesh:
    """Geodesic sphere with 20 * 4**subdivisions outward-facing triangles."""
    if not 0 <= subdivisions <= MAX_ICOSPHERE_SUBDIVISIONS:
        raise ValueError(f"subdivisions must be in [0, {MAX_ICOSPHERE_SUBDIVISIONS}], got {subdivisions}")
    if radius <= 0:
        raise ValueError("radius must be positive")
    vertices, faces = _icosahedron()
    vertices = list(vertices / np.linalg.norm(vertices, axis=1, keepdims=True))

    for _ in range(subdivisions):
        midpoints = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoints:
                m = vertices[i] + vertices[j]
                vertices.append(m / np.linalg.norm(m))
                midpoints[key] = len(vertices) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.asarray(refined)

    vertices = np.asarray(vertices)
    vertices = radius * vertices / np.linalg.norm(vertices, axis=1, keepdims=True)
    mesh = Mesh(vertices, faces)
    inward = np.einsum("ij,ij->i", mesh.normals, mesh.centroids) < 0
    if inward.any():
        faces = faces.copy()
        faces[inward] = faces[inward][:, [0, 2, 1]]
        mesh = Mesh(vertices, faces)
    return mesh.validate()


def make_radiator(
    length: float,
    throat_radius: float,
    mouth_radius: float,
    n_axial: int,
    n_azimuth: int,
    quadrant: bool = False,
) -> Mesh:
    """
    Closed conical body of revolution along +z.

    The back cap sits at z = 0 (radius `throat_radius`), the front cap at
    z = `length` (radius `mouth_radius`) and carries tag 1: it is the
    driven patch for radiation runs. With `quadrant=True` only azimuths in
    [0, 90 deg] are meshed; the open cut faces lie on the planes x = 0 and
    y = 0 and must be closed by symmetry images.
    """
    if n_axial < 1 or n_azimuth < (1 if quadrant else 3):
        raise ValueError("radiator needs n_axial >= 1 and enough azimuthal segments")
    if quadrant:
        phi = np.linspace(0.0, np.pi / 2.0, n_azimuth + 1)
    else:
        phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    n_phi = len(phi)

    z = np.linspace(0.0, length, n_axial + 1)
    r = throat_radius + (mouth_radius - throat_radius) * z / length
    rings = np.stack(
        [
            np.outer(r, np.cos(phi)),
            np.outer(r, np.sin(phi)),
            np.repeat(z[:, None], n_phi, axis=1),
        ],
        axis=-1,
    ).reshape(-1, 3)
    back, front = len(rings), len(rings) + 1
    vertices = np.vstack([rings, [0.0, 0.0, 0.0], [0.0, 0.0, length]])

    def ring(i, j):
        return i * n_phi + (j % n_phi)

    n_seg = n_azimuth
    elements, tags = [], []
    for i in range(n_axial):
        for j in range(n_seg):
            a, b, c, d = ring(i, j), ring(i, j + 1), ring(i + 1, j + 1), ring(i + 1, j)
            elements += [[a, b, c], [a, c, d]]
            tags += [0, 0]
    for j in range(n_seg):
        elements.append([back, ring(0, j + 1), ring(0, j)])
        tags.append(0)
    for j in range(n_seg):
        elements.append([front, ring(n_axial, j), ring(n_axial, j + 1)])
        tags.append(1)
    return Mesh(vertices, np.asarray(elements), np.asarray(tags)).validate()


# ---------------------------------------------------------------------------
# adjacency classification


class AdjacencyClass(IntEnum):
    SELF = 0
    SHARED_EDGE = 1
    SHARED_VERTEX = 2
    REGULAR_NEAR = 3
    REGULAR_FAR = 4


def image_reflections(symmetry: Sequence[str]):
    """Sign vectors of every non-identity image generated by the symmetry planes."""
    planes = sorted({s.lower() for s in symmetry})
    for s in planes:
        if s not in AXES:
            raise ValueError(f"unknown symmetry plane {s!r}")
    images = [np.ones(3)]
    for s in planes:
        flip = np.ones(3)
        flip[AXES[s]] = -1.0
        images += [img * flip for img in images]
    return images[1:]


@dataclass(frozen=True)
class PairClassification:
    classes: np.ndarray  # (N, N) int8 of AdjacencyClass
    near_factor: float
    reflections: list = field(default_factory=list)
    image_classes: list = field(default_factory=list)  # one (N, N) int8 per reflection

    def of(self, i: int, j: int) -> AdjacencyClass:
        return AdjacencyClass(int(self.classes[i, j]))

    def counts(self) -> dict:
        return {c.name: int(np.count_nonzero(self.classes == c)) for c in AdjacencyClass}


def _near_far(centroids_a, centroids_b, diam_a, diam_b, near_factor, block=1024):
    out = np.empty((len(centroids_a), len(centroids_b)), dtype=np.int8)
    for start in range(0, len(centroids_a), block):
        stop = start + block
        dist = cdist(centroids_a[start:stop], centroids_b)
        limit = near_factor * np.maximum(diam_a[start:stop, None], diam_b[None, :])
        out[start:stop] = np.where(dist < limit, AdjacencyClass.REGULAR_NEAR, AdjacencyClass.REGULAR_FAR)
    return out


def classify_pairs(mesh: Mesh, near_factor: float = DEFAULT_NEAR_FACTOR, symmetry: Sequence[str] = ()) -> PairClassification:
    n = mesh.n_elements
    centroids = np.asarray(dn.value(mesh.centroids))
    diam = mesh.diameters
    classes = _near_far(centroids, centroids, diam, diam, near_factor)

    incidence = sparse.csr_matrix(
        (np.ones(3 * n, dtype=np.int8), (np.repeat(np.arange(n), 3), mesh.elements.ravel())),
        shape=(n, mesh.n_vertices),
    )
    shared = (incidence @ incidence.T).tocoo()
    kind = np.select(
        [shared.data >= 3, shared.data == 2, shared.data == 1],
        [AdjacencyClass.SELF, AdjacencyClass.SHARED_EDGE, AdjacencyClass.SHARED_VERTEX],
    )
    classes[shared.row, shared.col] = kind
    classes[np.arange(n), np.arange(n)] = AdjacencyClass.SELF

    reflections = image_reflections(symmetry)
    images = [_near_far(centroids, centroids * flip, diam, diam, near_factor) for flip in reflections]
    return PairClassification(classes, near_factor, reflections, images)


# ---------------------------------------------------------------------------
# shape parameters and deformation


@dataclass(frozen=True)
class ShapeParams:
    """
    Radial offsets (m) of the profile at `knots` along `axis`, one row of
    knots per azimuthal sector; flattened sector-major into `values`.
    """

    values: np.ndarray
    knots: np.ndarray
    n_sectors: int = 1
    sector_span: float = 2.0 * np.pi
    lower: float = -np.inf
    upper: float = np.inf
    axis: str = "z"

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).ravel())
        object.__setattr__(self, "knots", np.asarray(self.knots, dtype=float))
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {sorted(AXES)}")
        if len(self.knots) < 2 or np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing with at least two entries")
        if self.values.size not in (0, self.n_sectors * len(self.knots)):
            raise ValueError(f"expected {self.n_sectors * len(self.knots)} values, got {self.values.size}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("shape parameters must be finite")
        if np.any(self.values < self.lower) or np.any(self.values > self.upper):
            raise ValueError(f"shape parameters outside [{self.lower}, {self.upper}]")

    @classmethod
    def uniform(cls, mesh: Mesh, n_knots: int, n_sectors: int = 1, **kwargs) -> "ShapeParams":
        axis = AXES[kwargs.get("axis", "z")]
        lo, hi = mesh.vertices[:, axis].min(), mesh.vertices[:, axis].max()
        if n_knots == 0:
            return cls(np.zeros(0), np.array([lo, hi]), n_sectors, **kwargs)
        return cls(np.zeros(n_knots * n_sectors), np.linspace(lo, hi, n_knots), n_sectors, **kwargs)

    @property
    def size(self) -> int:
        return self.values.size

    def with_values(self, values) -> "ShapeParams":
        return replace(self, values=np.asarray(values, dtype=float))

    def clip(self, values) -> np.ndarray:
        return np.clip(values, self.lower, self.upper)


def deformation_basis(base: Mesh, params: ShapeParams):
    """
    Returns (W, radial): vertex offsets are `W @ values` (shape (V,)) applied
    along `radial` (shape (V, 3)). Both depend on the base mesh only.
    """
    a = AXES[params.axis]
    u, v = [i for i in range(3) if i != a]
    x, y, axial = base.vertices[:, u], base.vertices[:, v], base.vertices[:, a]
    rho = np.hypot(x, y)

    extent = max(np.ptp(base.vertices), 1.0)
    keys = np.round(axial / (1e-9 * extent)).astype(np.int64)
    _, group = np.unique(keys, return_inverse=True)
    envelope = np.zeros(group.max() + 1)
    np.maximum.at(envelope, group, rho)
    env = envelope[group]
    radial = np.zeros_like(base.vertices)
    has_radius = env > 0
    radial[has_radius, u] = x[has_radius] / env[has_radius]
    radial[has_radius, v] = y[has_radius] / env[has_radius]

    if params.size == 0:
        return np.zeros((base.n_vertices, 0)), radial

    n_knots = len(params.knots)
    spline = CubicSpline(params.knots, np.eye(n_knots), bc_type="clamped")(axial)
    phi = np.arctan2(y, x)
    if params.n_sectors == 1:
        sectors = np.ones((base.n_vertices, 1))
    elif params.sector_span >= 2.0 * np.pi - 1e-12:
        angles = 2.0 * np.pi * np.arange(params.n_sectors) / params.n_sectors
        eye = np.eye(params.n_sectors)
        sectors = np.stack([np.interp(phi % (2 * np.pi), angles, e, period=2 * np.pi) for e in eye], axis=1)
    else:
        angles = np.linspace(0.0, params.sector_span, params.n_sectors)
        eye = np.eye(params.n_sectors)
        sectors = np.stack([np.interp(phi, angles, e) for e in eye], axis=1)
    weights = sectors[:, :, None] * spline[:, None, :]
    return weights.reshape(base.n_vertices, -1), radial


def deform_vertices(base: Mesh, params: ShapeParams, values=None):
    """Deformed vertex array; `values` may be a `Dual` to carry tangents."""
    values = params.values if values is None else values
    weights, radial = deformation_basis(base, params)
    offsets = weights @ values
    return base.vertices + offsets[:, None] * radial


def vertex_tangents(base: Mesh, params: ShapeParams) -> np.ndarray:
    """dV/ds_j for every parameter j, shape (P, V, 3), by dual-number evaluation."""
    seeded = dn.Dual.seed(params.values, np.eye(params.size))
    return deform_vertices(base, params, seeded).tangent


def deform(base: Mesh, params: ShapeParams) -> Mesh:
    mesh = base.with_vertices(deform_vertices(base, params))
    return mesh.validate(error=InvalidGeometryError)
