"""
Quadrature tables for flat triangles and straight edges.

Triangle rules are stored in barycentric coordinates with weights that sum
to one, so that for a panel of area |T|

    integral over T of f dS  ~=  |T| * sum_q w_q f(sum_b L_qb * corner_b)

Every table here is a constant: it never depends on geometry, which is
what allows the forward-mode assembly to differentiate through the
points and Jacobians only.
"""

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np


class QuadratureKind(str, Enum):
    GAUSS_LOW = "gauss_low"
    GAUSS_HIGH = "gauss_high"
    SUBDIVIDED_NEAR = "subdivided_near"
    POLAR_SINGULAR = "polar_singular"


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (Q, 3) barycentric
    weights: np.ndarray  # (Q,) summing to 1
    kind: QuadratureKind
    degree: int

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError(f"{self.kind.value} rule has non-positive weights")
        if abs(self.weights.sum() - 1.0) > 1e-14:
            raise ValueError(f"{self.kind.value} weights sum to {self.weights.sum()!r}")

    def __len__(self):
        return len(self.weights)


def _orbit(a, b, c):
    """All distinct permutations of a barycentric triple."""
    triples = {(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)}
    return sorted(triples)


def _rule(orbits, kind, degree):
    points, weights = [], []
    for triple, w in orbits:
        for perm in _orbit(*triple):
            points.append(perm)
            weights.append(w)
    points = np.asarray(points)
    weights = np.asarray(weights)
    return QuadratureRule(points / points.sum(axis=1, keepdims=True), weights / weights.sum(), kind, degree)


@lru_cache(maxsize=None)
def gauss_low():
    """3-point rule, exact for degree 2."""
    return _rule([((2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0), 1.0 / 3.0)], QuadratureKind.GAUSS_LOW, 2)


@lru_cache(maxsize=None)
def gauss_high():
    """12-point Dunavant rule, exact for degree 6."""
    a, b = 0.873821971016996, 0.063089014491502
    c, d = 0.501426509658179, 0.249286745170910
    e, f, g = 0.053145049844817, 0.310352451033784, 0.636502499121399
    return _rule(
        [
            ((a, b, b), 0.050844906370207),
            ((c, d, d), 0.116786275726379),
            ((e, f, g), 0.082851075618374),
        ],
        QuadratureKind.GAUSS_HIGH,
        6,
    )


_CHILDREN = (
    # corners of the four midpoint children, in barycentric coordinates
    ((1, 0, 0), (0.5, 0.5, 0), (0.5, 0, 0.5)),
    ((0.5, 0.5, 0), (0, 1, 0), (0, 0.5, 0.5)),
    ((0.5, 0, 0.5), (0, 0.5, 0.5), (0, 0, 1)),
    ((0, 0.5, 0.5), (0.5, 0, 0.5), (0.5, 0.5, 0)),
)


@lru_cache(maxsize=None)
def subdivided_near(levels: int = 1):
    """GAUSS_HIGH applied on 4**levels midpoint children."""
    base = gauss_high()
    points, weights = base.points, base.weights
    for _ in range(levels):
        children = [np.asarray(c, dtype=float) for c in _CHILDREN]
        points = np.concatenate([points @ child for child in children])
        weights = np.concatenate([weights / 4.0 for _ in children])
    return QuadratureRule(points, weights, QuadratureKind.SUBDIVIDED_NEAR, base.degree)


@lru_cache(maxsize=None)
def polar_singular(order: int = 8):
    """
    Duffy-type rule for an integrand singular at the centroid.

    The panel is split into three sub-triangles sharing the centroid as
    apex; on each, y = c + u * ((a - c) + v * (b - a)) with (u, v) in the
    unit square. The Jacobian carries a factor u that cancels a 1/|y - c|
    singularity, after which tensor Gauss-Legendre is accurate.
    """
    nodes, w = np.polynomial.legendre.leggauss(order)
    nodes = 0.5 * (nodes + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(nodes, nodes, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    u, v = u.ravel(), v.ravel()
    base_weights = (wu * wv).ravel() * 2.0 * u / 3.0

    centroid = np.full(3, 1.0 / 3.0)
    corners = np.eye(3)
    points, weights = [], []
    for m in range(3):
        a, b = corners[m], corners[(m + 1) % 3]
        pts = centroid + u[:, None] * ((a - centroid) + v[:, None] * (b - a))
        points.append(pts)
        weights.append(base_weights)
    weights = np.concatenate(weights)
    return QuadratureRule(
        np.concatenate(points), weights / weights.sum(), QuadratureKind.POLAR_SINGULAR, 2 * order - 1
    )


@lru_cache(maxsize=None)
def edge_rule(n_points: int, segments: int = 1):
    """Gauss-Legendre on [0, 1], optionally composite over equal segments."""
    nodes, w = np.polynomial.legendre.leggauss(n_points)
    nodes = 0.5 * (nodes + 1.0)
    w = 0.5 * w
    offsets = np.arange(segments) / segments
    u = (offsets[:, None] + nodes[None, :] / segments).ravel()
    weights = np.tile(w / segments, segments)
    return u, weights
