"""
Closed-form reference fields used to validate the boundary element code.

Nothing here imports the BEM modules: the oracles must stay independent
of the code they check.

Rigid sphere, radius a, incident A exp(ik d.r) (time factor exp(-i omega t)):

    p_s(r, theta) = sum_n c_n h_n(kr) P_n(cos theta)
    c_n = -A (2n + 1) i^n j_n'(ka) / h_n'(ka)

with h_n = j_n + i y_n the outgoing spherical Hankel function and theta
measured from d. The normal derivative of p_i + p_s vanishes at r = a.

Pulsating sphere with normal velocity v0 in a medium (rho, c):

    p(r) = i omega rho a^2 v0 exp(ik(r - a)) / (r (ika - 1)),  omega = kc

which satisfies dp/dr = i omega rho v0 at r = a.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import eval_legendre, spherical_jn, spherical_yn

from errors import TruncationError

logger = logging.getLogger(__name__)

TRUNCATION_TOL = 1e-12
EXTRA_TERMS = 10
MAX_EXTRA_TERMS = 400


def spherical_h1(n, z, derivative=False):
    return spherical_jn(n, z, derivative) + 1j * spherical_yn(n, z, derivative)


def minimum_terms(k: float, a: float) -> int:
    return math.ceil(k * a) + EXTRA_TERMS


@dataclass(frozen=True)
class MieConfig:
    a: float
    k: float
    n_terms: Optional[int] = None  # None picks the smallest count passing the truncation check
    amplitude: complex = 1.0
    direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        if self.a <= 0 or self.k <= 0:
            raise ValueError("sphere radius and wavenumber must be positive")
        direction = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
            raise ValueError("incident direction must be a unit vector")
        object.__setattr__(self, "direction", direction)
        if self.n_terms is not None and self.n_terms < minimum_terms(self.k, self.a):
            raise TruncationError(self.n_terms, minimum_terms(self.k, self.a), float("nan"))


def _ratio(n, ka):
    return spherical_jn(n, ka, True) / spherical_h1(n, ka, True)


def _term_magnitudes(cfg: MieConfig, kr_min: float, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    with np.errstate(all="ignore"):
        t = (2 * n + 1) * np.abs(spherical_jn(n, cfg.k * cfg.a, True))
        t = t * np.abs(spherical_h1(n, kr_min)) / np.abs(spherical_h1(n, cfg.k * cfg.a, True))
    return np.nan_to_num(t, nan=0.0, posinf=0.0)


def series_length(cfg: MieConfig, r_min: float) -> int:
    """
    Highest order kept. Raises TruncationError when an explicit n_terms
    leaves a last term above TRUNCATION_TOL at the closest point.
    """
    floor = minimum_terms(cfg.k, cfg.a)
    n_max = floor + MAX_EXTRA_TERMS
    terms = _term_magnitudes(cfg, cfg.k * r_min, n_max)
    small = np.flatnonzero(terms <= TRUNCATION_TOL)
    small = small[small >= floor]
    required = int(small[0]) if len(small) else None
    if cfg.n_terms is None:
        if required is None:
            raise TruncationError(n_max, None, float(terms[-1]))
        return required
    if terms[cfg.n_terms] > TRUNCATION_TOL:
        raise TruncationError(cfg.n_terms, required, float(terms[cfg.n_terms]))
    return cfg.n_terms


def mie_coefficients(cfg: MieConfig, n_terms: int) -> np.ndarray:
    n = np.arange(n_terms + 1)
    return -cfg.amplitude * (2 * n + 1) * (1j**n) * _ratio(n, cfg.k * cfg.a)


def _spherical(cfg: MieConfig, points):
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    r = np.linalg.norm(points, axis=1)
    if np.any(r <= cfg.a):
        raise ValueError("Mie field requested at a point on or inside the sphere")
    cos_theta = np.clip(points @ cfg.direction / r, -1.0, 1.0)
    return r, cos_theta


def _sum(cfg, r, cos_theta, radial_derivative=False):
    if cfg.amplitude == 0:
        return np.zeros(len(r), dtype=complex)
    n_terms = series_length(cfg, r.min())
    coefficients = mie_coefficients(cfg, n_terms)
    out = np.zeros(len(r), dtype=complex)
    for n, c in enumerate(coefficients):
        radial = spherical_h1(n, cfg.k * r, radial_derivative)
        if radial_derivative:
            radial = cfg.k * radial
        out += c * radial * eval_legendre(n, cos_theta)
    logger.debug(f"Mie series at ka={cfg.k * cfg.a:.4g} summed to order {n_terms}")
    return out


def mie_scattered(cfg: MieConfig, points) -> np.ndarray:
    r, cos_theta = _spherical(cfg, points)
    return _sum(cfg, r, cos_theta)


def mie_scattered_radial_derivative(cfg: MieConfig, points) -> np.ndarray:
    """d p_s / dr; valid on the sphere itself as well."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    r = np.linalg.norm(points, axis=1)
    if np.any(r < cfg.a * (1.0 - 1e-12)):
        raise ValueError("Mie field requested inside the sphere")
    cos_theta = np.clip(points @ cfg.direction / r, -1.0, 1.0)
    return _sum(cfg, r, cos_theta, radial_derivative=True)


def mie_far_field(cfg: MieConfig, directions) -> np.ndarray:
    """Far-field amplitude f with p_s ~ f exp(ikr) / r."""
    directions = np.asarray(directions, dtype=float).reshape(-1, 3)
    cos_theta = np.clip(directions @ cfg.direction / np.linalg.norm(directions, axis=1), -1.0, 1.0)
    n_terms = series_length(cfg, 10.0 * cfg.a + 100.0 / cfg.k)
    out = np.zeros(len(directions), dtype=complex)
    for n, c in enumerate(mie_coefficients(cfg, n_terms)):
        out += c * (-1j) ** (n + 1) * eval_legendre(n, cos_theta)
    return out / cfg.k


def mie_scattering_cross_section(cfg: MieConfig) -> float:
    """Integral of |f|^2 over all directions."""
    n_terms = series_length(cfg, cfg.a * (1.0 + 1e-9))
    n = np.arange(n_terms + 1)
    ratio = _ratio(n, cfg.k * cfg.a)
    return float(4.0 * np.pi / cfg.k**2 * abs(cfg.amplitude) ** 2 * np.sum((2 * n + 1) * np.abs(ratio) ** 2))


def pulsating_sphere(a: float, k: float, v0: complex, points, rho: float = 1.21, c: float = 343.0) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    r = np.linalg.norm(points, axis=1)
    if np.any(r <= a):
        raise ValueError("pulsating sphere field requested on or inside the sphere")
    omega = k * c
    return 1j * omega * rho * a**2 * v0 * np.exp(1j * k * (r - a)) / (r * (1j * k * a - 1.0))
