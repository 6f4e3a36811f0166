"""
Directivity objective: observation layout, dB normalisation, region MSE.

Every loss returns its cotangent with respect to the complex domain
pressures in the convention

    cot = dL/dRe(p) + i dL/dIm(p),   so that   dL = Re(sum conj(cot) dp)

which is what `shape_diff` pulls back through the potential operator.
"""

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from errors import ConfigError, NonFiniteObjectiveError, NormalizationError

DB = 20.0 / math.log(10.0)
MIN_REFERENCE = 1e-30
PLANES = ("horizontal", "vertical", "diagonal")
PLANE_AZIMUTH = {"horizontal": 0.0, "vertical": 90.0, "diagonal": 45.0}


@dataclass(frozen=True)
class LossSpec:
    frequencies: tuple
    coverage_h: float = 35.0
    coverage_v: float = 25.0
    t_in: float = -3.0
    t_out: float = -10.0
    radius: float = 10.0
    step_deg: float = 1.0
    span_deg: float = 90.0
    weight_h: float = 1.0
    weight_v: float = 1.0
    weight_d: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "frequencies", tuple(float(f) for f in self.frequencies))
        if not self.frequencies or min(self.frequencies) <= 0:
            raise ConfigError("loss needs at least one positive frequency")
        if not self.t_out < self.t_in <= 0:
            raise ConfigError(f"targets must satisfy t_out < t_in <= 0, got {self.t_out}, {self.t_in}")
        for name in ("coverage_h", "coverage_v"):
            if not 0 < getattr(self, name) < 90:
                raise ConfigError(f"{name} must lie in (0, 90) degrees")
        if self.step_deg <= 0 or self.radius <= 0:
            raise ConfigError("arc radius and angular step must be positive")
        for coverage in (self.coverage_h, self.coverage_v, self.coverage_d):
            inside = self.angles <= coverage + 1e-9
            if inside.all() or not inside.any():
                raise ConfigError(f"coverage {coverage:.4g} deg leaves an empty in- or out-of-coverage region")

    @property
    def angles(self) -> np.ndarray:
        count = int(round(self.span_deg / self.step_deg)) + 1
        return np.arange(count) * self.step_deg

    @property
    def coverage_d(self) -> float:
        """Coverage half-angle of the 45 degree arc, between the H and V values."""
        return math.sqrt(2.0 / (1.0 / self.coverage_h**2 + 1.0 / self.coverage_v**2))

    def coverage(self, plane: str) -> float:
        return {"horizontal": self.coverage_h, "vertical": self.coverage_v, "diagonal": self.coverage_d}[plane]


@dataclass(frozen=True)
class ObservationLayout:
    """
    Point 0 is on axis (+z at `radius`); then one arc per plane, polar
    angle 0..span from the axis, azimuth 0 (H), 90 (V) and 45 degrees.
    """

    angles: np.ndarray
    radius: float
    planes: Sequence[str] = PLANES

    @classmethod
    def for_spec(cls, spec: LossSpec) -> "ObservationLayout":
        return cls(spec.angles, spec.radius)

    @property
    def points(self) -> np.ndarray:
        theta = np.radians(self.angles)
        arcs = []
        for plane in self.planes:
            phi = np.radians(PLANE_AZIMUTH[plane])
            arcs.append(
                self.radius * np.column_stack(
                    [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
                )
            )
        return np.vstack([[[0.0, 0.0, self.radius]]] + arcs)

    def split(self, fields: np.ndarray):
        """(F, M) fields -> on-axis (F,) and arcs (F, planes, angles)."""
        fields = np.asarray(fields)
        n = len(self.angles)
        return fields[:, 0], fields[:, 1:].reshape(len(fields), len(self.planes), n)


def directivity(fields, on_axis) -> np.ndarray:
    """20 log10(|p| / |p_axis|) per frequency; fields has shape (F, ...)."""
    fields = np.asarray(fields)
    reference = np.abs(np.asarray(on_axis))
    if np.any(reference <= MIN_REFERENCE):
        raise NormalizationError("on-axis pressure vanishes; directivity normalisation is undefined")
    reference = reference.reshape((-1,) + (1,) * (fields.ndim - 1))
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(np.abs(fields) / reference)


def _region_masks(spec: LossSpec, planes: Sequence[str]):
    angles = spec.angles
    return {plane: angles <= spec.coverage(plane) + 1e-9 for plane in planes}


def _loss_terms(D, spec: LossSpec, planes=PLANES):
    """(value, dL/dD) for D of shape (F, planes, angles)."""
    D = np.asarray(D, dtype=float)
    if not np.all(np.isfinite(D)):
        raise NonFiniteObjectiveError("directivity contains non-finite values")
    F = D.shape[0]
    masks = _region_masks(spec, planes)
    weights = {"horizontal": spec.weight_h, "vertical": spec.weight_v, "diagonal": spec.weight_d}
    value = 0.0
    grad = np.zeros_like(D)
    for p, plane in enumerate(planes):
        inside = masks[plane]
        regions = [(~inside, spec.t_out)]
        if plane != "diagonal":
            regions.insert(0, (inside, spec.t_in))
        for mask, target in regions:
            count = F * int(mask.sum())
            residual = D[:, p, mask] - target
            value += weights[plane] * float(np.sum(residual**2)) / count
            grad[:, p, mask] = weights[plane] * 2.0 * residual / count
    return value, grad


def mse_loss(D, spec: LossSpec) -> float:
    return _loss_terms(D, spec)[0]


class FieldLoss(Protocol):
    """A real loss of the complex pressures at fixed observation points."""

    points: np.ndarray
    frequencies: tuple

    def value_and_cotangent(self, fields: np.ndarray) -> tuple:
        ...


@dataclass
class DirectivityLoss:
    spec: LossSpec
    layout: ObservationLayout = None

    def __post_init__(self):
        if self.layout is None:
            self.layout = ObservationLayout.for_spec(self.spec)

    @property
    def points(self) -> np.ndarray:
        return self.layout.points

    @property
    def frequencies(self) -> tuple:
        return self.spec.frequencies

    def directivity(self, fields) -> np.ndarray:
        on_axis, arcs = self.layout.split(fields)
        return directivity(arcs, on_axis)

    def value_and_cotangent(self, fields):
        fields = np.asarray(fields, dtype=complex)
        on_axis, arcs = self.layout.split(fields)
        D = directivity(arcs, on_axis)
        value, dD = _loss_terms(D, self.spec, self.layout.planes)
        cot_arcs = DB * dD * arcs / np.abs(arcs) ** 2
        cot_axis = -DB * dD.sum(axis=(1, 2)) * on_axis / np.abs(on_axis) ** 2
        cot = np.concatenate([cot_axis[:, None], cot_arcs.reshape(len(fields), -1)], axis=1)
        return value, cot


@dataclass
class MagnitudeLoss:
    """Mean squared distance of |p| from target magnitudes."""

    points: np.ndarray
    targets: np.ndarray  # (F, M)
    frequencies: tuple = field(default_factory=tuple)

    def value_and_cotangent(self, fields):
        fields = np.asarray(fields, dtype=complex)
        magnitude = np.abs(fields)
        residual = magnitude - self.targets
        value = float(np.mean(residual**2))
        with np.errstate(invalid="ignore", divide="ignore"):
            cot = np.where(magnitude > 0, 2.0 * residual / residual.size * fields / magnitude, 0.0)
        return value, cot
