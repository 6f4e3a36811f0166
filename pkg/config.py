"""
Run configuration: one TOML file per run, validated by pydantic.

Unknown keys are rejected in every section. Relative paths are resolved
against the directory of the config file and must exist when the file is
loaded. Each section knows how to build the runtime object it describes.
"""

import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple

import numpy as np
from pydantic import (
    AfterValidator,
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from bem_core import BoundaryCondition, Formulation, Medium, WaveConfig, incident_plane_wave
from errors import ConfigError
from field_io import GridSpec, fibonacci_sphere, read_points_csv
from loss import LossSpec
from mesh import Mesh, ShapeParams, load_mesh, make_icosphere, make_radiator
from solver import SolveConfig

MAX_GRAD_CHECK_ELEMENTS = 200

Vector = Tuple[float, float, float]


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _resolve(value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
    if value is None:
        return None
    base = (info.context or {}).get("base")
    path = Path(value)
    if not path.is_absolute() and base is not None:
        path = Path(base) / path
    if not path.exists():
        raise ValueError(f"file not found: {path}")
    return path


ExistingPath = Annotated[Optional[Path], AfterValidator(_resolve)]


def _built(factory, *args, **kwargs):
    """Domain constructors raise ValueError; surface those as config errors."""
    try:
        return factory(*args, **kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from e


class RadiatorSection(Section):
    length: float = Field(0.3, gt=0)
    throat_radius: float = Field(0.05, gt=0)
    mouth_radius: float = Field(0.15, gt=0)
    n_axial: int = Field(4, ge=1)
    n_azimuth: int = Field(8, ge=1)
    quadrant: bool = False


class MeshSection(Section):
    path: ExistingPath = None
    format: Optional[Literal["obj", "msh"]] = None
    icosphere: Optional[int] = Field(None, ge=0, le=7)
    radius: float = Field(1.0, gt=0)
    radiator: Optional[RadiatorSection] = None

    @model_validator(mode="after")
    def one_source(self):
        sources = [self.path is not None, self.icosphere is not None, self.radiator is not None]
        if sum(sources) != 1:
            raise ValueError("[mesh] needs exactly one of path, icosphere or radiator")
        return self

    @property
    def quadrant(self) -> bool:
        return self.radiator is not None and self.radiator.quadrant

    def build(self) -> Mesh:
        if self.path is not None:
            return load_mesh(self.path, self.format)
        if self.icosphere is not None:
            return make_icosphere(self.icosphere, self.radius)
        r = self.radiator
        return _built(make_radiator, r.length, r.throat_radius, r.mouth_radius, r.n_axial, r.n_azimuth, r.quadrant)


class WaveSection(Section):
    k: Optional[float] = Field(None, gt=0)
    formulation: Formulation = Formulation.BURTON_MILLER
    bc: BoundaryCondition = BoundaryCondition.RIGID_SCATTERING
    coupling: Optional[Tuple[float, float]] = None  # (re, im); default i/k
    direction: Vector = (0.0, 0.0, 1.0)
    amplitude: float = 1.0
    velocity: float = 1.0  # m/s on driven elements
    driven_tag: Optional[int] = 1  # None drives every element
    chief_points: List[Vector] = []
    chief_count: int = Field(0, ge=0)
    symmetry: List[Literal["x", "y"]] = []
    polar_order: int = Field(8, ge=1)
    c: float = Field(343.0, gt=0)
    rho: float = Field(1.21, gt=0)

    def interior_points(self, mesh: Mesh, seed: int) -> np.ndarray:
        """Configured CHIEF points, or `chief_count` seeded samples in a ball around the vertex mean."""
        if self.chief_points or self.chief_count == 0:
            return np.asarray(self.chief_points, dtype=float).reshape(-1, 3)
        rng = np.random.default_rng(seed)
        centre = mesh.vertices.mean(axis=0)
        reach = 0.3 * np.linalg.norm(mesh.centroids - centre, axis=1).min()
        u = rng.normal(size=(self.chief_count, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return centre + reach * rng.random((self.chief_count, 1)) ** (1.0 / 3.0) * u

    def build(self, mesh: Mesh, k: Optional[float] = None, seed: int = 0, formulation=None) -> WaveConfig:
        k = k if k is not None else self.k
        if k is None:
            raise ConfigError("[wave] needs k for this command")
        incident = velocity = None
        if self.bc is BoundaryCondition.RIGID_SCATTERING:
            direction = np.asarray(self.direction, dtype=float)
            incident = _built(incident_plane_wave, direction / np.linalg.norm(direction), self.amplitude, k)
        else:
            driven = np.ones(mesh.n_elements, dtype=bool)
            if self.driven_tag is not None and mesh.tags is not None:
                driven = mesh.tags == self.driven_tag
            velocity = np.where(driven, self.velocity, 0.0)
        return _built(
            WaveConfig,
            k=k,
            formulation=formulation or self.formulation,
            bc=self.bc,
            coupling=complex(*self.coupling) if self.coupling is not None else None,
            chief_points=self.interior_points(mesh, seed),
            incident=incident,
            velocity=velocity,
            medium=Medium(self.c, self.rho),
            symmetry=tuple(self.symmetry),
            polar_order=self.polar_order,
        )


class SolverSection(Section):
    tol: float = Field(1e-8, gt=0, lt=1)
    restart: int = Field(80, ge=1)
    max_iters: int = Field(2000, ge=1)
    precondition: bool = False

    def build(self) -> SolveConfig:
        return SolveConfig(self.tol, self.restart, self.max_iters, precondition=self.precondition)


class ShapeSection(Section):
    n_knots: int = Field(4, ge=0)
    n_sectors: int = Field(1, ge=1)
    initial: List[float] = []
    lower: float = -math.inf
    upper: float = math.inf
    axis: Literal["x", "y", "z"] = "z"

    def build(self, mesh: Mesh, quadrant: bool = False) -> ShapeParams:
        span = math.pi / 2.0 if quadrant else 2.0 * math.pi
        params = _built(
            ShapeParams.uniform, mesh, self.n_knots, self.n_sectors,
            sector_span=span, lower=self.lower, upper=self.upper, axis=self.axis,
        )
        if self.initial:
            params = _built(params.with_values, self.initial)
        return params


class LossSection(Section):
    frequencies: List[float] = Field(min_length=1)
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

    def build(self) -> LossSpec:
        return LossSpec(**self.model_dump())


class OptimizeSection(Section):
    iterations: int = Field(25, ge=0)
    gtol: float = Field(1e-6, gt=0)
    memory: int = Field(10, ge=1)
    audit_cold_start: bool = False


class GridSection(Section):
    origin: Vector
    spacing: Vector
    counts: Tuple[int, int, int]

    def build(self) -> GridSpec:
        return _built(GridSpec, self.origin, self.spacing, self.counts)


class SphereSection(Section):
    n: int = Field(100, ge=1)
    radius: float = Field(2.0, gt=0)


class PointsSection(Section):
    csv: ExistingPath = None
    grid: Optional[GridSection] = None
    sphere: Optional[SphereSection] = None

    @model_validator(mode="after")
    def one_source(self):
        if sum(v is not None for v in (self.csv, self.grid, self.sphere)) != 1:
            raise ValueError("[points] needs exactly one of csv, grid or sphere")
        return self

    def build(self) -> np.ndarray:
        if self.csv is not None:
            return read_points_csv(self.csv)
        if self.grid is not None:
            return self.grid.build().points()
        return fibonacci_sphere(self.sphere.n, self.sphere.radius)


class ValidateSection(Section):
    subdivisions: List[int] = Field(min_length=1)
    k: List[float] = Field(min_length=1)
    radius: float = Field(1.0, gt=0)
    n_points: int = Field(100, ge=1)
    eval_radius: float = Field(2.0, gt=0)
    formulation: Formulation = Formulation.BURTON_MILLER
    max_error: List[float] = []  # per subdivision level, empty disables
    require_decreasing: bool = True
    resonance_k: Optional[float] = Field(None, gt=0)
    reference_k: Optional[float] = Field(None, gt=0)
    resonance_bracket: float = Field(0.3, gt=0)  # half-width of the search around resonance_k
    resonance_xatol: float = Field(1e-6, gt=0)
    burton_miller_max_ratio: float = 3.0
    conventional_min_ratio: Optional[float] = 10.0

    @field_validator("subdivisions")
    @classmethod
    def levels_in_range(cls, v):
        if any(not 0 <= s <= 7 for s in v):
            raise ValueError("icosphere subdivisions must lie in [0, 7]")
        return v

    @field_validator("k")
    @classmethod
    def positive_k(cls, v):
        if any(k <= 0 for k in v):
            raise ValueError("wavenumbers must be positive")
        return v

    @model_validator(mode="after")
    def consistent(self):
        if self.max_error and len(self.max_error) != len(self.subdivisions):
            raise ValueError("max_error needs one entry per subdivision level")
        if self.eval_radius <= self.radius:
            raise ValueError("evaluation radius must exceed the sphere radius")
        if self.resonance_k is not None and self.reference_k is None:
            raise ValueError("resonance_k needs a reference_k")
        if self.resonance_k is not None and self.resonance_bracket >= self.resonance_k:
            raise ValueError("resonance_bracket must be smaller than resonance_k")
        return self


class GradCheckSection(Section):
    h: float = 1e-6
    rel_tol: float = Field(1e-3, gt=0)
    floor: float = Field(1e-6, ge=0)  # skip components below floor * |grad|inf

    @field_validator("h")
    @classmethod
    def positive_step(cls, v):
        if not v > 0:
            raise ValueError(f"finite-difference step must be positive, got {v}")
        return v


class MieSection(Section):
    a: float = Field(1.0, gt=0)
    k: float = Field(gt=0)
    n_terms: Optional[int] = Field(None, ge=0)
    amplitude: float = 1.0
    direction: Vector = (0.0, 0.0, 1.0)


class RunConfig(Section):
    seed: int = 0
    out: Optional[Path] = None
    mesh: Optional[MeshSection] = None
    wave: WaveSection = WaveSection()
    solver: SolverSection = SolverSection()
    shape: ShapeSection = ShapeSection()
    loss: Optional[LossSection] = None
    optimize: OptimizeSection = OptimizeSection()
    points: Optional[PointsSection] = None
    validate_: Optional[ValidateSection] = Field(None, alias="validate")
    grad_check: Optional[GradCheckSection] = None
    mie: Optional[MieSection] = None

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    @field_validator("out")
    @classmethod
    def relative_out(cls, v, info: ValidationInfo):
        base = (info.context or {}).get("base")
        if v is not None and not v.is_absolute() and base is not None:
            return Path(base) / v
        return v

    def require(self, *names: str):
        """Sections a command cannot run without."""
        missing = [n.rstrip("_") for n in names if getattr(self, n) is None]
        if missing:
            raise ConfigError(f"config is missing section(s): {', '.join('[' + n + ']' for n in missing)}")
        return self


def parse_config(data: dict, base: Optional[Path] = None) -> RunConfig:
    try:
        return RunConfig.model_validate(data, context={"base": base})
    except ValidationError as e:
        raise ConfigError(f"invalid run config:\n{e}") from e


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return parse_config(data, path.parent)
