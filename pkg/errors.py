# Error hierarchy shared by every stage of the solver
from typing import Optional

import numpy as np

EXIT_ACCEPTANCE = 2
EXIT_NUMERICAL = 3
EXIT_CONFIG = 4


class BemError(Exception):
    """Base class; `exit_code` is what the cli returns when it surfaces."""

    exit_code = EXIT_NUMERICAL


class MeshError(BemError):
    pass


class MeshParseError(MeshError):
    def __init__(self, path, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = path
        self.line_number = line_number


class NonTriangleError(MeshParseError):
    pass


class DegenerateElementError(MeshError):
    def __init__(self, element: int, area: float):
        super().__init__(f"element {element} is degenerate (area {area:.3e} m^2)")
        self.element = element
        self.area = area


class InvalidGeometryError(DegenerateElementError):
    """Raised when a deformation collapses an element."""


class CoincidentPointsError(BemError):
    pass


class ConvergenceError(BemError):
    def __init__(self, message: str, best: np.ndarray, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.best = best
        self.residual = residual
        self.iterations = iterations


class NormalizationError(BemError):
    pass


class TruncationError(BemError):
    def __init__(self, n_terms: int, required: Optional[int], magnitude: float):
        hint = f"; need n_terms >= {required}" if required is not None else ""
        super().__init__(
            f"Mie series with {n_terms} terms leaves last-term magnitude {magnitude:.2e}{hint}"
        )
        self.n_terms = n_terms
        self.required = required


class LineSearchError(BemError):
    pass


class NonFiniteObjectiveError(BemError):
    pass


class ConfigError(BemError):
    exit_code = EXIT_CONFIG


class AcceptanceError(BemError):
    exit_code = EXIT_ACCEPTANCE
