# Evaluation points in, complex fields out (CSV and legacy VTK)
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from errors import MeshParseError


def format_float(value: float) -> str:
    return f"{value:.17g}"


def read_points_csv(path) -> np.ndarray:
    """One `x,y,z` triple per line; blank lines and `#` comments are skipped."""
    path = Path(path)
    points = []
    for number, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [s for s in line.replace(",", " ").split()]
        try:
            if len(parts) != 3:
                raise ValueError(f"expected 3 coordinates, got {len(parts)}")
            points.append([float(s) for s in parts])
        except ValueError as e:
            raise MeshParseError(path, number, str(e)) from e
    return np.asarray(points, dtype=float).reshape(-1, 3)


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    spacing: tuple
    counts: tuple

    def __post_init__(self):
        if len(self.origin) != 3 or len(self.spacing) != 3 or len(self.counts) != 3:
            raise ValueError("grid origin, spacing and counts need three entries each")
        if any(c < 1 for c in self.counts):
            raise ValueError("grid counts must be positive")

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    def points(self) -> np.ndarray:
        """Grid points with x varying fastest (VTK point order)."""
        axes = [o + s * np.arange(c) for o, s, c in zip(self.origin, self.spacing, self.counts)]
        z, y, x = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.column_stack([x.ravel(), y.ravel(), z.ravel()])


def fibonacci_sphere(n: int, radius: float) -> np.ndarray:
    """n nearly uniform points on a sphere."""
    i = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / n)
    azimuth = np.pi * (1.0 + np.sqrt(5.0)) * i
    return radius * np.column_stack(
        [np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)]
    )


def write_field_csv(path, points, values) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["x,y,z,re,im"]
    for (x, y, z), v in zip(np.asarray(points), np.asarray(values)):
        lines.append(",".join(format_float(t) for t in (x, y, z, v.real, v.imag)))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_vtk_structured_points(path, grid: GridSpec, values, title: str = "pressure") -> Path:
    values = np.asarray(values)
    if values.size != grid.size:
        raise ValueError(f"{values.size} values for a grid of {grid.size} points")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nx, ny, nz = grid.counts
    header = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} {nz}",
        "ORIGIN " + " ".join(format_float(v) for v in grid.origin),
        "SPACING " + " ".join(format_float(v) for v in grid.spacing),
        f"POINT_DATA {grid.size}",
    ]
    with path.open("w") as fh:
        fh.write("\n".join(header) + "\n")
        for name, data in (("re", values.real), ("im", values.imag), ("abs", np.abs(values))):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.write("\n".join(format_float(v) for v in data) + "\n")
    return path


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return str(value)


def write_table(path, header, rows) -> Path:
    """Plain comma-separated table; floats at full precision so reruns compare byte for byte."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)] + [",".join(_cell(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_directivity_csv(path, frequencies, angles, planes, D) -> Path:
    """D has shape (frequencies, planes, angles) in dB."""
    rows = [
        (float(f), float(a), plane, float(D[i, p, j]))
        for i, f in enumerate(frequencies)
        for p, plane in enumerate(planes)
        for j, a in enumerate(angles)
    ]
    return write_table(path, ("frequency", "angle", "plane", "db"), rows)
