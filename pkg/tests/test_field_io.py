import numpy as np
import pytest

from errors import MeshParseError
from field_io import (
    GridSpec,
    fibonacci_sphere,
    read_points_csv,
    write_directivity_csv,
    write_field_csv,
    write_table,
    write_vtk_structured_points,
)


def test_grid_points_vary_x_fastest():
    grid = GridSpec((0.0, 10.0, -1.0), (1.0, 0.5, 2.0), (3, 2, 2))
    points = grid.points()
    assert len(points) == grid.size == 12
    np.testing.assert_allclose(points[:4], [[0, 10, -1], [1, 10, -1], [2, 10, -1], [0, 10.5, -1]])
    np.testing.assert_allclose(points[-1], [2.0, 10.5, 1.0])


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec((0.0, 0.0), (1.0, 1.0, 1.0), (2, 2, 2))
    with pytest.raises(ValueError):
        GridSpec((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (2, 0, 2))


def test_vtk_point_count(tmp_path):
    grid = GridSpec((0.0, 0.0, 0.0), (0.1, 0.1, 0.1), (4, 3, 2))
    values = np.arange(grid.size) * (1.0 - 1.0j)
    text = write_vtk_structured_points(tmp_path / "f.vtk", grid, values).read_text().splitlines()
    assert "DIMENSIONS 4 3 2" in text
    assert "POINT_DATA 24" in text
    assert text.count("LOOKUP_TABLE default") == 3
    start = text.index("SCALARS im double 1") + 2
    assert float(text[start + 5]) == -5.0
    with pytest.raises(ValueError):
        write_vtk_structured_points(tmp_path / "g.vtk", grid, values[:-1])


def test_field_csv(tmp_path):
    path = write_field_csv(tmp_path / "sub" / "field.csv", [[1.0, 2.0, 3.0]], [0.1 + 2.0j])
    assert path.read_text() == "x,y,z,re,im\n1,2,3,0.10000000000000001,2\n"


def test_table_keeps_full_precision(tmp_path):
    path = write_table(tmp_path / "t.csv", ("name", "value"), [("a", 1.0 / 3.0), ("b", 7)])
    lines = path.read_text().splitlines()
    assert lines[0] == "name,value"
    assert float(lines[1].split(",")[1]) == 1.0 / 3.0
    assert lines[2] == "b,7"


def test_directivity_csv_layout(tmp_path):
    D = np.arange(12, dtype=float).reshape(2, 3, 2)
    path = write_directivity_csv(tmp_path / "d.csv", (500.0, 1000.0), (0.0, 5.0), ("horizontal", "vertical", "diagonal"), D)
    lines = path.read_text().splitlines()
    assert lines[0] == "frequency,angle,plane,db"
    assert len(lines) == 13
    assert lines[1] == "500,0,horizontal,0"
    assert lines[4] == "500,5,vertical,3"
    assert lines[-1] == "1000,5,diagonal,11"


def test_points_csv(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("# probe points\n0, 0, 2\n\n1 2 3\n")
    np.testing.assert_array_equal(read_points_csv(path), [[0, 0, 2], [1, 2, 3]])


@pytest.mark.parametrize("line", ["1,2", "1,2,3,4", "a,b,c"])
def test_points_csv_errors_carry_the_line(tmp_path, line):
    path = tmp_path / "p.csv"
    path.write_text(f"0,0,0\n{line}\n")
    with pytest.raises(MeshParseError) as err:
        read_points_csv(path)
    assert err.value.line_number == 2


def test_fibonacci_sphere():
    points = fibonacci_sphere(40, 2.5)
    np.testing.assert_allclose(np.linalg.norm(points, axis=1), 2.5)
    np.testing.assert_allclose(points.mean(axis=0), 0.0, atol=0.1)


def test_full_size_grid_writes_every_value(tmp_path):
    grid = GridSpec((0.0, 0.0, 0.0), (0.01, 0.01, 0.01), (64, 64, 64))
    path = write_vtk_structured_points(tmp_path / "big.vtk", grid, np.zeros(grid.size, dtype=complex))
    with path.open() as fh:
        lines = sum(1 for _ in fh)
    assert grid.size == 262144
    assert lines == 8 + 3 * (2 + grid.size)
