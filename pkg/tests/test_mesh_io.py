"""Tests for OBJ and STL files."""

import numpy as np
import pytest

from aaa_toolkit.errors import VolumeIOError
from aaa_toolkit.mesh import mesh_measures
from aaa_toolkit.mesh_io import STL_HEADER_SIZE, STL_RECORD, read_obj, read_stl, write_obj, write_stl


def test_obj_round_trip(tmp_path, make_tube_mesh):
    """Test that OBJ keeps vertices and triangles exactly."""
    mesh = make_tube_mesh(7.25, 20.0, n_theta=32, n_rings=5)
    path = tmp_path / "tube.obj"

    write_obj(mesh, path)
    back = read_obj(path)

    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.faces, mesh.faces)


def test_obj_with_texture_and_normal_refs(tmp_path):
    """Test parsing of slash-separated face records and ignored record types."""
    path = tmp_path / "tri.obj"
    path.write_text(
        "# one triangle\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1\n", encoding="utf-8"
    )

    mesh = read_obj(path)

    assert mesh.n_vertices == 3
    assert mesh.faces.tolist() == [[0, 1, 2]]


def test_malformed_obj(tmp_path):
    """Test that unparsable records are an I/O error."""
    path = tmp_path / "bad.obj"
    path.write_text("v 0 0 zero\n", encoding="utf-8")

    with pytest.raises(VolumeIOError):
        read_obj(path)


def test_stl_round_trip(tmp_path, unit_cube_mesh):
    """Test STL size, welded vertices and preserved geometry."""
    path = tmp_path / "cube.stl"

    write_stl(unit_cube_mesh, path)
    back = read_stl(path)

    assert path.stat().st_size == STL_HEADER_SIZE + 4 + 12 * STL_RECORD.itemsize
    assert STL_RECORD.itemsize == 50
    assert back.n_vertices == 8
    np.testing.assert_allclose(back.vertices[back.faces], unit_cube_mesh.vertices[unit_cube_mesh.faces])
    assert mesh_measures(back).volume_mm3 == pytest.approx(1.0)


def test_stl_normals_are_outward(tmp_path, unit_cube_mesh):
    """Test the stored facet normals."""
    path = tmp_path / "cube.stl"
    write_stl(unit_cube_mesh, path)

    records = np.frombuffer(path.read_bytes(), dtype=STL_RECORD, offset=STL_HEADER_SIZE + 4)

    assert records["normal"][0].tolist() == [0.0, 0.0, -1.0]
    assert records["normal"][2].tolist() == [0.0, 0.0, 1.0]


def test_truncated_stl(tmp_path, unit_cube_mesh):
    """Test that a short STL is an I/O error."""
    path = tmp_path / "cube.stl"
    write_stl(unit_cube_mesh, path)
    path.write_bytes(path.read_bytes()[:-10])

    with pytest.raises(VolumeIOError):
        read_stl(path)
    path.write_bytes(b"\x00" * 20)
    with pytest.raises(VolumeIOError):
        read_stl(path)
