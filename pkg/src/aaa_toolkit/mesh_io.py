"""ASCII OBJ and binary STL export and parsing."""

import logging
from pathlib import Path

import numpy as np

from aaa_toolkit.errors import VolumeIOError
from aaa_toolkit.mesh import TriMesh

logger = logging.getLogger(__name__)

STL_HEADER_SIZE = 80
STL_RECORD = np.dtype(
    [("normal", "<f4", (3,)), ("vertices", "<f4", (3, 3)), ("attribute", "<u2")]
)


def write_obj(mesh: TriMesh, path: Path | str) -> None:
    """v/f records with 1-based indices and round-trippable floats."""
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in mesh.faces]
    try:
        Path(path).write_text("".join(lines), encoding="utf-8")
    except OSError as e:
        raise VolumeIOError(f"cannot write {path}: {e}", path=str(path)) from e


def read_obj(path: Path | str) -> TriMesh:
    """Parse v and f records; other record types are ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise VolumeIOError(f"cannot read {path}: {e}", path=str(path)) from e
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    for number, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                vertices.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                # "f 1/1/1 2/2/2 3/3/3" carries texture/normal refs after the slash
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
        except ValueError as e:
            raise VolumeIOError(f"{path}:{number}: malformed OBJ record", path=str(path)) from e
    return TriMesh(np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64))


def write_stl(mesh: TriMesh, path: Path | str, header: str = "aaa-toolkit") -> None:
    """Little-endian binary STL with per-facet unit normals."""
    tri = mesh.vertices[mesh.faces]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.divide(normals, lengths, out=np.zeros_like(normals), where=lengths > 0)
    records = np.zeros(mesh.n_faces, dtype=STL_RECORD)
    records["normal"] = normals
    records["vertices"] = tri
    head = header.encode("ascii")[:STL_HEADER_SIZE].ljust(STL_HEADER_SIZE, b"\x00")
    try:
        with open(path, "wb") as f:
            f.write(head)
            f.write(np.uint32(mesh.n_faces).astype("<u4").tobytes())
            f.write(records.tobytes())
    except OSError as e:
        raise VolumeIOError(f"cannot write {path}: {e}", path=str(path)) from e


def read_stl(path: Path | str) -> TriMesh:
    """Parse binary STL and weld identical float32 corners back into shared vertices."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise VolumeIOError(f"cannot read {path}: {e}", path=str(path)) from e
    if len(raw) < STL_HEADER_SIZE + 4:
        raise VolumeIOError(f"{path} is too short for a binary STL", path=str(path))
    count = int(np.frombuffer(raw, dtype="<u4", count=1, offset=STL_HEADER_SIZE)[0])
    expected = STL_HEADER_SIZE + 4 + count * STL_RECORD.itemsize
    if len(raw) < expected:
        raise VolumeIOError(
            f"{path} declares {count} triangles but holds {len(raw)} bytes", path=str(path)
        )
    records = np.frombuffer(raw, dtype=STL_RECORD, count=count, offset=STL_HEADER_SIZE + 4)
    corners = records["vertices"].reshape(-1, 3).astype(np.float64)
    vertices, inverse = np.unique(corners, axis=0, return_inverse=True)
    return TriMesh(vertices, inverse.reshape(-1, 3))
