"""PLY (ascii and binary little-endian) and OBJ mesh writers and readers."""

import io
from pathlib import Path
from typing import List, Literal, Union

import numpy as np
import structlog
from plyfile import PlyData, PlyElement, PlyParseError

from gvkf.core.exceptions import MeshFileError
from gvkf.models.geometry import TriangleMesh

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]
MeshFormat = Literal["ply_ascii", "ply_binary_le", "obj"]

VERTEX_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4")])
# fixed-length index field, written as "property list uchar int vertex_indices"
FACE_DTYPE = np.dtype([("vertex_indices", "<i4", (3,))])


def _ply_data(mesh: TriangleMesh, text: bool) -> PlyData:
    vertices = np.empty(len(mesh.vertices), dtype=VERTEX_DTYPE)
    if len(vertices):
        vertices["x"], vertices["y"], vertices["z"] = mesh.vertices.astype(np.float32).T
    faces = np.empty(len(mesh.faces), dtype=FACE_DTYPE)
    faces["vertex_indices"] = mesh.faces.astype(np.int32).reshape(-1, 3)
    elements = [
        PlyElement.describe(vertices, "vertex"),
        PlyElement.describe(faces, "face", len_types={"vertex_indices": "u1"}),
    ]
    return PlyData(elements, text=text, byte_order="<")


def mesh_bytes(mesh: TriangleMesh, fmt: MeshFormat) -> bytes:
    """Encode a mesh; vertices are stored as 32-bit floats."""
    if fmt in ("ply_binary_le", "ply_ascii"):
        buffer = io.BytesIO()
        _ply_data(mesh, text=fmt == "ply_ascii").write(buffer)
        return buffer.getvalue()

    if fmt == "obj":
        vertices = mesh.vertices.astype(np.float32)
        lines = ["v " + " ".join("%.9g" % c for c in v) for v in vertices.tolist()]
        lines += ["f %d %d %d" % tuple(i + 1 for i in f) for f in mesh.faces.tolist()]
        return "".join(line + "\n" for line in lines).encode("ascii")

    raise MeshFileError(f"unknown mesh format {fmt!r}")


def export_mesh(mesh: TriangleMesh, path: PathLike, fmt: MeshFormat = "ply_binary_le") -> None:
    """Write a mesh file; I/O failures raise MeshFileError."""
    payload = mesh_bytes(mesh, fmt)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as e:
        raise MeshFileError(f"cannot write {path}: {e.strerror or e}") from e
    logger.info("Exported mesh", path=str(path), format=fmt, vertices=len(mesh.vertices), faces=len(mesh.faces))


# ============================================================================
# Readers
# ============================================================================


def _parse_ply(data: bytes, path: PathLike) -> TriangleMesh:
    try:
        ply = PlyData.read(io.BytesIO(data), mmap=False)
    except PlyParseError as e:
        raise MeshFileError(f"{path}: {e}") from e
    if "vertex" not in ply or "face" not in ply:
        raise MeshFileError(f"{path}: PLY needs vertex and face elements")

    vertex = ply["vertex"]
    vertices = np.stack([vertex["x"], vertex["y"], vertex["z"]], axis=1).astype(np.float64)
    rows = list(ply["face"]["vertex_indices"])
    if any(len(row) != 3 for row in rows):
        raise MeshFileError(f"{path}: only triangle faces are supported")
    faces = np.asarray([np.asarray(row, dtype=np.int64) for row in rows], dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(vertices.reshape(-1, 3), faces)


def _parse_obj(text: str) -> TriangleMesh:
    vertices: List[List[float]] = []
    faces: List[List[int]] = []
    for line in text.split("\n"):
        elements = line.split()
        if not elements:
            continue
        if elements[0] == "v":
            vertices.append([float(c) for c in elements[1:4]])
        elif elements[0] == "f":
            faces.append([int(e.split("/")[0]) - 1 for e in elements[1:4]])
    return TriangleMesh(np.asarray(vertices, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def read_mesh(path: PathLike) -> TriangleMesh:
    """Parse a mesh written by export_mesh (format chosen by extension and header)."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise MeshFileError(f"cannot read {path}: {e.strerror or e}") from e
    try:
        if path.suffix.lower() == ".obj":
            return _parse_obj(data.decode("ascii"))
        return _parse_ply(data, path)
    except (ValueError, IndexError) as e:
        raise MeshFileError(f"{path}: malformed mesh: {e}") from e
