"""Camera, image, scalar grid and triangle mesh records."""

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from gvkf.core.exceptions import InvalidCameraError, ShapeError

Channels = Literal["rgb8", "gray32f"]
CHANNEL_COUNT = {"rgb8": 3, "gray32f": 1}


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera looking from ``position`` towards ``look_at``."""

    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_y: float
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self) -> None:
        for name in ("position", "look_at", "up"):
            value = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            object.__setattr__(self, name, value)
        up_norm = float(np.linalg.norm(self.up))
        if up_norm < 1e-12:
            raise InvalidCameraError("camera up vector is zero")
        object.__setattr__(self, "up", self.up / up_norm)

        if np.allclose(self.look_at, self.position, rtol=0.0, atol=1e-12):
            raise InvalidCameraError("camera look_at must differ from position")
        if not 0.0 < self.fov_y < 180.0:
            raise InvalidCameraError(f"fov_y must be in (0, 180) degrees, got {self.fov_y}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidCameraError("image size must be positive")
        if not 0.0 < self.near < self.far:
            raise InvalidCameraError("camera requires 0 < near < far")
        if np.linalg.norm(np.cross(self.forward, self.up)) < 1e-9:
            raise InvalidCameraError("camera up vector is parallel to the viewing direction")

    @property
    def forward(self) -> np.ndarray:
        direction = self.look_at - self.position
        return direction / np.linalg.norm(direction)

    def basis(self) -> np.ndarray:
        """Rows: right, true up, forward."""
        forward = self.forward
        right = np.cross(forward, self.up)
        right = right / np.linalg.norm(right)
        true_up = np.cross(right, forward)
        return np.stack([right, true_up, forward])


@dataclass(eq=False)
class ImageBuffer:
    """Row-major image; ``data`` has shape (height, width, channels) in [0, 1] for rgb8."""

    width: int
    height: int
    channels: Channels
    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        expected = (self.height, self.width, CHANNEL_COUNT[self.channels])
        if self.data.shape != expected:
            raise ShapeError(f"image data shape {self.data.shape} does not match {expected}")

    @classmethod
    def rgb(cls, data: np.ndarray) -> "ImageBuffer":
        data = np.asarray(data, dtype=np.float64)
        return cls(width=data.shape[1], height=data.shape[0], channels="rgb8", data=data)

    @classmethod
    def gray(cls, data: np.ndarray) -> "ImageBuffer":
        data = np.asarray(data, dtype=np.float64)
        return cls(width=data.shape[1], height=data.shape[0], channels="gray32f", data=data)

    def to_rgb8(self) -> np.ndarray:
        """Quantized (H, W, 3) uint8 pixels."""
        if self.channels != "rgb8":
            raise ShapeError("only rgb8 images quantize to 8-bit")
        return np.round(np.clip(self.data, 0.0, 1.0) * 255.0).astype(np.uint8)


@dataclass(eq=False)
class ScalarGrid:
    """Dense samples ``values[i, j, k]`` at ``origin + (i, j, k)·spacing``."""

    origin: np.ndarray
    spacing: float
    dims: tuple
    values: np.ndarray

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.dims = tuple(int(d) for d in self.dims)
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.dims) != 3 or min(self.dims) < 2:
            raise ShapeError(f"grid needs at least 2 samples per axis, got {self.dims}")
        if self.values.shape != self.dims:
            raise ShapeError(f"grid values shape {self.values.shape} does not match dims {self.dims}")
        if not self.spacing > 0.0:
            raise ShapeError("grid spacing must be positive")

    @property
    def sentinel(self) -> float:
        """Magnitude assigned to samples no ray reaches."""
        return 10.0 * self.spacing * max(self.dims)

    def axis(self, dim: int) -> np.ndarray:
        return self.origin[dim] + np.arange(self.dims[dim]) * self.spacing

    def points(self) -> np.ndarray:
        """(X, Y, Z, 3) sample positions."""
        xs, ys, zs = np.meshgrid(self.axis(0), self.axis(1), self.axis(2), indexing="ij")
        return np.stack([xs, ys, zs], axis=-1)


@dataclass(eq=False)
class TriangleMesh:
    """Indexed triangle mesh with counter-clockwise outward faces."""

    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    normals: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ShapeError("face index out of range")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def face_areas(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros(0)
        tri = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def edge_face_counts(self) -> dict:
        """Number of faces bordering each undirected edge."""
        counts: dict = {}
        for a, b, c in self.faces.tolist():
            for edge in ((a, b), (b, c), (c, a)):
                key = (min(edge), max(edge))
                counts[key] = counts.get(key, 0) + 1
        return counts

    def is_edge_manifold(self) -> bool:
        counts = self.edge_face_counts()
        return bool(counts) and all(n == 2 for n in counts.values())
