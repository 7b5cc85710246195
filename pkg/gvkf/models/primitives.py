"""Gaussian primitive, covariance, ray and per-ray kernel records."""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from gvkf.core.exceptions import InvalidParameterError, InvalidRayError

VoxelKey = Tuple[int, int, int, int]

QUAT_NORM_TOL = 1e-9
RAY_NORM_TOL = 1e-12


def _vector(values: Sequence[float], size: int, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64).reshape(-1)
    if array.shape != (size,):
        raise InvalidParameterError(f"{name} must have {size} components, got {array.size}")
    if not np.all(np.isfinite(array)):
        raise InvalidParameterError(f"{name} must be finite")
    return array


@dataclass(frozen=True, eq=False)
class GaussianPrimitive:
    """One anisotropic 3D Gaussian.

    The rotation is stored as a unit quaternion in (w, x, y, z) order.
    """

    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    color: np.ndarray
    voxel_key: Optional[VoxelKey] = field(default=None)

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _vector(self.position, 3, "position"))
        object.__setattr__(self, "rotation", _vector(self.rotation, 4, "rotation"))
        object.__setattr__(self, "scale", _vector(self.scale, 3, "scale"))
        object.__setattr__(self, "color", _vector(self.color, 3, "color"))
        object.__setattr__(self, "opacity", float(self.opacity))

        if abs(float(np.linalg.norm(self.rotation)) - 1.0) > QUAT_NORM_TOL:
            raise InvalidParameterError("rotation quaternion must have unit norm")
        if np.any(self.scale <= 0.0):
            raise InvalidParameterError("scale components must be positive")
        if not 0.0 < self.opacity <= 1.0:
            raise InvalidParameterError(f"opacity must be in (0, 1], got {self.opacity}")
        if np.any(self.color < 0.0) or np.any(self.color > 1.0):
            raise InvalidParameterError("color components must be in [0, 1]")

    @classmethod
    def from_raw(
        cls,
        position: Sequence[float],
        rotation: Sequence[float],
        scale: Sequence[float],
        opacity: float,
        color: Sequence[float],
        voxel_key: Optional[VoxelKey] = None,
    ) -> "GaussianPrimitive":
        """Build a primitive, normalizing the quaternion first."""
        quat = np.asarray(rotation, dtype=np.float64)
        norm = float(np.linalg.norm(quat))
        if norm < 1e-12:
            raise InvalidParameterError("rotation quaternion is zero")
        return cls(position, quat / norm, scale, opacity, color, voxel_key)

    def same_as(self, other: "GaussianPrimitive") -> bool:
        """Exact attribute equality."""
        return (
            np.array_equal(self.position, other.position)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.scale, other.scale)
            and self.opacity == other.opacity
            and np.array_equal(self.color, other.color)
        )


@dataclass(frozen=True, eq=False)
class Covariance3:
    """Symmetric positive-definite covariance and its cached inverse."""

    matrix: np.ndarray
    inverse: np.ndarray


@dataclass(frozen=True, eq=False)
class Ray:
    """Ray with unit direction and far bound B used for background blending."""

    origin: np.ndarray
    direction: np.ndarray
    t_max: float = float("inf")

    def __post_init__(self) -> None:
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=np.float64).reshape(3))
        object.__setattr__(self, "t_max", float(self.t_max))
        if abs(float(np.linalg.norm(self.direction)) - 1.0) > RAY_NORM_TOL:
            raise InvalidRayError("ray direction must have unit length")
        if not self.t_max > 0.0:
            raise InvalidRayError("ray far bound must be positive")

    @classmethod
    def towards(cls, origin: Sequence[float], direction: Sequence[float], t_max: float = float("inf")) -> "Ray":
        """Build a ray, normalizing the direction."""
        d = np.asarray(direction, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(d))
        if norm < RAY_NORM_TOL:
            raise InvalidRayError("ray direction is degenerate")
        return cls(origin, d / norm, t_max)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True, eq=False)
class RayKernel:
    """One Gaussian restricted to a ray: peak location, sharpness and blend coefficient."""

    t: float
    k: float
    g_max: float
    alpha: float
    color: np.ndarray
    index: int = -1
    culled: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64).reshape(3))
        if not self.k > 0.0:
            raise InvalidParameterError(f"kernel sharpness must be positive, got {self.k}")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidParameterError(f"kernel alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.g_max <= 1.0:
            raise InvalidParameterError(f"kernel peak must be in [0, 1], got {self.g_max}")
