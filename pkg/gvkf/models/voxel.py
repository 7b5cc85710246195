"""Feature voxel record of the sparse grid."""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from gvkf.core.exceptions import InvalidParameterError
from gvkf.models.primitives import GaussianPrimitive, VoxelKey

OFFSET_TOL = 1e-12


def edge_length(base_size: float, depth: int) -> float:
    """Edge of a voxel at octree depth ``depth``."""
    return base_size / (2**depth)


def children_keys(key: VoxelKey) -> List[VoxelKey]:
    """The eight octree children, x fastest."""
    ix, iy, iz, depth = key
    return [
        (2 * ix + a, 2 * iy + b, 2 * iz + c, depth + 1)
        for c in (0, 1)
        for b in (0, 1)
        for a in (0, 1)
    ]


@dataclass(eq=False)
class FeatureVoxel:
    """
    One cell of the sparse grid.

    ``offsets`` are in units of the voxel edge relative to the center and
    place the voxel's neural Gaussians; ``gaussians`` holds explicit
    primitives in direct mode.
    """

    key: VoxelKey
    edge: float
    feature: np.ndarray
    offsets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    gaussians: List[GaussianPrimitive] = field(default_factory=list)
    accumulated_gradient: float = 0.0
    gradient_samples: int = 0
    usage_count: int = 0

    def __post_init__(self) -> None:
        self.key = tuple(int(v) for v in self.key)
        self.feature = np.asarray(self.feature, dtype=np.float64).reshape(-1)
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        if self.key[3] < 0:
            raise InvalidParameterError("voxel depth must be non-negative")
        if self.offsets.size and np.abs(self.offsets).max() > 0.5 + OFFSET_TOL:
            raise InvalidParameterError("voxel offsets must lie within the half extent")

    @property
    def depth(self) -> int:
        return self.key[3]

    @property
    def cell(self) -> Tuple[int, int, int]:
        return self.key[:3]

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.cell, dtype=np.float64) + 0.5) * self.edge

    def bounds(self) -> np.ndarray:
        """Rows: min corner, max corner."""
        low = np.asarray(self.cell, dtype=np.float64) * self.edge
        return np.stack([low, low + self.edge])

    def record_gradient(self, norm: float) -> None:
        """Fold one gradient norm into the running mean."""
        self.gradient_samples += 1
        self.accumulated_gradient += (norm - self.accumulated_gradient) / self.gradient_samples

    def reset_window(self) -> None:
        self.accumulated_gradient = 0.0
        self.gradient_samples = 0
        self.usage_count = 0
