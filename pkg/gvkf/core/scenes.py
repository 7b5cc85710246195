"""
Built-in synthetic scenes.

Everything here is deterministic: the same kind, size and seed produce the
same grid, cameras and target images.
"""

from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy.spatial.transform import Rotation

from gvkf.core.exceptions import InvalidParameterError
from gvkf.core.renderer import Renderer
from gvkf.core.voxel_store import SparseVoxelGrid
from gvkf.models.config import GVKFConfig
from gvkf.models.geometry import Camera, ImageBuffer
from gvkf.models.primitives import GaussianPrimitive
from gvkf.utils.image_io import write_ppm
from gvkf.utils.scene_io import save_camera

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]

SPHERE_COUNT = 2000
SPHERE_OPACITY = 0.95
SPHERE_NORMAL_SCALE = 0.02
SPHERE_TANGENT_SCALE = 0.06

CAMERA_DISTANCE = 4.0
CAMERA_FOV = 45.0


def fibonacci_sphere(count: int, radius: float = 1.0) -> np.ndarray:
    """Near-uniform points on a sphere (golden-angle spiral)."""
    if count < 1:
        raise InvalidParameterError("point count must be positive")
    n = np.arange(count, dtype=np.float64)
    y = 1.0 - 2.0 * (n + 0.5) / count
    ring = np.sqrt(np.maximum(1.0 - y * y, 0.0))
    theta = np.pi * (3.0 - np.sqrt(5.0)) * n
    return radius * np.stack([ring * np.cos(theta), y, ring * np.sin(theta)], axis=1)


def quaternions_facing(normals: np.ndarray) -> np.ndarray:
    """(w, x, y, z) rotations taking the local +z axis onto each normal."""
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    z = np.array([0.0, 0.0, 1.0])
    axes = np.cross(np.broadcast_to(z, normals.shape), normals)
    sin = np.linalg.norm(axes, axis=1)
    cos = normals @ z
    angles = np.arctan2(sin, cos)
    # antiparallel normals flip about x
    axes = np.where(sin[:, None] > 1e-12, axes / np.maximum(sin, 1e-12)[:, None], [1.0, 0.0, 0.0])
    xyzw = Rotation.from_rotvec(axes * angles[:, None]).as_quat()
    return np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1)


# ============================================================================
# Scene builders
# ============================================================================


def sphere_primitives(count: int = SPHERE_COUNT) -> List[GaussianPrimitive]:
    """Flattened Gaussians tiling the unit sphere, colored by their normal."""
    points = fibonacci_sphere(count)
    quats = quaternions_facing(points)
    scale = [SPHERE_TANGENT_SCALE, SPHERE_TANGENT_SCALE, SPHERE_NORMAL_SCALE]
    return [
        GaussianPrimitive(p, q, scale, SPHERE_OPACITY, 0.5 * (p + 1.0))
        for p, q in zip(points, quats)
    ]


def wall_primitives(half_size: float = 1.0, spacing: float = 0.1, depth: float = 0.0) -> List[GaussianPrimitive]:
    """Fronto-parallel wall in the plane z = depth facing +z."""
    ticks = np.arange(-half_size, half_size + 0.5 * spacing, spacing)
    scale = [0.8 * spacing, 0.8 * spacing, 0.1 * spacing]
    return [
        GaussianPrimitive([x, y, depth], [1.0, 0.0, 0.0, 0.0], scale, SPHERE_OPACITY, [0.8, 0.8, 0.8])
        for y in ticks
        for x in ticks
    ]


def single_primitives() -> List[GaussianPrimitive]:
    return [GaussianPrimitive([0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.3, 0.3, 0.3], 0.9, [1.0, 0.5, 0.2])]


def triplet_primitives() -> List[GaussianPrimitive]:
    """Three separated isotropic Gaussians in red, green and blue."""
    colors = np.eye(3) * 0.8 + 0.1
    return [
        GaussianPrimitive([x, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.15, 0.15, 0.15], 0.8, c)
        for x, c in zip((-0.6, 0.0, 0.6), colors)
    ]


SCENES: Dict[str, Tuple[Callable[[], List[GaussianPrimitive]], float]] = {
    "sphere": (sphere_primitives, 0.1),
    "wall": (wall_primitives, 0.1),
    "single": (single_primitives, 1.0),
    "triplet": (triplet_primitives, 0.5),
}


def build_scene(kind: str, config: Optional[GVKFConfig] = None) -> SparseVoxelGrid:
    """Direct-mode grid of a built-in scene."""
    if kind not in SCENES:
        raise InvalidParameterError(f"unknown scene kind {kind!r}; choose from {', '.join(sorted(SCENES))}")
    builder, voxel_size = SCENES[kind]
    grid = SparseVoxelGrid.from_gaussians(builder(), voxel_size, config)
    logger.info("Built scene", kind=kind, gaussians=grid.num_gaussians(), voxels=len(grid))
    return grid


def perturb_scene(grid: SparseVoxelGrid, amount: float, seed: int) -> SparseVoxelGrid:
    """
    Copy of a direct-mode grid with jittered colors and opacities.

    Positions are kept; values are clipped back onto their valid ranges.
    """
    if grid.mode != "direct":
        raise InvalidParameterError("only direct-mode scenes can be perturbed")
    rng = np.random.default_rng(seed)
    clone = grid.copy()
    for key in clone.sorted_keys():
        voxel = clone.voxels[key]
        voxel.gaussians = [
            GaussianPrimitive(
                position=g.position,
                rotation=g.rotation,
                scale=g.scale,
                opacity=float(np.clip(g.opacity + rng.uniform(-amount, amount), 0.05, 1.0)),
                color=np.clip(g.color + rng.uniform(-amount, amount, size=3), 0.0, 1.0),
                voxel_key=g.voxel_key,
            )
            for g in voxel.gaussians
        ]
    return clone


# ============================================================================
# Cameras and targets
# ============================================================================


def default_camera(size: int = 64, distance: float = CAMERA_DISTANCE) -> Camera:
    """Square camera on +z looking at the origin."""
    return Camera(
        position=[0.0, 0.0, distance],
        look_at=[0.0, 0.0, 0.0],
        up=[0.0, 1.0, 0.0],
        fov_y=CAMERA_FOV,
        width=size,
        height=size,
    )


def orbit_cameras(views: int, size: int = 64, distance: float = CAMERA_DISTANCE, elevation: float = 0.3) -> List[Camera]:
    """``views`` cameras on a ring around +y, the first on the +z axis side."""
    if views < 1:
        raise InvalidParameterError("view count must be positive")
    cameras = []
    for n in range(views):
        angle = 2.0 * np.pi * n / views
        direction = np.array([np.sin(angle), elevation if views > 1 else 0.0, np.cos(angle)])
        direction /= np.linalg.norm(direction)
        cameras.append(
            Camera(
                position=distance * direction,
                look_at=[0.0, 0.0, 0.0],
                up=[0.0, 1.0, 0.0],
                fov_y=CAMERA_FOV,
                width=size,
                height=size,
            )
        )
    return cameras


def render_targets(
    grid: SparseVoxelGrid,
    cameras: Sequence[Camera],
    config: Optional[GVKFConfig] = None,
    background: Sequence[float] = (0.0, 0.0, 0.0),
) -> List[Tuple[Camera, ImageBuffer]]:
    renderer = Renderer(config)
    return [(cam, renderer.render_image(grid, cam, background).color) for cam in cameras]


def write_targets(targets: Sequence[Tuple[Camera, ImageBuffer]], directory: PathLike) -> List[Path]:
    """Write ``view_%04d.json`` and ``view_%04d.ppm`` pairs; returns the image paths."""
    directory = Path(directory)
    written = []
    for n, (cam, image) in enumerate(targets):
        save_camera(cam, directory / f"view_{n:04d}.json")
        write_ppm(image, directory / f"view_{n:04d}.ppm")
        written.append(directory / f"view_{n:04d}.ppm")
    logger.info("Wrote target views", directory=str(directory), views=len(written))
    return written
