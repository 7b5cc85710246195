"""
CPU pinhole renderer.

Every pixel ray collects the kernels of the Gaussians whose 3σ sphere it
passes, sorts them by peak location and composites them front to back.
Depth is the blending-weighted mean peak; normals come from central
differences of the back-projected depth map.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from gvkf.core.exceptions import PixelIndexError
from gvkf.core.gaussian_core import GaussianCloud, ray_chunk_size, trace_rays
from gvkf.core.opacity_field import depth_distortion_batch, render_rays
from gvkf.core.voxel_store import SparseVoxelGrid
from gvkf.models.config import GVKFConfig
from gvkf.models.geometry import Camera, ImageBuffer
from gvkf.models.primitives import GaussianPrimitive, Ray

logger = structlog.get_logger(__name__)

Scene = Union[SparseVoxelGrid, GaussianCloud, Sequence[GaussianPrimitive]]


def _pixel_directions(cam: Camera, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    right, true_up, forward = cam.basis()
    tan_half = np.tan(np.radians(cam.fov_y) / 2.0)
    aspect = cam.width / cam.height
    sx = (2.0 * (px + 0.5) / cam.width - 1.0) * tan_half * aspect
    sy = (1.0 - 2.0 * (py + 0.5) / cam.height) * tan_half
    dirs = forward[None, :] + sx[:, None] * right[None, :] + sy[:, None] * true_up[None, :]
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def generate_ray(cam: Camera, px: int, py: int) -> Ray:
    """Ray through the center of pixel (px, py); py grows downwards."""
    if not (0 <= px < cam.width and 0 <= py < cam.height):
        raise PixelIndexError(f"pixel ({px}, {py}) outside {cam.width}x{cam.height} image")
    direction = _pixel_directions(cam, np.array([float(px)]), np.array([float(py)]))[0]
    return Ray(cam.position, direction, cam.far)


def generate_rays(cam: Camera) -> Tuple[np.ndarray, np.ndarray]:
    """Origins and directions of all pixels in row-major order."""
    py, px = np.meshgrid(np.arange(cam.height, dtype=np.float64), np.arange(cam.width, dtype=np.float64), indexing="ij")
    directions = _pixel_directions(cam, px.reshape(-1), py.reshape(-1))
    origins = np.broadcast_to(cam.position, directions.shape).copy()
    return origins, directions


def scene_cloud(scene: Scene, cam: Optional[Camera]) -> GaussianCloud:
    """Gaussians of any supported scene representation as a cloud."""
    if isinstance(scene, GaussianCloud):
        return scene
    if isinstance(scene, SparseVoxelGrid):
        return scene.decode(cam).to_cloud()
    return GaussianCloud.from_primitives(list(scene))


def depth_normals(depth: np.ndarray, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """
    Camera-facing unit normals from a depth map; zero where undefined.

    Args:
        depth: (H, W) blended depth, inf where nothing was hit
        origins: (H, W, 3) ray origins
        directions: (H, W, 3) unit ray directions

    Returns:
        (H, W, 3) normals
    """
    finite = np.isfinite(depth)
    points = origins + np.where(finite, depth, np.nan)[..., None] * directions
    height, width = depth.shape
    if height < 2 or width < 2:
        return np.zeros((height, width, 3))
    d_row = np.gradient(points, axis=0)
    d_col = np.gradient(points, axis=1)
    normals = np.cross(d_row, d_col)
    facing = np.einsum("hwi,hwi->hw", normals, directions)
    normals = np.where((facing > 0.0)[..., None], -normals, normals)
    length = np.linalg.norm(normals, axis=2, keepdims=True)
    valid = np.isfinite(length) & (length > 1e-12)
    return np.where(valid, normals / np.where(valid, length, 1.0), 0.0)


@dataclass
class RenderOutput:
    """Buffers of one render plus per-primitive bookkeeping."""

    color: ImageBuffer
    depth: ImageBuffer
    normal: ImageBuffer
    opacity: np.ndarray
    distortion: np.ndarray
    visible: np.ndarray
    cloud: GaussianCloud
    weights: Optional[np.ndarray] = None


class Renderer:
    """Renders scenes with a pinhole camera over a thread pool of pixel chunks."""

    def __init__(self, config: Optional[GVKFConfig] = None):
        self.config = config or GVKFConfig()
        self.logger = logger.bind(component="renderer")

    def render_image(
        self,
        scene: Scene,
        cam: Camera,
        background: Sequence[float] = (0.0, 0.0, 0.0),
        return_weights: bool = False,
    ) -> RenderOutput:
        """
        Render color, depth and normal buffers.

        Args:
            scene: Voxel grid, Gaussian cloud or list of primitives
            cam: Pinhole camera
            background: RGB blended behind the last kernel
            return_weights: Also return the (pixels, primitives) blending weights

        Returns:
            RenderOutput; buffers are independent of the thread count
        """
        cloud = scene_cloud(scene, cam)
        bg = np.asarray(background, dtype=np.float64).reshape(3)
        origins, directions = generate_rays(cam)
        num_pixels = origins.shape[0]

        color = np.zeros((num_pixels, 3))
        opacity = np.zeros(num_pixels)
        depth = np.full(num_pixels, np.inf)
        distortion = np.zeros(num_pixels)
        visible = np.zeros(len(cloud), dtype=bool)
        weights = np.zeros((num_pixels, len(cloud))) if return_weights else None

        chunk = ray_chunk_size(cloud, self.config.ray_chunk_size)
        spans = [(start, min(start + chunk, num_pixels)) for start in range(0, num_pixels, chunk)]

        def work(span: Tuple[int, int]):
            start, end = span
            batch = trace_rays(
                cloud,
                origins[start:end],
                directions[start:end],
                near=cam.near,
                far=cam.far,
                alpha_min=self.config.alpha_cull,
                influence_sigmas=self.config.influence_sigmas,
            )
            result = render_rays(batch, bg, self.config.early_stop_transmittance)
            return span, batch, result, depth_distortion_batch(batch)

        with ThreadPoolExecutor(max_workers=self.config.threads) as executor:
            for (start, end), batch, result, dist in executor.map(work, spans):
                color[start:end] = result.color
                opacity[start:end] = result.opacity
                depth[start:end] = result.depth
                distortion[start:end] = dist
                hit = batch.valid & (result.weights > 0.0)
                visible[batch.index[hit]] = True
                if weights is not None:
                    rows, slots = np.nonzero(batch.valid)
                    weights[start + rows, batch.index[rows, slots]] = result.weights[rows, slots]

        shape = (cam.height, cam.width)
        depth_map = depth.reshape(shape)
        normals = depth_normals(depth_map, origins.reshape(shape + (3,)), directions.reshape(shape + (3,)))
        encoded = np.where(np.any(normals != 0.0, axis=2, keepdims=True), 0.5 * (normals + 1.0), 0.0)

        self.logger.debug(
            "Rendered image",
            width=cam.width,
            height=cam.height,
            gaussians=len(cloud),
            visible=int(visible.sum()),
        )
        return RenderOutput(
            color=ImageBuffer.rgb(color.reshape(shape + (3,))),
            depth=ImageBuffer.gray(depth_map),
            normal=ImageBuffer.rgb(encoded),
            opacity=opacity.reshape(shape),
            distortion=distortion.reshape(shape),
            visible=visible,
            cloud=cloud,
            weights=weights,
        )

    def render_batch(self, scene: Scene, cameras: List[Camera], background: Sequence[float] = (0.0, 0.0, 0.0)) -> List[RenderOutput]:
        return [self.render_image(scene, cam, background) for cam in cameras]
