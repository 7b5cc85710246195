"""
SDF sampling and marching-cubes surface extraction.

The ray-local SDF depends on the viewing direction, so every grid line is
probed with axis-aligned rays (both signs by default). Each probe evaluates
Φ at the sample's ray parameter and maps it to a signed distance; the probe
values are then fused into one volumetric field.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog
from skimage import measure

from gvkf.core.exceptions import InvalidBoundsError, InvalidParameterError
from gvkf.core.gaussian_core import GaussianCloud, ray_chunk_size, trace_rays
from gvkf.core.opacity_field import batch_weights, cdf_phi_batch
from gvkf.core.renderer import Scene, scene_cloud
from gvkf.core.surface_mapping import (
    SDF_MAPPINGS,
    U0Cache,
    global_sigma_sq,
    surface_sigma_sq_batch,
)
from gvkf.core.voxel_store import SparseVoxelGrid
from gvkf.models.config import GVKFConfig
from gvkf.models.geometry import Camera, ScalarGrid, TriangleMesh

logger = structlog.get_logger(__name__)

MIN_FACE_AREA = 1e-12
BOUNDS_PADDING = 0.1
EMPTY_SCENE_BOUNDS = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])


def check_bounds(bounds: Sequence[Sequence[float]]) -> np.ndarray:
    """Validate a (min corner, max corner) box."""
    box = np.asarray(bounds, dtype=np.float64)
    if box.shape != (2, 3) or not np.all(np.isfinite(box)):
        raise InvalidBoundsError("bounds must be two finite corners (min, max)")
    if np.any(box[1] - box[0] <= 0.0):
        raise InvalidBoundsError(f"bounds have non-positive extent: {(box[1] - box[0]).tolist()}")
    return box


def default_bounds(cloud: GaussianCloud) -> np.ndarray:
    """Influence box of all Gaussians padded by 10% per side; unit cube when empty."""
    box = cloud.bounds()
    if box is None:
        return EMPTY_SCENE_BOUNDS.copy()
    pad = BOUNDS_PADDING * (box[1] - box[0]).max()
    return np.stack([box[0] - pad, box[1] + pad])


def default_viewpoint(grid: SparseVoxelGrid) -> Camera:
    """Virtual camera above the voxel grid used to decode neural scenes for meshing."""
    centers = np.stack([v.center for v in grid.voxels.values()]) if len(grid) else np.zeros((1, 3))
    middle = 0.5 * (centers.min(axis=0) + centers.max(axis=0))
    extent = float((centers.max(axis=0) - centers.min(axis=0)).max()) + grid.base_voxel_size
    return Camera(
        position=middle + np.array([0.0, 0.0, 2.0 * extent]),
        look_at=middle,
        up=np.array([0.0, 1.0, 0.0]),
        fov_y=60.0,
        width=1,
        height=1,
    )


def grid_layout(bounds: np.ndarray, resolution: int) -> Tuple[np.ndarray, float, Tuple[int, int, int]]:
    """Origin, spacing and dims with ``resolution`` samples along the longest axis."""
    extent = bounds[1] - bounds[0]
    spacing = float(extent.max() / (resolution - 1))
    dims = tuple(max(2, int(np.ceil(e / spacing - 1e-9)) + 1) for e in extent)
    return bounds[0].copy(), spacing, dims


def probe_directions(count: int) -> List[Tuple[int, int]]:
    """(axis, sign) pairs: +x, +y, +z, then -x, -y, -z."""
    forward = [(axis, 1) for axis in range(3)]
    return forward if count == 3 else forward + [(axis, -1) for axis in range(3)]


def aggregate_probes(values: np.ndarray, rule: str = "visibility") -> np.ndarray:
    """
    Fuse per-probe SDF samples of shape (probes, X, Y, Z).

    ``visibility`` treats a sample as outside when any probe reaches it
    before the surface and then keeps the smallest positive distance;
    samples every probe sees as inside keep the value closest to zero.
    ``min_abs`` keeps the probe value of smallest magnitude.
    """
    if rule == "min_abs":
        pick = np.argmin(np.abs(values), axis=0)
        return np.take_along_axis(values, pick[None], axis=0)[0]
    if rule != "visibility":
        raise InvalidParameterError(f"unknown probe aggregation {rule!r}")
    outside = values > 0.0
    nearest_outside = np.where(outside, values, np.inf).min(axis=0)
    return np.where(outside.any(axis=0), nearest_outside, values.max(axis=0))


class MeshExtractor:
    """Samples the opacity-derived SDF on a grid and triangulates its zero set."""

    def __init__(self, config: Optional[GVKFConfig] = None):
        self.config = config or GVKFConfig()
        self.logger = logger.bind(component="mesher")

    # ========================================================================
    # SDF sampling
    # ========================================================================

    def sample_sdf_grid(
        self,
        scene: Scene,
        bounds: Optional[Sequence[Sequence[float]]] = None,
        resolution: Optional[int] = None,
        mu: Optional[float] = None,
        sigma_mode: Optional[str] = None,
        viewpoint: Optional[Camera] = None,
    ) -> ScalarGrid:
        """
        Sample D on a regular grid.

        Args:
            scene: Voxel grid, Gaussian cloud or list of primitives
            bounds: (min, max) corners; defaults to the padded scene extent
            resolution: Samples along the longest axis, 2 to 1024
            mu: Logistic smooth factor
            sigma_mode: ``global`` (median σ² over probe rays) or ``per-ray``
            viewpoint: Camera used to decode neural scenes

        Returns:
            ScalarGrid; samples no probe reaches hold the positive sentinel
        """
        cfg = self.config
        resolution = cfg.mesh_resolution if resolution is None else int(resolution)
        mu = cfg.mu if mu is None else float(mu)
        sigma_mode = sigma_mode or cfg.sigma_mode
        if not 2 <= resolution <= 1024:
            raise InvalidParameterError(f"resolution must be in [2, 1024], got {resolution}")
        if resolution < 8:
            self.logger.warning("Coarse meshing resolution", resolution=resolution)
        if mu <= 0.0:
            raise InvalidParameterError(f"mu must be positive, got {mu}")
        if sigma_mode not in ("global", "per-ray"):
            raise InvalidParameterError(f"unknown sigma mode {sigma_mode!r}")

        if isinstance(scene, SparseVoxelGrid) and scene.mode == "neural" and viewpoint is None:
            viewpoint = default_viewpoint(scene)
        cloud = scene_cloud(scene, viewpoint)
        box = check_bounds(bounds) if bounds is not None else default_bounds(cloud)
        origin, spacing, dims = grid_layout(box, resolution)
        sentinel = 10.0 * spacing * max(dims)
        empty = ScalarGrid(origin, spacing, dims, np.full(dims, sentinel))

        if len(cloud) == 0:
            self.logger.info("Empty scene, grid holds the sentinel everywhere", dims=dims)
            return empty

        scene_box = cloud.bounds()
        probes = probe_directions(cfg.probe_directions)
        traced = [self._probe(cloud, empty, scene_box, axis, sign) for axis, sign in probes]

        all_sigma = np.concatenate([sigma for _, sigma in traced])
        shared = global_sigma_sq(all_sigma)
        if shared is None:
            self.logger.info("No probe ray reached a Gaussian", dims=dims)
            return empty

        solve = U0Cache(cfg.solver_tol, cfg.solver_max_iter, cfg.newton_steps)
        mapping = SDF_MAPPINGS[cfg.sdf_mapping]
        values = np.empty((len(probes),) + dims)
        for n, ((axis, _), (phi, sigma)) in enumerate(zip(probes, traced)):
            if sigma_mode == "global":
                u0 = np.full(len(sigma), solve(shared))
            else:
                u0 = np.array([solve(s) if np.isfinite(s) else solve(shared) for s in sigma])
            d = mapping(phi, mu, u0[:, None], cfg.sdf_clamp_eps)
            d = np.where(phi > 0.0, np.clip(d, -sentinel, sentinel), sentinel)
            lines = d.reshape(dims[:axis] + dims[axis + 1 :] + (dims[axis],))
            values[n] = np.moveaxis(lines, -1, axis)

        field = aggregate_probes(values, cfg.probe_aggregation)
        self.logger.info(
            "Sampled SDF grid",
            dims=dims,
            spacing=spacing,
            probes=len(probes),
            sigma_sq=shared,
            inside=int((field < 0.0).sum()),
        )
        return ScalarGrid(origin, spacing, dims, field)

    def _probe(
        self,
        cloud: GaussianCloud,
        grid: ScalarGrid,
        scene_box: np.ndarray,
        axis: int,
        sign: int,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Φ at every sample and σ² of every grid line along one probe direction."""
        cfg = self.config
        other = [d for d in range(3) if d != axis]
        coord_b, coord_c = np.meshgrid(grid.axis(other[0]), grid.axis(other[1]), indexing="ij")
        samples = grid.axis(axis)

        if sign > 0:
            start = min(samples[0], scene_box[0, axis]) - grid.spacing
            t = samples - start
        else:
            start = max(samples[-1], scene_box[1, axis]) + grid.spacing
            t = start - samples

        origins = np.zeros((coord_b.size, 3))
        origins[:, other[0]] = coord_b.ravel()
        origins[:, other[1]] = coord_c.ravel()
        origins[:, axis] = start
        directions = np.zeros_like(origins)
        directions[:, axis] = float(sign)

        num_lines = origins.shape[0]
        phi = np.empty((num_lines, len(samples)))
        sigma = np.empty(num_lines)
        chunk = ray_chunk_size(cloud, cfg.ray_chunk_size)
        spans = [(s, min(s + chunk, num_lines)) for s in range(0, num_lines, chunk)]

        def work(span: Tuple[int, int]):
            lo, hi = span
            batch = trace_rays(
                cloud,
                origins[lo:hi],
                directions[lo:hi],
                near=0.0,
                alpha_min=cfg.alpha_cull,
                influence_sigmas=cfg.influence_sigmas,
            )
            weights = batch_weights(batch)
            line_sigma = surface_sigma_sq_batch(
                batch, weights, cfg.surface_window_sigmas, cfg.surface_weight_fraction
            )
            return span, cdf_phi_batch(batch, np.broadcast_to(t, (hi - lo, len(t)))), line_sigma

        with ThreadPoolExecutor(max_workers=cfg.threads) as executor:
            for (lo, hi), line_phi, line_sigma in executor.map(work, spans):
                phi[lo:hi] = line_phi
                sigma[lo:hi] = line_sigma
        return phi, sigma

    # ========================================================================
    # Triangulation
    # ========================================================================

    def marching_cubes(self, grid: ScalarGrid, iso: float = 0.0) -> TriangleMesh:
        """
        Triangulate the ``iso`` level set; faces wind so normals follow +∇D.

        A grid without a sign change yields an empty mesh.
        """
        values = grid.values
        if not np.all(np.isfinite(values)):
            raise InvalidParameterError("SDF grid contains non-finite values")
        if not values.min() < iso < values.max():
            self.logger.info("No iso crossing in grid", iso=iso)
            return TriangleMesh()

        vertices, faces, _, _ = measure.marching_cubes(
            values,
            level=iso,
            spacing=(grid.spacing,) * 3,
            method="lewiner",
            allow_degenerate=False,
        )
        vertices = vertices.astype(np.float64) + grid.origin
        faces = faces.astype(np.int64)

        # orient all faces so normals point along the SDF gradient
        tri = vertices[faces]
        face_normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        gradient = np.stack(np.gradient(values, grid.spacing), axis=-1)
        cell = np.clip(
            np.round((tri.mean(axis=1) - grid.origin) / grid.spacing).astype(np.int64),
            0,
            np.asarray(grid.dims) - 1,
        )
        alignment = np.einsum("fi,fi->", face_normals, gradient[cell[:, 0], cell[:, 1], cell[:, 2]])
        if alignment < 0.0:
            faces = faces[:, [0, 2, 1]]
            face_normals = -face_normals

        areas = 0.5 * np.linalg.norm(face_normals, axis=1)
        keep = areas > MIN_FACE_AREA
        faces, face_normals = faces[keep], face_normals[keep]

        used, remap = np.unique(faces, return_inverse=True)
        vertices = vertices[used]
        faces = remap.reshape(-1, 3)

        normals = np.zeros_like(vertices)
        for corner in range(3):
            np.add.at(normals, faces[:, corner], face_normals)
        length = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.where(length > 0.0, normals / np.where(length > 0.0, length, 1.0), 0.0)

        self.logger.info("Extracted mesh", vertices=len(vertices), faces=len(faces), dropped=int((~keep).sum()))
        return TriangleMesh(vertices=vertices, faces=faces, normals=normals)

    def extract(
        self,
        scene: Scene,
        bounds: Optional[Sequence[Sequence[float]]] = None,
        resolution: Optional[int] = None,
        mu: Optional[float] = None,
        iso: float = 0.0,
        sigma_mode: Optional[str] = None,
    ) -> Tuple[TriangleMesh, ScalarGrid]:
        """sample_sdf_grid followed by marching_cubes."""
        grid = self.sample_sdf_grid(scene, bounds, resolution, mu, sigma_mode)
        return self.marching_cubes(grid, iso), grid


def sample_sdf_grid(
    scene: Scene,
    bounds: Optional[Sequence[Sequence[float]]] = None,
    resolution: int = 64,
    mu: float = 8.0,
    sigma_mode: str = "global",
    config: Optional[GVKFConfig] = None,
) -> ScalarGrid:
    return MeshExtractor(config).sample_sdf_grid(scene, bounds, resolution, mu, sigma_mode)


def marching_cubes(grid: ScalarGrid, iso: float = 0.0) -> TriangleMesh:
    return MeshExtractor().marching_cubes(grid, iso)
