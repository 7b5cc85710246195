"""
Gaussian primitives, covariance construction and the ray-Gaussian transform.

A Gaussian restricted to a ray o + t·v is again a 1D Gaussian in t. With
p' = p - o and A = Σ⁻¹ the peak sits at t_i = p'ᵀAv / vᵀAv, its sharpness is
k_i = ½vᵀAv and its height is the 3D density at the closest point.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import structlog
from scipy.spatial.transform import Rotation

from gvkf.core.exceptions import InvalidParameterError, InvalidRayError, SingularCovarianceError
from gvkf.models.field import RayBatch
from gvkf.models.primitives import (
    QUAT_NORM_TOL,
    Covariance3,
    GaussianPrimitive,
    Ray,
    RayKernel,
    VoxelKey,
)

logger = structlog.get_logger(__name__)

MAX_CONDITION = 1e12
MAX_PAIRS_PER_BATCH = 2_000_000


def rotation_matrices(quats_wxyz: np.ndarray) -> np.ndarray:
    """Rotation matrices for (N, 4) quaternions in (w, x, y, z) order."""
    quats = np.atleast_2d(np.asarray(quats_wxyz, dtype=np.float64))
    # scipy expects scalar-last quaternions
    return Rotation.from_quat(quats[:, [1, 2, 3, 0]]).as_matrix()


def covariance_from_rs(rotation: Sequence[float], scale: Sequence[float]) -> Covariance3:
    """
    Build Σ = R·diag(s)²·Rᵀ and its inverse.

    Args:
        rotation: Unit quaternion (w, x, y, z)
        scale: Positive per-axis standard deviations

    Returns:
        Covariance3 with the inverse computed from the factors
    """
    quat = np.asarray(rotation, dtype=np.float64).reshape(4)
    s = np.asarray(scale, dtype=np.float64).reshape(3)

    if np.any(s <= 0.0) or not np.all(np.isfinite(s)):
        raise InvalidParameterError(f"scale must be positive, got {s.tolist()}")
    if abs(float(np.linalg.norm(quat)) - 1.0) > QUAT_NORM_TOL:
        raise InvalidParameterError("rotation quaternion must have unit norm")
    if (s.max() / s.min()) ** 2 > MAX_CONDITION:
        raise SingularCovarianceError(f"covariance condition number exceeds {MAX_CONDITION:g}")

    rot = rotation_matrices(quat)[0]
    matrix = (rot * s**2) @ rot.T
    inverse = (rot / s**2) @ rot.T
    return Covariance3(
        matrix=0.5 * (matrix + matrix.T),
        inverse=0.5 * (inverse + inverse.T),
    )


def inverse_covariances(rotations: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Batched Σ⁻¹ for (N, 4) quaternions and (N, 3) scales."""
    scales = np.asarray(scales, dtype=np.float64).reshape(-1, 3)
    if len(scales) == 0:
        return np.zeros((0, 3, 3))
    rots = rotation_matrices(rotations)
    inverse = np.einsum("nij,nj,nkj->nik", rots, 1.0 / scales**2, rots)
    return 0.5 * (inverse + np.transpose(inverse, (0, 2, 1)))


def evaluate_3d(gaussian: GaussianPrimitive, x: Sequence[float]) -> float:
    """Opacity-weighted Gaussian density β·exp(-½ dᵀΣ⁻¹d) at x."""
    cov = covariance_from_rs(gaussian.rotation, gaussian.scale)
    d = np.asarray(x, dtype=np.float64).reshape(3) - gaussian.position
    return float(gaussian.opacity * np.exp(-0.5 * d @ cov.inverse @ d))


def ray_gaussian_transform(
    gaussian: GaussianPrimitive,
    ray: Ray,
    index: int = -1,
    near: float = 0.0,
    alpha_min: float = 1e-4,
) -> RayKernel:
    """
    Restrict a Gaussian to a ray.

    Kernels peaking at or before ``near`` or with alpha below ``alpha_min``
    come back flagged as culled.
    """
    v = ray.direction
    if float(np.linalg.norm(v)) < 1e-12:
        raise InvalidRayError("ray direction is degenerate")

    cov = covariance_from_rs(gaussian.rotation, gaussian.scale)
    a = cov.inverse
    p_rel = gaussian.position - ray.origin
    av = a @ v
    denom = float(v @ av)
    t_peak = float(p_rel @ av) / denom
    d = v * t_peak - p_rel
    g_max = float(np.exp(-0.5 * d @ a @ d))
    alpha = gaussian.opacity * g_max

    return RayKernel(
        t=t_peak,
        k=0.5 * denom,
        g_max=g_max,
        alpha=alpha,
        color=gaussian.color,
        index=index,
        culled=bool(t_peak <= near or t_peak > ray.t_max or alpha < alpha_min),
    )


@dataclass(frozen=True, eq=False)
class GaussianCloud:
    """Struct-of-arrays view of many primitives, the input to batched tracing."""

    positions: np.ndarray
    inv_cov: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    radii: np.ndarray
    voxel_keys: Optional[List[Optional[VoxelKey]]] = None

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @classmethod
    def from_arrays(
        cls,
        positions: np.ndarray,
        rotations: np.ndarray,
        scales: np.ndarray,
        opacities: np.ndarray,
        colors: np.ndarray,
        voxel_keys: Optional[List[Optional[VoxelKey]]] = None,
    ) -> "GaussianCloud":
        scales = np.asarray(scales, dtype=np.float64).reshape(-1, 3)
        return cls(
            positions=np.asarray(positions, dtype=np.float64).reshape(-1, 3),
            inv_cov=inverse_covariances(rotations, scales),
            opacities=np.asarray(opacities, dtype=np.float64).reshape(-1),
            colors=np.asarray(colors, dtype=np.float64).reshape(-1, 3),
            radii=scales.max(axis=1) if len(scales) else np.zeros(0),
            voxel_keys=voxel_keys,
        )

    @classmethod
    def from_primitives(cls, primitives: Sequence[GaussianPrimitive]) -> "GaussianCloud":
        if not primitives:
            return cls.from_arrays(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), [])
        return cls.from_arrays(
            positions=np.stack([g.position for g in primitives]),
            rotations=np.stack([g.rotation for g in primitives]),
            scales=np.stack([g.scale for g in primitives]),
            opacities=np.array([g.opacity for g in primitives]),
            colors=np.stack([g.color for g in primitives]),
            voxel_keys=[g.voxel_key for g in primitives],
        )

    def bounds(self, margin_sigmas: float = 3.0) -> Optional[np.ndarray]:
        """Axis-aligned box around every primitive's influence sphere."""
        if len(self) == 0:
            return None
        pad = margin_sigmas * self.radii[:, None]
        return np.stack([(self.positions - pad).min(axis=0), (self.positions + pad).max(axis=0)])


def ray_chunk_size(cloud: "GaussianCloud", requested: int) -> int:
    """Rays per batch so the (rays, primitives) prefilter stays bounded in memory."""
    return max(1, min(requested, MAX_PAIRS_PER_BATCH // max(len(cloud), 1)))


def trace_rays(
    cloud: GaussianCloud,
    origins: np.ndarray,
    directions: np.ndarray,
    near: float = 0.0,
    far: float = np.inf,
    alpha_min: float = 1e-4,
    influence_sigmas: float = 3.0,
) -> RayBatch:
    """
    Batched ray_gaussian_transform with culling and per-ray sorting.

    Args:
        cloud: Primitives to intersect
        origins: (P, 3) ray origins
        directions: (P, 3) unit ray directions
        near: Kernels peaking at or before this parameter are dropped
        far: Kernels peaking beyond this parameter are dropped
        alpha_min: Kernels with smaller blend coefficient are dropped
        influence_sigmas: Sphere-of-influence radius in units of the largest scale

    Returns:
        RayBatch sorted by (t, primitive index) within each ray
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    num_rays = origins.shape[0]
    if len(cloud) == 0 or num_rays == 0:
        return RayBatch.empty(num_rays)

    # Step 1: sphere-of-influence prefilter on all (ray, primitive) pairs
    rel = cloud.positions[None, :, :] - origins[:, None, :]
    along = np.einsum("pni,pi->pn", rel, directions)
    dist_sq = np.einsum("pni,pni->pn", rel, rel) - along**2
    reach = influence_sigmas * cloud.radii
    ray_idx, prim_idx = np.nonzero(dist_sq <= reach[None, :] ** 2)

    # Step 2: exact 1D transform for surviving pairs
    a = cloud.inv_cov[prim_idx]
    v = directions[ray_idx]
    p_rel = rel[ray_idx, prim_idx]
    av = np.einsum("mij,mj->mi", a, v)
    denom = np.einsum("mi,mi->m", v, av)
    t_peak = np.einsum("mi,mi->m", p_rel, av) / denom
    d = v * t_peak[:, None] - p_rel
    g_max = np.exp(-0.5 * np.einsum("mi,mij,mj->m", d, a, d))
    alpha = cloud.opacities[prim_idx] * g_max

    keep = (t_peak > near) & (t_peak <= far) & (alpha >= alpha_min)
    ray_idx, prim_idx = ray_idx[keep], prim_idx[keep]
    t_peak, denom, g_max, alpha = t_peak[keep], denom[keep], g_max[keep], alpha[keep]
    if ray_idx.size == 0:
        return RayBatch.empty(num_rays)

    # Step 3: sort by ray, then t, then primitive index and scatter into slots
    order = np.lexsort((prim_idx, t_peak, ray_idx))
    ray_idx, prim_idx = ray_idx[order], prim_idx[order]
    t_peak, denom, g_max, alpha = t_peak[order], denom[order], g_max[order], alpha[order]

    counts = np.bincount(ray_idx, minlength=num_rays)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    slot = np.arange(ray_idx.size) - starts[ray_idx]
    slots = int(counts.max())

    t_arr = np.zeros((num_rays, slots))
    k_arr = np.ones((num_rays, slots))
    g_arr = np.zeros((num_rays, slots))
    alpha_arr = np.zeros((num_rays, slots))
    color_arr = np.zeros((num_rays, slots, 3))
    index_arr = np.full((num_rays, slots), -1, dtype=np.int64)

    t_arr[ray_idx, slot] = t_peak
    k_arr[ray_idx, slot] = 0.5 * denom
    g_arr[ray_idx, slot] = g_max
    alpha_arr[ray_idx, slot] = alpha
    color_arr[ray_idx, slot] = cloud.colors[prim_idx]
    index_arr[ray_idx, slot] = prim_idx

    return RayBatch(
        t=t_arr,
        k=k_arr,
        g_max=g_arr,
        alpha=alpha_arr,
        colors=color_arr,
        index=index_arr,
        counts=counts.astype(np.int64),
    )
