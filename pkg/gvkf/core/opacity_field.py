"""
Opacity field along a ray.

Each kernel contributes α_i·K_i(t - t_i) where K is a half Gaussian that
stays solid (K = 1) past its peak. The hit CDF Φ blends the kernels front to
back and equals 1 - Π(1 - α_i K_i). Colors composite with K_i(0) = 1.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from gvkf.models.field import RayBatch, RayField
from gvkf.models.primitives import RayKernel

ArrayLike = Union[float, np.ndarray]

EARLY_STOP_TRANSMITTANCE = 1e-4


@dataclass
class RenderResult:
    """Composited color and accumulated opacity of one ray."""

    color: np.ndarray
    opacity: float
    transmittance: float


@dataclass
class BatchRenderResult:
    """Per-ray colors, opacities and blended depths of a RayBatch."""

    color: np.ndarray
    opacity: np.ndarray
    depth: np.ndarray
    weights: np.ndarray


def solid_kernel(k: ArrayLike, x: ArrayLike) -> np.ndarray:
    """K(x) = exp(-k x²) for x < 0 and 1 for x ≥ 0."""
    x = np.asarray(x, dtype=np.float64)
    neg = np.minimum(x, 0.0)
    return np.exp(-np.asarray(k) * neg * neg)


def kernel_value(kernel: RayKernel, t: float) -> float:
    """Value of a kernel's solid-after-peak profile at ray parameter t."""
    return float(solid_kernel(kernel.k, t - kernel.t))


def rho(field: RayField, t: ArrayLike) -> ArrayLike:
    """Opacity density Σ α_i K_i(t - t_i)."""
    t_arr = np.asarray(t, dtype=np.float64)
    total = np.zeros_like(t_arr)
    for kernel in field.kernels:
        total = total + kernel.alpha * solid_kernel(kernel.k, t_arr - kernel.t)
    return float(total) if total.ndim == 0 else total


def cdf_phi(field: RayField, t: ArrayLike) -> ArrayLike:
    """Hit CDF as the front-to-back blended sum Σ a_i Π_{j<i}(1 - a_j)."""
    t_arr = np.asarray(t, dtype=np.float64)
    phi = np.zeros_like(t_arr)
    trans = np.ones_like(t_arr)
    for kernel in field.kernels:
        a = kernel.alpha * solid_kernel(kernel.k, t_arr - kernel.t)
        phi = phi + trans * a
        trans = trans * (1.0 - a)
    return float(phi) if phi.ndim == 0 else phi


def cdf_phi_product(field: RayField, t: ArrayLike) -> ArrayLike:
    """Hit CDF in product form 1 - Π(1 - α_i K_i)."""
    t_arr = np.asarray(t, dtype=np.float64)
    miss = np.ones_like(t_arr)
    for kernel in field.kernels:
        miss = miss * (1.0 - kernel.alpha * solid_kernel(kernel.k, t_arr - kernel.t))
    phi = 1.0 - miss
    return float(phi) if phi.ndim == 0 else phi


def blending_weights(field: RayField) -> np.ndarray:
    """w_i = α_i Π_{j<i}(1 - α_j) in kernel order."""
    alpha = field.alpha
    if alpha.size == 0:
        return alpha
    trans = np.concatenate([[1.0], np.cumprod(1.0 - alpha)[:-1]])
    return alpha * trans


def render_ray(field: RayField, early_stop: float = EARLY_STOP_TRANSMITTANCE) -> RenderResult:
    """
    Front-to-back compositing with the background behind the last kernel.

    Compositing stops once transmittance drops below ``early_stop``; pass 0
    for exhaustive compositing.
    """
    color = np.zeros(3)
    trans = 1.0
    for kernel in field.kernels:
        color = color + trans * kernel.alpha * kernel.color
        trans = trans * (1.0 - kernel.alpha)
        if trans < early_stop:
            break
    color = color + trans * field.background
    return RenderResult(color=color, opacity=1.0 - trans, transmittance=trans)


def render_depth(field: RayField) -> float:
    """Blending-weighted mean of kernel peaks; +inf when nothing is hit."""
    trans = 1.0
    num = 0.0
    den = 0.0
    for kernel in field.kernels:
        w = trans * kernel.alpha
        num += w * kernel.t
        den += w
        trans *= 1.0 - kernel.alpha
    if den <= 0.0:
        return float("inf")
    return float(num / den)


# ============================================================================
# Batched evaluation over padded RayBatch rows
# ============================================================================


def cdf_phi_batch(batch: RayBatch, t: np.ndarray) -> np.ndarray:
    """Φ for every ray at sample parameters t of shape (P, S)."""
    t = np.asarray(t, dtype=np.float64)
    phi = np.zeros_like(t)
    trans = np.ones_like(t)
    for j in range(batch.slots):
        a = batch.alpha[:, j, None] * solid_kernel(batch.k[:, j, None], t - batch.t[:, j, None])
        phi = phi + trans * a
        trans = trans * (1.0 - a)
    return phi


def batch_weights(batch: RayBatch, early_stop: float = 0.0) -> np.ndarray:
    """Per-slot blending weights, zero after early termination."""
    weights = np.zeros_like(batch.alpha)
    trans = np.ones(batch.num_rays)
    active = np.ones(batch.num_rays, dtype=bool)
    for j in range(batch.slots):
        a = batch.alpha[:, j]
        weights[:, j] = np.where(active, trans * a, 0.0)
        trans = np.where(active, trans * (1.0 - a), trans)
        active = active & (trans >= early_stop)
    return weights


def render_rays(
    batch: RayBatch,
    background: np.ndarray,
    early_stop: float = EARLY_STOP_TRANSMITTANCE,
) -> BatchRenderResult:
    """
    Composite every ray of a batch.

    Uses the same per-ray arithmetic as render_ray and render_depth so the
    result does not depend on how rays are grouped into batches.
    """
    num_rays = batch.num_rays
    background = np.asarray(background, dtype=np.float64).reshape(3)
    color = np.zeros((num_rays, 3))
    trans = np.ones(num_rays)
    active = np.ones(num_rays, dtype=bool)
    weights = np.zeros_like(batch.alpha)
    # depth uses exhaustive weights, accumulated slot by slot like the color
    depth_trans = np.ones(num_rays)
    depth_num = np.zeros(num_rays)
    depth_den = np.zeros(num_rays)
    for j in range(batch.slots):
        a = batch.alpha[:, j]
        contrib = np.where(active, trans * a, 0.0)
        weights[:, j] = contrib
        color = color + contrib[:, None] * batch.colors[:, j]
        trans = np.where(active, trans * (1.0 - a), trans)
        active = active & (trans >= early_stop)
        w = depth_trans * a
        depth_num = depth_num + w * batch.t[:, j]
        depth_den = depth_den + w
        depth_trans = depth_trans * (1.0 - a)
    color = color + trans[:, None] * background

    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(depth_den > 0.0, depth_num / depth_den, np.inf)

    return BatchRenderResult(color=color, opacity=1.0 - trans, depth=depth, weights=weights)


def render_depths(batch: RayBatch) -> np.ndarray:
    """Blended depth of every ray; inf where a ray has no opacity."""
    return render_rays(batch, np.zeros(3), early_stop=0.0).depth


def depth_distortion_batch(batch: RayBatch) -> np.ndarray:
    """Σ_{i<j} w_i w_j |t_i - t_j| per ray, in O(slots) using sorted t."""
    weights = batch_weights(batch)
    # rows are sorted by t, so |t_j - t_i| = t_j - t_i for i < j
    cum_w = np.cumsum(weights, axis=1) - weights
    cum_wt = np.cumsum(weights * batch.t, axis=1) - weights * batch.t
    return np.maximum((weights * (batch.t * cum_w - cum_wt)).sum(axis=1), 0.0)
