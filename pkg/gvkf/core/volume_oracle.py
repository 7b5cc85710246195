"""
Dense-quadrature volume rendering, the independent oracle for the blended field.

T(t) = exp(-∫₀ᵗ ρ) is integrated on a uniform grid and colors are composited
with α_i = 1 - exp(-σ_i δ). Not tuned for speed.
"""

from dataclasses import dataclass, field as dataclass_field
from typing import Literal, Optional, Protocol, Union

import numpy as np
import structlog
from scipy import integrate

from gvkf.core.opacity_field import solid_kernel
from gvkf.models.config import QuadratureConfig
from gvkf.models.field import RayField

logger = structlog.get_logger(__name__)


class DensityProfile(Protocol):
    """Anything with a density and a color along the ray."""

    background: np.ndarray

    def density(self, t: np.ndarray) -> np.ndarray: ...

    def color(self, t: np.ndarray) -> np.ndarray: ...

    def max_sharpness(self) -> float: ...


@dataclass
class KernelProfile:
    """
    Density of a RayField's kernels.

    ``solid`` uses the solid-after-peak kernels of the blended field.
    ``gaussian`` uses symmetric Gaussians scaled by √(k/π) so each kernel
    integrates to its α, the setting where blending and volume rendering
    agree to second order in opacity.
    """

    field: RayField
    kernel_shape: Literal["solid", "gaussian"] = "solid"

    @property
    def background(self) -> np.ndarray:
        return self.field.background

    def _terms(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.field.count == 0:
            return np.zeros(t.shape + (0,))
        x = t[..., None] - self.field.t
        if self.kernel_shape == "solid":
            return self.field.alpha * solid_kernel(self.field.k, x)
        norm = np.sqrt(self.field.k / np.pi)
        return self.field.alpha * norm * np.exp(-self.field.k * x * x)

    def density(self, t: np.ndarray) -> np.ndarray:
        return self._terms(t).sum(axis=-1)

    def color(self, t: np.ndarray) -> np.ndarray:
        """Color of the kernel with the largest α_i K_i(t - t_i) at each t."""
        t = np.asarray(t, dtype=np.float64)
        if self.field.count == 0:
            return np.broadcast_to(self.background, t.shape + (3,)).copy()
        terms = self._terms(t)
        return self.field.colors[np.argmax(terms, axis=-1)]

    def max_sharpness(self) -> float:
        return float(self.field.k.max()) if self.field.count else 0.0


@dataclass
class ConstantProfile:
    """Constant density and color on [start, end], zero elsewhere."""

    value: float
    rgb: np.ndarray
    start: float = 0.0
    end: float = np.inf
    background: np.ndarray = dataclass_field(default_factory=lambda: np.zeros(3))

    def density(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return np.where((t >= self.start) & (t <= self.end), self.value, 0.0)

    def color(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return np.broadcast_to(np.asarray(self.rgb, dtype=np.float64), t.shape + (3,)).copy()

    def max_sharpness(self) -> float:
        return 0.0


@dataclass
class VolumeRenderResult:
    """Quadrature render of one ray."""

    color: np.ndarray
    transmittance: float
    coarse_step: bool


def as_profile(field: Union[RayField, DensityProfile]) -> DensityProfile:
    if isinstance(field, RayField):
        return KernelProfile(field)
    return field


def _intervals(length: float, step: float) -> int:
    return max(1, int(np.ceil(length / step - 1e-9)))


def _density_integral(profile: DensityProfile, t: float, cfg: QuadratureConfig) -> float:
    # Fixed nodes at multiples of δ plus one partial interval ending at t, so
    # the integral is computed on the same grid for every t.
    if t <= 0.0:
        return 0.0
    full = int(np.floor(t / cfg.step + 1e-9))
    rest = t - full * cfg.step
    if rest < 1e-12 * cfg.step:
        rest = 0.0
    nodes = np.arange(full + 1) * cfg.step
    if rest > 0.0:
        nodes = np.append(nodes, t)
    widths = np.diff(nodes)
    if widths.size == 0:
        return 0.0
    if cfg.scheme == "midpoint":
        return float((profile.density(nodes[:-1] + 0.5 * widths) * widths).sum())
    dens = profile.density(nodes)
    return float((0.5 * (dens[:-1] + dens[1:]) * widths).sum())


def transmittance_exact(
    field: Union[RayField, DensityProfile], t: float, cfg: QuadratureConfig
) -> float:
    """T(t) = exp(-∫₀ᵗ ρ) by uniform quadrature."""
    return float(np.exp(-_density_integral(as_profile(field), min(t, cfg.far), cfg)))


def cdf_exact(field: Union[RayField, DensityProfile], t: float, cfg: QuadratureConfig) -> float:
    """Φ(t) = 1 - T(t)."""
    return 1.0 - transmittance_exact(field, t, cfg)


def transmittance_adaptive(field: Union[RayField, DensityProfile], t: float) -> float:
    """T(t) with adaptive Gauss-Kronrod integration, kernel peaks as break points."""
    profile = as_profile(field)
    if t <= 0.0:
        return 1.0
    points: Optional[list] = None
    if isinstance(profile, KernelProfile) and profile.field.count:
        points = [p for p in profile.field.t.tolist() if 0.0 < p < t] or None
    value, _ = integrate.quad(
        lambda s: float(profile.density(np.asarray(s))), 0.0, t, points=points, limit=500, epsabs=1e-14, epsrel=1e-13
    )
    return float(np.exp(-value))


def render_volume(field: Union[RayField, DensityProfile], cfg: QuadratureConfig) -> VolumeRenderResult:
    """
    Discrete volume rendering over [0, B] with uniform steps.

    Args:
        field: RayField (solid kernels) or any DensityProfile
        cfg: Step, far bound and rule for the per-interval density

    Returns:
        VolumeRenderResult; ``coarse_step`` is set when δ·√k > 1 for some kernel
    """
    profile = as_profile(field)
    n = _intervals(cfg.far, cfg.step)
    h = cfg.far / n

    coarse = h * np.sqrt(profile.max_sharpness()) > 1.0
    if coarse:
        logger.warning("Quadrature step is coarse relative to kernel width", step=h, intervals=n)

    mids = (np.arange(n) + 0.5) * h
    if cfg.scheme == "midpoint":
        sigma = profile.density(mids)
    else:
        nodes = np.linspace(0.0, cfg.far, n + 1)
        dens = profile.density(nodes)
        sigma = 0.5 * (dens[:-1] + dens[1:])

    alpha = 1.0 - np.exp(-sigma * h)
    trans = np.exp(-np.concatenate([[0.0], np.cumsum(sigma * h)]))
    weights = trans[:-1] * alpha
    color = (weights[:, None] * profile.color(mids)).sum(axis=0) + trans[-1] * np.asarray(profile.background)

    return VolumeRenderResult(color=color, transmittance=float(trans[-1]), coarse_step=bool(coarse))
