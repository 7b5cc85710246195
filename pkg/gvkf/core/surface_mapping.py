"""
Near-surface opacity model and the opacity-to-SDF mapping.

Near a surface the density is modelled as a normal pdf ρ(u) with variance
σ² = Σ 1/(2πα_i²). Φ′ = ρ·exp(-∫ρ) peaks at the root u₀ < 0 of
ρ(u) + u/σ² = 0, so the surface is where a logistic centred on u₀ crosses
zero: D = ln(1/Φ - 1)/μ - u₀.
"""

from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy import integrate, optimize

from gvkf.core.exceptions import InvalidParameterError, SolverFailureError
from gvkf.core.opacity_field import blending_weights, cdf_phi
from gvkf.models.field import RayBatch, RayField
from gvkf.models.surface import SurfaceDiagnostics, SurfaceSolve

logger = structlog.get_logger(__name__)

ArrayLike = Union[float, np.ndarray]


def sigma_sq(alphas: Sequence[float]) -> float:
    """σ² = Σ 1/(2π α_i²) over the surface kernels."""
    alphas = np.asarray(alphas, dtype=np.float64).reshape(-1)
    if alphas.size == 0:
        raise InvalidParameterError("sigma_sq needs at least one kernel")
    if np.any(alphas <= 0.0) or np.any(alphas > 1.0):
        raise InvalidParameterError("surface kernel alphas must be in (0, 1]")
    return float(np.sum(1.0 / (2.0 * np.pi * alphas**2)))


def normal_density(u: ArrayLike, variance: float) -> ArrayLike:
    """Zero-mean normal pdf with the given variance."""
    return np.exp(-np.square(u) / (2.0 * variance)) / np.sqrt(2.0 * np.pi * variance)


def u0_residual(u: float, variance: float) -> float:
    """f(u) = ρ(u) + u/σ², zero at the CDF-slope peak."""
    return float(normal_density(u, variance) + u / variance)


def solve_u0(
    variance: float,
    tol: float = 1e-10,
    max_iter: int = 200,
    newton_steps: int = 5,
) -> float:
    """
    Solve ρ(u) = -u/σ² for the unique negative root.

    f(u) = ρ(u) + u/σ² is positive at 0 and negative at -10σ, so bisection
    on that bracket always converges; a few Newton steps polish the root.

    Args:
        variance: σ² > 0
        tol: Maximum residual |f(u0)|
        max_iter: Bisection iteration cap
        newton_steps: Newton polish steps

    Returns:
        u0 < 0
    """
    if not np.isfinite(variance) or variance <= 0.0:
        raise InvalidParameterError(f"sigma^2 must be positive, got {variance}")
    if tol <= 0.0:
        raise InvalidParameterError("solver tolerance must be positive")

    sigma = float(np.sqrt(variance))
    lower, upper = -10.0 * sigma, 0.0

    def residual(u: float) -> float:
        return u0_residual(u, variance)

    try:
        root = optimize.bisect(
            residual,
            lower,
            upper,
            xtol=max(tol * variance * 1e-2, 1e-300),
            maxiter=max_iter,
        )
    except (RuntimeError, ValueError) as e:
        raise SolverFailureError(f"u0 bisection failed for sigma^2={variance}: {e}") from e

    for _ in range(newton_steps):
        value = residual(root)
        slope = normal_density(root, variance) * (-root / variance) + 1.0 / variance
        candidate = root - value / slope
        if not lower < candidate < upper or abs(residual(candidate)) > abs(value):
            break
        root = candidate

    if abs(residual(root)) > tol or not root < 0.0:
        raise SolverFailureError(
            f"u0 residual {abs(residual(root)):.3e} exceeds tolerance {tol:.1e} for sigma^2={variance}"
        )
    return float(root)


def h_diagnostic(variance: float, u_grid: Sequence[float]) -> SurfaceDiagnostics:
    """
    Sample h(u) = -ρ(ρ + u/σ²), Φ′ and Φ″ on an ascending grid.

    The integral inside Φ′ = ρ·exp(-∫ρ) starts at the first grid point.
    """
    u = np.asarray(u_grid, dtype=np.float64).reshape(-1)
    if u.size < 2 or np.any(np.diff(u) <= 0.0):
        raise InvalidParameterError("u_grid must be strictly ascending with at least two points")
    if variance <= 0.0:
        raise InvalidParameterError("sigma^2 must be positive")

    dens = normal_density(u, variance)
    h = -dens * (dens + u / variance)
    trans = np.exp(-integrate.cumulative_trapezoid(dens, u, initial=0.0))
    phi_prime = dens * trans
    phi_second = h * trans

    signs = np.sign(h)
    nonzero = np.nonzero(signs)[0]
    changes = [
        (nonzero[i], nonzero[i + 1])
        for i in range(len(nonzero) - 1)
        if signs[nonzero[i]] != signs[nonzero[i + 1]]
    ]
    descending = bool(changes) and all(signs[a] > 0 for a, _ in changes)

    crossing_u: Optional[float] = None
    if changes:
        a, b = changes[0]
        crossing_u = float(u[a] - h[a] * (u[b] - u[a]) / (h[b] - h[a]))

    inconclusive = not changes
    if inconclusive:
        logger.info("h(u) sign change not bracketed by grid", lower=float(u[0]), upper=float(u[-1]))

    return SurfaceDiagnostics(
        u=u,
        phi_prime=phi_prime,
        phi_second=phi_second,
        h=h,
        crossings=len(changes),
        crossing_u=crossing_u,
        descending=descending,
        inconclusive=inconclusive,
    )


def iso_phi(mu: float, u0: ArrayLike) -> ArrayLike:
    """Φ level of the D = 0 surface."""
    level = 1.0 / (1.0 + np.exp(mu * np.asarray(u0, dtype=np.float64)))
    return float(level) if level.ndim == 0 else level


def _check_mapping_args(mu: float, u0: ArrayLike) -> None:
    if mu <= 0.0:
        raise InvalidParameterError(f"mu must be positive, got {mu}")
    if np.any(np.asarray(u0) >= 0.0):
        raise InvalidParameterError(f"u0 must be negative, got {u0}")


def _clamp_phi(phi: ArrayLike, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(phi, dtype=np.float64)
    degenerate = ~((p > 0.0) & (p < 1.0))
    return np.where(degenerate, np.clip(np.nan_to_num(p, nan=0.0), eps, 1.0 - eps), p), degenerate


def sdf_from_cdf(phi: ArrayLike, mu: float, u0: ArrayLike, eps: float = 1e-7, return_flags: bool = False):
    """
    D = ln(1/Φ - 1)/μ - u₀, decreasing in Φ.

    Φ outside (0, 1) is clamped to [ε, 1-ε]; with ``return_flags`` the
    clamp mask is returned alongside the distances.
    """
    _check_mapping_args(mu, u0)
    p, degenerate = _clamp_phi(phi, eps)
    d = (np.log1p(-p) - np.log(p)) / mu - u0
    if d.ndim == 0:
        d = float(d)
        degenerate = bool(degenerate)
    return (d, degenerate) if return_flags else d


def sdf_linear(phi: ArrayLike, mu: float, u0: ArrayLike, eps: float = 1e-7, return_flags: bool = False):
    """
    Linear opacity-to-distance map D = (Φ_iso - Φ)·4/μ.

    Same zero set as the logistic map with the logistic inverse's slope at
    Φ = 0.5; kept for comparing against the logistic model.
    """
    _check_mapping_args(mu, u0)
    p, degenerate = _clamp_phi(phi, eps)
    d = (iso_phi(mu, u0) - p) * 4.0 / mu
    if d.ndim == 0:
        d = float(d)
        degenerate = bool(degenerate)
    return (d, degenerate) if return_flags else d


SDF_MAPPINGS = {"logistic": sdf_from_cdf, "linear": sdf_linear}


# ============================================================================
# Surface kernel membership and per-ray solves
# ============================================================================


def surface_mask(
    t: np.ndarray,
    k: np.ndarray,
    alpha: np.ndarray,
    weights: np.ndarray,
    window_sigmas: float = 3.0,
    weight_fraction: float = 0.25,
) -> np.ndarray:
    """
    Select the kernels concentrated on the surface for rays in rows.

    A kernel belongs to the surface when its peak lies within
    ±window_sigmas·max(σ_ray, narrowest kernel width) of the blended depth
    and it carries at least ``weight_fraction`` of the ray's blending weight.
    Rays without a qualifying kernel fall back to their heaviest kernel.
    """
    t, k, alpha, weights = (np.atleast_2d(a) for a in (t, k, alpha, weights))
    total = weights.sum(axis=1, keepdims=True)
    hit = total[:, 0] > 0.0
    safe_total = np.where(total > 0.0, total, 1.0)
    depth = (weights * t).sum(axis=1, keepdims=True) / safe_total
    spread = np.sqrt((weights * (t - depth) ** 2).sum(axis=1, keepdims=True) / safe_total)
    widths = np.where(alpha > 0.0, 1.0 / np.sqrt(2.0 * k), np.inf)
    narrowest = widths.min(axis=1, keepdims=True) if widths.shape[1] else np.zeros_like(spread)
    half = window_sigmas * np.maximum(spread, np.where(np.isfinite(narrowest), narrowest, 0.0))

    mask = (np.abs(t - depth) <= half) & (weights >= weight_fraction * total) & (alpha > 0.0) & (weights > 0.0)
    if weights.shape[1]:
        empty = hit & ~mask.any(axis=1)
        heaviest = np.argmax(weights, axis=1)
        mask[np.nonzero(empty)[0], heaviest[empty]] = True
    mask[~hit] = False
    return mask


def surface_kernels(field: RayField, window_sigmas: float = 3.0, weight_fraction: float = 0.25) -> np.ndarray:
    """Indices of the field's surface kernels (empty when nothing is hit)."""
    if field.count == 0:
        return np.zeros(0, dtype=np.int64)
    mask = surface_mask(field.t, field.k, field.alpha, blending_weights(field), window_sigmas, weight_fraction)
    return np.nonzero(mask[0])[0]


def surface_sigma_sq_batch(
    batch: RayBatch,
    weights: np.ndarray,
    window_sigmas: float = 3.0,
    weight_fraction: float = 0.25,
) -> np.ndarray:
    """Per-ray σ² from the surface kernels; NaN for rays that hit nothing."""
    if batch.slots == 0:
        return np.full(batch.num_rays, np.nan)
    mask = surface_mask(batch.t, batch.k, batch.alpha, weights, window_sigmas, weight_fraction)
    safe_alpha = np.where(mask, batch.alpha, 1.0)
    values = np.where(mask, 1.0 / (2.0 * np.pi * safe_alpha**2), 0.0).sum(axis=1)
    return np.where(mask.any(axis=1), values, np.nan)


def global_sigma_sq(values: Sequence[float]) -> Optional[float]:
    """Median of the finite per-ray σ² values, or None when there are none."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return None
    return float(np.median(finite))


class U0Cache:
    """Memoized solve_u0 for repeated σ² values."""

    def __init__(self, tol: float = 1e-10, max_iter: int = 200, newton_steps: int = 5):
        self.tol = tol
        self.max_iter = max_iter
        self.newton_steps = newton_steps
        self._values: Dict[float, float] = {}

    def __call__(self, variance: float) -> float:
        key = float(variance)
        if key not in self._values:
            self._values[key] = solve_u0(key, self.tol, self.max_iter, self.newton_steps)
        return self._values[key]

    def __len__(self) -> int:
        return len(self._values)


def solve_ray_surface(
    field: RayField,
    mu: float = 8.0,
    tol: float = 1e-10,
    window_sigmas: float = 3.0,
    weight_fraction: float = 0.25,
) -> Optional[SurfaceSolve]:
    """
    σ², u₀ and the surface parameter t* of one ray.

    t* solves Φ(t) = 1/(1 + exp(μu₀)); it is +inf when Φ stays below that
    level. Returns None for rays without visible kernels.
    """
    members = surface_kernels(field, window_sigmas, weight_fraction)
    if members.size == 0:
        return None

    variance = sigma_sq(field.alpha[members])
    u0 = solve_u0(variance, tol)
    level = iso_phi(mu, u0)

    def gap(t: float) -> float:
        return float(cdf_phi(field, t)) - level

    last = float(field.t.max())
    if gap(last) < 0.0:
        t_star = float("inf")
    elif gap(0.0) >= 0.0:
        t_star = 0.0
    else:
        t_star = float(optimize.brentq(gap, 0.0, last, xtol=1e-12))

    return SurfaceSolve(sigma_sq=variance, u0=u0, mu=mu, t_star=t_star, kernel_count=int(members.size))
