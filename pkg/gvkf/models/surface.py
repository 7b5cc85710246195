"""Results of the near-surface opacity analysis."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from gvkf.core.exceptions import InvalidParameterError


@dataclass(frozen=True)
class SurfaceSolve:
    """σ², u₀ and μ of one ray together with the solved surface parameter t*.

    ``t_star`` is +inf when Φ never reaches the iso level on the ray.
    """

    sigma_sq: float
    u0: float
    mu: float
    t_star: float
    kernel_count: int

    def __post_init__(self) -> None:
        if not self.sigma_sq > 0.0:
            raise InvalidParameterError("sigma_sq must be positive")
        if not self.u0 < 0.0:
            raise InvalidParameterError("u0 must be negative")
        if not self.mu > 0.0:
            raise InvalidParameterError("mu must be positive")
        if self.kernel_count < 1:
            raise InvalidParameterError("kernel_count must be at least 1")

    @property
    def iso_phi(self) -> float:
        return float(1.0 / (1.0 + np.exp(self.mu * self.u0)))


@dataclass(frozen=True, eq=False)
class SurfaceDiagnostics:
    """Samples of Φ′, Φ″ and h on a u-grid.

    ``crossings`` counts sign changes of h; ``inconclusive`` is set when the
    grid does not bracket one.
    """

    u: np.ndarray
    phi_prime: np.ndarray
    phi_second: np.ndarray
    h: np.ndarray
    crossings: int
    crossing_u: Optional[float]
    descending: bool
    inconclusive: bool

    @property
    def single_crossing(self) -> bool:
        """Exactly one positive-to-negative sign change."""
        return self.crossings == 1 and self.descending and not self.inconclusive

    @property
    def phi_prime_argmax(self) -> float:
        return float(self.u[int(np.argmax(self.phi_prime))])
