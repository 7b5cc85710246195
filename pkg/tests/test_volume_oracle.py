"""
Unit tests for the dense-quadrature volume rendering oracle.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from gvkf.core.opacity_field import cdf_phi
from gvkf.core.verification import random_field
from gvkf.core.volume_oracle import (
    ConstantProfile,
    KernelProfile,
    cdf_exact,
    render_volume,
    transmittance_adaptive,
    transmittance_exact,
)
from gvkf.models.config import QuadratureConfig
from gvkf.models.field import RayField


@pytest.fixture
def quadrature():
    return QuadratureConfig(step=1e-3, far=10.0)


class TestQuadratureConfig:
    """Tests for QuadratureConfig validation."""

    def test_far_must_exceed_step(self):
        """Test B ≤ δ is rejected."""
        with pytest.raises(ValidationError):
            QuadratureConfig(step=1.0, far=0.5)

    def test_step_positive(self):
        """Test δ must be positive."""
        with pytest.raises(ValidationError):
            QuadratureConfig(step=0.0)


class TestTransmittance:
    """Tests for transmittance_exact and cdf_exact."""

    def test_empty_field(self, quadrature):
        """Test an empty field transmits everything."""
        empty = RayField.from_kernels([])
        for t in (0.0, 1.0, 7.5):
            assert transmittance_exact(empty, t, quadrature) == 1.0
            assert cdf_exact(empty, t, quadrature) == 0.0

    def test_constant_density(self, quadrature):
        """Test ρ = 1 on [0, 1] gives T(1) = 1/e."""
        profile = ConstantProfile(1.0, np.ones(3), 0.0, 1.0)
        assert transmittance_exact(profile, 1.0, quadrature) == pytest.approx(np.exp(-1.0), abs=1e-9)

    def test_zero_parameter(self, red_blue_field, quadrature):
        """Test Φ(0) = 0."""
        assert cdf_exact(red_blue_field, 0.0, quadrature) == 0.0

    def test_single_kernel_matches_adaptive(self, make_kernel):
        """Test uniform quadrature agrees with adaptive integration."""
        field = RayField.from_kernels([make_kernel(3.0, 0.5, k=4.0)])
        cfg = QuadratureConfig(step=1e-4, far=10.0)
        for t in (2.0, 3.0, 5.0):
            assert transmittance_exact(field, t, cfg) == pytest.approx(transmittance_adaptive(field, t), abs=1e-6)

    def test_cdf_non_decreasing(self, red_blue_field, quadrature):
        """Test Φ never decreases along the ray."""
        values = [cdf_exact(red_blue_field, t, quadrature) for t in np.linspace(0.0, 10.0, 41)]
        assert np.all(np.diff(values) >= 0.0)

    def test_solid_kernel_saturates(self, make_kernel):
        """Test a solid kernel drives Φ towards 1 at a distant far bound."""
        field = RayField.from_kernels([make_kernel(1.0, 0.5)])
        cfg = QuadratureConfig(step=1e-3, far=30.0)
        assert cdf_exact(field, 30.0, cfg) > 0.999


class TestRenderVolume:
    """Tests for discrete volume rendering."""

    def test_pure_background(self):
        """Test zero density shows the background."""
        profile = ConstantProfile(0.0, np.ones(3), background=np.array([1.0, 1.0, 1.0]))
        result = render_volume(profile, QuadratureConfig(step=1e-2, far=5.0))
        np.testing.assert_allclose(result.color, [1.0, 1.0, 1.0])
        assert result.transmittance == 1.0

    def test_constant_white_medium(self):
        """Test ρ = 1 white over B = 1 gives (1 - 1/e)·white."""
        profile = ConstantProfile(1.0, np.ones(3))
        result = render_volume(profile, QuadratureConfig(step=1e-3, far=1.0))
        np.testing.assert_allclose(result.color, np.full(3, 1.0 - np.exp(-1.0)), atol=1e-12)

    def test_error_shrinks_when_step_halves(self, rng):
        """Test error against a fine reference decreases under δ-halving."""
        for _ in range(5):
            field = random_field(rng, max_kernels=5, alpha_max=0.5)
            steps = [0.04, 0.02, 0.01, 0.005]
            reference = render_volume(field, QuadratureConfig(step=steps[-1] / 16, far=12.0)).transmittance
            errors = [abs(render_volume(field, QuadratureConfig(step=s, far=12.0)).transmittance - reference) for s in steps]
            assert all(b <= a + 1e-15 for a, b in zip(errors, errors[1:]))

    def test_coarse_step_flag(self, make_kernel):
        """Test δ·√k > 1 is flagged."""
        field = RayField.from_kernels([make_kernel(1.0, 0.5, k=1e6)])
        assert render_volume(field, QuadratureConfig(step=0.01, far=2.0)).coarse_step
        assert not render_volume(RayField.from_kernels([make_kernel(1.0, 0.5)]), QuadratureConfig(step=0.01, far=2.0)).coarse_step


class TestSmallOpacityAgreement:
    """Tests blended Φ against the oracle for nearly transparent fields."""

    def test_second_order_bound(self, rng, make_kernel):
        """Test |Φ_blend - Φ_exact| ≤ (Σα)² + 1e-4 with Gaussian kernels."""
        cfg = QuadratureConfig(step=1e-3, far=8.0)
        for _ in range(5):
            alphas = rng.dirichlet(np.ones(3)) * 0.2
            field = RayField.from_kernels(
                [make_kernel(float(rng.uniform(2.0, 6.0)), float(a), k=float(rng.uniform(5.0, 50.0))) for a in alphas]
            )
            exact = 1.0 - transmittance_exact(KernelProfile(field, "gaussian"), cfg.far, cfg)
            assert abs(cdf_phi(field, cfg.far) - exact) <= alphas.sum() ** 2 + 1e-4
