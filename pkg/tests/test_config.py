"""
Unit tests for configuration models.
"""

import pytest
from pydantic import ValidationError

from gvkf.models.config import CliConfig, GVKFConfig, LossConfig


class TestGVKFConfig:
    """Tests for GVKFConfig defaults, validation and environment overrides."""

    def test_defaults(self, config):
        assert config.seed == 42
        assert config.mu == 8.0
        assert config.gaussians_per_voxel == 10
        assert config.gradient_threshold == 2e-4
        assert config.loss.lambda_dssim == 0.2
        assert config.loss.lambda_dist == 0.1
        assert config.quadrature.step == 1e-3
        assert config.probe_directions == 6

    def test_environment_override(self, monkeypatch):
        """Test GVKF_* variables override defaults."""
        monkeypatch.setenv("GVKF_SEED", "7")
        monkeypatch.setenv("GVKF_MU", "16")
        monkeypatch.setenv("GVKF_SIGMA_MODE", "per-ray")
        config = GVKFConfig()
        assert config.seed == 7
        assert config.mu == 16.0
        assert config.sigma_mode == "per-ray"

    def test_log_level_normalized(self):
        assert GVKFConfig(log_level="debug").log_level == "DEBUG"
        with pytest.raises(ValidationError):
            GVKFConfig(log_level="LOUD")

    def test_sampling_directions(self):
        assert GVKFConfig(probe_directions=3).probe_directions == 3
        with pytest.raises(ValidationError):
            GVKFConfig(probe_directions=4)

    def test_unknown_parameter_group(self):
        with pytest.raises(ValidationError):
            GVKFConfig(direct_groups=["color", "rotation"])

    def test_positive_mu(self):
        with pytest.raises(ValidationError):
            GVKFConfig(mu=0.0)

    def test_learning_rates(self):
        rates = GVKFConfig(lr_color=0.5).learning_rates()
        assert rates["color"] == 0.5
        assert set(rates) == {"color", "opacity", "position", "feature", "offset"}


class TestLossConfig:
    """Tests for LossConfig validation."""

    def test_even_window_rejected(self):
        with pytest.raises(ValidationError):
            LossConfig(ssim_window=10)

    def test_lambda_range(self):
        with pytest.raises(ValidationError):
            LossConfig(lambda_dssim=1.5)


class TestCliConfig:
    """Tests for per-subcommand argument requirements."""

    def test_render_requirements(self):
        with pytest.raises(ValidationError, match="render requires: camera"):
            CliConfig(subcommand="render", scene="s.json", out="o.ppm")

    def test_fit_requirements(self):
        config = CliConfig(subcommand="fit", scene="s.json", out="o.json", iters=0)
        assert config.iters == 0
        with pytest.raises(ValidationError):
            CliConfig(subcommand="fit", scene="s.json", out="o.json", iters=-1)

    def test_verify_needs_nothing(self):
        assert CliConfig(subcommand="verify").seed == 42

    def test_resolution_range(self):
        with pytest.raises(ValidationError):
            CliConfig(subcommand="mesh", scene="s.json", out="m.ply", resolution=1)
