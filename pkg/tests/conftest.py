"""Pytest configuration and fixtures for GVKF tests."""

import os

import numpy as np
import pytest

from gvkf.core.gaussian_core import GaussianCloud
from gvkf.core.scenes import build_scene, default_camera
from gvkf.models.config import GVKFConfig
from gvkf.models.field import RayField
from gvkf.models.geometry import Camera, ScalarGrid, TriangleMesh
from gvkf.models.primitives import GaussianPrimitive, RayKernel
from gvkf.utils.logging import setup_logging

IDENTITY = [1.0, 0.0, 0.0, 0.0]


# ============================================================================
# ENVIRONMENT FIXTURES
# ============================================================================

@pytest.fixture(scope="session", autouse=True)
def quiet_logging():
    """Route library logs through stdlib logging at WARNING."""
    setup_logging(GVKFConfig(log_level="WARNING"))


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch):
    """Keep developer GVKF_* variables out of test configs."""
    for name in list(os.environ):
        if name.startswith("GVKF_"):
            monkeypatch.delenv(name, raising=False)


@pytest.fixture
def config():
    """Default configuration."""
    return GVKFConfig()


@pytest.fixture
def rng():
    """Seeded generator."""
    return np.random.default_rng(1234)


# ============================================================================
# PRIMITIVE FIXTURES
# ============================================================================

@pytest.fixture
def unit_gaussian():
    """Isotropic unit Gaussian at z = 5 with full opacity."""
    return GaussianPrimitive([0.0, 0.0, 5.0], IDENTITY, [1.0, 1.0, 1.0], 1.0, [1.0, 0.0, 0.0])


@pytest.fixture
def make_kernel():
    """Factory for ray kernels with unit peak."""

    def make(t, alpha, color=(0.0, 0.0, 0.0), k=1.0, index=-1):
        return RayKernel(t=t, k=k, g_max=1.0, alpha=alpha, color=np.asarray(color, dtype=float), index=index)

    return make


@pytest.fixture
def red_blue_field(make_kernel):
    """Two α = 0.5 kernels, red at t = 2 then blue at t = 6."""
    return RayField.from_kernels(
        [make_kernel(2.0, 0.5, (1.0, 0.0, 0.0), index=0), make_kernel(6.0, 0.5, (0.0, 0.0, 1.0), index=1)]
    )


# ============================================================================
# SCENE FIXTURES
# ============================================================================

@pytest.fixture
def blob():
    """One large isotropic Gaussian at the origin."""
    return GaussianPrimitive([0.0, 0.0, 0.0], IDENTITY, [0.4, 0.4, 0.4], 0.9, [0.8, 0.2, 0.6])


@pytest.fixture
def empty_cloud():
    """Cloud without primitives."""
    return GaussianCloud.from_primitives([])


@pytest.fixture
def small_camera():
    """16x16 camera on +z looking at the origin."""
    return default_camera(size=16)


@pytest.fixture
def front_camera():
    """8x8 camera two units in front of the origin."""
    return Camera(
        position=[0.0, 0.0, 2.0],
        look_at=[0.0, 0.0, 0.0],
        up=[0.0, 1.0, 0.0],
        fov_y=45.0,
        width=8,
        height=8,
    )


@pytest.fixture(scope="session")
def sphere_scene():
    """Built-in sphere shell scene, built once."""
    return build_scene("sphere")


@pytest.fixture
def triplet_scene():
    """Three separated Gaussians in a direct-mode grid."""
    return build_scene("triplet")


# ============================================================================
# GRID AND MESH FIXTURES
# ============================================================================

@pytest.fixture
def sphere_sdf():
    """Analytic unit-sphere SDF sampled at 32³ on [-1.2, 1.2]³."""
    dims = (32, 32, 32)
    grid = ScalarGrid(np.full(3, -1.2), 2.4 / 31, dims, np.zeros(dims))
    grid.values = np.linalg.norm(grid.points(), axis=-1) - 1.0
    return grid


@pytest.fixture
def triangle():
    """Single counter-clockwise triangle in the z = 0 plane."""
    return TriangleMesh(
        vertices=[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        faces=[[0, 1, 2]],
    )
